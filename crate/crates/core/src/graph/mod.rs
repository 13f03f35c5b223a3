//! Factor graph over navigation states with per-foot contact variables, and
//! a batch Levenberg-Marquardt solver.

mod factors;
mod linear;
mod solver;

use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, Rotation};
use crate::preintegration::ImuBias;

pub use factors::{
    contact_factor_residual, fk_factor_residual, imu_factor_residual, relative_pose_residual, Factor, FactorKind,
    JacobianMode, PriorMeasurement, RelativePoseMeasurement, NUMERIC_STEP,
};
pub use linear::{SkylineCholesky, SkylineMatrix};
pub use solver::{linearize, optimize, FactorGraph, IterationStats, LmConfig, NormalSystem, OptimizeResult};

/// Tangent dimension of the base block: rotation, position, velocity,
/// gyro bias, accel bias.
pub const BASE_DIM: usize = 15;
/// Tangent dimension of one contact frame: rotation, position.
pub const CONTACT_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactState {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
    /// Contact frames keyed by foot id, present only for feet in contact.
    pub contacts: BTreeMap<usize, ContactState>,
}

impl NavState {
    pub fn new(rotation: Rotation, position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            rotation,
            position,
            velocity,
            bias: ImuBias::default(),
            contacts: BTreeMap::new(),
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), Vector3::zeros())
    }

    pub fn with_contact(mut self, foot: usize, rotation: Rotation, position: Vector3<f64>) -> Self {
        self.contacts.insert(foot, ContactState { rotation, position });
        self
    }

    pub fn contact(&self, foot: usize) -> Result<&ContactState> {
        self.contacts
            .get(&foot)
            .ok_or(Error::MissingContactState { node: usize::MAX, foot })
    }

    pub fn tangent_dim(&self) -> usize {
        BASE_DIM + CONTACT_DIM * self.contacts.len()
    }

    /// Applies a base-block increment `(δφ, δp, δv, δb_g, δb_a)`.
    pub fn retract_base(&mut self, delta: &[f64]) {
        let v3 = |k: usize| Vector3::new(delta[k], delta[k + 1], delta[k + 2]);
        let r = self.rotation;
        self.position += r * v3(3);
        self.rotation = (r * exp_so3(&v3(0))).cleaned();
        self.velocity += v3(6);
        self.bias.gyro += v3(9);
        self.bias.accel += v3(12);
    }

    /// Applies a contact-block increment `(δθ, δd)`.
    pub fn retract_contact(&mut self, foot: usize, delta: &[f64]) -> Result<()> {
        let c = self
            .contacts
            .get_mut(&foot)
            .ok_or(Error::MissingContactState { node: usize::MAX, foot })?;
        c.rotation = (c.rotation * exp_so3(&Vector3::new(delta[0], delta[1], delta[2]))).cleaned();
        c.position += Vector3::new(delta[3], delta[4], delta[5]);
        Ok(())
    }
}

/// Identifies a tangent block of the problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Base(usize),
    Contact(usize, usize),
}

impl Key {
    pub fn node(self) -> usize {
        match self {
            Key::Base(n) | Key::Contact(n, _) => n,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Key::Base(_) => BASE_DIM,
            Key::Contact(..) => CONTACT_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub timestamp: f64,
    pub state: NavState,
}

/// Node states plus the variable ordering used by the solver.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphValues {
    nodes: Vec<Node>,
    offsets: Vec<usize>,
    dim: usize,
}

impl GraphValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&Node> {
        self.nodes.get(id).ok_or(Error::IndexOutOfRange {
            i: id,
            j: id,
            links: self.nodes.len(),
        })
    }

    pub fn state(&self, id: usize) -> Result<&NavState> {
        Ok(&self.node(id)?.state)
    }

    pub fn state_mut(&mut self, id: usize) -> Result<&mut NavState> {
        let len = self.nodes.len();
        self.nodes
            .get_mut(id)
            .map(|n| &mut n.state)
            .ok_or(Error::IndexOutOfRange {
                i: id,
                j: id,
                links: len,
            })
    }

    /// Total tangent dimension (solver column count).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Registers a node; timestamps must strictly increase.
    pub fn add_node(&mut self, timestamp: f64, initial: NavState) -> Result<usize> {
        if let Some(last) = self.nodes.last() {
            if timestamp <= last.timestamp {
                return Err(Error::NonMonotoneTime {
                    prev: last.timestamp,
                    next: timestamp,
                });
            }
        }
        self.offsets.push(self.dim);
        self.dim += initial.tangent_dim();
        self.nodes.push(Node {
            timestamp,
            state: initial,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn tangent_dim(&self, node: usize) -> Result<usize> {
        Ok(self.state(node)?.tangent_dim())
    }

    /// Column offset of a tangent block.
    pub fn offset(&self, key: Key) -> Result<usize> {
        match key {
            Key::Base(n) => {
                self.node(n)?;
                Ok(self.offsets[n])
            }
            Key::Contact(n, foot) => {
                let state = self.state(n)?;
                let rank = state
                    .contacts
                    .keys()
                    .position(|&f| f == foot)
                    .ok_or(Error::MissingContactState { node: n, foot })?;
                Ok(self.offsets[n] + BASE_DIM + CONTACT_DIM * rank)
            }
        }
    }

    pub fn has_key(&self, key: Key) -> bool {
        match key {
            Key::Base(n) => n < self.nodes.len(),
            Key::Contact(n, f) => self.nodes.get(n).is_some_and(|x| x.state.contacts.contains_key(&f)),
        }
    }

    /// Retracts a single block in place.
    pub fn retract_key(&mut self, key: Key, delta: &[f64]) -> Result<()> {
        match key {
            Key::Base(n) => {
                self.state_mut(n)?.retract_base(delta);
                Ok(())
            }
            Key::Contact(n, foot) => self
                .state_mut(n)?
                .retract_contact(foot, delta)
                .map_err(|_| Error::MissingContactState { node: n, foot }),
        }
    }

    /// Retracts every variable by the stacked tangent increment.
    pub fn retract(&self, delta: &DVector<f64>) -> Result<GraphValues> {
        if delta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: delta.len(),
            });
        }
        let mut out = self.clone();
        for (n, node) in out.nodes.iter_mut().enumerate() {
            let off = self.offsets[n];
            node.state.retract_base(&delta.as_slice()[off..off + BASE_DIM]);
            let feet: Vec<usize> = node.state.contacts.keys().copied().collect();
            for (rank, foot) in feet.into_iter().enumerate() {
                let o = off + BASE_DIM + CONTACT_DIM * rank;
                node.state
                    .retract_contact(foot, &delta.as_slice()[o..o + CONTACT_DIM])?;
            }
        }
        Ok(out)
    }
}
