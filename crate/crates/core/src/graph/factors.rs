//! Residuals and Jacobians of the factor families.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3, Vector6};

use super::{ContactState, Key, NavState, BASE_DIM, CONTACT_DIM};
use crate::error::{Error, Result};
use crate::kinematics::FkResult;
use crate::manifold::{hat, log_so3, right_jacobian_inverse, Pose, Rotation};
use crate::preintegration::{
    point_contact_residual, rigid_contact_residual, ContactDelta, ContactKind, ImuBias, ImuDelta, GRAVITY,
};

/// How factor Jacobians are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JacobianMode {
    /// Closed forms where available, central differences otherwise.
    #[default]
    Analytic,
    /// Central differences for every factor.
    Numeric,
}

/// Central-difference step on the tangent space.
pub const NUMERIC_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PriorMeasurement {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
}

impl PriorMeasurement {
    pub fn from_state(s: &NavState) -> Self {
        Self {
            rotation: s.rotation,
            position: s.position,
            velocity: s.velocity,
            bias: s.bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelativePoseMeasurement {
    pub i: usize,
    pub j: usize,
    pub pose: Pose,
    pub covariance: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FactorKind {
    Prior {
        node: usize,
        mean: PriorMeasurement,
    },
    RelativePose(RelativePoseMeasurement),
    Imu {
        i: usize,
        j: usize,
        delta: ImuDelta,
    },
    ForwardKinematic {
        node: usize,
        foot: usize,
        fk: FkResult,
    },
    Contact {
        i: usize,
        j: usize,
        foot: usize,
        delta: ContactDelta,
    },
    BiasRandomWalk {
        i: usize,
        j: usize,
    },
}

fn contact_at(state: &NavState, node: usize, foot: usize) -> Result<&ContactState> {
    state
        .contacts
        .get(&foot)
        .ok_or(Error::MissingContactState { node, foot })
}

fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

fn prior_residual(state: &NavState, mean: &PriorMeasurement) -> Result<DVector<f64>> {
    let rot = log_so3(&(mean.rotation.transpose() * state.rotation))?;
    let pos = mean.rotation.transpose() * (state.position - mean.position);
    let mut r = DVector::zeros(BASE_DIM);
    r.fixed_rows_mut::<3>(0).copy_from(&rot);
    r.fixed_rows_mut::<3>(3).copy_from(&pos);
    r.fixed_rows_mut::<3>(6).copy_from(&(state.velocity - mean.velocity));
    r.fixed_rows_mut::<3>(9).copy_from(&(state.bias.gyro - mean.bias.gyro));
    r.fixed_rows_mut::<3>(12)
        .copy_from(&(state.bias.accel - mean.bias.accel));
    Ok(r)
}

/// `vec(Log(R̃ᵀ R_iᵀ R_j), R_iᵀ (p_j − p_i) − p̃)`.
pub fn relative_pose_residual(
    state_i: &NavState,
    state_j: &NavState,
    meas: &RelativePoseMeasurement,
) -> Result<Vector6<f64>> {
    let rel = state_i.rotation.transpose() * state_j.rotation;
    let rot = log_so3(&(meas.pose.rotation.transpose() * rel))?;
    let pos = state_i.rotation.transpose() * (state_j.position - state_i.position) - meas.pose.translation;
    Ok(stack(&rot, &pos))
}

/// Rotation, velocity and position residuals of a preintegrated IMU
/// measurement, bias-corrected at `state_i`'s bias.
pub fn imu_factor_residual(
    state_i: &NavState,
    state_j: &NavState,
    delta: &ImuDelta,
    gravity: &Vector3<f64>,
) -> Result<SVector<f64, 9>> {
    let (dr, dv, dp) = delta.corrected(&state_i.bias);
    let dt = delta.dt_total;
    let ri_t = state_i.rotation.transpose();
    let rot = log_so3(&(dr.transpose() * (ri_t * state_j.rotation)))?;
    let vel = ri_t * (state_j.velocity - state_i.velocity - gravity * dt) - dv;
    let pos = ri_t * (state_j.position - state_i.position - state_i.velocity * dt - gravity * (0.5 * dt * dt)) - dp;
    let mut r = SVector::<f64, 9>::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&rot);
    r.fixed_rows_mut::<3>(3).copy_from(&vel);
    r.fixed_rows_mut::<3>(6).copy_from(&pos);
    Ok(r)
}

/// `vec(Log(fk_Rᵀ R_iᵀ C_i), R_iᵀ (d_i − p_i) − fk_p)` for one foot.
pub fn fk_factor_residual(state: &NavState, foot: usize, fk: &FkResult) -> Result<Vector6<f64>> {
    let c = contact_at(state, usize::MAX, foot)?;
    let ri_t = state.rotation.transpose();
    let rot = log_so3(&(fk.rotation.transpose() * (ri_t * c.rotation)))?;
    let pos = ri_t * (c.position - state.position) - fk.position;
    Ok(stack(&rot, &pos))
}

/// Rigid (6) or point (3) contact residual for `foot` between two nodes.
pub fn contact_factor_residual(
    state_i: &NavState,
    state_j: &NavState,
    delta: &ContactDelta,
    foot: usize,
) -> Result<DVector<f64>> {
    let ci = contact_at(state_i, usize::MAX, foot)?;
    let cj = contact_at(state_j, usize::MAX, foot)?;
    Ok(match delta.kind {
        ContactKind::Rigid => {
            let r = rigid_contact_residual(&ci.rotation, &ci.position, &cj.rotation, &cj.position)?;
            DVector::from_column_slice(r.as_slice())
        }
        ContactKind::Point => {
            let r = point_contact_residual(&state_i.rotation, &ci.position, &cj.position);
            DVector::from_column_slice(r.as_slice())
        }
    })
}

/// A residual family instance with its covariance and whitening operator.
#[derive(Clone, Debug)]
pub struct Factor {
    kind: FactorKind,
    covariance: DMatrix<f64>,
    whitener: DMatrix<f64>,
}

impl Factor {
    fn with_covariance(kind: FactorKind, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let n = sym.nrows();
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::SingularCovariance)?;
        if whitener.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            kind,
            covariance: sym,
            whitener,
        })
    }

    /// Unary anchor on a node's base block; covariance is 15×15.
    pub fn prior(node: usize, mean: PriorMeasurement, covariance: DMatrix<f64>) -> Result<Self> {
        check_dim(&covariance, BASE_DIM)?;
        Self::with_covariance(FactorKind::Prior { node, mean }, covariance)
    }

    pub fn relative_pose(meas: RelativePoseMeasurement) -> Result<Self> {
        check_dim(&meas.covariance, 6)?;
        if meas.j <= meas.i {
            return Err(Error::InvalidConfig(format!(
                "relative pose between nodes {} and {} must point forward",
                meas.i, meas.j
            )));
        }
        let cov = meas.covariance.clone();
        Self::with_covariance(FactorKind::RelativePose(meas), cov)
    }

    pub fn imu(i: usize, j: usize, delta: ImuDelta) -> Result<Self> {
        let cov = DMatrix::from_column_slice(9, 9, delta.covariance.as_slice());
        Self::with_covariance(FactorKind::Imu { i, j, delta }, cov)
    }

    pub fn forward_kinematic(node: usize, foot: usize, fk: FkResult) -> Result<Self> {
        let cov = DMatrix::from_column_slice(6, 6, fk.covariance.as_slice());
        Self::with_covariance(FactorKind::ForwardKinematic { node, foot, fk }, cov)
    }

    pub fn contact(i: usize, j: usize, foot: usize, delta: ContactDelta) -> Result<Self> {
        check_dim(&delta.covariance, delta.kind.dim())?;
        let cov = delta.covariance.clone();
        Self::with_covariance(FactorKind::Contact { i, j, foot, delta }, cov)
    }

    /// Bias change between two nodes; covariance ordered `(gyro, accel)`.
    pub fn bias_random_walk(i: usize, j: usize, covariance: DMatrix<f64>) -> Result<Self> {
        check_dim(&covariance, 6)?;
        Self::with_covariance(FactorKind::BiasRandomWalk { i, j }, covariance)
    }

    pub fn kind(&self) -> &FactorKind {
        &self.kind
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Distinct nodes this factor reads, in evaluation order.
    pub fn nodes(&self) -> Vec<usize> {
        match &self.kind {
            FactorKind::Prior { node, .. } | FactorKind::ForwardKinematic { node, .. } => {
                vec![*node]
            }
            FactorKind::RelativePose(m) => vec![m.i, m.j],
            FactorKind::Imu { i, j, .. } | FactorKind::Contact { i, j, .. } | FactorKind::BiasRandomWalk { i, j } => {
                vec![*i, *j]
            }
        }
    }

    /// Tangent blocks the residual depends on.
    pub fn keys(&self) -> Vec<Key> {
        match &self.kind {
            FactorKind::Prior { node, .. } => vec![Key::Base(*node)],
            FactorKind::RelativePose(m) => vec![Key::Base(m.i), Key::Base(m.j)],
            FactorKind::Imu { i, j, .. } | FactorKind::BiasRandomWalk { i, j } => {
                vec![Key::Base(*i), Key::Base(*j)]
            }
            FactorKind::ForwardKinematic { node, foot, .. } => {
                vec![Key::Base(*node), Key::Contact(*node, *foot)]
            }
            FactorKind::Contact { i, j, foot, delta } => match delta.kind {
                ContactKind::Rigid => vec![Key::Contact(*i, *foot), Key::Contact(*j, *foot)],
                ContactKind::Point => vec![Key::Base(*i), Key::Contact(*i, *foot), Key::Contact(*j, *foot)],
            },
        }
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        !matches!(self.kind, FactorKind::Imu { .. } | FactorKind::ForwardKinematic { .. })
    }

    /// Unwhitened residual given the states of [`Factor::nodes`], in order.
    pub fn evaluate(&self, states: &[&NavState]) -> Result<DVector<f64>> {
        let node_ids = self.nodes();
        let fix = |e: Error, n: usize| match e {
            Error::MissingContactState { foot, .. } => Error::MissingContactState { node: n, foot },
            other => other,
        };
        match &self.kind {
            FactorKind::Prior { mean, .. } => prior_residual(states[0], mean),
            FactorKind::RelativePose(m) => {
                relative_pose_residual(states[0], states[1], m).map(|r| DVector::from_column_slice(r.as_slice()))
            }
            FactorKind::Imu { delta, .. } => imu_factor_residual(states[0], states[1], delta, &GRAVITY)
                .map(|r| DVector::from_column_slice(r.as_slice())),
            FactorKind::ForwardKinematic { foot, fk, .. } => fk_factor_residual(states[0], *foot, fk)
                .map(|r| DVector::from_column_slice(r.as_slice()))
                .map_err(|e| fix(e, node_ids[0])),
            FactorKind::Contact { foot, delta, .. } => {
                contact_at(states[0], node_ids[0], *foot)?;
                contact_at(states[1], node_ids[1], *foot)?;
                contact_factor_residual(states[0], states[1], delta, *foot)
            }
            FactorKind::BiasRandomWalk { .. } => {
                let (bi, bj) = (&states[0].bias, &states[1].bias);
                let g = bj.gyro - bi.gyro;
                let a = bj.accel - bi.accel;
                Ok(DVector::from_column_slice(stack(&g, &a).as_slice()))
            }
        }
    }

    pub fn residual(&self, values: &super::GraphValues) -> Result<DVector<f64>> {
        let states = self.gather(values)?;
        let refs: Vec<&NavState> = states.iter().collect();
        self.evaluate(&refs)
    }

    fn gather(&self, values: &super::GraphValues) -> Result<Vec<NavState>> {
        self.nodes().into_iter().map(|n| values.state(n).cloned()).collect()
    }

    pub fn whiten_vector(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.whitener * r
    }

    pub fn whiten_matrix(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        &self.whitener * j
    }

    /// `rᵀ Σ⁻¹ r`.
    pub fn cost(&self, values: &super::GraphValues) -> Result<f64> {
        Ok(self.whiten_vector(&self.residual(values)?).norm_squared())
    }

    /// Jacobian blocks matching [`Factor::keys`], unwhitened.
    pub fn jacobian(&self, values: &super::GraphValues, mode: JacobianMode) -> Result<Vec<DMatrix<f64>>> {
        let states = self.gather(values)?;
        if mode == JacobianMode::Analytic {
            if let Some(j) = self.analytic_jacobian(&states)? {
                return Ok(j);
            }
        }
        self.numeric_jacobian_states(&states, NUMERIC_STEP)
    }

    /// Central-difference Jacobian blocks with step `h`.
    pub fn numeric_jacobian(&self, values: &super::GraphValues, h: f64) -> Result<Vec<DMatrix<f64>>> {
        let states = self.gather(values)?;
        self.numeric_jacobian_states(&states, h)
    }

    /// Closed-form Jacobian blocks, or `None` for families without one.
    pub fn analytic_jacobian_at(&self, values: &super::GraphValues) -> Result<Option<Vec<DMatrix<f64>>>> {
        let states = self.gather(values)?;
        self.analytic_jacobian(&states)
    }

    fn numeric_jacobian_states(&self, states: &[NavState], h: f64) -> Result<Vec<DMatrix<f64>>> {
        let nodes = self.nodes();
        let dim = self.dim();
        let mut out = Vec::new();
        for key in self.keys() {
            let slot = nodes
                .iter()
                .position(|&n| n == key.node())
                .expect("key node belongs to factor");
            let kd = key.dim();
            let mut jac = DMatrix::zeros(dim, kd);
            let mut delta = vec![0.0; kd];
            for c in 0..kd {
                let mut eval = |sign: f64| -> Result<DVector<f64>> {
                    delta[c] = sign * h;
                    let mut perturbed = states[slot].clone();
                    match key {
                        Key::Base(_) => perturbed.retract_base(&delta),
                        Key::Contact(_, foot) => perturbed.retract_contact(foot, &delta)?,
                    }
                    delta[c] = 0.0;
                    let refs: Vec<&NavState> = states
                        .iter()
                        .enumerate()
                        .map(|(k, s)| if k == slot { &perturbed } else { s })
                        .collect();
                    self.evaluate(&refs)
                };
                let plus = eval(1.0)?;
                let minus = eval(-1.0)?;
                jac.set_column(c, &((plus - minus) / (2.0 * h)));
            }
            out.push(jac);
        }
        Ok(out)
    }

    fn analytic_jacobian(&self, states: &[NavState]) -> Result<Option<Vec<DMatrix<f64>>>> {
        let nodes = self.nodes();
        let blocks = match &self.kind {
            FactorKind::Prior { mean, .. } => {
                let s = &states[0];
                let r = log_so3(&(mean.rotation.transpose() * s.rotation))?;
                let mut j = DMatrix::identity(BASE_DIM, BASE_DIM);
                set3(&mut j, 0, 0, &right_jacobian_inverse(&r));
                set3(&mut j, 3, 3, (mean.rotation.transpose() * s.rotation).matrix());
                vec![j]
            }
            FactorKind::RelativePose(m) => {
                let (si, sj) = (&states[0], &states[1]);
                let rel = si.rotation.transpose() * sj.rotation;
                let r = log_so3(&(m.pose.rotation.transpose() * rel))?;
                let jinv = right_jacobian_inverse(&r);
                let u = si.rotation.transpose() * (sj.position - si.position);
                let mut ji = DMatrix::zeros(6, BASE_DIM);
                set3(&mut ji, 0, 0, &(-jinv * rel.transpose().matrix()));
                set3(&mut ji, 3, 0, &hat(&u));
                set3(&mut ji, 3, 3, &(-Matrix3::identity()));
                let mut jj = DMatrix::zeros(6, BASE_DIM);
                set3(&mut jj, 0, 0, &jinv);
                set3(&mut jj, 3, 3, rel.matrix());
                vec![ji, jj]
            }
            FactorKind::BiasRandomWalk { .. } => {
                let mut ji = DMatrix::zeros(6, BASE_DIM);
                let mut jj = DMatrix::zeros(6, BASE_DIM);
                for k in 0..6 {
                    ji[(k, 9 + k)] = -1.0;
                    jj[(k, 9 + k)] = 1.0;
                }
                vec![ji, jj]
            }
            FactorKind::Contact { foot, delta, .. } => {
                let ci = contact_at(&states[0], nodes[0], *foot)?;
                let cj = contact_at(&states[1], nodes[1], *foot)?;
                match delta.kind {
                    ContactKind::Rigid => {
                        let rel = ci.rotation.transpose() * cj.rotation;
                        let jinv = right_jacobian_inverse(&log_so3(&rel)?);
                        let cit = ci.rotation.transpose();
                        let u = cit * (cj.position - ci.position);
                        let mut ji = DMatrix::zeros(6, CONTACT_DIM);
                        set3(&mut ji, 0, 0, &(-jinv * rel.transpose().matrix()));
                        set3(&mut ji, 3, 0, &hat(&u));
                        set3(&mut ji, 3, 3, &(-cit.matrix()));
                        let mut jj = DMatrix::zeros(6, CONTACT_DIM);
                        set3(&mut jj, 0, 0, &jinv);
                        set3(&mut jj, 3, 3, cit.matrix());
                        vec![ji, jj]
                    }
                    ContactKind::Point => {
                        let rit = states[0].rotation.transpose();
                        let u = rit * (cj.position - ci.position);
                        let mut jb = DMatrix::zeros(3, BASE_DIM);
                        set3(&mut jb, 0, 0, &hat(&u));
                        let mut ji = DMatrix::zeros(3, CONTACT_DIM);
                        set3(&mut ji, 0, 3, &(-rit.matrix()));
                        let mut jj = DMatrix::zeros(3, CONTACT_DIM);
                        set3(&mut jj, 0, 3, rit.matrix());
                        vec![jb, ji, jj]
                    }
                }
            }
            FactorKind::Imu { .. } | FactorKind::ForwardKinematic { .. } => return Ok(None),
        };
        Ok(Some(blocks))
    }
}

fn set3(m: &mut DMatrix<f64>, r: usize, c: usize, block: &Matrix3<f64>) {
    m.view_mut((r, c), (3, 3)).copy_from(block);
}

fn check_dim(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}
