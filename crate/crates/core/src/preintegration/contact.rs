//! Preintegrated contact measurements for rigid (6-DOF) and point (3-DOF) feet.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::kinematics::{fk_angles, KinematicChain};
use crate::manifold::{exp_so3, log_so3, Rotation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContactKind {
    Rigid,
    Point,
}

impl ContactKind {
    pub fn dim(self) -> usize {
        match self {
            ContactKind::Rigid => 6,
            ContactKind::Point => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactEvent {
    pub timestamp: f64,
    pub foot: usize,
    pub in_contact: bool,
}

/// A preintegrated contact measurement. The measured deltas are identity by
/// the no-slip model; only the covariance carries information.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactDelta {
    pub kind: ContactKind,
    pub t_i: f64,
    pub t_j: f64,
    pub delta_c: Rotation,
    pub delta_d: Vector3<f64>,
    pub covariance: DMatrix<f64>,
}

/// Fails with `BrokenContact` if `foot` is not continuously in contact over
/// `[t_i, t_j]` according to the time-sorted `events`.
pub fn check_contact_persists(events: &[ContactEvent], foot: usize, t_i: f64, t_j: f64) -> Result<()> {
    let mut state = false;
    for e in events.iter().filter(|e| e.foot == foot) {
        if e.timestamp > t_i {
            if e.timestamp < t_j && !e.in_contact {
                return Err(Error::BrokenContact);
            }
            if e.timestamp >= t_j {
                break;
            }
        } else {
            state = e.in_contact;
        }
    }
    if state {
        Ok(())
    } else {
        Err(Error::BrokenContact)
    }
}

fn check_psd3(m: &Matrix3<f64>) -> Result<()> {
    if (m - m.transpose()).norm() > 1e-12 {
        return Err(Error::InvalidConfig("contact noise covariance is not symmetric".into()));
    }
    if m.symmetric_eigenvalues().iter().any(|&e| e < -1e-12) {
        return Err(Error::InvalidConfig("contact noise covariance is not PSD".into()));
    }
    Ok(())
}

/// Closed-form rigid contact delta for constant velocity-noise densities.
pub fn rigid_contact_preintegrate(
    t_i: f64,
    t_j: f64,
    sigma_omega: &Matrix3<f64>,
    sigma_v: &Matrix3<f64>,
) -> Result<ContactDelta> {
    if t_j <= t_i {
        return Err(Error::NonPositiveInterval(t_j - t_i));
    }
    check_psd3(sigma_omega)?;
    check_psd3(sigma_v)?;
    let dt = t_j - t_i;
    let mut cov = DMatrix::zeros(6, 6);
    cov.view_mut((0, 0), (3, 3)).copy_from(&(sigma_omega * dt));
    cov.view_mut((3, 3), (3, 3)).copy_from(&(sigma_v * dt));
    Ok(ContactDelta {
        kind: ContactKind::Rigid,
        t_i,
        t_j,
        delta_c: Rotation::identity(),
        delta_d: Vector3::zeros(),
        covariance: cov,
    })
}

/// Per-sample rigid contact accumulator; supports noise that varies between
/// samples.
#[derive(Clone, Debug)]
pub struct RigidContactPreintegrator {
    t_i: f64,
    t: f64,
    covariance: Matrix6<f64>,
}

impl RigidContactPreintegrator {
    pub fn new(t_i: f64) -> Self {
        Self {
            t_i,
            t: t_i,
            covariance: Matrix6::zeros(),
        }
    }

    pub fn integrate(&mut self, dt: f64, sigma_omega: &Matrix3<f64>, sigma_v: &Matrix3<f64>) -> Result<()> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::NonPositiveInterval(dt));
        }
        // discrete noise Cov/dt enters as (dt)² Cov/dt
        let mut step = Matrix6::zeros();
        step.fixed_view_mut::<3, 3>(0, 0).copy_from(&(sigma_omega * dt));
        step.fixed_view_mut::<3, 3>(3, 3).copy_from(&(sigma_v * dt));
        self.covariance += step;
        self.t += dt;
        Ok(())
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    pub fn finish(self) -> Result<ContactDelta> {
        if self.t <= self.t_i {
            return Err(Error::NonPositiveInterval(self.t - self.t_i));
        }
        Ok(ContactDelta {
            kind: ContactKind::Rigid,
            t_i: self.t_i,
            t_j: self.t,
            delta_c: Rotation::identity(),
            delta_d: Vector3::zeros(),
            covariance: DMatrix::from_column_slice(6, 6, self.covariance.as_slice()),
        })
    }
}

/// Iterative rigid preintegration over consecutive sample durations, with a
/// per-sample noise callback `(k, t) -> (Σ_ω, Σ_v)`.
pub fn rigid_contact_preintegrate_with<F>(t_i: f64, dt_samples: &[f64], mut noise: F) -> Result<ContactDelta>
where
    F: FnMut(usize, f64) -> (Matrix3<f64>, Matrix3<f64>),
{
    let mut pre = RigidContactPreintegrator::new(t_i);
    let mut t = t_i;
    for (k, &dt) in dt_samples.iter().enumerate() {
        let (so, sv) = noise(k, t);
        pre.integrate(dt, &so, &sv)?;
        t += dt;
    }
    pre.finish()
}

/// `vec(Log(C_iᵀ C_j), C_iᵀ (d_j − d_i))`.
pub fn rigid_contact_residual(
    c_i: &Rotation,
    d_i: &Vector3<f64>,
    c_j: &Rotation,
    d_j: &Vector3<f64>,
) -> Result<Vector6<f64>> {
    let r = log_so3(&(c_i.transpose() * *c_j))?;
    let p = c_i.transpose() * (d_j - d_i);
    Ok(Vector6::new(r.x, r.y, r.z, p.x, p.y, p.z))
}

/// `R_iᵀ (d_j − d_i)`.
pub fn point_contact_residual(r_i: &Rotation, d_i: &Vector3<f64>, d_j: &Vector3<f64>) -> Vector3<f64> {
    r_i.transpose() * (d_j - d_i)
}

/// One gyro + encoder sample of a point-contact interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PointContactSample {
    pub timestamp: f64,
    pub gyro: Vector3<f64>,
    pub angles: Vec<f64>,
}

/// Point-contact covariance recursion. The first step is driven by the state
/// estimate at `t_i`; later steps by the measured rotation increments and
/// forward kinematics.
#[derive(Clone, Debug)]
pub struct PointContactPreintegrator {
    t_i: f64,
    t: f64,
    steps: usize,
    delta_r: Rotation,
    gyro_bias: Vector3<f64>,
    sigma_vd: Matrix3<f64>,
    covariance: Matrix3<f64>,
}

impl PointContactPreintegrator {
    pub fn new(t_i: f64, gyro_bias: Vector3<f64>, sigma_vd: Matrix3<f64>) -> Result<Self> {
        check_psd3(&sigma_vd)?;
        Ok(Self {
            t_i,
            t: t_i,
            steps: 0,
            delta_r: Rotation::identity(),
            gyro_bias,
            sigma_vd,
            covariance: Matrix3::zeros(),
        })
    }

    fn accumulate(&mut self, b: &Matrix3<f64>) {
        let c = self.covariance + b * self.sigma_vd * b.transpose();
        self.covariance = (c + c.transpose()) * 0.5;
    }

    /// First step, with `B = R_iᵀ C_i Δt`.
    pub fn first_step(&mut self, r_i: &Rotation, c_i: &Rotation, gyro: &Vector3<f64>, dt: f64) -> Result<()> {
        if self.steps != 0 {
            return Err(Error::InvalidConfig("first_step called twice".into()));
        }
        self.step_with(&(r_i.transpose() * *c_i), gyro, dt)
    }

    /// Later step, with `B = ΔR_ik fk_R(α_k) Δt`.
    pub fn step(&mut self, fk_r: &Rotation, gyro: &Vector3<f64>, dt: f64) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig(
                "point contact recursion needs a first step".into(),
            ));
        }
        let m = self.delta_r * *fk_r;
        self.step_with(&m, gyro, dt)
    }

    fn step_with(&mut self, rot: &Rotation, gyro: &Vector3<f64>, dt: f64) -> Result<()> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::NonPositiveInterval(dt));
        }
        let b = rot.matrix() * dt;
        self.accumulate(&b);
        self.delta_r = (self.delta_r * exp_so3(&((gyro - self.gyro_bias) * dt))).cleaned();
        self.t += dt;
        self.steps += 1;
        Ok(())
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.covariance
    }

    pub fn finish(self) -> Result<ContactDelta> {
        if self.steps == 0 {
            return Err(Error::NonPositiveInterval(0.0));
        }
        Ok(ContactDelta {
            kind: ContactKind::Point,
            t_i: self.t_i,
            t_j: self.t,
            delta_c: Rotation::identity(),
            delta_d: Vector3::zeros(),
            covariance: DMatrix::from_column_slice(3, 3, self.covariance.as_slice()),
        })
    }
}

/// Builds a point-contact delta over `[samples[0].timestamp, t_j]`.
///
/// `sigma_vd` is the per-sample (discrete) contact velocity covariance, i.e.
/// a continuous density divided by the sample period.
#[allow(clippy::too_many_arguments)]
pub fn point_contact_preintegrate(
    samples: &[PointContactSample],
    t_j: f64,
    chain: &KinematicChain,
    c_i: &Rotation,
    r_i: &Rotation,
    gyro_bias: &Vector3<f64>,
    sigma_vd: &Matrix3<f64>,
) -> Result<ContactDelta> {
    let first = samples.first().ok_or(Error::EmptyStream)?;
    if t_j <= first.timestamp {
        return Err(Error::NonPositiveInterval(t_j - first.timestamp));
    }
    let mut pre = PointContactPreintegrator::new(first.timestamp, *gyro_bias, *sigma_vd)?;
    for (k, s) in samples.iter().enumerate() {
        if s.angles.len() != chain.encoder_count() {
            return Err(Error::DimensionMismatch {
                expected: chain.encoder_count(),
                got: s.angles.len(),
            });
        }
        let stop = samples.get(k + 1).map_or(t_j, |n| n.timestamp);
        if stop <= s.timestamp {
            return Err(Error::NonMonotoneTime {
                prev: s.timestamp,
                next: stop,
            });
        }
        let dt = stop - s.timestamp;
        if k == 0 {
            pre.first_step(r_i, c_i, &s.gyro, dt)?;
        } else {
            let (fk_r, _) = fk_angles(chain, &s.angles)?;
            pre.step(&fk_r, &s.gyro, dt)?;
        }
    }
    pre.finish()
}
