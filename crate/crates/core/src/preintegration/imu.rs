//! On-manifold IMU preintegration with first-order bias correction.
//!
//! Error state ordering is `(dphi, dv, dp)`. Noise parameters are
//! continuous-time densities; a sample of duration `dt` sees discrete noise
//! with covariance `sigma² / dt`.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, hat, right_jacobian, Rotation};

pub type Matrix9 = SMatrix<f64, 9, 9>;
type Matrix9x3 = SMatrix<f64, 9, 3>;

/// World gravity, z up.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }
}

/// Continuous-time white-noise and random-walk densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    pub gyro: f64,
    pub accel: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl ImuNoise {
    pub fn zero() -> Self {
        Self {
            gyro: 0.0,
            accel: 0.0,
            gyro_bias: 0.0,
            accel_bias: 0.0,
        }
    }
}

/// Preintegrated IMU measurement between two timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuDelta {
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub dt_total: f64,
    pub covariance: Matrix9,
    pub bias_lin: ImuBias,
    pub noise: ImuNoise,
    pub d_r_d_bg: Matrix3<f64>,
    pub d_v_d_bg: Matrix3<f64>,
    pub d_v_d_ba: Matrix3<f64>,
    pub d_p_d_bg: Matrix3<f64>,
    pub d_p_d_ba: Matrix3<f64>,
}

impl ImuDelta {
    pub fn identity(bias_lin: ImuBias, noise: ImuNoise) -> Self {
        Self {
            delta_r: Rotation::identity(),
            delta_v: Vector3::zeros(),
            delta_p: Vector3::zeros(),
            dt_total: 0.0,
            covariance: Matrix9::zeros(),
            bias_lin,
            noise,
            d_r_d_bg: Matrix3::zeros(),
            d_v_d_bg: Matrix3::zeros(),
            d_v_d_ba: Matrix3::zeros(),
            d_p_d_bg: Matrix3::zeros(),
            d_p_d_ba: Matrix3::zeros(),
        }
    }

    /// Deltas re-expressed at `bias` through the stored first-order Jacobians.
    pub fn corrected(&self, bias: &ImuBias) -> (Rotation, Vector3<f64>, Vector3<f64>) {
        let dbg = bias.gyro - self.bias_lin.gyro;
        let dba = bias.accel - self.bias_lin.accel;
        let r = self.delta_r * exp_so3(&(self.d_r_d_bg * dbg));
        let v = self.delta_v + self.d_v_d_bg * dbg + self.d_v_d_ba * dba;
        let p = self.delta_p + self.d_p_d_bg * dbg + self.d_p_d_ba * dba;
        (r, v, p)
    }

    /// Propagates `(R, p, v)` over the interval at `bias`.
    pub fn predict(
        &self,
        rotation: &Rotation,
        position: &Vector3<f64>,
        velocity: &Vector3<f64>,
        bias: &ImuBias,
    ) -> (Rotation, Vector3<f64>, Vector3<f64>) {
        let (dr, dv, dp) = self.corrected(bias);
        let dt = self.dt_total;
        let r = (*rotation * dr).cleaned();
        let v = velocity + GRAVITY * dt + rotation * &dv;
        let p = position + velocity * dt + GRAVITY * (0.5 * dt * dt) + rotation * &dp;
        (r, p, v)
    }

    /// Diagonal random-walk covariance of the bias change over the interval,
    /// ordered `(gyro, accel)`.
    pub fn bias_walk_covariance(&self) -> SMatrix<f64, 6, 6> {
        let mut cov = SMatrix::<f64, 6, 6>::zeros();
        let g = self.noise.gyro_bias.powi(2) * self.dt_total;
        let a = self.noise.accel_bias.powi(2) * self.dt_total;
        for k in 0..3 {
            cov[(k, k)] = g;
            cov[(k + 3, k + 3)] = a;
        }
        cov
    }

    /// Concatenates `next`, which must follow `self` in time and share its
    /// linearization bias.
    pub fn append(&self, next: &ImuDelta) -> ImuDelta {
        let r1 = self.delta_r;
        let r2 = next.delta_r;
        let dt2 = next.dt_total;
        let r1m = *r1.matrix();
        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(r2.transpose().matrix());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r1m * hat(&next.delta_v)));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r1m * hat(&next.delta_p)));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt2));
        let mut b = Matrix9::identity();
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&r1m);
        b.fixed_view_mut::<3, 3>(6, 6).copy_from(&r1m);
        let covariance = a * self.covariance * a.transpose() + b * next.covariance * b.transpose();

        ImuDelta {
            delta_r: (r1 * r2).cleaned(),
            delta_v: self.delta_v + r1m * next.delta_v,
            delta_p: self.delta_p + self.delta_v * dt2 + r1m * next.delta_p,
            dt_total: self.dt_total + dt2,
            covariance: (covariance + covariance.transpose()) * 0.5,
            bias_lin: self.bias_lin,
            noise: self.noise,
            d_r_d_bg: r2.transpose().matrix() * self.d_r_d_bg + next.d_r_d_bg,
            d_v_d_bg: self.d_v_d_bg + r1m * next.d_v_d_bg - r1m * hat(&next.delta_v) * self.d_r_d_bg,
            d_v_d_ba: self.d_v_d_ba + r1m * next.d_v_d_ba,
            d_p_d_bg: self.d_p_d_bg + self.d_v_d_bg * dt2 + r1m * next.d_p_d_bg
                - r1m * hat(&next.delta_p) * self.d_r_d_bg,
            d_p_d_ba: self.d_p_d_ba + self.d_v_d_ba * dt2 + r1m * next.d_p_d_ba,
        }
    }
}

/// Single-writer accumulator of IMU samples.
#[derive(Clone, Debug)]
pub struct ImuPreintegrator {
    delta: ImuDelta,
}

impl ImuPreintegrator {
    pub fn new(bias_lin: ImuBias, noise: ImuNoise) -> Self {
        Self {
            delta: ImuDelta::identity(bias_lin, noise),
        }
    }

    /// Absorbs one zero-order-hold sample lasting `dt` seconds.
    pub fn integrate(&mut self, gyro: &Vector3<f64>, accel: &Vector3<f64>, dt: f64) -> Result<()> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::NonPositiveInterval(dt));
        }
        let d = &mut self.delta;
        let omega = gyro - d.bias_lin.gyro;
        let acc = accel - d.bias_lin.accel;
        let dr = exp_so3(&(omega * dt));
        let jr = right_jacobian(&(omega * dt));
        let rm = *d.delta_r.matrix();
        let acc_hat = hat(&acc);
        let dt2 = dt * dt;

        // bias Jacobians use the pre-update rotation
        d.d_p_d_ba += d.d_v_d_ba * dt - rm * (0.5 * dt2);
        d.d_p_d_bg += d.d_v_d_bg * dt - rm * acc_hat * d.d_r_d_bg * (0.5 * dt2);
        d.d_v_d_ba -= rm * dt;
        d.d_v_d_bg -= rm * acc_hat * d.d_r_d_bg * dt;
        d.d_r_d_bg = dr.transpose().matrix() * d.d_r_d_bg - jr * dt;

        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(dr.transpose().matrix());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rm * acc_hat * dt));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-rm * acc_hat * (0.5 * dt2)));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));
        let mut bg = Matrix9x3::zeros();
        bg.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let mut ba = Matrix9x3::zeros();
        ba.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rm * dt));
        ba.fixed_view_mut::<3, 3>(6, 0).copy_from(&(rm * (0.5 * dt2)));
        let gyro_d = d.noise.gyro * d.noise.gyro / dt;
        let accel_d = d.noise.accel * d.noise.accel / dt;
        let cov = a * d.covariance * a.transpose() + bg * bg.transpose() * gyro_d + ba * ba.transpose() * accel_d;
        d.covariance = (cov + cov.transpose()) * 0.5;

        d.delta_p += d.delta_v * dt + rm * acc * (0.5 * dt2);
        d.delta_v += rm * acc * dt;
        d.delta_r = (d.delta_r * dr).cleaned();
        d.dt_total += dt;
        Ok(())
    }

    pub fn delta(&self) -> &ImuDelta {
        &self.delta
    }

    pub fn finish(self) -> ImuDelta {
        self.delta
    }
}

/// Preintegrates a zero-order-hold sample stream over `[t_start, t_end]`.
///
/// Sample `k` holds from its timestamp until the next one (or `t_end`); the
/// latest sample at or before `t_start` covers the start of the window.
pub fn imu_preintegrate(
    samples: &[ImuSample],
    t_start: f64,
    t_end: f64,
    bias_lin: ImuBias,
    noise: ImuNoise,
) -> Result<ImuDelta> {
    if samples.is_empty() {
        return Err(Error::EmptyStream);
    }
    if t_end <= t_start {
        return Err(Error::NonPositiveInterval(t_end - t_start));
    }
    for w in samples.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::NonMonotoneTime {
                prev: w[0].timestamp,
                next: w[1].timestamp,
            });
        }
    }
    let first = samples.partition_point(|s| s.timestamp <= t_start);
    let first = if first == 0 {
        if samples[0].timestamp >= t_end {
            return Err(Error::EmptyStream);
        }
        0
    } else {
        first - 1
    };
    let mut pre = ImuPreintegrator::new(bias_lin, noise);
    for (k, s) in samples.iter().enumerate().skip(first) {
        if s.timestamp >= t_end {
            break;
        }
        let start = s.timestamp.max(t_start);
        let stop = samples.get(k + 1).map_or(t_end, |next| next.timestamp.min(t_end));
        if stop > start {
            pre.integrate(&s.gyro, &s.accel, stop - start)?;
        }
    }
    if pre.delta().dt_total == 0.0 {
        return Err(Error::EmptyStream);
    }
    Ok(pre.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::log_so3;

    fn noise() -> ImuNoise {
        ImuNoise {
            gyro: 0.002,
            accel: 0.02,
            gyro_bias: 1e-4,
            accel_bias: 1e-3,
        }
    }

    fn stream(n: usize, rate: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Vec<ImuSample> {
        (0..n)
            .map(|k| ImuSample {
                timestamp: k as f64 / rate,
                gyro,
                accel,
            })
            .collect()
    }

    fn wavy(n: usize, rate: f64) -> Vec<ImuSample> {
        (0..n)
            .map(|k| {
                let t = k as f64 / rate;
                ImuSample {
                    timestamp: t,
                    gyro: Vector3::new(0.3 * t.sin(), -0.2, 0.5 * (2.0 * t).cos()),
                    accel: Vector3::new(1.0 + t.cos(), 0.4 * t, 9.81 + 0.2 * (3.0 * t).sin()),
                }
            })
            .collect()
    }

    #[test]
    fn stationary_stream_is_identity() {
        let s = stream(10, 100.0, Vector3::zeros(), Vector3::zeros());
        let d = imu_preintegrate(&s, 0.0, 0.1, ImuBias::default(), noise()).unwrap();
        assert_eq!(d.delta_r, Rotation::identity());
        assert_eq!(d.delta_v, Vector3::zeros());
        assert_eq!(d.delta_p, Vector3::zeros());
        assert!((d.dt_total - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_rate_rotation() {
        let s = stream(100, 100.0, Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        let d = imu_preintegrate(&s, 0.0, 1.0, ImuBias::default(), ImuNoise::zero()).unwrap();
        let expected = exp_so3(&Vector3::new(0.0, 0.0, 1.0));
        assert!((d.delta_r.matrix() - expected.matrix()).norm() < 1e-12);
    }

    #[test]
    fn constant_acceleration_kinematics() {
        let s = stream(100, 100.0, Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let d = imu_preintegrate(&s, 0.0, 1.0, ImuBias::default(), ImuNoise::zero()).unwrap();
        assert!((d.delta_v - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-2);
        assert!((d.delta_p - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-2);
    }

    #[test]
    fn stream_errors() {
        assert!(matches!(
            imu_preintegrate(&[], 0.0, 1.0, ImuBias::default(), noise()),
            Err(Error::EmptyStream)
        ));
        let mut s = stream(5, 10.0, Vector3::zeros(), Vector3::zeros());
        s[3].timestamp = s[2].timestamp;
        assert!(matches!(
            imu_preintegrate(&s, 0.0, 1.0, ImuBias::default(), noise()),
            Err(Error::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn concatenation_matches_single_pass() {
        let s = wavy(200, 100.0);
        let bias = ImuBias::new(Vector3::new(0.01, -0.02, 0.005), Vector3::new(0.1, 0.0, -0.05));
        let whole = imu_preintegrate(&s, 0.0, 2.0, bias, noise()).unwrap();
        let a = imu_preintegrate(&s, 0.0, 0.73, bias, noise()).unwrap();
        let b = imu_preintegrate(&s, 0.73, 2.0, bias, noise()).unwrap();
        let joined = a.append(&b);
        assert!((joined.delta_r.matrix() - whole.delta_r.matrix()).norm() < 1e-9);
        assert!((joined.delta_v - whole.delta_v).norm() < 1e-9);
        assert!((joined.delta_p - whole.delta_p).norm() < 1e-9);
        assert!((joined.covariance - whole.covariance).norm() < 1e-9 * whole.covariance.norm());
        assert!((joined.d_p_d_bg - whole.d_p_d_bg).norm() < 1e-9);
        assert!((joined.d_v_d_bg - whole.d_v_d_bg).norm() < 1e-9);
        assert!((joined.d_r_d_bg - whole.d_r_d_bg).norm() < 1e-9);
    }

    #[test]
    fn sample_rate_does_not_change_covariance() {
        let g = Vector3::new(0.1, -0.3, 0.2);
        let acc = Vector3::new(0.5, 0.1, 9.8);
        let slow = imu_preintegrate(&stream(100, 100.0, g, acc), 0.0, 1.0, ImuBias::default(), noise()).unwrap();
        let fast = imu_preintegrate(&stream(200, 200.0, g, acc), 0.0, 1.0, ImuBias::default(), noise()).unwrap();
        // same continuous density, finer discretization: agree to O(dt)
        let rel = (slow.covariance - fast.covariance).norm() / fast.covariance.norm();
        assert!(rel < 2e-2, "relative difference {rel}");
        // per-sample discrete covariance doubles while dt halves
        let mut one = ImuPreintegrator::new(ImuBias::default(), noise());
        one.integrate(&Vector3::zeros(), &Vector3::zeros(), 0.01).unwrap();
        let mut half = ImuPreintegrator::new(ImuBias::default(), noise());
        half.integrate(&Vector3::zeros(), &Vector3::zeros(), 0.005).unwrap();
        let ratio = one.delta().covariance[(0, 0)] / half.delta().covariance[(0, 0)];
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bias_jacobians_match_reintegration() {
        let s = wavy(150, 100.0);
        let bias = ImuBias::default();
        let d = imu_preintegrate(&s, 0.0, 1.5, bias, noise()).unwrap();
        let errors = |h: f64| {
            let db = ImuBias::new(Vector3::new(1.0, -0.5, 0.7) * h, Vector3::new(-0.3, 0.8, 0.2) * h);
            let exact = imu_preintegrate(&s, 0.0, 1.5, db, noise()).unwrap();
            let (r, v, p) = d.corrected(&db);
            let er = log_so3(&(exact.delta_r.transpose() * r)).unwrap().norm();
            let ev = (exact.delta_v - v).norm();
            let ep = (exact.delta_p - p).norm();
            (er, ev, ep)
        };
        let (r1, v1, p1) = errors(1e-2);
        let (r2, v2, p2) = errors(5e-3);
        for (e1, e2) in [(r1, r2), (v1, v2), (p1, p2)] {
            assert!(e1 < 1e-3);
            assert!(e1 / e2 > 3.0, "not quadratic: {e1} vs {e2}");
        }
    }

    #[test]
    fn window_starts_mid_sample() {
        let s = stream(10, 10.0, Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        let d = imu_preintegrate(&s, 0.05, 0.35, ImuBias::default(), ImuNoise::zero()).unwrap();
        assert!((d.dt_total - 0.3).abs() < 1e-15);
        let yaw = log_so3(&d.delta_r).unwrap().z;
        assert!((yaw - 0.3).abs() < 1e-12);
    }
}
