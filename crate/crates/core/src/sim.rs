//! Kinematic walking simulator: a curved base path, alternating rigid foot
//! contacts, leg encoder angles by inverse kinematics, and IMU samples whose
//! zero-order-hold integration reproduces the ground truth exactly.

use nalgebra::{Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk_angles, inverse_kinematics, EncoderReading, KinematicChain};
use crate::manifold::{exp_so3, log_so3, Pose, Rotation};
use crate::preintegration::{ContactEvent, ImuSample, GRAVITY};

/// Sensor noise standard deviations. IMU white noise is per sample; bias
/// random walks are continuous densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub accel: f64,
    pub gyro: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
    pub lc_translation: f64,
    pub lc_rotation: f64,
    pub contact_velocity: f64,
    pub encoder: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            accel: 0.0307,
            gyro: 0.0014,
            accel_bias: 0.005,
            gyro_bias: 0.0005,
            lc_translation: 0.1,
            lc_rotation: 0.0873,
            contact_velocity: 0.1,
            encoder: 0.00873,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            accel: 0.0,
            gyro: 0.0,
            accel_bias: 0.0,
            gyro_bias: 0.0,
            lc_translation: 0.0,
            lc_rotation: 0.0,
            contact_velocity: 0.0,
            encoder: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.accel,
            self.gyro,
            self.accel_bias,
            self.gyro_bias,
            self.lc_translation,
            self.lc_rotation,
            self.contact_velocity,
            self.encoder,
        ];
        if all.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise standard deviations must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Loop-closure covariance ordered (rotation, translation).
    pub fn lc_covariance(&self) -> Matrix6<f64> {
        let mut c = Matrix6::zeros();
        for k in 0..3 {
            c[(k, k)] = self.lc_rotation.powi(2);
            c[(k + 3, k + 3)] = self.lc_translation.powi(2);
        }
        c
    }
}

/// Base path: constant-speed arc with vertical bob and body sway.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub speed: f64,
    pub yaw_rate: f64,
    pub base_height: f64,
    pub bob_amplitude: f64,
    pub roll_amplitude: f64,
    pub pitch_amplitude: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            speed: 0.5,
            yaw_rate: 0.05,
            base_height: 0.9,
            bob_amplitude: 0.01,
            roll_amplitude: 0.03,
            pitch_amplitude: 0.02,
        }
    }
}

impl PathConfig {
    pub fn stationary() -> Self {
        Self {
            speed: 0.0,
            yaw_rate: 0.0,
            bob_amplitude: 0.0,
            roll_amplitude: 0.0,
            pitch_amplitude: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub imu_rate: f64,
    pub path: PathConfig,
    /// Time between touchdowns of alternating feet.
    pub step_period: f64,
    /// Fraction of a foot's gait cycle spent in stance.
    pub stance_fraction: f64,
    /// One chain per foot; foot `f` uses `chains[f]`.
    pub chains: Vec<KinematicChain>,
    pub noise: NoiseConfig,
    pub lc_stride: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            imu_rate: 200.0,
            path: PathConfig::default(),
            step_period: 0.65,
            stance_fraction: 0.6,
            chains: vec![KinematicChain::six_dof_leg(0.1), KinematicChain::six_dof_leg(-0.1)],
            noise: NoiseConfig::default(),
            lc_stride: 2,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > 0.0) || !(self.step_period > 0.0) {
            return Err(Error::InvalidConfig("rates and periods must be positive".into()));
        }
        if !(self.duration > self.step_period) {
            return Err(Error::InvalidConfig("duration must exceed one step period".into()));
        }
        if !(self.stance_fraction > 0.5 && self.stance_fraction < 1.0) {
            return Err(Error::InvalidConfig("stance fraction must lie in (0.5, 1)".into()));
        }
        if self.chains.is_empty() {
            return Err(Error::InvalidConfig("at least one leg chain is required".into()));
        }
        if let Some(c) = self.chains.iter().find(|c| c.encoder_count() != 6) {
            return Err(Error::InvalidConfig(format!(
                "simulated legs need 6 joints, got one with {}",
                c.encoder_count()
            )));
        }
        if self.lc_stride == 0 {
            return Err(Error::InvalidConfig("loop-closure stride must be positive".into()));
        }
        self.noise.validate()
    }

    fn dt(&self) -> f64 {
        1.0 / self.imu_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthState {
    pub timestamp: f64,
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl TruthState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }
}

/// Relative pose of node `t_j` seen from node `t_i`; covariance ordered
/// (rotation, translation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopClosure {
    pub t_i: f64,
    pub t_j: f64,
    pub pose: Pose,
    pub covariance: Matrix6<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    /// Encoder streams indexed by foot.
    pub encoders: Vec<Vec<EncoderReading>>,
    pub contacts: Vec<ContactEvent>,
    pub loop_closures: Vec<LoopClosure>,
    /// Ground truth at node times.
    pub truth: Vec<TruthState>,
}

impl Dataset {
    /// Node schedule: the first IMU time plus every contact event time up to
    /// the last IMU sample.
    pub fn node_times(&self) -> Vec<f64> {
        let (Some(first), Some(last)) = (self.imu.first(), self.imu.last()) else {
            return Vec::new();
        };
        let mut times = vec![first.timestamp];
        for e in &self.contacts {
            let t = e.timestamp;
            if t > first.timestamp && t <= last.timestamp && t > *times.last().unwrap() {
                times.push(t);
            }
        }
        times
    }

    pub fn feet(&self) -> usize {
        self.encoders.len()
    }
}

fn path_pose(p: &PathConfig, t: f64) -> (Rotation, Vector3<f64>, Vector3<f64>) {
    let yaw = p.yaw_rate * t;
    let (x, y) = if p.yaw_rate.abs() < 1e-12 {
        (p.speed * t, 0.0)
    } else {
        let r = p.speed / p.yaw_rate;
        (r * yaw.sin(), r * (1.0 - yaw.cos()))
    };
    let w = std::f64::consts::TAU;
    let z = p.base_height + p.bob_amplitude * (2.0 * w * t).sin();
    let vz = p.bob_amplitude * 2.0 * w * (2.0 * w * t).cos();
    let roll = p.roll_amplitude * (w * 0.8 * t).sin();
    let pitch = p.pitch_amplitude * (w * 1.3 * t).sin();
    let rot = Rotation::about_z(yaw) * Rotation::about_y(pitch) * Rotation::about_x(roll);
    let vel = Vector3::new(p.speed * yaw.cos(), p.speed * yaw.sin(), vz);
    (rot, Vector3::new(x, y, z), vel)
}

struct Gait {
    period: i64,
    stance: i64,
    offsets: Vec<i64>,
}

impl Gait {
    fn new(cfg: &SimConfig) -> Self {
        let step = (cfg.step_period * cfg.imu_rate).round().max(1.0) as i64;
        let period = 2 * step;
        let stance = ((period as f64 * cfg.stance_fraction).round() as i64).clamp(1, period - 1);
        let offsets = (0..cfg.chains.len() as i64).map(|f| f * step).collect();
        Self {
            period,
            stance,
            offsets,
        }
    }

    /// Stance index and phase of foot `f` at tick `k`; stance covers phases
    /// `0..=stance` inclusive of the break tick.
    fn phase(&self, f: usize, k: i64) -> (i64, i64) {
        let rel = k - self.offsets[f];
        (rel.div_euclid(self.period), rel.rem_euclid(self.period))
    }

    fn in_contact(&self, f: usize, k: i64) -> bool {
        self.phase(f, k).1 <= self.stance
    }
}

/// Nominal knee-bent posture used to seed inverse kinematics.
fn nominal_angles(joints: usize) -> Vec<f64> {
    let mut a = vec![0.0; joints];
    if joints == 6 {
        a[2] = 0.4;
        a[3] = -0.8;
        a[4] = 0.4;
    }
    a
}

/// Noiseless dataset with exact kinematic and inertial consistency.
pub fn generate_truth(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let dt = config.dt();
    let ticks = (config.duration * config.imu_rate).round() as usize;
    let feet = config.chains.len();
    let gait = Gait::new(config);

    // base states at ticks 0..=ticks
    let mut rot = Vec::with_capacity(ticks + 1);
    let mut vel = Vec::with_capacity(ticks + 1);
    for k in 0..=ticks {
        let (r, _, v) = path_pose(&config.path, k as f64 * dt);
        rot.push(r);
        vel.push(v);
    }
    let mut pos = Vec::with_capacity(ticks + 1);
    pos.push(path_pose(&config.path, 0.0).1);
    let mut imu = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let gyro = log_so3(&(rot[k].transpose() * rot[k + 1]))? / dt;
        let accel = rot[k].transpose() * ((vel[k + 1] - vel[k]) / dt - GRAVITY);
        imu.push(ImuSample {
            timestamp: k as f64 * dt,
            gyro,
            accel,
        });
        // the same zero-order-hold recursion the preintegrator applies
        let dr = exp_so3(&(gyro * dt));
        let a_w = rot[k] * accel;
        pos.push(pos[k] + vel[k] * dt + (GRAVITY + a_w) * (0.5 * dt * dt));
        rot[k + 1] = (rot[k] * dr).cleaned();
        vel[k + 1] = vel[k] + (GRAVITY + a_w) * dt;
    }

    // contact events on ticks, with the initial state of every foot at t = 0;
    // a break is stamped on the last stance tick
    let mut contacts = Vec::new();
    for k in 0..ticks as i64 {
        for f in 0..feet {
            let now = gait.in_contact(f, k);
            let timestamp = k as f64 * dt;
            if k == 0 || (now && !gait.in_contact(f, k - 1)) {
                contacts.push(ContactEvent {
                    timestamp,
                    foot: f,
                    in_contact: now,
                });
            }
            if now && !gait.in_contact(f, k + 1) {
                contacts.push(ContactEvent {
                    timestamp,
                    foot: f,
                    in_contact: false,
                });
            }
        }
    }

    // encoder angles: inverse kinematics in stance, smooth blend in swing
    let mut encoders = Vec::with_capacity(feet);
    for (f, chain) in config.chains.iter().enumerate() {
        let joints = chain.encoder_count();
        let mut angles: Vec<Option<Vec<f64>>> = vec![None; ticks];
        let mut current_stance = i64::MIN;
        let mut guess = nominal_angles(joints);
        let mut foot_pose = Pose::identity();
        for k in 0..ticks {
            let (n, phase) = gait.phase(f, k as i64);
            if phase > gait.stance {
                continue;
            }
            if n != current_stance {
                current_stance = n;
                guess = nominal_angles(joints);
                let make = gait.offsets[f] + n * gait.period;
                let mid = (make as f64 + gait.stance as f64 / 2.0) * dt;
                let (_, p_mid, _) = path_pose(&config.path, mid);
                let heading = Rotation::about_z(config.path.yaw_rate * mid);
                let hip = chain.links()[0].translation;
                let foot = Vector3::new(p_mid.x, p_mid.y, 0.0) + heading * Vector3::new(0.0, hip.y, 0.0);
                foot_pose = Pose::new(heading, foot);
            }
            let target_r = rot[k].transpose() * foot_pose.rotation;
            let target_p = rot[k].transpose() * (foot_pose.translation - pos[k]);
            let a = inverse_kinematics(chain, &target_r, &target_p, &guess)?;
            guess = a.clone();
            angles[k] = Some(a);
        }
        encoders.push(fill_swing(&angles, joints, dt));
    }

    let mut dataset = Dataset {
        imu,
        encoders,
        contacts,
        loop_closures: Vec::new(),
        truth: Vec::new(),
    };
    let times = dataset.node_times();
    dataset.truth = times
        .iter()
        .map(|&t| {
            let k = (t / dt).round() as usize;
            TruthState {
                timestamp: t,
                rotation: rot[k],
                position: pos[k],
                velocity: vel[k],
            }
        })
        .collect();
    Ok(dataset)
}

fn fill_swing(angles: &[Option<Vec<f64>>], joints: usize, dt: f64) -> Vec<EncoderReading> {
    let n = angles.len();
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        if let Some(a) = &angles[k] {
            out.push(EncoderReading {
                timestamp: k as f64 * dt,
                angles: a.clone(),
            });
            k += 1;
            continue;
        }
        let start = k;
        while k < n && angles[k].is_none() {
            k += 1;
        }
        let before = start.checked_sub(1).and_then(|i| angles[i].clone());
        let after = angles.get(k).cloned().flatten();
        let (a0, a1) = match (before, after) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a.clone(), a),
            (None, Some(b)) => (b.clone(), b),
            (None, None) => (nominal_angles(joints), nominal_angles(joints)),
        };
        let span = (k - start + 1) as f64;
        for i in start..k {
            let s = (i - start + 1) as f64 / span;
            let w = s * s * (3.0 - 2.0 * s);
            out.push(EncoderReading {
                timestamp: i as f64 * dt,
                angles: a0.iter().zip(&a1).map(|(x, y)| x + w * (y - x)).collect(),
            });
        }
    }
    out
}

/// Noiseless relative poses from node `k − stride` to node `k`, for every
/// other node starting at `k = stride`.
pub fn emit_loop_closures(truth: &[TruthState], stride: usize, covariance: &Matrix6<f64>) -> Vec<LoopClosure> {
    if stride == 0 {
        return Vec::new();
    }
    (stride..truth.len())
        .step_by(2)
        .map(|k| {
            let a = &truth[k - stride];
            let b = &truth[k];
            LoopClosure {
                t_i: a.timestamp,
                t_j: b.timestamp,
                pose: a.pose().between(&b.pose()),
                covariance: *covariance,
            }
        })
        .collect()
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * sigma)
}

/// Adds IMU white noise and bias random walks, stance-foot slip, encoder
/// noise, and loop-closure noise. Timestamps are never changed.
pub fn corrupt(dataset: &Dataset, chains: &[KinematicChain], noise: &NoiseConfig, seed: u64) -> Result<Dataset> {
    let mut out = dataset.clone();
    if noise.contact_velocity > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        add_foot_slip(&mut out, chains, noise.contact_velocity, &mut rng)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bg = Vector3::zeros();
    let mut ba = Vector3::zeros();
    for k in 0..out.imu.len() {
        let dt = out.imu.get(k + 1).map_or(0.0, |n| n.timestamp - out.imu[k].timestamp);
        let s = &mut out.imu[k];
        s.gyro += bg + gaussian3(&mut rng, noise.gyro);
        s.accel += ba + gaussian3(&mut rng, noise.accel);
        bg += gaussian3(&mut rng, noise.gyro_bias * dt.sqrt());
        ba += gaussian3(&mut rng, noise.accel_bias * dt.sqrt());
    }
    for stream in &mut out.encoders {
        for r in stream {
            for a in &mut r.angles {
                *a += rng.sample::<f64, _>(StandardNormal) * noise.encoder;
            }
        }
    }
    for lc in &mut out.loop_closures {
        let er = gaussian3(&mut rng, noise.lc_rotation);
        let ep = gaussian3(&mut rng, noise.lc_translation);
        let r = lc.pose.rotation;
        lc.pose = Pose::new((r * exp_so3(&er)).cleaned(), lc.pose.translation + r * ep);
    }
    Ok(out)
}

/// Closed stance intervals `[make, break]` of `foot`.
fn stance_intervals(events: &[ContactEvent], foot: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut open = None;
    for e in events.iter().filter(|e| e.foot == foot) {
        match (e.in_contact, open) {
            (true, None) => open = Some(e.timestamp),
            (false, Some(start)) => {
                out.push((start, e.timestamp));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        out.push((start, f64::INFINITY));
    }
    out
}

/// Lets each stance foot drift along the ground as a random walk with
/// velocity noise density `sigma` (m/s·√s), and re-solves the encoder
/// angles so forward kinematics follows the slipping foot. Base rotations
/// are replayed from the noiseless gyro.
fn add_foot_slip(d: &mut Dataset, chains: &[KinematicChain], sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let Some(first) = d.truth.first() else {
        return Ok(());
    };
    if chains.len() < d.encoders.len() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} feet but only {} leg chains",
            d.encoders.len(),
            chains.len()
        )));
    }
    let mut rot = Vec::with_capacity(d.imu.len());
    let mut r = first.rotation;
    for (k, s) in d.imu.iter().enumerate() {
        rot.push((s.timestamp, r));
        if let Some(next) = d.imu.get(k + 1) {
            r = (r * exp_so3(&(s.gyro * (next.timestamp - s.timestamp)))).cleaned();
        }
    }
    let rotation_at = |t: f64| {
        let k = rot.partition_point(|x| x.0 < t);
        rot.get(k).filter(|x| x.0 == t).map(|x| x.1)
    };
    for (f, stream) in d.encoders.iter_mut().enumerate() {
        let chain = &chains[f];
        for (make, brk) in stance_intervals(&d.contacts, f) {
            let mut slip = Vector3::zeros();
            let mut prev_t = make;
            // (clean, slipped) angles of the previous tick seed the next solve
            let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
            for reading in stream.iter_mut().filter(|r| r.timestamp >= make && r.timestamp <= brk) {
                let step = gaussian3(rng, sigma) * (reading.timestamp - prev_t).sqrt();
                slip += Vector3::new(step.x, step.y, 0.0);
                prev_t = reading.timestamp;
                let Some(r) = rotation_at(reading.timestamp) else {
                    continue;
                };
                let clean = reading.angles.clone();
                let guess = match &prev {
                    Some((c, s)) => s.iter().zip(&clean).zip(c).map(|((s, a), c)| s + a - c).collect(),
                    None => clean.clone(),
                };
                let (fk_r, fk_p) = fk_angles(chain, &clean)?;
                reading.angles = inverse_kinematics(chain, &fk_r, &(fk_p + r.transpose() * slip), &guess)?;
                prev = Some((clean, reading.angles.clone()));
            }
        }
    }
    Ok(())
}

/// Truth, loop closures at the configured stride, and corruption with the
/// configured noise and seed.
pub fn simulate(config: &SimConfig) -> Result<Dataset> {
    let mut truth = generate_truth(config)?;
    truth.loop_closures = emit_loop_closures(&truth.truth, config.lc_stride, &config.noise.lc_covariance());
    corrupt(&truth, &config.chains, &config.noise, config.seed)
}

/// Contact frame of `foot` in the world, from truth base pose and encoders.
pub fn contact_pose(chain: &KinematicChain, base: &Pose, angles: &[f64]) -> Result<Pose> {
    let (r, p) = fk_angles(chain, angles)?;
    Ok(base.compose(&Pose::new(r, p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> SimConfig {
        SimConfig {
            duration: 4.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn table_defaults() {
        let n = NoiseConfig::default();
        assert_eq!(
            [
                n.accel,
                n.gyro,
                n.accel_bias,
                n.gyro_bias,
                n.lc_translation,
                n.lc_rotation,
                n.contact_velocity,
                n.encoder
            ],
            [0.0307, 0.0014, 0.005, 0.0005, 0.1, 0.0873, 0.1, 0.00873]
        );
    }

    #[test]
    fn stationary_statics() {
        let cfg = SimConfig {
            path: PathConfig::stationary(),
            ..short()
        };
        let d = generate_truth(&cfg).unwrap();
        for s in &d.imu {
            assert!(s.gyro.norm() < 1e-15);
            assert!((s.accel - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-12);
        }
    }

    #[test]
    fn stance_feet_stay_fixed() {
        let cfg = short();
        let d = generate_truth(&cfg).unwrap();
        let dt = 1.0 / cfg.imu_rate;
        let gait = Gait::new(&cfg);
        // rebuild tick-level truth by replaying the IMU recursion
        let (r0, p0, v0) = path_pose(&cfg.path, 0.0);
        let (mut r, mut p, mut v) = (r0, p0, v0);
        let mut anchors: Vec<Option<(i64, Pose)>> = vec![None; cfg.chains.len()];
        for (k, s) in d.imu.iter().enumerate() {
            for (f, anchor) in anchors.iter_mut().enumerate() {
                let (n, phase) = gait.phase(f, k as i64);
                if phase > gait.stance {
                    continue;
                }
                let c = contact_pose(&cfg.chains[f], &Pose::new(r, p), &d.encoders[f][k].angles).unwrap();
                match anchor {
                    Some((m, a)) if *m == n => {
                        assert!((c.translation - a.translation).norm() < 1e-10);
                        assert!((c.rotation.matrix() - a.rotation.matrix()).norm() < 1e-10);
                    }
                    _ => *anchor = Some((n, c)),
                }
            }
            let a_w = r * s.accel;
            p += v * dt + (GRAVITY + a_w) * (0.5 * dt * dt);
            v += (GRAVITY + a_w) * dt;
            r = (r * exp_so3(&(s.gyro * dt))).cleaned();
        }
    }

    #[test]
    fn contact_schedule_rate() {
        let cfg = SimConfig {
            duration: 20.0,
            ..SimConfig::default()
        };
        let d = generate_truth(&cfg).unwrap();
        let events = d.contacts.iter().filter(|e| e.timestamp > 0.0).count() as f64;
        let rate = events / cfg.duration;
        assert!((2.5..3.5).contains(&rate), "{rate} events per second");
        for f in 0..2 {
            let seq: Vec<bool> = d
                .contacts
                .iter()
                .filter(|e| e.foot == f)
                .map(|e| e.in_contact)
                .collect();
            assert!(seq.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn zero_noise_corruption_is_identity() {
        let mut d = generate_truth(&short()).unwrap();
        d.loop_closures = emit_loop_closures(&d.truth, 2, &NoiseConfig::default().lc_covariance());
        assert_eq!(corrupt(&d, &short().chains, &NoiseConfig::zero(), 3).unwrap(), d);
    }

    #[test]
    fn corruption_is_seeded_and_keeps_time() {
        let d = generate_truth(&short()).unwrap();
        let a = corrupt(&d, &short().chains, &NoiseConfig::default(), 9).unwrap();
        let b = corrupt(&d, &short().chains, &NoiseConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.imu.iter().zip(&d.imu).all(|(x, y)| x.timestamp == y.timestamp));
        assert_ne!(a.imu, d.imu);
    }

    #[test]
    fn encoder_noise_statistics() {
        let reading = EncoderReading {
            timestamp: 0.0,
            angles: vec![0.0; 10],
        };
        let d = Dataset {
            encoders: vec![vec![reading; 10_000]],
            ..Dataset::default()
        };
        let noisy = corrupt(&d, &short().chains, &NoiseConfig::default(), 4).unwrap();
        let xs: Vec<f64> = noisy.encoders[0].iter().flat_map(|r| r.angles.clone()).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let sigma = NoiseConfig::default().encoder;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
    }

    #[test]
    fn loop_closure_boundaries_and_composition() {
        let d = generate_truth(&short()).unwrap();
        let cov = Matrix6::identity();
        let lcs = emit_loop_closures(&d.truth, 2, &cov);
        assert_eq!(lcs[0].t_i, d.truth[0].timestamp);
        assert_eq!(lcs[0].t_j, d.truth[2].timestamp);
        assert!(emit_loop_closures(&d.truth[..2], 2, &cov).is_empty());
        let mut acc = d.truth[0].pose();
        for lc in &lcs {
            acc = acc.compose(&lc.pose);
        }
        let last = d.truth.iter().find(|t| t.timestamp == lcs.last().unwrap().t_j).unwrap();
        assert!((acc.translation - last.position).norm() < 1e-10);

        let still = SimConfig {
            path: PathConfig::stationary(),
            ..short()
        };
        let d = generate_truth(&still).unwrap();
        for lc in emit_loop_closures(&d.truth, 2, &cov) {
            assert!(lc.pose.translation.norm() < 1e-12);
            assert!(lc.pose.rotation.angle() < 1e-12);
        }
    }

    #[test]
    fn unreachable_contact_reported() {
        let cfg = SimConfig {
            path: PathConfig {
                base_height: 3.0,
                ..PathConfig::default()
            },
            ..short()
        };
        assert!(matches!(generate_truth(&cfg), Err(Error::InfeasibleChain(_))));
    }
    /// Base poses at every IMU tick, replayed with the zero-order-hold recursion.
    fn replay_base(d: &Dataset, cfg: &SimConfig) -> Vec<Pose> {
        let dt = 1.0 / cfg.imu_rate;
        let (mut r, mut p, mut v) = path_pose(&cfg.path, 0.0);
        let mut out = Vec::with_capacity(d.imu.len());
        for s in &d.imu {
            out.push(Pose::new(r, p));
            let a_w = r * s.accel;
            p += v * dt + (GRAVITY + a_w) * (0.5 * dt * dt);
            v += (GRAVITY + a_w) * dt;
            r = (r * exp_so3(&(s.gyro * dt))).cleaned();
        }
        out
    }

    #[test]
    fn foot_slip_is_a_ground_plane_random_walk() {
        let cfg = SimConfig {
            duration: 60.0,
            ..SimConfig::default()
        };
        let sigma = 0.1;
        let noise = NoiseConfig {
            contact_velocity: sigma,
            ..NoiseConfig::zero()
        };
        let clean = generate_truth(&cfg).unwrap();
        let slipped = corrupt(&clean, &cfg.chains, &noise, 5).unwrap();
        assert_eq!(slipped.imu, clean.imu);
        let base = replay_base(&clean, &cfg);
        let mut sq = 0.0;
        let mut count = 0.0;
        for f in 0..cfg.chains.len() {
            for (make, brk) in stance_intervals(&clean.contacts, f) {
                if !brk.is_finite() {
                    continue;
                }
                let k0 = (make * cfg.imu_rate).round() as usize;
                let k1 = (brk * cfg.imu_rate).round() as usize;
                let at = |k: usize| contact_pose(&cfg.chains[f], &base[k], &slipped.encoders[f][k].angles).unwrap();
                let (a, b) = (at(k0), at(k1));
                let drift = b.translation - a.translation;
                assert!(drift.z.abs() < 1e-9);
                assert!((a.rotation.matrix() - b.rotation.matrix()).norm() < 1e-9);
                sq += drift.x * drift.x + drift.y * drift.y;
                count += 2.0 * (brk - make);
            }
        }
        // per-axis variance of the drift is sigma^2 (t_break - t_make)
        let ratio = sq / count / (sigma * sigma);
        assert!((ratio - 1.0).abs() < 0.3, "variance ratio {ratio}");
    }
}
