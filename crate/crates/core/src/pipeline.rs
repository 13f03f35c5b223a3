//! Estimator assembly: node schedule, initialization, factor families per
//! preset, solving, and result files.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::graph::{
    optimize, Factor, FactorGraph, GraphValues, JacobianMode, LmConfig, NavState, OptimizeResult, PriorMeasurement,
    RelativePoseMeasurement,
};
use crate::kinematics::{EncoderReading, FkResult, KinematicChain};
use crate::manifold::Pose;
use crate::metrics::{compute_cdf, compute_relative_errors, median, ErrorRecord};
use crate::preintegration::{
    check_contact_persists, imu_preintegrate, point_contact_preintegrate, rigid_contact_preintegrate, ContactEvent,
    ContactKind, ImuBias, ImuDelta, ImuNoise, PointContactSample, GRAVITY,
};
use crate::sim::{corrupt, emit_loop_closures, generate_truth, Dataset, NoiseConfig, SimConfig};

/// Factor families used by a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RunPreset {
    ImuOnly,
    ImuLc,
    ImuContactFk,
    All,
}

impl RunPreset {
    pub const EVERY: [RunPreset; 4] = [
        RunPreset::ImuOnly,
        RunPreset::ImuLc,
        RunPreset::ImuContactFk,
        RunPreset::All,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "imu" | "imu_only" => Ok(Self::ImuOnly),
            "imu_lc" => Ok(Self::ImuLc),
            "imu_contact_fk" | "imu_contact" => Ok(Self::ImuContactFk),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ImuOnly => "imu",
            Self::ImuLc => "imu_lc",
            Self::ImuContactFk => "imu_contact_fk",
            Self::All => "all",
        }
    }

    pub fn uses_loop_closures(self) -> bool {
        matches!(self, Self::ImuLc | Self::All)
    }

    pub fn uses_contact(self) -> bool {
        matches!(self, Self::ImuContactFk | Self::All)
    }
}

impl fmt::Display for RunPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Standard deviations of the anchor prior on the first node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSigmas {
    pub rotation: f64,
    pub position: f64,
    pub velocity: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for PriorSigmas {
    fn default() -> Self {
        Self {
            rotation: 1e-3,
            position: 1e-3,
            velocity: 1e-2,
            gyro_bias: 2e-3,
            accel_bias: 2e-2,
        }
    }
}

impl PriorSigmas {
    fn covariance(&self) -> Result<DMatrix<f64>> {
        let s = [
            self.rotation,
            self.position,
            self.velocity,
            self.gyro_bias,
            self.accel_bias,
        ];
        if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidConfig(
                "prior standard deviations must be positive".into(),
            ));
        }
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            15,
            s.iter().flat_map(|&x| [x * x; 3]),
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub noise: NoiseConfig,
    pub contact: ContactKind,
    /// Rigid-contact angular velocity noise density, rad/s·√s.
    pub contact_rotation: f64,
    pub prior: PriorSigmas,
    pub lm: LmConfig,
    pub jacobian: JacobianMode,
    pub chains: Vec<KinematicChain>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            contact: ContactKind::Rigid,
            contact_rotation: 0.01,
            prior: PriorSigmas::default(),
            lm: LmConfig::default(),
            jacobian: JacobianMode::Analytic,
            chains: crate::sim::SimConfig::default().chains,
        }
    }
}

/// Feet in contact at `t`: closed stance intervals, so the make and break
/// nodes both carry the contact frame. A make and break at the same instant
/// counts as no contact.
fn feet_in_contact(events: &[ContactEvent], feet: usize, t: f64) -> Vec<usize> {
    (0..feet)
        .filter(|&f| {
            let mut before = false;
            let mut at = None;
            for e in events.iter().filter(|e| e.foot == f) {
                if e.timestamp < t {
                    before = e.in_contact;
                } else if e.timestamp == t {
                    at = Some(e.in_contact);
                } else {
                    break;
                }
            }
            let after = at.unwrap_or(before);
            let zero_length =
                at == Some(false) && events.iter().any(|e| e.foot == f && e.timestamp == t && e.in_contact) && !before;
            (before || after) && !zero_length
        })
        .collect()
}

fn reading_at(stream: &[EncoderReading], t: f64) -> Option<&EncoderReading> {
    let k = stream.partition_point(|r| r.timestamp < t);
    let cands = [k.checked_sub(1), Some(k)];
    cands
        .into_iter()
        .flatten()
        .filter_map(|i| stream.get(i))
        .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
}

fn nominal_dt(d: &Dataset) -> Result<f64> {
    let mut dts: Vec<f64> = d.imu.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
    if dts.is_empty() {
        return Err(Error::EmptyStream);
    }
    dts.sort_by(f64::total_cmp);
    Ok(dts[dts.len() / 2])
}

/// Initial node states. Rotations come from the gyro. Positions follow the
/// stance feet where a contact persists across an interval and the IMU
/// prediction elsewhere; velocities are then the ones that make each IMU
/// interval consistent with those positions.
fn initial_states(
    start: &NavState,
    deltas: &[ImuDelta],
    fks: &[Vec<(usize, FkResult)>],
    persists: &dyn Fn(usize, usize) -> bool,
) -> Vec<NavState> {
    let bias = ImuBias::default();
    let mut states = vec![NavState::new(start.rotation, start.position, start.velocity)];
    for (k, delta) in deltas.iter().enumerate() {
        let prev = &states[k];
        let (r, mut p, v) = delta.predict(&prev.rotation, &prev.position, &prev.velocity, &bias);
        let mut sum = Vector3::zeros();
        let mut count = 0.0;
        for (f, fk_j) in &fks[k + 1] {
            if let Some((_, fk_i)) = fks[k].iter().find(|(g, _)| g == f).filter(|_| persists(*f, k + 1)) {
                sum += prev.position + prev.rotation * fk_i.position - r * fk_j.position;
                count += 1.0;
            }
        }
        if count > 0.0 {
            p = sum / count;
        }
        states.push(NavState::new(r, p, v));
    }
    if fks.iter().any(|f| !f.is_empty()) {
        for (k, delta) in deltas.iter().enumerate() {
            let dt = delta.dt_total;
            let (ri, pi) = (states[k].rotation, states[k].position);
            let pj = states[k + 1].position;
            states[k].velocity = (pj - pi - GRAVITY * (0.5 * dt * dt) - ri * delta.delta_p) / dt;
        }
        if let (Some(delta), n) = (deltas.last(), deltas.len()) {
            let (ri, vi) = (states[n - 1].rotation, states[n - 1].velocity);
            states[n].velocity = vi + GRAVITY * delta.dt_total + ri * delta.delta_v;
        }
    }
    states
}

/// Assembled problem before solving.
#[derive(Clone, Debug)]
pub struct Problem {
    pub graph: FactorGraph,
    pub initial: GraphValues,
}

/// Builds the factor graph and dead-reckoned initial values for a preset.
pub fn build_problem(dataset: &Dataset, est: &EstimatorConfig, preset: RunPreset) -> Result<Problem> {
    let times = dataset.node_times();
    if times.len() < 2 {
        return Err(Error::EmptyStream);
    }
    let dt = nominal_dt(dataset)?;
    let imu_noise = ImuNoise {
        gyro: est.noise.gyro * dt.sqrt(),
        accel: est.noise.accel * dt.sqrt(),
        gyro_bias: est.noise.gyro_bias,
        accel_bias: est.noise.accel_bias,
    };
    let feet = if preset.uses_contact() { dataset.feet() } else { 0 };
    if preset.uses_contact() && est.chains.len() < feet {
        return Err(Error::InvalidConfig(format!(
            "dataset has {feet} feet but only {} leg chains are configured",
            est.chains.len()
        )));
    }
    let enc_sigma: Vec<Vec<f64>> = est
        .chains
        .iter()
        .map(|c| vec![est.noise.encoder; c.encoder_count()])
        .collect();

    let mut graph = FactorGraph::new();
    graph.jacobian_mode = est.jacobian;

    let start = dataset
        .truth
        .iter()
        .find(|s| (s.timestamp - times[0]).abs() < 1e-9)
        .map(|s| NavState::new(s.rotation, s.position, s.velocity))
        .unwrap_or_else(NavState::identity);
    let bias_lin = ImuBias::default();
    let deltas = times
        .windows(2)
        .map(|w| imu_preintegrate(&dataset.imu, w[0], w[1], bias_lin, imu_noise))
        .collect::<Result<Vec<_>>>()?;
    let fks = times
        .iter()
        .map(|&t| {
            feet_in_contact(&dataset.contacts, feet, t)
                .into_iter()
                .map(|f| {
                    let reading = reading_at(&dataset.encoders[f], t).ok_or(Error::EmptyStream)?;
                    Ok((f, FkResult::evaluate(&est.chains[f], &reading.angles, &enc_sigma[f])?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let persists = |f: usize, n: usize| {
        fks[n - 1].iter().any(|(g, _)| *g == f)
            && fks[n].iter().any(|(g, _)| *g == f)
            && check_contact_persists(&dataset.contacts, f, times[n - 1], times[n]).is_ok()
    };
    let states = initial_states(&start, &deltas, &fks, &persists);

    let mut values = GraphValues::new();
    for (n, &t) in times.iter().enumerate() {
        let s = &states[n];
        let mut node = s.clone();
        for (f, fk) in &fks[n] {
            node = node.with_contact(*f, s.rotation * fk.rotation, s.position + s.rotation * fk.position);
        }
        values.add_node(t, node)?;
    }
    for (n, delta) in deltas.iter().enumerate() {
        graph.add(Factor::imu(n, n + 1, delta.clone())?);
        graph.add(Factor::bias_random_walk(
            n,
            n + 1,
            DMatrix::from_column_slice(6, 6, delta.bias_walk_covariance().as_slice()),
        )?);
    }
    graph.add(Factor::prior(
        0,
        PriorMeasurement::from_state(&start),
        est.prior.covariance()?,
    )?);

    if preset.uses_loop_closures() {
        let node_of = |t: f64| {
            times
                .iter()
                .position(|&x| (x - t).abs() < 1e-9)
                .ok_or(Error::TimestampMismatch(t))
        };
        for lc in &dataset.loop_closures {
            let (i, j) = (node_of(lc.t_i)?, node_of(lc.t_j)?);
            graph.add(Factor::relative_pose(RelativePoseMeasurement {
                i,
                j,
                pose: lc.pose,
                covariance: DMatrix::from_column_slice(6, 6, lc.covariance.as_slice()),
            })?);
        }
    }

    if preset.uses_contact() {
        let sw = Matrix3::identity() * est.contact_rotation.powi(2);
        let sv = Matrix3::identity() * est.noise.contact_velocity.powi(2);
        for (n, node_fks) in fks.iter().enumerate() {
            for (f, fk) in node_fks {
                graph.add(Factor::forward_kinematic(n, *f, fk.clone())?);
            }
        }
        for f in 0..feet {
            for n in 1..times.len() {
                if !persists(f, n) {
                    continue;
                }
                let (a, b) = (n - 1, n);
                let delta = match est.contact {
                    ContactKind::Rigid => rigid_contact_preintegrate(times[a], times[b], &sw, &sv)?,
                    ContactKind::Point => {
                        let lo = dataset.imu.partition_point(|s| s.timestamp < times[a]);
                        let hi = dataset.imu.partition_point(|s| s.timestamp < times[b]);
                        let samples = dataset.imu[lo..hi]
                            .iter()
                            .map(|s| {
                                let r = reading_at(&dataset.encoders[f], s.timestamp).ok_or(Error::EmptyStream)?;
                                Ok(PointContactSample {
                                    timestamp: s.timestamp,
                                    gyro: s.gyro,
                                    angles: r.angles.clone(),
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let sa = values.state(a)?;
                        point_contact_preintegrate(
                            &samples,
                            times[b],
                            &est.chains[f],
                            &sa.contacts[&f].rotation,
                            &sa.rotation,
                            &sa.bias.gyro,
                            &(sv / dt),
                        )?
                    }
                };
                graph.add(Factor::contact(a, b, f, delta)?);
            }
        }
    }
    Ok(Problem { graph, initial: values })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub preset: RunPreset,
    pub result: OptimizeResult,
    pub factor_count: usize,
    pub errors: Vec<ErrorRecord>,
}

impl RunOutput {
    pub fn trajectory(&self) -> Vec<(f64, Pose)> {
        self.result
            .values
            .nodes()
            .iter()
            .map(|n| (n.timestamp, Pose::new(n.state.rotation, n.state.position)))
            .collect()
    }

    pub fn median_translation(&self) -> f64 {
        median(&self.errors.iter().map(|e| e.translation).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    }

    pub fn median_rotation(&self) -> f64 {
        median(&self.errors.iter().map(|e| e.rotation).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    }
}

/// Builds, solves, and scores one preset against the dataset's truth.
pub fn run(dataset: &Dataset, est: &EstimatorConfig, preset: RunPreset) -> Result<RunOutput> {
    let problem = build_problem(dataset, est, preset)?;
    let result = optimize(&problem.graph, &problem.initial, &est.lm)?;
    let truth: Vec<(f64, Pose)> = dataset.truth.iter().map(|s| (s.timestamp, s.pose())).collect();
    let out = RunOutput {
        preset,
        factor_count: problem.graph.len(),
        errors: Vec::new(),
        result,
    };
    let errors = if truth.is_empty() {
        Vec::new()
    } else {
        compute_relative_errors(&out.trajectory(), &truth)?
    };
    Ok(RunOutput { errors, ..out })
}

fn table(rows: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (a, b) in rows {
        let _ = writeln!(s, "{} {}", fmt_f64(*a), fmt_f64(*b));
    }
    s
}

/// Writes `trajectory.txt`, `errors.txt`, `cdf_trans.txt`, `cdf_rot.txt` and
/// `summary.txt` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut traj = String::new();
    for n in out.result.values.nodes() {
        let s = &n.state;
        let _ = write!(traj, "{}", fmt_f64(n.timestamp));
        for x in s
            .rotation
            .row_major()
            .iter()
            .chain(s.position.iter())
            .chain(s.velocity.iter())
        {
            let _ = write!(traj, " {}", fmt_f64(*x));
        }
        traj.push('\n');
    }
    std::fs::write(dir.join("trajectory.txt"), traj)?;

    let mut errs = String::new();
    for e in &out.errors {
        let _ = writeln!(errs, "{} {} {}", e.index, fmt_f64(e.translation), fmt_f64(e.rotation));
    }
    std::fs::write(dir.join("errors.txt"), errs)?;

    let trans: Vec<f64> = out.errors.iter().map(|e| e.translation).collect();
    let rot: Vec<f64> = out.errors.iter().map(|e| e.rotation).collect();
    if !out.errors.is_empty() {
        std::fs::write(dir.join("cdf_trans.txt"), table(&compute_cdf(&trans)?))?;
        std::fs::write(dir.join("cdf_rot.txt"), table(&compute_cdf(&rot)?))?;
    }

    let r = &out.result;
    let mut summary = String::new();
    let _ = writeln!(summary, "status = ok");
    let _ = writeln!(summary, "preset = {}", out.preset);
    let _ = writeln!(summary, "nodes = {}", r.values.len());
    let _ = writeln!(summary, "factors = {}", out.factor_count);
    let _ = writeln!(summary, "initial_cost = {}", fmt_f64(r.initial_cost));
    let _ = writeln!(summary, "final_cost = {}", fmt_f64(r.final_cost));
    let _ = writeln!(summary, "iterations = {}", r.iterations.len());
    let _ = writeln!(summary, "converged = {}", r.converged);
    if !out.errors.is_empty() {
        let _ = writeln!(summary, "median_translation = {}", fmt_f64(out.median_translation()));
        let _ = writeln!(summary, "median_rotation = {}", fmt_f64(out.median_rotation()));
    }
    std::fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

/// Marks a failed run so partial directories are not mistaken for results.
pub fn write_failure(dir: &Path, preset: RunPreset, err: &Error) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("summary.txt"),
        format!("status = failed\npreset = {preset}\nerror = {err}\n"),
    )?;
    Ok(())
}

/// One (seed, preset) cell of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub seed: u64,
    pub output: RunOutput,
}

/// Simulates one noisy dataset per seed and runs every preset on it. Runs
/// are independent and execute in parallel; results come back ordered by
/// seed, then by position in `presets`.
pub fn sweep(sim: &SimConfig, est: &EstimatorConfig, seeds: &[u64], presets: &[RunPreset]) -> Result<Vec<SweepRun>> {
    let mut truth = generate_truth(sim)?;
    truth.loop_closures = emit_loop_closures(&truth.truth, sim.lc_stride, &sim.noise.lc_covariance());
    let datasets = seeds
        .par_iter()
        .map(|&s| corrupt(&truth, &sim.chains, &sim.noise, s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, RunPreset)> = (0..seeds.len())
        .flat_map(|k| presets.iter().map(move |&p| (k, p)))
        .collect();
    jobs.par_iter()
        .map(|&(k, p)| {
            Ok(SweepRun {
                seed: seeds[k],
                output: run(&datasets[k], est, p)?,
            })
        })
        .collect()
}

/// Median translation and rotation errors of `preset`, pooled over every
/// run of that preset in a sweep.
pub fn pooled_medians(runs: &[SweepRun], preset: RunPreset) -> Option<(f64, f64)> {
    let errs: Vec<&ErrorRecord> = runs
        .iter()
        .filter(|r| r.output.preset == preset)
        .flat_map(|r| &r.output.errors)
        .collect();
    let t: Vec<f64> = errs.iter().map(|e| e.translation).collect();
    let r: Vec<f64> = errs.iter().map(|e| e.rotation).collect();
    Some((median(&t)?, median(&r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fk_factor_residual;

    fn noiseless(duration: f64) -> Dataset {
        let cfg = SimConfig {
            duration,
            ..SimConfig::default()
        };
        let mut d = generate_truth(&cfg).unwrap();
        d.loop_closures = emit_loop_closures(&d.truth, 2, &cfg.noise.lc_covariance());
        d
    }

    #[test]
    fn preset_names_roundtrip() {
        for p in RunPreset::EVERY {
            assert_eq!(RunPreset::parse(p.name()).unwrap(), p);
        }
        assert!(RunPreset::parse("vision").is_err());
    }

    #[test]
    fn contact_membership_rules() {
        let ev = [
            ContactEvent {
                timestamp: 0.0,
                foot: 0,
                in_contact: true,
            },
            ContactEvent {
                timestamp: 1.0,
                foot: 0,
                in_contact: false,
            },
            ContactEvent {
                timestamp: 2.0,
                foot: 0,
                in_contact: true,
            },
            ContactEvent {
                timestamp: 2.0,
                foot: 0,
                in_contact: false,
            },
        ];
        assert_eq!(feet_in_contact(&ev, 1, 0.0), vec![0]);
        assert_eq!(feet_in_contact(&ev, 1, 1.0), vec![0]);
        assert!(feet_in_contact(&ev, 1, 1.5).is_empty());
        assert!(feet_in_contact(&ev, 1, 2.0).is_empty());
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let d = noiseless(3.0);
        for contact in [ContactKind::Rigid, ContactKind::Point] {
            let est = EstimatorConfig {
                contact,
                ..EstimatorConfig::default()
            };
            let mut problem = build_problem(&d, &est, RunPreset::All).unwrap();
            // overwrite the base states with truth; contacts from FK at truth
            for (n, tr) in d.truth.iter().enumerate() {
                let s = problem.initial.state_mut(n).unwrap();
                s.rotation = tr.rotation;
                s.position = tr.position;
                s.velocity = tr.velocity;
                let feet: Vec<usize> = s.contacts.keys().copied().collect();
                for f in feet {
                    let r = reading_at(&d.encoders[f], tr.timestamp).unwrap();
                    let fk = FkResult::evaluate(&est.chains[f], &r.angles, &[0.01; 6]).unwrap();
                    let c = s.contacts.get_mut(&f).unwrap();
                    c.rotation = tr.rotation * fk.rotation;
                    c.position = tr.position + tr.rotation * fk.position;
                    assert!(fk_factor_residual(s, f, &fk).unwrap().norm() < 1e-12);
                }
            }
            for f in problem.graph.factors() {
                let r = f.residual(&problem.initial).unwrap();
                assert!(r.amax() < 1e-8, "{:?} residual {}", f.kind(), r.amax());
            }
        }
    }

    #[test]
    fn presets_select_families() {
        let d = noiseless(3.0);
        let est = EstimatorConfig::default();
        let imu = build_problem(&d, &est, RunPreset::ImuOnly).unwrap();
        let lc = build_problem(&d, &est, RunPreset::ImuLc).unwrap();
        let all = build_problem(&d, &est, RunPreset::All).unwrap();
        let nodes = d.node_times().len();
        assert_eq!(imu.graph.len(), 1 + 2 * (nodes - 1));
        assert_eq!(lc.graph.len(), imu.graph.len() + d.loop_closures.len());
        assert!(all.graph.len() > lc.graph.len());
        assert_eq!(imu.initial.dim(), 15 * nodes);
    }
}
