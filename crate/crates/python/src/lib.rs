//! Python bindings. Matrices cross the boundary as nested lists of rows and
//! vectors as lists, so numpy arrays work on input via `tolist()` or directly.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use legsmooth::config::Config;
use legsmooth::dataset::{read_dataset, write_dataset};
use legsmooth::kinematics::{fk_angles, fk_covariance, inverse_kinematics, KinematicChain};
use legsmooth::manifold::{exp_so3, log_so3, right_jacobian, Rotation};
use legsmooth::pipeline::{pooled_medians, sweep, RunOutput, RunPreset};
use legsmooth::preintegration::{imu_preintegrate, rigid_contact_preintegrate, ImuBias, ImuDelta, ImuSample};
use legsmooth::sim::{emit_loop_closures, generate_truth, simulate as simulate_walk, Dataset};
use legsmooth::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::NotAnchored | Error::LinearSolveFailure(_) | Error::SingularCovariance | Error::AngleAtPi => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn rows<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::RawStorage<f64, R, C>>(
    m: &nalgebra::Matrix<f64, R, C, S>,
) -> Rows {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn vec3(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn rotation(m: Rows) -> PyResult<Rotation> {
    if m.len() != 3 || m.iter().any(|r| r.len() != 3) {
        return Err(PyValueError::new_err("rotation must be a 3x3 list of rows"));
    }
    let flat: Vec<f64> = m.into_iter().flatten().collect();
    Rotation::from_row_slice(&flat).map_err(py_err)
}

fn config_or_default(config: Option<&PyConfig>) -> Config {
    config.map_or_else(Config::default, |c| c.inner.clone())
}

/// Rotation matrix of an axis-angle vector.
#[pyfunction]
fn exp(phi: [f64; 3]) -> Rows {
    rows(exp_so3(&Vector3::from(phi)).matrix())
}

/// Axis-angle vector of a rotation matrix.
#[pyfunction]
fn log(r: Rows) -> PyResult<[f64; 3]> {
    Ok(vec3(log_so3(&rotation(r)?).map_err(py_err)?))
}

#[pyfunction]
fn jacobian_right(phi: [f64; 3]) -> Rows {
    rows(&right_jacobian(&Vector3::from(phi)))
}

#[pyclass(name = "KinematicChain", module = "pylegsmooth", frozen)]
struct PyChain {
    inner: KinematicChain,
}

#[pymethods]
impl PyChain {
    /// Two-joint planar leg used for quick checks.
    #[staticmethod]
    fn planar_demo() -> Self {
        Self {
            inner: KinematicChain::planar_demo(),
        }
    }

    /// Six-joint leg mounted `lateral` metres to the side of the base.
    #[staticmethod]
    fn six_dof_leg(lateral: f64) -> Self {
        Self {
            inner: KinematicChain::six_dof_leg(lateral),
        }
    }

    #[getter]
    fn encoder_count(&self) -> usize {
        self.inner.encoder_count()
    }

    /// Foot rotation and position in the base frame.
    fn forward(&self, angles: Vec<f64>) -> PyResult<(Rows, [f64; 3])> {
        let (r, p) = fk_angles(&self.inner, &angles).map_err(py_err)?;
        Ok((rows(r.matrix()), vec3(p)))
    }

    /// 6x6 covariance of the foot pose (rotation first) for independent
    /// encoder noise with standard deviations `sigma`.
    fn covariance(&self, angles: Vec<f64>, sigma: Vec<f64>) -> PyResult<Rows> {
        Ok(rows(&fk_covariance(&self.inner, &angles, &sigma).map_err(py_err)?))
    }

    /// Joint angles reaching the foot pose, starting from `guess`.
    fn inverse(&self, rotation_rows: Rows, position: [f64; 3], guess: Vec<f64>) -> PyResult<Vec<f64>> {
        inverse_kinematics(&self.inner, &rotation(rotation_rows)?, &Vector3::from(position), &guess).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("KinematicChain(joints={})", self.inner.encoder_count())
    }
}

#[pyclass(name = "ImuDelta", module = "pylegsmooth", frozen)]
struct PyImuDelta {
    inner: ImuDelta,
}

#[pymethods]
impl PyImuDelta {
    #[getter]
    fn delta_r(&self) -> Rows {
        rows(self.inner.delta_r.matrix())
    }

    #[getter]
    fn delta_v(&self) -> [f64; 3] {
        vec3(self.inner.delta_v)
    }

    #[getter]
    fn delta_p(&self) -> [f64; 3] {
        vec3(self.inner.delta_p)
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt_total
    }

    /// 9x9 covariance ordered rotation, velocity, position.
    #[getter]
    fn covariance(&self) -> Rows {
        rows(&self.inner.covariance)
    }
}

/// Preintegrates `(t, accel, gyro)` samples over `[t_start, t_end]`.
/// Noise values are per-sample standard deviations for the white terms and
/// densities for the bias random walks.
#[pyfunction]
#[pyo3(signature = (samples, t_start, t_end, gyro_bias=[0.0; 3], accel_bias=[0.0; 3], gyro_noise=1.4e-3, accel_noise=3.07e-2, gyro_walk=5e-4, accel_walk=5e-3))]
#[allow(clippy::too_many_arguments)]
fn preintegrate_imu(
    samples: Vec<(f64, [f64; 3], [f64; 3])>,
    t_start: f64,
    t_end: f64,
    gyro_bias: [f64; 3],
    accel_bias: [f64; 3],
    gyro_noise: f64,
    accel_noise: f64,
    gyro_walk: f64,
    accel_walk: f64,
) -> PyResult<PyImuDelta> {
    let samples: Vec<ImuSample> = samples
        .into_iter()
        .map(|(t, a, g)| ImuSample {
            timestamp: t,
            accel: Vector3::from(a),
            gyro: Vector3::from(g),
        })
        .collect();
    let noise = legsmooth::preintegration::ImuNoise {
        gyro: gyro_noise,
        accel: accel_noise,
        gyro_bias: gyro_walk,
        accel_bias: accel_walk,
    };
    let bias = ImuBias::new(Vector3::from(gyro_bias), Vector3::from(accel_bias));
    let inner = imu_preintegrate(&samples, t_start, t_end, bias, noise).map_err(py_err)?;
    Ok(PyImuDelta { inner })
}

/// 6x6 covariance of a rigid foot contact held over `[t_i, t_j]`, for
/// isotropic angular and linear velocity noise densities.
#[pyfunction]
fn rigid_contact_covariance(t_i: f64, t_j: f64, sigma_omega: f64, sigma_v: f64) -> PyResult<Rows> {
    let sw = Matrix3::identity() * sigma_omega * sigma_omega;
    let sv = Matrix3::identity() * sigma_v * sigma_v;
    let d = rigid_contact_preintegrate(t_i, t_j, &sw, &sv).map_err(py_err)?;
    Ok(rows(&d.covariance))
}

#[pyclass(name = "Config", module = "pylegsmooth")]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    /// Built-in defaults, or the TOML file at `path`.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => Config::load(&p).map_err(py_err)?,
            None => Config::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Config::from_toml_str(text, "<string>").map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn get_duration(&self) -> f64 {
        self.inner.sim.duration
    }

    #[setter]
    fn set_duration(&mut self, v: f64) {
        self.inner.sim.duration = v;
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.sim.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.sim.seed = v;
    }

    #[getter]
    fn get_contact(&self) -> String {
        self.inner.estimator.contact.clone()
    }

    /// "rigid" or "point".
    #[setter]
    fn set_contact(&mut self, v: String) {
        self.inner.estimator.contact = v;
    }
}

#[pyclass(name = "Dataset", module = "pylegsmooth", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_dataset(&path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn imu_count(&self) -> usize {
        self.inner.imu.len()
    }

    #[getter]
    fn contact_event_count(&self) -> usize {
        self.inner.contacts.len()
    }

    #[getter]
    fn loop_closure_count(&self) -> usize {
        self.inner.loop_closures.len()
    }

    /// `(t, rotation, position, velocity)` for every truth record.
    #[getter]
    fn truth(&self) -> Vec<(f64, Rows, [f64; 3], [f64; 3])> {
        self.inner
            .truth
            .iter()
            .map(|s| {
                (
                    s.timestamp,
                    rows(s.rotation.matrix()),
                    vec3(s.position),
                    vec3(s.velocity),
                )
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(imu={}, contact_events={}, loop_closures={}, truth={})",
            self.inner.imu.len(),
            self.inner.contacts.len(),
            self.inner.loop_closures.len(),
            self.inner.truth.len()
        )
    }
}

/// Simulates a walk. `noiseless` keeps the exact measurements.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None, noiseless=false))]
fn simulate(config: Option<&PyConfig>, seed: Option<u64>, noiseless: bool) -> PyResult<PyDataset> {
    let mut sim = config_or_default(config).sim_config().map_err(py_err)?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    let inner = if noiseless {
        let mut d = generate_truth(&sim).map_err(py_err)?;
        d.loop_closures = emit_loop_closures(&d.truth, sim.lc_stride, &sim.noise.lc_covariance());
        d
    } else {
        simulate_walk(&sim).map_err(py_err)?
    };
    Ok(PyDataset { inner })
}

#[pyclass(name = "RunResult", module = "pylegsmooth", frozen)]
struct PyRunResult {
    inner: RunOutput,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn preset(&self) -> &'static str {
        self.inner.preset.name()
    }

    /// `(t, rotation, position)` for every node.
    #[getter]
    fn trajectory(&self) -> Vec<(f64, Rows, [f64; 3])> {
        self.inner
            .trajectory()
            .into_iter()
            .map(|(t, p)| (t, rows(p.rotation.matrix()), vec3(p.translation)))
            .collect()
    }

    /// `(node, translation error, rotation error)` of each relative pose.
    #[getter]
    fn errors(&self) -> Vec<(usize, f64, f64)> {
        self.inner
            .errors
            .iter()
            .map(|e| (e.index, e.translation, e.rotation))
            .collect()
    }

    #[getter]
    fn median_translation(&self) -> f64 {
        self.inner.median_translation()
    }

    #[getter]
    fn median_rotation(&self) -> f64 {
        self.inner.median_rotation()
    }

    #[getter]
    fn initial_cost(&self) -> f64 {
        self.inner.result.initial_cost
    }

    #[getter]
    fn final_cost(&self) -> f64 {
        self.inner.result.final_cost
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.result.iterations.len()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.result.converged
    }

    #[getter]
    fn factor_count(&self) -> usize {
        self.inner.factor_count
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(preset={}, nodes={}, final_cost={:.4e}, median_translation={:.4e})",
            self.inner.preset,
            self.inner.result.values.len(),
            self.inner.result.final_cost,
            self.inner.median_translation()
        )
    }
}

/// Estimates the trajectory of `dataset` with one preset: "imu", "imu_lc",
/// "imu_contact_fk" or "all".
#[pyfunction]
#[pyo3(signature = (dataset, preset="all", config=None))]
fn run(py: Python<'_>, dataset: &PyDataset, preset: &str, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let preset = RunPreset::parse(preset).map_err(py_err)?;
    let est = config_or_default(config).estimator_config().map_err(py_err)?;
    let data = &dataset.inner;
    let inner = py
        .detach(|| legsmooth::pipeline::run(data, &est, preset))
        .map_err(py_err)?;
    Ok(PyRunResult { inner })
}

/// Runs every preset on `seeds` simulated walks and returns the pooled
/// median `(translation, rotation)` error of each preset.
#[pyfunction]
#[pyo3(signature = (seeds, config=None, first_seed=0))]
fn compare(
    py: Python<'_>,
    seeds: u64,
    config: Option<&PyConfig>,
    first_seed: u64,
) -> PyResult<BTreeMap<&'static str, (f64, f64)>> {
    let cfg = config_or_default(config);
    let sim = cfg.sim_config().map_err(py_err)?;
    let est = cfg.estimator_config().map_err(py_err)?;
    let list: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let runs = py
        .detach(|| sweep(&sim, &est, &list, &RunPreset::EVERY))
        .map_err(py_err)?;
    Ok(RunPreset::EVERY
        .iter()
        .filter_map(|&p| pooled_medians(&runs, p).map(|m| (p.name(), m)))
        .collect())
}

#[pymodule]
fn pylegsmooth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(exp, m)?)?;
    m.add_function(wrap_pyfunction!(log, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian_right, m)?)?;
    m.add_function(wrap_pyfunction!(preintegrate_imu, m)?)?;
    m.add_function(wrap_pyfunction!(rigid_contact_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyImuDelta>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunResult>()?;
    Ok(())
}
