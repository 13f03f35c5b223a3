//! TOML run configuration: simulator, noise model, legs, prior, estimator
//! and solver settings. Every key is optional and falls back to defaults.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{JacobianMode, LmConfig};
use crate::kinematics::{Axis, KinematicChain, LinkParam};
use crate::manifold::{exp_so3, Rotation};
use crate::pipeline::{EstimatorConfig, PriorSigmas, RunPreset};
use crate::preintegration::ContactKind;
use crate::sim::{NoiseConfig, PathConfig, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub duration: f64,
    pub imu_rate: f64,
    pub step_period: f64,
    pub stance_fraction: f64,
    pub lc_stride: usize,
    pub seed: u64,
    pub path: PathConfig,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            duration: d.duration,
            imu_rate: d.imu_rate,
            step_period: d.step_period,
            stance_fraction: d.stance_fraction,
            lc_stride: d.lc_stride,
            seed: d.seed,
            path: d.path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// "rigid" or "point".
    pub contact: String,
    /// Rigid-contact angular velocity noise density, rad/s·√s.
    pub contact_rotation: f64,
    /// "imu", "imu_lc", "imu_contact_fk" or "all".
    pub preset: String,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            contact: "rigid".into(),
            contact_rotation: 0.01,
            preset: "all".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: usize,
    pub lambda_initial: f64,
    pub lambda_factor: f64,
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// "analytic" or "numeric".
    pub jacobian: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let lm = LmConfig::default();
        Self {
            max_iterations: lm.max_iterations,
            lambda_initial: lm.lambda_initial,
            lambda_factor: lm.lambda_factor,
            relative_tolerance: lm.relative_tolerance,
            gradient_tolerance: lm.gradient_tolerance,
            step_tolerance: lm.step_tolerance,
            jacobian: "analytic".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    /// Row-major 3×3 fixed rotation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<f64>>,
    /// Axis-angle alternative to `rotation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_angle: Option<Vec<f64>>,
    pub translation: Vec<f64>,
    /// "X", "Y", "Z" or "fixed".
    pub axis: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegSection {
    pub links: Vec<LinkSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimSection,
    pub noise: NoiseConfig,
    pub prior: PriorSigmas,
    pub estimator: EstimatorSection,
    pub solver: SolverSection,
    /// One entry per foot; empty selects the built-in two-leg model.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub legs: Vec<LegSection>,
}

fn vec3(v: &[f64], what: &str) -> Result<Vector3<f64>> {
    if v.len() != 3 {
        return Err(Error::InvalidConfig(format!("{what} needs 3 numbers, got {}", v.len())));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

impl LinkSection {
    fn to_param(&self) -> Result<LinkParam> {
        let rotation = match (&self.rotation, &self.axis_angle) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "give either rotation or axis_angle, not both".into(),
                ));
            }
            (Some(m), None) => Rotation::from_row_slice(m)?,
            (None, Some(aa)) => exp_so3(&vec3(aa, "axis_angle")?),
            (None, None) => Rotation::identity(),
        };
        let axis = Axis::parse(&self.axis)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown joint axis {:?}", self.axis)))?;
        Ok(LinkParam {
            rotation,
            translation: vec3(&self.translation, "translation")?,
            axis,
        })
    }
}

impl Config {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse {
                path: path.to_string(),
                line,
                msg: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn chains(&self) -> Result<Vec<KinematicChain>> {
        if self.legs.is_empty() {
            return Ok(SimConfig::default().chains);
        }
        self.legs
            .iter()
            .map(|leg| KinematicChain::new(leg.links.iter().map(LinkSection::to_param).collect::<Result<_>>()?))
            .collect()
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.sim;
        let cfg = SimConfig {
            duration: s.duration,
            imu_rate: s.imu_rate,
            path: s.path,
            step_period: s.step_period,
            stance_fraction: s.stance_fraction,
            chains: self.chains()?,
            noise: self.noise,
            lc_stride: s.lc_stride,
            seed: s.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(&self) -> Result<RunPreset> {
        RunPreset::parse(&self.estimator.preset)
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        self.noise.validate()?;
        let contact = match self.estimator.contact.to_ascii_lowercase().as_str() {
            "rigid" => ContactKind::Rigid,
            "point" => ContactKind::Point,
            other => return Err(Error::InvalidConfig(format!("unknown contact model {other:?}"))),
        };
        let jacobian = match self.solver.jacobian.to_ascii_lowercase().as_str() {
            "analytic" => JacobianMode::Analytic,
            "numeric" => JacobianMode::Numeric,
            other => return Err(Error::InvalidConfig(format!("unknown jacobian mode {other:?}"))),
        };
        let sv = &self.solver;
        if sv.lambda_factor <= 1.0 || sv.lambda_initial <= 0.0 {
            return Err(Error::InvalidConfig(
                "lambda settings must be positive, factor > 1".into(),
            ));
        }
        Ok(EstimatorConfig {
            noise: self.noise,
            contact,
            contact_rotation: self.estimator.contact_rotation,
            prior: self.prior,
            lm: LmConfig {
                max_iterations: sv.max_iterations,
                lambda_initial: sv.lambda_initial,
                lambda_factor: sv.lambda_factor,
                relative_tolerance: sv.relative_tolerance,
                gradient_tolerance: sv.gradient_tolerance,
                step_tolerance: sv.step_tolerance,
                ..LmConfig::default()
            },
            jacobian,
            chains: self.chains()?,
        })
    }
}
