//! Run configuration (TOML) with a versioned schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{Freestream, SolverOptions};
use crate::ga::GaSettings;
use crate::geometry::CstAirfoil;
use crate::lift::ConstraintForm;
use crate::mesh::OMeshSpec;
use crate::rom::SolveOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Naca0012,
    Rae2822,
}

impl Baseline {
    pub fn airfoil(self) -> CstAirfoil {
        match self {
            Self::Naca0012 => CstAirfoil::naca0012(),
            Self::Rae2822 => CstAirfoil::rae2822(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub baseline: Baseline,
    /// Indices into the stacked CST parameter vector.
    pub active: Vec<usize>,
    pub fraction: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Naca,
    Rae,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreestreamConfig {
    Preset { preset: Preset },
    Explicit(Freestream),
}

impl FreestreamConfig {
    pub fn resolve(&self) -> Freestream {
        match *self {
            Self::Preset { preset: Preset::Naca } => Freestream::naca(),
            Self::Preset { preset: Preset::Rae } => Freestream::rae(),
            Self::Explicit(fs) => fs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub energy: f64,
    pub form: ConstraintForm,
    /// DEIM points per constraint; defaults to the retained mode counts.
    pub deim_points: Option<[usize; 4]>,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self { energy: 0.9999, form: ConstraintForm::CrossMultiplied, deim_points: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub holdout: usize,
    pub seed: u64,
    pub max_cp_error: f64,
    pub mean_cp_error: f64,
    pub cl_error: f64,
    /// Holdout points that must meet the C_l threshold.
    pub cl_required: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { holdout: 3, seed: 2024, max_cp_error: 10.0, mean_cp_error: 5.0, cl_error: 5.0, cl_required: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseConfig {
    #[serde(flatten)]
    pub ga: GaSettings,
    pub seed: u64,
    /// Self-target parameters used when no target file is given.
    pub target_theta: Option<Vec<f64>>,
    pub rom: SolveOptions,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            ga: GaSettings::default(),
            seed: 11,
            target_theta: None,
            rom: SolveOptions { obj_tol: 1e-3, con_tol: 1e-5, ..SolveOptions::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub samples: usize,
    pub seed: u64,
    pub fom_control: usize,
    pub bandwidth_cl: f64,
    pub bandwidth_cd: f64,
    pub kde_points: usize,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self { samples: 500, seed: 5, fom_control: 50, bandwidth_cl: 0.017, bandwidth_cd: 0.001, kde_points: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub mesh: OMeshSpec,
    pub freestream: FreestreamConfig,
    #[serde(default)]
    pub fom: SolverOptions,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub rom: SolveOptions,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub inverse: InverseConfig,
    #[serde(default)]
    pub uq: UqConfig,
}

impl RunConfig {
    /// Desk-scale NACA0012 setup: 20 snapshots over two CST coefficients.
    pub fn naca_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            problem: ProblemConfig { baseline: Baseline::Naca0012, active: vec![1, 4], fraction: 0.3, samples: 20, seed: 7 },
            mesh: OMeshSpec { n_wrap: 64, n_radial: 32, far_radius: 20.0, stretch: 1.15 },
            freestream: FreestreamConfig::Preset { preset: Preset::Naca },
            fom: SolverOptions::default(),
            reduction: ReductionConfig::default(),
            rom: SolveOptions::default(),
            validate: ValidateConfig::default(),
            inverse: InverseConfig::default(),
            uq: UqConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let p = &self.problem;
        let base = p.baseline.airfoil();
        crate::geometry::perturbation_bounds(&base, p.fraction, &p.active)?;
        let mut seen = p.active.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != p.active.len() {
            return bad("active coefficients repeat".into());
        }
        if p.samples == 0 {
            return bad("problem.samples must be positive".into());
        }
        self.mesh.validate()?;
        self.freestream.resolve().validate()?;
        let f = &self.fom;
        if !(f.cfl > 0.0 && f.tol > 0.0) || f.max_iters == 0 {
            return bad(format!("fom options {f:?}"));
        }
        let r = &self.reduction;
        if !(r.energy > 0.0 && r.energy <= 1.0) {
            return bad(format!("reduction.energy {} outside (0, 1]", r.energy));
        }
        if r.deim_points.is_some_and(|q| q.contains(&0)) {
            return bad("reduction.deim_points must be positive".into());
        }
        for (name, o) in [("rom", &self.rom), ("inverse.rom", &self.inverse.rom)] {
            if !(o.obj_tol > 0.0 && o.con_tol > 0.0) || o.max_evals == 0 {
                return bad(format!("{name} tolerances {o:?}"));
            }
        }
        let v = &self.validate;
        if v.cl_required > v.holdout || [v.max_cp_error, v.mean_cp_error, v.cl_error].iter().any(|t| !(*t > 0.0)) {
            return bad(format!("validate thresholds {v:?}"));
        }
        self.inverse.ga.validate()?;
        if let Some(t) = &self.inverse.target_theta {
            if t.len() != p.active.len() {
                return bad(format!("inverse.target_theta has {} entries for {} active coefficients", t.len(), p.active.len()));
            }
        }
        let u = &self.uq;
        if u.samples == 0 || u.kde_points < 2 || !(u.bandwidth_cl > 0.0 && u.bandwidth_cd > 0.0) || u.fom_control > u.samples {
            return bad(format!("uq settings {u:?}"));
        }
        Ok(())
    }
}
