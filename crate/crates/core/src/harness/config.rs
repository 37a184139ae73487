//! Experiment configuration: a JSON document describing one sampler run.
//!
//! Schema (all keys snake_case):
//!
//! ```json
//! {
//!   "target": { "family": "standard_gaussian", "d": 4 },
//!   "implementation": "piadm_sde",
//!   "plan": { "T": 8.0, "eta": 0.01, "N": 8, "block_lengths": [...], "grids": [...],
//!             "base_step": 0.02, "picard_depth": 12 },
//!   "mode": "exact",
//!   "seed": 7,
//!   "n_samples": 1000
//! }
//! ```
//!
//! Instead of `plan`, a `preset` may be given (`{"name": "theorem1",
//! "delta": 0.1, "constants": {...}}`); the two are mutually exclusive. A plan
//! can also be described by its build parameters with `plan_spec`
//! (`{"T", "eta", "N", "eps", "K"}`), which is convenient for dimension
//! sweeps. ODE implementations take an optional `corrector` plan
//! (`{"T_dagger", "N_dagger", "M_dagger", "K_dagger", "gamma"}`); without
//! one the corrector is disabled. Further optional keys: `threads`,
//! `output`, `perturbation`, `stop`, `corrector_stop`, `sliced_projections`,
//! `reference_samples`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::picard::StopRule;
use crate::schedule::{
    preset_parameters, CorrectorPlan, DiscretizationPlan, LastBlockRule, Preset, PresetConstants, PresetParameters,
};
use crate::score::{PerturbationMode, TargetSpec};
use crate::Mode;

/// The data distribution, either spelled out or as a dimension-indexed family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TargetConfig {
    /// N(0, I_d).
    StandardGaussian { d: usize },
    /// N(0, σ² I_d).
    IsotropicGaussian { d: usize, variance: f64 },
    /// Equal-weight mixture of N(±offset·e₁, σ² I_d).
    SymmetricMixture { d: usize, offset: f64, variance: f64 },
    /// Equal-weight mixture at ±offset·e₁ with identity overall covariance.
    NormalizedMixture { d: usize, offset: f64 },
    /// Any validated target.
    Explicit { spec: TargetSpec },
}

impl TargetConfig {
    pub fn dim(&self) -> usize {
        match self {
            TargetConfig::StandardGaussian { d }
            | TargetConfig::IsotropicGaussian { d, .. }
            | TargetConfig::SymmetricMixture { d, .. }
            | TargetConfig::NormalizedMixture { d, .. } => *d,
            TargetConfig::Explicit { spec } => spec.dim(),
        }
    }

    pub fn build(&self) -> Result<TargetSpec> {
        match *self {
            TargetConfig::StandardGaussian { d } => Ok(TargetSpec::standard_gaussian(d)),
            TargetConfig::IsotropicGaussian { d, variance } => TargetSpec::isotropic_gaussian(d, variance),
            TargetConfig::SymmetricMixture { d, offset, variance } => TargetSpec::symmetric_mixture(d, offset, variance),
            TargetConfig::NormalizedMixture { d, offset } => TargetSpec::normalized_symmetric_mixture(d, offset),
            TargetConfig::Explicit { ref spec } => Ok(spec.clone()),
        }
    }

    /// The same family in dimension `d`.
    pub fn with_dim(&self, d: usize) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            TargetConfig::StandardGaussian { d: k }
            | TargetConfig::IsotropicGaussian { d: k, .. }
            | TargetConfig::SymmetricMixture { d: k, .. }
            | TargetConfig::NormalizedMixture { d: k, .. } => *k = d,
            TargetConfig::Explicit { spec } if spec.dim() == d => {}
            TargetConfig::Explicit { .. } => {
                return Err(Error::Config("an explicit target cannot be resized; use a target family".into()))
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    PiadmSde,
    PiadmOde,
    SequentialSde,
    SequentialOde,
}

impl Implementation {
    pub fn name(self) -> &'static str {
        match self {
            Implementation::PiadmSde => "piadm_sde",
            Implementation::PiadmOde => "piadm_ode",
            Implementation::SequentialSde => "sequential_sde",
            Implementation::SequentialOde => "sequential_ode",
        }
    }

    pub fn is_ode(self) -> bool {
        matches!(self, Implementation::PiadmOde | Implementation::SequentialOde)
    }

    pub fn is_parallel(self) -> bool {
        matches!(self, Implementation::PiadmSde | Implementation::PiadmOde)
    }
}

/// Build parameters of a plan with uniform blocks of length (T - η)/N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub eta: f64,
    #[serde(rename = "N")]
    pub blocks: usize,
    pub eps: f64,
    #[serde(rename = "K")]
    pub depth: usize,
}

impl PlanSpec {
    pub fn build(&self) -> Result<DiscretizationPlan<f64>> {
        DiscretizationPlan::build(self.horizon, self.eta, self.blocks, self.eps, self.depth, LastBlockRule::Geometric)
    }
}

/// A parameter preset; the dimension is taken from the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetConfig {
    pub name: Preset,
    pub delta: f64,
    /// Must equal the target dimension when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default)]
    pub constants: PresetConstants,
}

/// Deterministic score error emulating a learned score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    #[serde(flatten)]
    pub mode: PerturbationMode,
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_projections() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetConfig,
    pub implementation: Implementation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<DiscretizationPlan<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_spec: Option<PlanSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector: Option<CorrectorPlan<f64>>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub n_samples: usize,
    /// Thread budget; defaults to the available parallelism. Never affects
    /// results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub corrector_stop: StopRule,
    /// Random directions of the sliced W₂ diagnostic.
    #[serde(default = "default_projections")]
    pub sliced_projections: usize,
    /// Size of the reference sample from p_η for non-Gaussian targets;
    /// defaults to `n_samples`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_samples: Option<usize>,
}

/// Plans resolved from a config.
#[derive(Debug, Clone)]
pub struct ResolvedPlans {
    pub plan: DiscretizationPlan<f64>,
    pub corrector: CorrectorPlan<f64>,
    pub preset: Option<PresetParameters>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks the structural invariants that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let sources = [self.plan.is_some(), self.plan_spec.is_some(), self.preset.is_some()];
        match sources.iter().filter(|&&b| b).count() {
            1 => {}
            0 => return Err(Error::Config("one of plan, plan_spec or preset is required".into())),
            _ => return Err(Error::Config("plan, plan_spec and preset are mutually exclusive".into())),
        }
        if let Some(p) = &self.preset {
            if p.d.is_some_and(|d| d != self.target.dim()) {
                return Err(Error::Config(format!(
                    "preset dimension {} differs from target dimension {}",
                    p.d.unwrap_or(0),
                    self.target.dim()
                )));
            }
            if p.name == Preset::Theorem2 && self.corrector.is_some() {
                return Err(Error::Config("the theorem2 preset defines the corrector; drop the corrector key".into()));
            }
        }
        if self.corrector.is_some() && !self.implementation.is_ode() {
            return Err(Error::Config(format!("{} has no corrector", self.implementation.name())));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.sliced_projections == 0 {
            return Err(Error::Config("sliced_projections must be positive".into()));
        }
        if let Some(dir) = &self.output {
            check_writable(dir)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// The preset's δ, if any.
    pub fn delta(&self) -> Option<f64> {
        self.preset.as_ref().map(|p| p.delta)
    }

    pub fn resolve_plans(&self) -> Result<ResolvedPlans> {
        let d = self.dim();
        if let Some(p) = &self.preset {
            let params = preset_parameters(p.name, d, p.delta, &p.constants)?;
            let plan = params.plan()?;
            let corrector = match (params.corrector_plan(), &self.corrector) {
                (Some(c), _) => c?,
                (None, Some(c)) => c.clone(),
                (None, None) => CorrectorPlan::disabled(),
            };
            let corrector = if self.implementation.is_ode() {
                corrector
            } else {
                CorrectorPlan::disabled()
            };
            return Ok(ResolvedPlans {
                plan,
                corrector,
                preset: Some(params),
            });
        }
        let plan = match (&self.plan, &self.plan_spec) {
            (Some(p), _) => p.clone(),
            (None, Some(s)) => s.build()?,
            (None, None) => return Err(Error::Config("no plan".into())),
        };
        Ok(ResolvedPlans {
            plan,
            corrector: self.corrector.clone().unwrap_or_else(CorrectorPlan::disabled),
            preset: None,
        })
    }

    pub fn thread_budget(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// SHA-256 of the canonical JSON of every field that can change the
    /// numeric results (threads and output paths are excluded).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = None;
        canonical.output = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Creates `dir` if needed and checks that a file can be written in it.
pub fn check_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| Error::Config(format!("{} is not writable: {e}", dir.display())))
}
