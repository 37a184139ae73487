//! Single-run pipeline: config → target, plans, sampler → record.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Implementation, ResolvedPlans};
use crate::error::{Error, Result};
use crate::exact_law::{self, Depth, GaussianLaw, GaussianScoreParams};
use crate::metrics::{self, MomentSummary};
use crate::samples::Samples;
use crate::score::{ou_marginal, PerturbedOracle, ScoreFunction, ScoreOracle};
use crate::sde::{SamplerOptions, SamplerReport};
use crate::{ode, sde};

/// Exact output law of the run against the target law p_η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    /// Law of the sampler output for the Picard depths the run used.
    pub output: GaussianLaw,
    /// p_η.
    pub reference: GaussianLaw,
    /// KL(p_η ‖ output).
    pub kl: f64,
    pub w2: f64,
    /// √(KL/2).
    pub tv_bound: f64,
    /// Largest |sample moment - output-law moment| in standard errors.
    pub moment_z: f64,
}

/// Sample-based comparison against draws from p_η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleComparison {
    pub reference_moments: MomentSummary,
    pub sliced_w2: f64,
    pub projections: usize,
}

/// Plan sizes recorded with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub eta: f64,
    #[serde(rename = "N")]
    pub blocks: usize,
    pub base_step: f64,
    pub picard_depth: usize,
    /// Largest number of steps in a block.
    #[serde(rename = "M")]
    pub max_steps: usize,
    pub total_steps: usize,
    /// d·(M + 1): scalars held per path by one Picard iterate.
    pub memory: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector_blocks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub plan: PlanSummary,
    pub report: SamplerReport,
    pub moments: MomentSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_vs_reference: Option<SampleComparison>,
    /// Why no exact-law comparison was made, when there is none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law_note: Option<String>,
}

impl RunRecord {
    /// KL column of the flat output: the exact-law KL when available.
    pub fn kl(&self) -> Option<f64> {
        self.law.as_ref().map(|l| l.kl)
    }

    /// W₂ column: exact-law W₂, else sliced W₂ against reference draws.
    pub fn w2(&self) -> Option<f64> {
        self.law
            .as_ref()
            .map(|l| l.w2)
            .or_else(|| self.samples_vs_reference.as_ref().map(|s| s.sliced_w2))
    }

    /// The record with wall-clock time cleared: everything that must be
    /// identical when the same config is run again.
    pub fn payload(&self) -> RunRecord {
        let mut r = self.clone();
        r.report.wall_clock = 0.0;
        r.config.threads = None;
        r.config.output = None;
        r
    }
}

/// Output of [`run_with_samples`].
pub struct RunOutput {
    pub record: RunRecord,
    pub samples: Samples<f64>,
}

/// Runs the config on a pool of its thread budget.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    run_with_samples(config).map(|o| o.record)
}

/// Like [`run`], also returning the samples.
pub fn run_with_samples(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.thread_budget())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_in_current_pool(config, true))
}

/// Runs the config on the current rayon pool. Without `compare_law` the
/// divergence to the target law is left out (used by depth searches, which
/// only need residuals).
pub(crate) fn run_in_current_pool(config: &ExperimentConfig, compare_law: bool) -> Result<RunOutput> {
    let plans = config.resolve_plans()?;
    let target = config.target.build()?;
    let oracle = ScoreOracle::new(target, plans.plan.horizon())?;
    let (samples, report) = match &config.perturbation {
        Some(p) => {
            let perturbed = PerturbedOracle::new(oracle.clone(), p.mode, p.amplitude, p.seed)?;
            sample(config, &plans, &perturbed)?
        }
        None => sample(config, &plans, &oracle)?,
    };
    let moments = metrics::moment_summary(&samples)?;
    let reference = ou_marginal(oracle.target(), plans.plan.eta())?;

    let mut law = None;
    let mut samples_vs_reference = None;
    let mut law_note = None;
    let exact_possible = config.perturbation.as_ref().is_none_or(|p| p.amplitude == 0.0);
    match (reference.as_gaussian(), exact_possible) {
        _ if !compare_law => {}
        (Some(reference), true) => {
            let clock = Instant::now();
            let output = output_law(config, &plans, &oracle, &report)?;
            log::debug!("exact output law in {:.3}s", clock.elapsed().as_secs_f64());
            let kl = exact_law::kl_gaussian(reference, &output)?;
            let cov_rows = output.cov_rows();
            law = Some(LawComparison {
                moment_z: moments.max_z_score(output.mean.as_slice(), &cov_rows),
                w2: exact_law::w2_gaussian(reference, &output)?,
                tv_bound: exact_law::tv_bound_from_kl(kl),
                kl,
                reference: reference.clone(),
                output,
            });
        }
        (gaussian, _) => {
            law_note = Some(if gaussian.is_none() {
                "mixture target: the output law is not Gaussian; compared by samples".to_string()
            } else {
                "perturbed score: the output law is compared by samples".to_string()
            });
            let n_ref = config.reference_samples.unwrap_or(config.n_samples);
            let ref_samples = reference.sample(config.seed, n_ref)?;
            samples_vs_reference = Some(SampleComparison {
                reference_moments: metrics::moment_summary(&ref_samples)?,
                sliced_w2: metrics::sliced_w2(&samples, &ref_samples, config.sliced_projections, config.seed)?,
                projections: config.sliced_projections,
            });
        }
    }

    let plan = &plans.plan;
    let d = config.dim();
    let enabled = config.implementation.is_ode() && plans.corrector.is_enabled();
    let record = RunRecord {
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        d,
        delta: config.delta(),
        plan: PlanSummary {
            horizon: plan.horizon(),
            eta: plan.eta(),
            blocks: plan.n_blocks(),
            base_step: plan.base_step(),
            picard_depth: plan.picard_depth(),
            max_steps: plan.max_steps_per_block(),
            total_steps: plan.total_steps(),
            memory: d * (plan.max_steps_per_block() + 1),
            corrector_blocks: enabled.then(|| plans.corrector.blocks()),
            corrector_steps: enabled.then(|| plans.corrector.steps()),
            corrector_depth: enabled.then(|| plans.corrector.depth()),
        },
        report,
        moments,
        law,
        samples_vs_reference,
        law_note,
    };
    Ok(RunOutput { record, samples })
}

fn sample<S: ScoreFunction<f64>>(
    config: &ExperimentConfig,
    plans: &ResolvedPlans,
    score: &S,
) -> Result<(Samples<f64>, SamplerReport)> {
    let opts = SamplerOptions {
        mode: config.mode,
        stop: config.stop,
        corrector_stop: config.corrector_stop,
    };
    let (plan, cplan) = (&plans.plan, &plans.corrector);
    let (seed, n) = (config.seed, config.n_samples);
    match config.implementation {
        Implementation::PiadmSde => sde::run_piadm_sde(plan, score, seed, n, &opts),
        Implementation::SequentialSde => sde::run_sequential_sde(plan, score, seed, n, config.mode),
        Implementation::PiadmOde => ode::run_piadm_ode(plan, cplan, score, seed, n, &opts),
        Implementation::SequentialOde => ode::run_sequential_ode(plan, cplan, score, seed, n, config.mode),
    }
}

/// Exact law of the run's output: per-block sweep counts for Picard runs,
/// the sequential solve otherwise. Diagonal Gaussian targets factor across
/// coordinates (every step acts coordinate-wise and the noise is independent
/// per coordinate), so their law is assembled from one-dimensional laws.
fn output_law(
    config: &ExperimentConfig,
    plans: &ResolvedPlans,
    oracle: &ScoreOracle,
    report: &SamplerReport,
) -> Result<GaussianLaw> {
    let (depth, corrector_depth) = if config.implementation.is_parallel() {
        (
            Depth::PerBlock(report.iterations.clone()),
            Depth::PerBlock(report.corrector_iterations.clone()),
        )
    } else {
        (Depth::Sequential, Depth::Sequential)
    };
    let law_of = |field: &GaussianScoreParams| {
        if config.implementation.is_ode() {
            exact_law::ode_output_law(&plans.plan, &plans.corrector, field, config.mode, &depth, &corrector_depth)
        } else {
            exact_law::sde_output_law(&plans.plan, field, config.mode, &depth)
        }
    };
    let field = GaussianScoreParams::from_oracle(oracle)?;
    let d = field.target.dim();
    if d == 1 || !oracle.target().is_diagonal() {
        return law_of(&field);
    }
    let mut cache: Vec<((u64, u64), GaussianLaw)> = Vec::new();
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        let (m, v) = (field.target.mean[i], field.target.cov[(i, i)]);
        let key = (m.to_bits(), v.to_bits());
        let law = match cache.iter().find(|(k, _)| *k == key) {
            Some((_, law)) => law.clone(),
            None => {
                let target = GaussianLaw::new(vec![m], vec![vec![v]])?;
                let law = law_of(&GaussianScoreParams::new(target, field.horizon))?;
                cache.push((key, law.clone()));
                law
            }
        };
        mean[i] = law.mean[0];
        cov[(i, i)] = law.cov[(0, 0)];
    }
    GaussianLaw::from_parts(mean, cov)
}
