//! Dimension sweep: minimal Picard depth reaching a residual target, and the
//! preset step counts, for each dimension.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_in_current_pool, RunRecord};
use crate::error::{Error, Result};
use crate::picard::StopRule;
use crate::schedule::{preset_parameters, Preset, PresetConstants};

/// δ used for the preset step columns when the base config has no preset.
pub const DEFAULT_SWEEP_DELTA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Sorted, distinct dimensions.
    pub dims: Vec<usize>,
    /// Target for the largest batch-mean sup-residual of the last sweep
    /// over all blocks.
    pub tol: f64,
    /// Depth beyond which the search gives up.
    pub max_depth: usize,
}

impl SweepOptions {
    pub fn new(dims: Vec<usize>, tol: f64) -> Self {
        SweepOptions {
            dims,
            tol,
            max_depth: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStatus {
    Ok,
    /// The plan exceeds the memory cap; nothing was run.
    Skipped,
    /// The residual target was not met within the depth limit.
    Unconverged,
    Failed,
}

impl SweepStatus {
    pub fn is_failure(self) -> bool {
        matches!(self, SweepStatus::Unconverged | SweepStatus::Failed)
    }
}

impl fmt::Display for SweepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepStatus::Ok => "ok",
            SweepStatus::Skipped => "skipped",
            SweepStatus::Unconverged => "unconverged",
            SweepStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub delta: Option<f64>,
    pub status: SweepStatus,
    /// Smallest K whose run meets the residual target.
    pub min_depth: Option<usize>,
    /// Largest steps per block M of the run plan.
    pub steps: Option<usize>,
    /// d·M.
    pub memory: Option<usize>,
    /// Residual statistic of the run at `min_depth`.
    pub final_residual: Option<f64>,
    /// M of the first and second presets at this d and δ (None when capped).
    pub steps_theorem1: Option<usize>,
    pub steps_theorem2: Option<usize>,
    /// Record of the run at `min_depth`; re-running its config reproduces it.
    pub record: Option<RunRecord>,
    pub error: Option<String>,
    pub wall_clock: f64,
}

/// Largest over blocks of the batch-mean residual after the last sweep.
pub fn final_residual(record: &RunRecord) -> f64 {
    record
        .report
        .mean_residual_history
        .iter()
        .map(|r| r.last().copied().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

fn preset_steps(preset: Preset, d: usize, delta: f64, c: &PresetConstants) -> Option<usize> {
    preset_parameters(preset, d, delta, c).ok().map(|p| p.steps)
}

/// Runs the sweep on a pool of the base config's thread budget; dimensions
/// run concurrently and share the pool.
pub fn sweep_dimension(base: &ExperimentConfig, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if opts.dims.is_empty() || opts.dims.windows(2).any(|w| w[0] >= w[1]) || opts.dims[0] == 0 {
        return Err(Error::Config("sweep dimensions must be positive, distinct and sorted".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config("sweep tolerance must be positive".into()));
    }
    if !base.implementation.is_parallel() {
        return Err(Error::Config("the sweep searches Picard depth; use piadm_sde or piadm_ode".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.thread_budget())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| opts.dims.par_iter().map(|&d| sweep_one(base, d, opts)).collect()))
}

fn sweep_one(base: &ExperimentConfig, d: usize, opts: &SweepOptions) -> SweepRow {
    let clock = Instant::now();
    let (delta, constants) = match &base.preset {
        Some(p) => (p.delta, p.constants.clone()),
        None => (DEFAULT_SWEEP_DELTA, PresetConstants::default()),
    };
    let mut row = SweepRow {
        d,
        delta: base.delta(),
        status: SweepStatus::Failed,
        min_depth: None,
        steps: None,
        memory: None,
        final_residual: None,
        steps_theorem1: preset_steps(Preset::Theorem1, d, delta, &constants),
        steps_theorem2: preset_steps(Preset::Theorem2, d, delta, &constants),
        record: None,
        error: None,
        wall_clock: 0.0,
    };
    let outcome = (|| -> Result<Option<(usize, RunRecord)>> {
        let mut config = base.clone();
        config.target = base.target.with_dim(d)?;
        if let Some(p) = &mut config.preset {
            p.d = None;
        }
        config.output = None;
        let plans = config.resolve_plans()?;
        row.steps = Some(plans.plan.max_steps_per_block());
        row.memory = Some(d * plans.plan.max_steps_per_block());
        search_depth(&config, opts)
    })();
    match outcome {
        Ok(Some((k, record))) => {
            row.status = SweepStatus::Ok;
            row.min_depth = Some(k);
            row.final_residual = Some(final_residual(&record));
            row.record = Some(record);
        }
        Ok(None) => {
            row.status = SweepStatus::Unconverged;
            row.error = Some(format!("residual target {:e} not met by K = {}", opts.tol, opts.max_depth));
        }
        Err(e @ Error::MemoryCap { .. }) => {
            row.status = SweepStatus::Skipped;
            row.error = Some(e.to_string());
        }
        Err(e) => {
            row.error = Some(e.to_string());
        }
    }
    row.wall_clock = clock.elapsed().as_secs_f64();
    log::info!("sweep d = {d}: {} (K = {:?})", row.status, row.min_depth);
    row
}

/// Doubling then bisection on K; each probe is a full run at fixed depth.
fn search_depth(config: &ExperimentConfig, opts: &SweepOptions) -> Result<Option<(usize, RunRecord)>> {
    let mut cache: BTreeMap<usize, RunRecord> = BTreeMap::new();
    let mut probe = |k: usize| -> Result<bool> {
        if let Some(r) = cache.get(&k) {
            return Ok(final_residual(r) < opts.tol);
        }
        let mut c = config.clone();
        c.stop = StopRule::Depth { depth: k };
        let r = run_in_current_pool(&c, false)?.record;
        let ok = final_residual(&r) < opts.tol;
        log::debug!("d = {}: K = {k} residual {:e}", c.dim(), final_residual(&r));
        cache.insert(k, r);
        Ok(ok)
    };
    let mut hi = 1;
    while !probe(hi)? {
        if hi >= opts.max_depth {
            return Ok(None);
        }
        hi = (hi * 2).min(opts.max_depth);
    }
    let mut lo = hi / 2;
    // Invariant: probe(hi) holds; probe(lo) fails or lo == 0.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut c = config.clone();
    c.stop = StopRule::Depth { depth: hi };
    Ok(Some((hi, run_in_current_pool(&c, true)?.record)))
}

/// Least-squares slope of ln y against ln x.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
