//! Blockwise Picard sampler for the backward SDE.
//!
//! Within block `n` the exponential integrator
//! `y_{m+1} = e^{ε/2} y_m + 2(e^{ε/2} - 1) s(t_n + τ_m, y_m) + √(e^ε - 1) ξ_m`
//! is solved by Picard iteration: every sweep evaluates the score at all
//! nodes of the previous iterate in one round, with the noise `ξ` drawn once
//! per block and reused by every sweep.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::picard::{self, BlockContext, BlockRun, PicardWorkspace, Scheme, StopRule};
use crate::rng::{self, tag};
use crate::samples::Samples;
use crate::scalar::Scalar;
use crate::schedule::DiscretizationPlan;
use crate::score::ScoreFunction;
use crate::Mode;

/// Samples advanced together in lockstep; fixed so results never depend on
/// the thread count.
pub const CHUNK: usize = 256;

/// Coefficients of `x' = state·x + score·s(x) + noise·ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub state: f64,
    pub score: f64,
    pub noise: f64,
}

/// Exponential-integrator coefficients of one SDE step of length `eps`.
pub fn sde_step_coefficients(eps: f64, mode: Mode) -> StepCoefficients {
    let half = eps / 2.0;
    StepCoefficients {
        state: half.exp(),
        score: match mode {
            Mode::Exact => 2.0 * half.exp_m1(),
            Mode::PaperVerbatim => 2.0 * eps.exp_m1(),
        },
        noise: eps.exp_m1().sqrt(),
    }
}

/// One exponential-integrator step at backward time `t_abs`:
/// `e^{ε/2} x + 2(e^{ε/2} - 1) s(t_abs, x) + √(e^ε - 1) noise`.
pub fn sequential_exp_integrator_step<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    state: &[F],
    t_abs: F,
    eps: F,
    score_fn: &S,
    noise: &[F],
) -> Result<Vec<F>> {
    let d = state.len();
    if score_fn.dim() != d || noise.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: if score_fn.dim() != d { score_fn.dim() } else { noise.len() },
        });
    }
    if !(eps > F::zero()) {
        return Err(Error::Domain {
            what: "step",
            value: eps.f64(),
            domain: "(0, inf)".into(),
        });
    }
    let mut s = vec![F::zero(); d];
    score_fn.eval_batch(&[t_abs], state, &mut s);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            block: 0,
            node: 0,
            iteration: 0,
        });
    }
    let c = sde_step_coefficients(eps.f64(), Mode::Exact);
    let (a, b, sig) = (F::of(c.state), F::of(c.score), F::of(c.noise));
    Ok(state
        .iter()
        .zip(&s)
        .zip(noise)
        .map(|((&x, &g), &z)| a * x + b * g + sig * z)
        .collect())
}

/// Per-step scalar coefficients of one block: `x' = a_m x + c_m s + σ_m ξ`.
pub(crate) struct ScalarScheme<F> {
    pub d: usize,
    pub start_time: F,
    pub grid: Vec<F>,
    pub state: Vec<F>,
    pub score: Vec<F>,
    pub noise: Vec<F>,
}

impl<F: Scalar> Scheme<F> for ScalarScheme<F> {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn score_dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        if self.noise.is_empty() {
            0
        } else {
            self.d
        }
    }
    fn steps(&self) -> usize {
        self.state.len()
    }
    fn node_time(&self, m: usize) -> F {
        self.start_time + self.grid[m]
    }
    #[inline]
    fn advance(&self, m: usize, cur: &[F], score: &[F], noise: &[F], out: &mut [F]) {
        let (a, c) = (self.state[m], self.score[m]);
        if noise.is_empty() {
            for ((o, &x), &s) in out.iter_mut().zip(cur).zip(score) {
                *o = a * x + c * s;
            }
        } else {
            let sig = self.noise[m];
            for (((o, &x), &s), &z) in out.iter_mut().zip(cur).zip(score).zip(noise) {
                *o = a * x + c * s + sig * z;
            }
        }
    }
}

pub(crate) fn sde_scheme<F: Scalar>(plan: &DiscretizationPlan<F>, n: usize, d: usize, mode: Mode) -> ScalarScheme<F> {
    let steps = plan.steps(n);
    let coeffs: Vec<StepCoefficients> = steps.iter().map(|e| sde_step_coefficients(e.f64(), mode)).collect();
    ScalarScheme {
        d,
        start_time: plan.block_start(n),
        grid: plan.grid(n).to_vec(),
        state: coeffs.iter().map(|c| F::of(c.state)).collect(),
        score: coeffs.iter().map(|c| F::of(c.score)).collect(),
        noise: coeffs.iter().map(|c| F::of(c.noise)).collect(),
    }
}

/// Sampler settings shared by the SDE and ODE samplers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub mode: Mode,
    /// Stopping rule of predictor / SDE blocks.
    pub stop: StopRule,
    /// Stopping rule of corrector blocks.
    pub corrector_stop: StopRule,
}

/// Complexity accounting and residual traces of a sampler run.
///
/// Counts are per sample path: `sequential_rounds` is the number of rounds
/// of score evaluation on the critical path, `total_score_evals` the number
/// of individual evaluations per path, and `max_parallel_width` the largest
/// number of evaluations issued in one round for one path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplerReport {
    pub sequential_rounds: u64,
    pub total_score_evals: u64,
    pub max_parallel_width: usize,
    pub n_samples: usize,
    /// Sweeps run in each predictor / SDE block.
    pub iterations: Vec<usize>,
    /// Per block, the sup-residual of the first sample path after each sweep.
    pub residual_history: Vec<Vec<f64>>,
    /// Per block, the batch mean of the per-path sup-residuals.
    pub mean_residual_history: Vec<Vec<f64>>,
    /// Sweeps run in each corrector block, ordered by (outer block, inner block).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrector_iterations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrector_residual_history: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrector_mean_residual_history: Vec<Vec<f64>>,
    /// Seconds; not part of the reproducible payload.
    pub wall_clock: f64,
}

/// Merges per-chunk runs of one block into (iterations, path trace, mean trace).
pub(crate) fn merge_block_runs(runs: &[(&BlockRun, usize)]) -> (usize, Vec<f64>, Vec<f64>) {
    let iterations = runs.iter().map(|(r, _)| r.iterations).max().unwrap_or(0);
    let path = runs.first().map(|(r, _)| r.path.clone()).unwrap_or_default();
    let mean = (0..iterations)
        .map(|k| {
            let (mut sum, mut count) = (0.0, 0usize);
            for (r, size) in runs {
                if let Some(s) = r.sum.get(k) {
                    sum += s;
                    count += size;
                }
            }
            sum / count.max(1) as f64
        })
        .collect();
    (iterations, path, mean)
}

/// Chunk boundaries `[start, end)` over `n_samples`.
pub(crate) fn chunks(n_samples: usize) -> Vec<(usize, usize)> {
    (0..n_samples.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n_samples)))
        .collect()
}

/// Initial N(0, I) states of samples `lo..hi`.
pub(crate) fn initial_states<F: Scalar>(seed: u64, lo: usize, hi: usize, d: usize) -> Vec<F> {
    let mut out = vec![F::zero(); (hi - lo) * d];
    for (i, row) in out.chunks_mut(d).enumerate() {
        let mut r = rng::substream(seed, &[tag::INIT, (lo + i) as u64]);
        rng::fill_normal(&mut r, row);
    }
    out
}

/// Standard normals of block `n` for samples `lo..hi`, `[sample][step][coord]`.
///
/// Each (sample, block) pair owns one substream, consumed in step order.
pub(crate) fn block_noise<F: Scalar>(seed: u64, key: &[u64], lo: usize, hi: usize, per_sample: usize, out: &mut [F]) {
    for (i, row) in out.chunks_mut(per_sample.max(1)).enumerate().take(hi - lo) {
        let mut k = Vec::with_capacity(key.len() + 2);
        k.push(key[0]);
        k.push((lo + i) as u64);
        k.extend_from_slice(&key[1..]);
        let mut r = rng::substream(seed, &k);
        rng::fill_normal(&mut r, row);
    }
}

/// The standard normals PIADM-SDE and the sequential baseline use for block
/// `n` of sample `sample`, `[step][coord]`.
pub fn sde_block_noise<F: Scalar>(seed: u64, sample: usize, plan: &DiscretizationPlan<F>, n: usize, d: usize) -> Vec<F> {
    let per = plan.steps_in_block(n) * d;
    let mut out = vec![F::zero(); per];
    block_noise(seed, &[tag::SDE_NOISE, n as u64], sample, sample + 1, per, &mut out);
    out
}

fn check_setup<F: Scalar, S: ScoreFunction<F> + ?Sized>(plan: &DiscretizationPlan<F>, score: &S) -> Result<usize> {
    if let Some(h) = score.horizon() {
        if h + 1e-12 < plan.horizon().f64() {
            return Err(Error::Domain {
                what: "score horizon",
                value: h,
                domain: format!("[{}, inf)", plan.horizon()),
            });
        }
    }
    Ok(score.dim())
}

fn contraction<F: Scalar, S: ScoreFunction<F> + ?Sized>(plan: &DiscretizationPlan<F>, score: &S, n: usize) -> Option<f64> {
    score.lipschitz().map(|l| {
        let h = plan.block_lengths()[n].f64();
        l * l * h * (2.0 * h).exp()
    })
}

/// Runs one PIADM-SDE block for a single path with the given standard-normal
/// noise (`M_n · d` values). Returns the end state; the full final iterate
/// stays in `ws`.
pub fn run_piadm_sde_block<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    n: usize,
    start_state: &[F],
    score_fn: &S,
    noise: &[F],
    options: &SamplerOptions,
    ws: &mut PicardWorkspace<F>,
) -> Result<(Vec<F>, Vec<f64>)> {
    let d = check_setup(plan, score_fn)?;
    if start_state.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: start_state.len(),
        });
    }
    let steps = plan.steps_in_block(n);
    if noise.len() != steps * d {
        return Err(Error::Dimension {
            expected: steps * d,
            got: noise.len(),
        });
    }
    let scheme = sde_scheme(plan, n, d, options.mode);
    ws.reset(1, d, d, steps, d);
    ws.block_start_state_mut().copy_from_slice(start_state);
    ws.noise_cache_mut().copy_from_slice(noise);
    let ctx = BlockContext {
        block: n,
        contraction: contraction(plan, score_fn, n),
    };
    let run = picard::picard_block(&scheme, score_fn, ws, options.stop, plan.picard_depth(), &ctx)?;
    Ok((ws.end_states(), run.path))
}

/// Sequential exponential-integrator solve of block `n` for one path; returns
/// every grid node, `[node][coord]`.
pub fn sequential_sde_block<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    n: usize,
    start_state: &[F],
    score_fn: &S,
    noise: &[F],
    mode: Mode,
) -> Result<Vec<F>> {
    let d = check_setup(plan, score_fn)?;
    if start_state.len() != d || noise.len() != plan.steps_in_block(n) * d {
        return Err(Error::Dimension {
            expected: d,
            got: start_state.len(),
        });
    }
    let scheme = sde_scheme(plan, n, d, mode);
    let mut state = start_state.to_vec();
    let mut path = Vec::with_capacity((plan.steps_in_block(n) + 1) * d);
    picard::sequential_block(&scheme, score_fn, &mut state, noise, n, Some(&mut path))?;
    Ok(path)
}

/// PIADM-SDE: every sample starts from N(0, I) and chains the N blocks.
pub fn run_piadm_sde<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    score_fn: &S,
    seed: u64,
    n_samples: usize,
    options: &SamplerOptions,
) -> Result<(Samples<F>, SamplerReport)> {
    let clock = Instant::now();
    let d = check_setup(plan, score_fn)?;
    let nb = plan.n_blocks();
    if let Some(l) = score_fn.lipschitz() {
        plan.contraction_margin(l);
    }
    let results: Vec<Result<(Vec<F>, Vec<BlockRun>)>> = chunks(n_samples)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut ws = PicardWorkspace::new();
            let mut states = initial_states::<F>(seed, lo, hi, d);
            let mut runs = Vec::with_capacity(nb);
            for n in 0..nb {
                let steps = plan.steps_in_block(n);
                let scheme = sde_scheme(plan, n, d, options.mode);
                ws.reset(hi - lo, d, d, steps, d);
                ws.block_start_state_mut().copy_from_slice(&states);
                block_noise(seed, &[tag::SDE_NOISE, n as u64], lo, hi, steps * d, ws.noise_cache_mut());
                let ctx = BlockContext {
                    block: n,
                    contraction: contraction(plan, score_fn, n),
                };
                runs.push(picard::picard_block(&scheme, score_fn, &mut ws, options.stop, plan.picard_depth(), &ctx)?);
                states = ws.end_states();
            }
            Ok((states, runs))
        })
        .collect();
    let mut data = Vec::with_capacity(n_samples * d);
    let mut per_chunk = Vec::new();
    for (r, (lo, hi)) in results.into_iter().zip(chunks(n_samples)) {
        let (s, runs) = r?;
        data.extend(s);
        per_chunk.push((runs, hi - lo));
    }
    let mut report = SamplerReport {
        n_samples,
        ..Default::default()
    };
    for n in 0..nb {
        let runs: Vec<(&BlockRun, usize)> = per_chunk.iter().map(|(r, size)| (&r[n], *size)).collect();
        let (iters, path, mean) = merge_block_runs(&runs);
        let width = plan.steps_in_block(n) + 1;
        report.sequential_rounds += iters as u64;
        report.total_score_evals += (iters * width) as u64;
        report.max_parallel_width = report.max_parallel_width.max(width);
        report.iterations.push(iters);
        report.residual_history.push(path);
        report.mean_residual_history.push(mean);
    }
    report.wall_clock = clock.elapsed().as_secs_f64();
    Ok((Samples::new(d, data)?, report))
}

/// Sequential exponential-integrator baseline over the flattened grid, using
/// the same initial states and noise as [`run_piadm_sde`].
pub fn run_sequential_sde<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    score_fn: &S,
    seed: u64,
    n_samples: usize,
    mode: Mode,
) -> Result<(Samples<F>, SamplerReport)> {
    let clock = Instant::now();
    let d = check_setup(plan, score_fn)?;
    let nb = plan.n_blocks();
    let results: Vec<Result<Vec<F>>> = chunks(n_samples)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut states = initial_states::<F>(seed, lo, hi, d);
            let mut noise = Vec::new();
            for n in 0..nb {
                let steps = plan.steps_in_block(n);
                noise.clear();
                noise.resize((hi - lo) * steps * d, F::zero());
                block_noise(seed, &[tag::SDE_NOISE, n as u64], lo, hi, steps * d, &mut noise);
                let scheme = sde_scheme(plan, n, d, mode);
                picard::sequential_block(&scheme, score_fn, &mut states, &noise, n, None)?;
            }
            Ok(states)
        })
        .collect();
    let mut data = Vec::with_capacity(n_samples * d);
    for r in results {
        data.extend(r?);
    }
    let total = plan.total_steps() as u64;
    let report = SamplerReport {
        sequential_rounds: total,
        total_score_evals: total,
        max_parallel_width: 1,
        n_samples,
        wall_clock: clock.elapsed().as_secs_f64(),
        ..Default::default()
    };
    Ok((Samples::new(d, data)?, report))
}
