//! Probability-flow predictor with Picard iteration and the parallelized
//! underdamped Langevin corrector.
//!
//! Each outer block runs the deterministic exponential-integrator predictor
//! `y_{m+1} = e^{ε/2} y_m + (e^{ε/2} - 1) s(t_n + τ_m, y_m)` by Picard
//! iteration, then augments the state with a fresh momentum `v ~ N(0, I)` and
//! runs N† corrector blocks of underdamped Langevin dynamics with the score
//! frozen at the block end time. The corrector's linear part is propagated by
//! `G(t) = [[1, (1 - e^{-γt})/γ], [0, e^{-γt}]]` (per coordinate).

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::picard::{self, BlockContext, BlockRun, PicardWorkspace, Scheme, StopRule};
use crate::rng::tag;
use crate::samples::Samples;
use crate::scalar::Scalar;
use crate::schedule::{CorrectorPlan, DiscretizationPlan};
use crate::score::ScoreFunction;
use crate::sde::{block_noise, chunks, initial_states, merge_block_runs, SamplerOptions, SamplerReport, ScalarScheme, StepCoefficients};
use crate::Mode;

/// Below this value of γε the closed-form integrals switch to their series.
const SERIES_CUTOFF: f64 = 0.05;

/// The 2×2 block matrix `exp(A t)`, `A = [[0, I], [0, -γI]]`, acting
/// coordinate-wise on (position, momentum).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GMatrix {
    pub gamma: f64,
    pub t: f64,
    /// Row-major (m11, m12, m21, m22).
    pub blocks: [f64; 4],
}

impl GMatrix {
    pub fn new(gamma: f64, t: f64) -> Self {
        let decay = (-gamma * t).exp();
        GMatrix {
            gamma,
            t,
            blocks: [1.0, -(-gamma * t).exp_m1() / gamma, 0.0, decay],
        }
    }

    pub fn identity(gamma: f64) -> Self {
        GMatrix {
            gamma,
            t: 0.0,
            blocks: [1.0, 0.0, 0.0, 1.0],
        }
    }

    /// Matrix product `self · other` (times add when γ agrees).
    pub fn compose(&self, other: &GMatrix) -> GMatrix {
        let [a, b, c, d] = self.blocks;
        let [e, f, g, h] = other.blocks;
        GMatrix {
            gamma: self.gamma,
            t: self.t + other.t,
            blocks: [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h],
        }
    }

    /// Applies the matrix to one (position, momentum) coordinate pair.
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let [a, b, c, d] = self.blocks;
        (a * u + b * v, c * u + d * v)
    }

    /// Congruence `G Σ Gᵀ` of a per-coordinate 2×2 covariance.
    pub fn congruence(&self, s: &Cov2) -> Cov2 {
        let [a, b, c, d] = self.blocks;
        Cov2 {
            uu: a * a * s.uu + 2.0 * a * b * s.uv + b * b * s.vv,
            uv: a * c * s.uu + (a * d + b * c) * s.uv + b * d * s.vv,
            vv: c * c * s.uu + 2.0 * c * d * s.uv + d * d * s.vv,
        }
    }
}

/// Per-coordinate 2×2 covariance of (position, momentum) noise; the full
/// covariance is this block tensored with I_d.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cov2 {
    pub uu: f64,
    pub uv: f64,
    pub vv: f64,
}

impl Cov2 {
    /// Lower Cholesky factor (l11, l21, l22), tolerating round-off
    /// semidefiniteness.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.uu.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.uv / l11 } else { 0.0 };
        let l22 = (self.vv - l21 * l21).max(0.0).sqrt();
        (l11, l21, l22)
    }
}

/// `x - (1 - e^{-x})`, accurate for small x.
fn excess_linear(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        // Σ_{n≥2} (-1)^n xⁿ / n!
        let (mut term, mut sum) = (x * x / 2.0, 0.0);
        for n in 2..16 {
            sum += term;
            term *= -x / (n + 1) as f64;
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}

/// `x - 2(1 - e^{-x}) + (1 - e^{-2x})/2`, accurate for small x.
fn position_variance_kernel(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        // Σ_{n≥3} (-1)^{n+1} (2^{n-1} - 2) xⁿ / n!
        let mut sum = 0.0;
        let mut pow = x * x / 2.0; // x^n / n! at n = 2
        for n in 3..20u32 {
            pow *= x / n as f64;
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * (2f64.powi(n as i32 - 1) - 2.0) * pow;
        }
        sum
    } else {
        x + 2.0 * (-x).exp_m1() - (-2.0 * x).exp_m1() / 2.0
    }
}

/// Covariance of the corrector noise injected at offset `r ≥ 1` steps from
/// the end of a block.
///
/// `PaperVerbatim`: the scalar `2γ(1 + γ⁻²)(1 - e^{-γε})² e^{-2γrε}` on the
/// momentum channel. `Exact`: `G((r-1)ε) Σ₁ G((r-1)ε)ᵀ`, with `Σ₁` the exact
/// one-step covariance of `∫ G(ε - s) [0; √(2γ)] dW_s`.
pub fn corrector_noise_cov(gamma: f64, eps: f64, r: usize, mode: Mode) -> Result<Cov2> {
    if !(gamma > 0.0) || !(eps > 0.0) || r == 0 {
        return Err(Error::Domain {
            what: "corrector noise arguments",
            value: if r == 0 { 0.0 } else { gamma.min(eps) },
            domain: "gamma > 0, eps > 0, r >= 1".into(),
        });
    }
    Ok(match mode {
        Mode::PaperVerbatim => {
            let decay = -(-gamma * eps).exp_m1();
            Cov2 {
                uu: 0.0,
                uv: 0.0,
                vv: 2.0 * gamma * (1.0 + 1.0 / (gamma * gamma)) * decay * decay * (-2.0 * gamma * r as f64 * eps).exp(),
            }
        }
        Mode::Exact => {
            let one = exact_step_noise(gamma, eps);
            GMatrix::new(gamma, (r - 1) as f64 * eps).congruence(&one)
        }
    })
}

/// Exact one-step noise covariance of the Langevin integrator.
fn exact_step_noise(gamma: f64, eps: f64) -> Cov2 {
    let x = gamma * eps;
    let decay = -(-x).exp_m1();
    Cov2 {
        uu: 2.0 / (gamma * gamma) * position_variance_kernel(x),
        uv: decay * decay / gamma,
        vv: -(-2.0 * x).exp_m1(),
    }
}

/// Predictor coefficients `y' = state·y + score·s(y)`.
///
/// `PaperVerbatim` uses the literal closed form
/// `y_m = ½e^{τ_m/2} y_0 + ½ Σ_{j<m} (e^{ε_j} - 1) e^{(τ_m - τ_{j+1})/2} s_j`,
/// which as a step recurrence is `y_1 = ½e^{ε/2} y_0 + ½(e^ε - 1) s_0` and
/// `y_{m+1} = e^{ε/2} y_m + ½(e^ε - 1) s_m` for `m ≥ 1`.
pub fn predictor_step_coefficients(eps: f64, mode: Mode, first: bool) -> StepCoefficients {
    let half = eps / 2.0;
    match mode {
        Mode::Exact => StepCoefficients {
            state: half.exp(),
            score: half.exp_m1(),
            noise: 0.0,
        },
        Mode::PaperVerbatim => StepCoefficients {
            state: if first { 0.5 * half.exp() } else { half.exp() },
            score: 0.5 * eps.exp_m1(),
            noise: 0.0,
        },
    }
}

/// Per-step linear data of a corrector block.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorCoefficients {
    pub g: GMatrix,
    /// Weights of the frozen score on the (position, momentum) channels.
    pub drift: (f64, f64),
    /// Exact mode: Cholesky factor (l11, l21, l22) of the one-step noise.
    pub noise_factor: (f64, f64, f64),
    /// Verbatim mode: momentum-channel noise standard deviation of step j.
    pub verbatim_noise: Vec<f64>,
}

impl CorrectorCoefficients {
    pub fn new(gamma: f64, eps: f64, steps: usize, mode: Mode) -> Result<Self> {
        let g = GMatrix::new(gamma, eps);
        match mode {
            Mode::Exact => {
                let x = gamma * eps;
                let drift = (excess_linear(x) / (gamma * gamma), -(-x).exp_m1() / gamma);
                Ok(CorrectorCoefficients {
                    g,
                    drift,
                    noise_factor: exact_step_noise(gamma, eps).cholesky(),
                    verbatim_noise: Vec::new(),
                })
            }
            Mode::PaperVerbatim => {
                let [_, g12, _, g22] = g.blocks;
                let verbatim_noise = (0..steps)
                    .map(|j| corrector_noise_cov(gamma, eps, steps - j + 1, mode).map(|c| c.vv.sqrt()))
                    .collect::<Result<_>>()?;
                Ok(CorrectorCoefficients {
                    g,
                    drift: (-g12, 1.0 - g22),
                    noise_factor: (0.0, 0.0, 0.0),
                    verbatim_noise,
                })
            }
        }
    }

    /// Standard normals consumed per step, per coordinate.
    pub fn noise_per_coordinate(&self) -> usize {
        if self.verbatim_noise.is_empty() {
            2
        } else {
            1
        }
    }
}

/// Position and momentum of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState<F> {
    pub u: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Scalar> PhaseState<F> {
    pub fn new(u: Vec<F>, v: Vec<F>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::Dimension {
                expected: u.len(),
                got: v.len(),
            });
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                block: 0,
                node: 0,
                iteration: 0,
            });
        }
        Ok(PhaseState { u, v })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    fn flat(&self) -> Vec<F> {
        self.u.iter().chain(&self.v).copied().collect()
    }

    fn from_flat(x: &[F]) -> Self {
        let d = x.len() / 2;
        PhaseState {
            u: x[..d].to_vec(),
            v: x[d..].to_vec(),
        }
    }
}

pub(crate) struct CorrectorScheme<F> {
    d: usize,
    steps: usize,
    time: F,
    g12: F,
    g22: F,
    wu: F,
    wv: F,
    l: (F, F, F),
    verbatim: Vec<F>,
}

impl<F: Scalar> CorrectorScheme<F> {
    fn new(d: usize, steps: usize, time: F, c: &CorrectorCoefficients) -> Self {
        CorrectorScheme {
            d,
            steps,
            time,
            g12: F::of(c.g.blocks[1]),
            g22: F::of(c.g.blocks[3]),
            wu: F::of(c.drift.0),
            wv: F::of(c.drift.1),
            l: (F::of(c.noise_factor.0), F::of(c.noise_factor.1), F::of(c.noise_factor.2)),
            verbatim: c.verbatim_noise.iter().map(|&s| F::of(s)).collect(),
        }
    }
}

impl<F: Scalar> Scheme<F> for CorrectorScheme<F> {
    fn state_dim(&self) -> usize {
        2 * self.d
    }
    fn score_dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        if self.verbatim.is_empty() {
            2 * self.d
        } else {
            self.d
        }
    }
    fn steps(&self) -> usize {
        self.steps
    }
    fn node_time(&self, _m: usize) -> F {
        self.time
    }
    #[inline]
    fn advance(&self, m: usize, cur: &[F], score: &[F], noise: &[F], out: &mut [F]) {
        let d = self.d;
        let (u, v) = cur.split_at(d);
        let (ou, ov) = out.split_at_mut(d);
        if self.verbatim.is_empty() {
            let (l11, l21, l22) = self.l;
            let (z1, z2) = noise.split_at(d);
            for i in 0..d {
                ou[i] = u[i] + self.g12 * v[i] + self.wu * score[i] + l11 * z1[i];
                ov[i] = self.g22 * v[i] + self.wv * score[i] + l21 * z1[i] + l22 * z2[i];
            }
        } else {
            let sig = self.verbatim[m];
            for i in 0..d {
                ou[i] = u[i] + self.g12 * v[i] + self.wu * score[i];
                ov[i] = self.g22 * v[i] + self.wv * score[i] + sig * noise[i];
            }
        }
    }
}

pub(crate) fn predictor_scheme<F: Scalar>(plan: &DiscretizationPlan<F>, n: usize, d: usize, mode: Mode) -> ScalarScheme<F> {
    let coeffs: Vec<StepCoefficients> = plan
        .steps(n)
        .iter()
        .enumerate()
        .map(|(m, e)| predictor_step_coefficients(e.f64(), mode, m == 0))
        .collect();
    ScalarScheme {
        d,
        start_time: plan.block_start(n),
        grid: plan.grid(n).to_vec(),
        state: coeffs.iter().map(|c| F::of(c.state)).collect(),
        score: coeffs.iter().map(|c| F::of(c.score)).collect(),
        noise: Vec::new(),
    }
}

fn corrector_scheme<F: Scalar>(
    cplan: &CorrectorPlan<F>,
    d: usize,
    time: F,
    mode: Mode,
) -> Result<CorrectorScheme<F>> {
    let c = CorrectorCoefficients::new(cplan.gamma().f64(), cplan.step().f64(), cplan.steps(), mode)?;
    Ok(CorrectorScheme::new(d, cplan.steps(), time, &c))
}

/// Standard normals per sample of one corrector block.
pub fn corrector_noise_len(cplan_steps: usize, d: usize, mode: Mode) -> usize {
    cplan_steps * d * if mode == Mode::Exact { 2 } else { 1 }
}

/// Noise of corrector block `j` inside outer block `n` for one sample.
pub fn corrector_block_noise<F: Scalar>(seed: u64, sample: usize, n: usize, j: usize, steps: usize, d: usize, mode: Mode) -> Vec<F> {
    let per = corrector_noise_len(steps, d, mode);
    let mut out = vec![F::zero(); per];
    block_noise(seed, &[tag::CORRECTOR_NOISE, n as u64, j as u64], sample, sample + 1, per, &mut out);
    out
}

fn check_score<F: Scalar, S: ScoreFunction<F> + ?Sized>(plan: &DiscretizationPlan<F>, score: &S) -> Result<usize> {
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

/// One predictor block for a single path; returns the end state and the
/// per-sweep sup-residuals. The final iterate stays in `ws`.
pub fn run_predictor_block<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    n: usize,
    start_state: &[F],
    score_fn: &S,
    options: &SamplerOptions,
    ws: &mut PicardWorkspace<F>,
) -> Result<(Vec<F>, Vec<f64>)> {
    let d = check_score(plan, score_fn)?;
    if start_state.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: start_state.len(),
        });
    }
    let scheme = predictor_scheme(plan, n, d, options.mode);
    ws.reset(1, d, d, plan.steps_in_block(n), 0);
    ws.block_start_state_mut().copy_from_slice(start_state);
    let ctx = BlockContext {
        block: n,
        contraction: score_fn.lipschitz().map(|l| {
            let h = plan.block_lengths()[n].f64();
            l * l * h * (2.0 * h).exp()
        }),
    };
    let run = picard::picard_block(&scheme, score_fn, ws, options.stop, plan.picard_depth(), &ctx)?;
    Ok((ws.end_states(), run.path))
}

/// Sequential predictor solve of block `n`; returns every node, `[node][coord]`.
pub fn sequential_predictor_block<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    n: usize,
    start_state: &[F],
    score_fn: &S,
    mode: Mode,
) -> Result<Vec<F>> {
    let d = check_score(plan, score_fn)?;
    if start_state.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: start_state.len(),
        });
    }
    let scheme = predictor_scheme(plan, n, d, mode);
    let mut state = start_state.to_vec();
    let mut path = Vec::new();
    picard::sequential_block(&scheme, score_fn, &mut state, &[], n, Some(&mut path))?;
    Ok(path)
}

/// One corrector block for a single path with the score frozen at backward
/// time `time`; `noise` has [`corrector_noise_len`] standard normals.
#[allow(clippy::too_many_arguments)]
pub fn run_corrector_block<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    cplan: &CorrectorPlan<F>,
    start: &PhaseState<F>,
    score_fn: &S,
    time: F,
    noise: &[F],
    mode: Mode,
    stop: StopRule,
    ws: &mut PicardWorkspace<F>,
) -> Result<(PhaseState<F>, Vec<f64>)> {
    let d = score_fn.dim();
    if start.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: start.dim(),
        });
    }
    let steps = cplan.steps();
    if noise.len() != corrector_noise_len(steps, d, mode) {
        return Err(Error::Dimension {
            expected: corrector_noise_len(steps, d, mode),
            got: noise.len(),
        });
    }
    let scheme = corrector_scheme(cplan, d, time, mode)?;
    ws.reset(1, 2 * d, d, steps, scheme.noise_dim());
    ws.block_start_state_mut().copy_from_slice(&start.flat());
    ws.noise_cache_mut().copy_from_slice(noise);
    let ctx = BlockContext {
        block: 0,
        contraction: None,
    };
    let run = picard::picard_block(&scheme, score_fn, ws, stop, cplan.depth(), &ctx)?;
    Ok((PhaseState::from_flat(&ws.end_states()), run.path))
}

/// Sequential corrector solve; returns every node as flattened `[u; v]`.
pub fn sequential_corrector_block<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    cplan: &CorrectorPlan<F>,
    start: &PhaseState<F>,
    score_fn: &S,
    time: F,
    noise: &[F],
    mode: Mode,
) -> Result<Vec<F>> {
    let d = score_fn.dim();
    let scheme = corrector_scheme(cplan, d, time, mode)?;
    let mut state = start.flat();
    let mut path = Vec::new();
    picard::sequential_block(&scheme, score_fn, &mut state, noise, 0, Some(&mut path))?;
    Ok(path)
}

/// Per-chunk result of the ODE sampler: end states, predictor runs per outer
/// block, corrector runs per (outer, inner) block.
type OdeChunk<F> = (Vec<F>, Vec<BlockRun>, Vec<BlockRun>);

/// PIADM-ODE: predictor then N† corrector blocks per outer block; the sample
/// is the position channel after the last corrector.
pub fn run_piadm_ode<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    cplan: &CorrectorPlan<F>,
    score_fn: &S,
    seed: u64,
    n_samples: usize,
    options: &SamplerOptions,
) -> Result<(Samples<F>, SamplerReport)> {
    let clock = Instant::now();
    let d = check_score(plan, score_fn)?;
    let nb = plan.n_blocks();
    if let Some(l) = score_fn.lipschitz() {
        plan.contraction_margin(l);
    }
    let corrector = if cplan.is_enabled() {
        Some(CorrectorCoefficients::new(cplan.gamma().f64(), cplan.step().f64(), cplan.steps(), options.mode)?)
    } else {
        None
    };
    let results: Vec<Result<OdeChunk<F>>> = chunks(n_samples)
        .into_par_iter()
        .map(|(lo, hi)| {
            let batch = hi - lo;
            let mut ws = PicardWorkspace::new();
            let mut states = initial_states::<F>(seed, lo, hi, d);
            let mut pred_runs = Vec::with_capacity(nb);
            let mut corr_runs = Vec::new();
            for n in 0..nb {
                let scheme = predictor_scheme(plan, n, d, options.mode);
                ws.reset(batch, d, d, plan.steps_in_block(n), 0);
                ws.block_start_state_mut().copy_from_slice(&states);
                let ctx = BlockContext {
                    block: n,
                    contraction: score_fn.lipschitz().map(|l| {
                        let h = plan.block_lengths()[n].f64();
                        l * l * h * (2.0 * h).exp()
                    }),
                };
                pred_runs.push(picard::picard_block(&scheme, score_fn, &mut ws, options.stop, plan.picard_depth(), &ctx)?);
                states = ws.end_states();

                let Some(coeffs) = corrector.as_ref() else { continue };
                let scheme = CorrectorScheme::new(d, cplan.steps(), plan.block_start(n + 1), coeffs);
                let mut momentum = vec![F::zero(); batch * d];
                block_noise(seed, &[tag::MOMENTUM, n as u64], lo, hi, d, &mut momentum);
                let mut phase: Vec<F> = states
                    .chunks(d)
                    .zip(momentum.chunks(d))
                    .flat_map(|(u, v)| u.iter().chain(v).copied())
                    .collect();
                let q = scheme.noise_dim();
                for j in 0..cplan.blocks() {
                    ws.reset(batch, 2 * d, d, cplan.steps(), q);
                    ws.block_start_state_mut().copy_from_slice(&phase);
                    block_noise(
                        seed,
                        &[tag::CORRECTOR_NOISE, n as u64, j as u64],
                        lo,
                        hi,
                        cplan.steps() * q,
                        ws.noise_cache_mut(),
                    );
                    let ctx = BlockContext {
                        block: n,
                        contraction: None,
                    };
                    corr_runs.push(picard::picard_block(&scheme, score_fn, &mut ws, options.corrector_stop, cplan.depth(), &ctx)?);
                    phase = ws.end_states();
                }
                states = phase.chunks(2 * d).flat_map(|z| z[..d].iter().copied()).collect();
            }
            Ok((states, pred_runs, corr_runs))
        })
        .collect();

    let mut data = Vec::with_capacity(n_samples * d);
    let mut per_chunk = Vec::new();
    for (r, (lo, hi)) in results.into_iter().zip(chunks(n_samples)) {
        let (s, p, c) = r?;
        data.extend(s);
        per_chunk.push((p, c, hi - lo));
    }
    let mut report = SamplerReport {
        n_samples,
        ..Default::default()
    };
    for n in 0..nb {
        let runs: Vec<(&BlockRun, usize)> = per_chunk.iter().map(|(p, _, size)| (&p[n], *size)).collect();
        let (iters, path, mean) = merge_block_runs(&runs);
        let width = plan.steps_in_block(n) + 1;
        report.sequential_rounds += iters as u64;
        report.total_score_evals += (iters * width) as u64;
        report.max_parallel_width = report.max_parallel_width.max(width);
        report.iterations.push(iters);
        report.residual_history.push(path);
        report.mean_residual_history.push(mean);
    }
    let n_corr = if corrector.is_some() { nb * cplan.blocks() } else { 0 };
    for i in 0..n_corr {
        let runs: Vec<(&BlockRun, usize)> = per_chunk.iter().map(|(_, c, size)| (&c[i], *size)).collect();
        let (iters, path, mean) = merge_block_runs(&runs);
        let width = cplan.steps() + 1;
        report.sequential_rounds += iters as u64;
        report.total_score_evals += (iters * width) as u64;
        report.max_parallel_width = report.max_parallel_width.max(width);
        report.corrector_iterations.push(iters);
        report.corrector_residual_history.push(path);
        report.corrector_mean_residual_history.push(mean);
    }
    report.wall_clock = clock.elapsed().as_secs_f64();
    Ok((Samples::new(d, data)?, report))
}

/// Sequential predictor–corrector baseline with the same initial states,
/// momenta and noise as [`run_piadm_ode`].
pub fn run_sequential_ode<F: Scalar, S: ScoreFunction<F> + ?Sized>(
    plan: &DiscretizationPlan<F>,
    cplan: &CorrectorPlan<F>,
    score_fn: &S,
    seed: u64,
    n_samples: usize,
    mode: Mode,
) -> Result<(Samples<F>, SamplerReport)> {
    let clock = Instant::now();
    let d = check_score(plan, score_fn)?;
    let nb = plan.n_blocks();
    let corrector = if cplan.is_enabled() {
        Some(CorrectorCoefficients::new(cplan.gamma().f64(), cplan.step().f64(), cplan.steps(), mode)?)
    } else {
        None
    };
    let results: Vec<Result<Vec<F>>> = chunks(n_samples)
        .into_par_iter()
        .map(|(lo, hi)| {
            let batch = hi - lo;
            let mut states = initial_states::<F>(seed, lo, hi, d);
            for n in 0..nb {
                let scheme = predictor_scheme(plan, n, d, mode);
                picard::sequential_block(&scheme, score_fn, &mut states, &[], n, None)?;
                let Some(coeffs) = corrector.as_ref() else { continue };
                let scheme = CorrectorScheme::new(d, cplan.steps(), plan.block_start(n + 1), coeffs);
                let mut momentum = vec![F::zero(); batch * d];
                block_noise(seed, &[tag::MOMENTUM, n as u64], lo, hi, d, &mut momentum);
                let mut phase: Vec<F> = states
                    .chunks(d)
                    .zip(momentum.chunks(d))
                    .flat_map(|(u, v)| u.iter().chain(v).copied())
                    .collect();
                let q = scheme.noise_dim();
                let mut noise = vec![F::zero(); batch * cplan.steps() * q];
                for j in 0..cplan.blocks() {
                    block_noise(seed, &[tag::CORRECTOR_NOISE, n as u64, j as u64], lo, hi, cplan.steps() * q, &mut noise);
                    picard::sequential_block(&scheme, score_fn, &mut phase, &noise, n, None)?;
                }
                states = phase.chunks(2 * d).flat_map(|z| z[..d].iter().copied()).collect();
            }
            Ok(states)
        })
        .collect();
    let mut data = Vec::with_capacity(n_samples * d);
    for r in results {
        data.extend(r?);
    }
    let corr_steps = if corrector.is_some() { nb * cplan.blocks() * cplan.steps() } else { 0 };
    let total = (plan.total_steps() + corr_steps) as u64;
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
