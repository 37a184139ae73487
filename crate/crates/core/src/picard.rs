//! Blockwise Picard engine shared by the SDE and ODE samplers.
//!
//! A block is a lower-triangular recurrence
//! `x_{m+1} = step_m(x_m, s(t_m, x_m), ξ_m)` over `M` steps. One Picard sweep
//! evaluates the score at every node of the previous iterate in a single
//! batched round, then runs the cheap recurrence; after `M` sweeps the
//! iterate equals the sequential solve exactly. Samples are processed in
//! lockstep so that one sweep is one round of score evaluation for the whole
//! batch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::score::ScoreFunction;

/// Work below this many scalars runs on the calling thread.
const PAR_SCALARS: usize = 1 << 13;

/// Ratio of residual growth over the first residual treated as divergence.
pub(crate) const DIVERGENCE_FACTOR: f64 = 1e6;

/// When a block's Picard iteration stops.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Use the depth stored in the plan.
    #[default]
    PlanDepth,
    /// Exactly this many sweeps.
    Depth { depth: usize },
    /// Stop once every path's sup-residual is below `tol`, or after
    /// `max_depth` sweeps.
    Tolerance { tol: f64, max_depth: usize },
}

impl StopRule {
    pub(crate) fn max_depth(&self, plan_depth: usize) -> usize {
        match *self {
            StopRule::PlanDepth => plan_depth,
            StopRule::Depth { depth } => depth,
            StopRule::Tolerance { max_depth, .. } => max_depth,
        }
    }

    fn tolerance(&self) -> Option<f64> {
        match *self {
            StopRule::Tolerance { tol, .. } => Some(tol),
            _ => None,
        }
    }
}

/// One block recurrence. States have `state_dim` entries per sample; the
/// score is evaluated at the leading `score_dim` entries.
pub(crate) trait Scheme<F: Scalar>: Sync {
    fn state_dim(&self) -> usize;
    fn score_dim(&self) -> usize;
    /// Standard normals consumed per step and sample.
    fn noise_dim(&self) -> usize;
    fn steps(&self) -> usize;
    /// Backward time at which the score of node `m` is evaluated.
    fn node_time(&self, m: usize) -> F;
    /// Writes node `m + 1` given node `m`, its score and the step noise.
    fn advance(&self, m: usize, cur: &[F], score: &[F], noise: &[F], out: &mut [F]);
}

/// Buffers for one block run over a batch of samples.
///
/// `noise_cache` is filled once per block, before the first sweep, and read
/// by every sweep; node 0 of both iterates always holds the block start.
#[derive(Debug, Clone, Default)]
pub struct PicardWorkspace<F> {
    d: usize,
    batch: usize,
    grid_size: usize,
    prev_states: Vec<F>,
    next_states: Vec<F>,
    noise_cache: Vec<F>,
    block_start_state: Vec<F>,
    inputs: Vec<F>,
    times: Vec<F>,
    scores: Vec<F>,
}

impl<F: Scalar> PicardWorkspace<F> {
    pub fn new() -> Self {
        PicardWorkspace {
            d: 0,
            batch: 0,
            grid_size: 0,
            prev_states: Vec::new(),
            next_states: Vec::new(),
            noise_cache: Vec::new(),
            block_start_state: Vec::new(),
            inputs: Vec::new(),
            times: Vec::new(),
            scores: Vec::new(),
        }
    }

    /// Sizes the buffers; keeps allocations when shapes repeat.
    pub(crate) fn reset(&mut self, batch: usize, state_dim: usize, score_dim: usize, steps: usize, noise_dim: usize) {
        self.d = state_dim;
        self.batch = batch;
        self.grid_size = steps + 1;
        let nodes = batch * self.grid_size;
        let z = F::zero();
        self.prev_states.clear();
        self.prev_states.resize(nodes * state_dim, z);
        self.next_states.clear();
        self.next_states.resize(nodes * state_dim, z);
        self.noise_cache.clear();
        self.noise_cache.resize(batch * steps * noise_dim, z);
        self.block_start_state.clear();
        self.block_start_state.resize(batch * state_dim, z);
        self.inputs.clear();
        self.inputs.resize(nodes * score_dim, z);
        self.times.clear();
        self.times.resize(nodes, z);
        self.scores.clear();
        self.scores.resize(nodes * score_dim, z);
    }

    /// State dimension per sample.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// M + 1.
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Latest iterate, `[sample][node][coordinate]`.
    pub fn states(&self) -> &[F] {
        &self.prev_states
    }

    /// Standard normals of the block, `[sample][step][coordinate]`.
    pub fn noise_cache(&self) -> &[F] {
        &self.noise_cache
    }

    pub(crate) fn noise_cache_mut(&mut self) -> &mut [F] {
        &mut self.noise_cache
    }

    pub fn block_start_state(&self) -> &[F] {
        &self.block_start_state
    }

    pub(crate) fn block_start_state_mut(&mut self) -> &mut [F] {
        &mut self.block_start_state
    }

    /// Final node of every sample, `[sample][coordinate]`.
    pub fn end_states(&self) -> Vec<F> {
        let p = self.d;
        let g = self.grid_size;
        (0..self.batch)
            .flat_map(|b| self.prev_states[(b * g + g - 1) * p..(b * g + g) * p].iter().copied())
            .collect()
    }
}

/// Residual statistics of one block run.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct BlockRun {
    pub iterations: usize,
    /// Sup-residual of sample 0 after each sweep.
    pub path: Vec<f64>,
    /// Largest sup-residual over the batch after each sweep.
    pub max: Vec<f64>,
    /// Sum over the batch of sup-residuals after each sweep, in sample order.
    pub sum: Vec<f64>,
}

pub(crate) struct BlockContext {
    pub block: usize,
    pub contraction: Option<f64>,
}

fn gather_inputs<F: Scalar, Sc: Scheme<F>>(scheme: &Sc, ws: &mut PicardWorkspace<F>) {
    let p = scheme.state_dim();
    let d = scheme.score_dim();
    let g = ws.grid_size;
    for (i, (inp, st)) in ws.inputs.chunks_mut(d).zip(ws.prev_states.chunks(p)).enumerate() {
        inp.copy_from_slice(&st[..d]);
        ws.times[i] = scheme.node_time(i % g);
    }
}

fn check_finite<F: Scalar>(values: &[F], per_node: usize, grid: usize, block: usize, iteration: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            block,
            node: (i / per_node) % grid,
            iteration,
        }),
    }
}

/// Runs Picard sweeps on the block loaded in `ws` (start states and noise
/// must already be set).
pub(crate) fn picard_block<F, S, Sc>(
    scheme: &Sc,
    score: &S,
    ws: &mut PicardWorkspace<F>,
    stop: StopRule,
    plan_depth: usize,
    ctx: &BlockContext,
) -> Result<BlockRun>
where
    F: Scalar,
    S: ScoreFunction<F> + ?Sized,
    Sc: Scheme<F>,
{
    let p = scheme.state_dim();
    let d = scheme.score_dim();
    let q = scheme.noise_dim();
    let steps = scheme.steps();
    let g = steps + 1;
    let batch = ws.batch;
    debug_assert_eq!(ws.grid_size, g);

    for b in 0..batch {
        let start = &ws.block_start_state[b * p..(b + 1) * p];
        for m in 0..g {
            let at = (b * g + m) * p;
            ws.prev_states[at..at + p].copy_from_slice(start);
        }
    }

    let max_depth = stop.max_depth(plan_depth);
    let mut run = BlockRun::default();
    let mut initial = 0.0;
    for k in 0..max_depth {
        gather_inputs(scheme, ws);
        score.eval_batch(&ws.times, &ws.inputs, &mut ws.scores);
        check_finite(&ws.scores, d, g, ctx.block, k)?;

        #[allow(clippy::type_complexity)]
        let sweep = |((next, prev), (sc, (noise, start))): ((&mut [F], &[F]), (&[F], (&[F], &[F])))| -> f64 {
            next[..p].copy_from_slice(start);
            let mut worst = F::zero();
            for m in 0..steps {
                let (head, tail) = next.split_at_mut((m + 1) * p);
                scheme.advance(
                    m,
                    &head[m * p..],
                    &sc[m * d..(m + 1) * d],
                    &noise[m * q..(m + 1) * q],
                    &mut tail[..p],
                );
                let r = crate::scalar::dist_sq(&tail[..p], &prev[(m + 1) * p..(m + 2) * p]);
                if !(r <= worst) {
                    worst = r;
                }
            }
            worst.f64()
        };
        let noise_stride = (steps * q).max(1);
        let noise_pad;
        let noise: &[F] = if q == 0 {
            noise_pad = vec![F::zero(); batch];
            &noise_pad
        } else {
            &ws.noise_cache
        };
        let residuals: Vec<f64> = if batch * g * p >= PAR_SCALARS {
            ws.next_states
                .par_chunks_mut(g * p)
                .zip(ws.prev_states.par_chunks(g * p))
                .zip(ws.scores.par_chunks(g * d).zip(noise.par_chunks(noise_stride).zip(ws.block_start_state.par_chunks(p))))
                .map(sweep)
                .collect()
        } else {
            ws.next_states
                .chunks_mut(g * p)
                .zip(ws.prev_states.chunks(g * p))
                .zip(ws.scores.chunks(g * d).zip(noise.chunks(noise_stride).zip(ws.block_start_state.chunks(p))))
                .map(sweep)
                .collect()
        };
        std::mem::swap(&mut ws.prev_states, &mut ws.next_states);

        if let Some(b) = residuals.iter().position(|r| !r.is_finite()) {
            let node = ws.prev_states[b * g * p..(b + 1) * g * p]
                .iter()
                .position(|v| !v.is_finite())
                .map_or(g - 1, |i| i / p);
            return Err(Error::NonFinite {
                block: ctx.block,
                node,
                iteration: k,
            });
        }
        let max = residuals.iter().cloned().fold(0.0, f64::max);
        let sum: f64 = residuals.iter().sum();
        run.path.push(residuals[0]);
        run.max.push(max);
        run.sum.push(sum);
        run.iterations = k + 1;

        if k == 0 {
            initial = max;
        } else if initial > 0.0 && max > DIVERGENCE_FACTOR * initial {
            return Err(Error::Divergence {
                block: ctx.block,
                iteration: k,
                residual: max,
                initial,
                contraction: ctx.contraction.map_or_else(|| "unknown".into(), |c| format!("{c:.4}")),
            });
        }
        if stop.tolerance().is_some_and(|tol| max < tol) {
            break;
        }
    }
    Ok(run)
}

/// Solves the block recurrence one step at a time; `states` holds the batch
/// start states on entry and the end states on exit. When `path` is given,
/// the batch states at every node are appended to it, node-major.
pub(crate) fn sequential_block<F, S, Sc>(
    scheme: &Sc,
    score: &S,
    states: &mut [F],
    noise: &[F],
    block: usize,
    mut path: Option<&mut Vec<F>>,
) -> Result<()>
where
    F: Scalar,
    S: ScoreFunction<F> + ?Sized,
    Sc: Scheme<F>,
{
    let p = scheme.state_dim();
    let d = scheme.score_dim();
    let q = scheme.noise_dim();
    let steps = scheme.steps();
    let batch = states.len() / p;
    let mut inputs = vec![F::zero(); batch * d];
    let mut scores = vec![F::zero(); batch * d];
    let mut out = vec![F::zero(); p];
    let zero_noise: [F; 0] = [];
    if let Some(path) = path.as_deref_mut() {
        path.extend_from_slice(states);
    }
    for m in 0..steps {
        let t = scheme.node_time(m);
        let times = vec![t; batch];
        for (inp, st) in inputs.chunks_mut(d).zip(states.chunks(p)) {
            inp.copy_from_slice(&st[..d]);
        }
        score.eval_batch(&times, &inputs, &mut scores);
        check_finite(&scores, d, usize::MAX, block, 0).map_err(|_| Error::NonFinite {
            block,
            node: m,
            iteration: 0,
        })?;
        for (b, st) in states.chunks_mut(p).enumerate() {
            let nz = if q == 0 {
                &zero_noise[..]
            } else {
                &noise[(b * steps + m) * q..(b * steps + m + 1) * q]
            };
            scheme.advance(m, st, &scores[b * d..(b + 1) * d], nz, &mut out);
            st.copy_from_slice(&out);
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                block,
                node: m + 1,
                iteration: 0,
            });
        }
        if let Some(path) = path.as_deref_mut() {
            path.extend_from_slice(states);
        }
    }
    Ok(())
}
