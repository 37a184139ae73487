//! Time-indexed score functions.
//!
//! Samplers only see the [`ScoreFunction`] trait, evaluated in *backward*
//! time (t = 0 is the noise end, t = T the data end). [`ScoreOracle`] is the
//! exact score of an OU-evolved Gaussian or Gaussian mixture;
//! [`PerturbedOracle`] adds a bounded deterministic error to emulate a
//! learned score.

mod oracle;
mod perturbed;
mod target;

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::scalar::Scalar;

pub use oracle::{ScoreBounds, ScoreOracle};
pub use perturbed::{PerturbationMode, PerturbedOracle};
pub use target::{ou_advance, ou_marginal, MixtureLaw, TargetSpec, TargetVariant};

/// Batches at least this many scalars (nodes x dim) are evaluated in parallel.
const PAR_BATCH_SCALARS: usize = 1 << 12;

pub trait ScoreFunction<F: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// Writes the score at backward time `t` and state `x` into `out`.
    fn eval(&self, t: F, x: &[F], out: &mut [F]);

    /// Evaluates one round of independent queries: node `i` has time
    /// `times[i]` and state `states[i*d..(i+1)*d]`.
    ///
    /// Samplers route every evaluation through this method, one call per
    /// sequential round.
    fn eval_batch(&self, times: &[F], states: &[F], out: &mut [F]) {
        let d = self.dim();
        debug_assert_eq!(states.len(), times.len() * d);
        if states.len() >= PAR_BATCH_SCALARS {
            out.par_chunks_mut(d)
                .zip(states.par_chunks(d))
                .zip(times.par_iter())
                .for_each(|((o, x), &t)| self.eval(t, x, o));
        } else {
            for ((o, x), &t) in out.chunks_mut(d).zip(states.chunks(d)).zip(times) {
                self.eval(t, x, o);
            }
        }
    }

    /// Lipschitz constant in x, when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Largest backward time the function is defined for, when bounded.
    fn horizon(&self) -> Option<f64> {
        None
    }
}

impl<F: Scalar, S: ScoreFunction<F> + ?Sized> ScoreFunction<F> for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: F, x: &[F], out: &mut [F]) {
        (**self).eval(t, x, out)
    }
    fn eval_batch(&self, times: &[F], states: &[F], out: &mut [F]) {
        (**self).eval_batch(times, states, out)
    }
    fn lipschitz(&self) -> Option<f64> {
        (**self).lipschitz()
    }
    fn horizon(&self) -> Option<f64> {
        (**self).horizon()
    }
}

/// Score given by a closure `f(t, x, out)`.
pub struct FnScore<G> {
    dim: usize,
    lipschitz: Option<f64>,
    f: G,
}

impl<G> FnScore<G> {
    pub fn new(dim: usize, f: G) -> Self {
        FnScore { dim, lipschitz: None, f }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }
}

impl<F: Scalar, G: Fn(F, &[F], &mut [F]) + Sync> ScoreFunction<F> for FnScore<G> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: F, x: &[F], out: &mut [F]) {
        (self.f)(t, x, out)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// The zero score.
pub struct ZeroScore(pub usize);

impl<F: Scalar> ScoreFunction<F> for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _t: F, _x: &[F], out: &mut [F]) {
        out.fill(F::zero());
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Counts rounds (batch calls) and individual evaluations on the way to the
/// wrapped score.
pub struct CountingScore<S> {
    inner: S,
    rounds: AtomicU64,
    evals: AtomicU64,
}

impl<S> CountingScore<S> {
    pub fn new(inner: S) -> Self {
        CountingScore {
            inner,
            rounds: AtomicU64::new(0),
            evals: AtomicU64::new(0),
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds.load(Ordering::Relaxed)
    }

    pub fn evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<F: Scalar, S: ScoreFunction<F>> ScoreFunction<F> for CountingScore<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: F, x: &[F], out: &mut [F]) {
        self.rounds.fetch_add(1, Ordering::Relaxed);
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(t, x, out)
    }
    fn eval_batch(&self, times: &[F], states: &[F], out: &mut [F]) {
        self.rounds.fetch_add(1, Ordering::Relaxed);
        self.evals.fetch_add(times.len() as u64, Ordering::Relaxed);
        self.inner.eval_batch(times, states, out)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.inner.lipschitz()
    }
    fn horizon(&self) -> Option<f64> {
        self.inner.horizon()
    }
}
