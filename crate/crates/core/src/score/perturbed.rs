use serde::{Deserialize, Serialize};

use super::{ScoreFunction, ScoreOracle};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::scalar::Scalar;

/// How the error budget of a [`PerturbedOracle`] is spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PerturbationMode {
    /// Weighted L² budget over a plan spanning `span` time units: each query
    /// time gets an error of norm δ₂/√span, so Σ ε‖error‖² = δ₂².
    L2Budget { span: f64 },
    /// Per-time error of norm δ∞ at every query.
    LinfBudget,
}

/// Exact score plus a deterministic, bounded error emulating a learned score.
///
/// The error at time t is a fixed unit direction drawn from (seed, t) and
/// scaled to the budget; it does not depend on x, so the Lipschitz constant
/// is unchanged. The result is radially truncated to the magnitude bound of
/// the base oracle (or the base score's own norm, if larger).
#[derive(Debug, Clone)]
pub struct PerturbedOracle {
    base: ScoreOracle,
    mode: PerturbationMode,
    amplitude: f64,
    seed: u64,
}

impl PerturbedOracle {
    pub fn new(base: ScoreOracle, mode: PerturbationMode, amplitude: f64, seed: u64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::Domain {
                what: "perturbation amplitude",
                value: amplitude,
                domain: "[0, inf)".into(),
            });
        }
        if let PerturbationMode::L2Budget { span } = mode {
            if !(span > 0.0) {
                return Err(Error::Domain {
                    what: "L2 budget span",
                    value: span,
                    domain: "(0, inf)".into(),
                });
            }
        }
        Ok(PerturbedOracle {
            base,
            mode,
            amplitude,
            seed,
        })
    }

    pub fn base(&self) -> &ScoreOracle {
        &self.base
    }

    pub fn mode(&self) -> PerturbationMode {
        self.mode
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    fn error_norm(&self) -> f64 {
        match self.mode {
            PerturbationMode::LinfBudget => self.amplitude,
            PerturbationMode::L2Budget { span } => self.amplitude / span.sqrt(),
        }
    }

    /// Error vector added at backward time `t`.
    pub fn perturbation(&self, t: f64) -> Vec<f64> {
        let d = self.base.dim();
        let scale = self.error_norm();
        if scale == 0.0 {
            return vec![0.0; d];
        }
        let mut dir: Vec<f64> = rng::normal_vec(self.seed, &[tag::PERTURBATION, t.to_bits()], d);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v *= scale / norm);
        dir
    }

    /// Perturbed backward score at backward time `t`.
    pub fn perturbed_score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.base.backward_score(t, x)?;
        self.apply(t, &mut s);
        Ok(s)
    }

    fn apply(&self, t: f64, s: &mut [f64]) {
        if self.amplitude == 0.0 {
            return;
        }
        let base_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cap = self.base.bounds().magnitude.max(base_norm);
        for (v, p) in s.iter_mut().zip(self.perturbation(t)) {
            *v += p;
        }
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cap {
            s.iter_mut().for_each(|v| *v *= cap / norm);
        }
    }
}

impl<F: Scalar> ScoreFunction<F> for PerturbedOracle {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: F, x: &[F], out: &mut [F]) {
        let tf = t.f64();
        let forward = (self.base.horizon_t() - tf).max(0.0);
        let xs: Vec<f64> = x.iter().map(|v| v.f64()).collect();
        let mut o = vec![0.0; xs.len()];
        self.base.score_into(forward, &xs, &mut o);
        self.apply(tf, &mut o);
        for (dst, v) in out.iter_mut().zip(o) {
            *dst = F::of(v);
        }
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.base.bounds().lipschitz)
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.base.horizon_t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::TargetSpec;

    fn base() -> ScoreOracle {
        ScoreOracle::new(TargetSpec::symmetric_mixture(3, 1.0, 0.5).unwrap(), 4.0).unwrap()
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let p = PerturbedOracle::new(base(), PerturbationMode::LinfBudget, 0.0, 3).unwrap();
        let x = [0.2, -0.4, 1.0];
        assert_eq!(p.perturbed_score(1.7, &x).unwrap(), p.base().backward_score(1.7, &x).unwrap());
    }

    #[test]
    fn deterministic_per_query() {
        let p = PerturbedOracle::new(base(), PerturbationMode::LinfBudget, 0.3, 9).unwrap();
        let x = [0.2, -0.4, 1.0];
        let a = p.perturbed_score(0.25, &x).unwrap();
        let b = p.perturbed_score(0.25, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let other = PerturbedOracle::new(base(), PerturbationMode::LinfBudget, 0.3, 10).unwrap();
        assert_ne!(a, other.perturbed_score(0.25, &x).unwrap());
    }

    #[test]
    fn linf_error_never_exceeds_budget() {
        let p = PerturbedOracle::new(base(), PerturbationMode::LinfBudget, 0.2, 1).unwrap();
        let x = [0.5, 0.5, -0.5];
        for k in 0..50 {
            let t = k as f64 * 0.08;
            let e: f64 = p
                .perturbed_score(t, &x)
                .unwrap()
                .iter()
                .zip(p.base().backward_score(t, &x).unwrap())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!(e.sqrt() <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn rejects_negative_amplitude() {
        assert!(PerturbedOracle::new(base(), PerturbationMode::LinfBudget, -1.0, 0).is_err());
        assert!(PerturbedOracle::new(base(), PerturbationMode::L2Budget { span: 0.0 }, 1.0, 0).is_err());
    }
}
