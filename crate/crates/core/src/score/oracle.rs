use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::target::{ou_marginal, TargetSpec};
use super::ScoreFunction;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Backward times may overshoot the horizon by this much from rounding.
const HORIZON_SLACK: f64 = 1e-9;

/// Regularity metadata of the implemented score map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    /// Lipschitz constant L_s in x, uniform over [0, T].
    pub lipschitz: f64,
    /// Bound M_s on the score norm over the declared box.
    pub magnitude: f64,
    /// The box is [-half_width, half_width]^d.
    pub box_half_width: f64,
    pub method: String,
}

#[derive(Debug)]
enum Precision {
    /// Diagonal covariance, stored as inverse variances.
    Diagonal(Vec<f64>),
    Dense(Cholesky<f64, Dyn>),
}

#[derive(Debug)]
struct Component {
    log_norm: f64,
    mean: Vec<f64>,
    precision: Precision,
}

impl Component {
    /// Writes Σ⁻¹(x - μ) into `z` and returns the quadratic form.
    fn whiten(&self, x: &[f64], z: &mut [f64]) -> f64 {
        match &self.precision {
            Precision::Diagonal(inv) => {
                let mut q = 0.0;
                for i in 0..x.len() {
                    let r = x[i] - self.mean[i];
                    z[i] = r * inv[i];
                    q += r * z[i];
                }
                q
            }
            Precision::Dense(chol) => {
                let r = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
                let sol = chol.solve(&r);
                z.copy_from_slice(sol.as_slice());
                r.dot(&sol)
            }
        }
    }
}

/// Cached per-time marginal: components with precomputed factorizations.
#[derive(Debug)]
struct Marginal {
    comps: Vec<Component>,
}

/// Exact score of p_t for an OU-evolved Gaussian or Gaussian-mixture target.
#[derive(Debug)]
pub struct ScoreOracle {
    target: TargetSpec,
    horizon: f64,
    bounds: ScoreBounds,
    cache: RwLock<HashMap<u64, Arc<Marginal>>>,
}

impl Clone for ScoreOracle {
    fn clone(&self) -> Self {
        ScoreOracle {
            target: self.target.clone(),
            horizon: self.horizon,
            bounds: self.bounds.clone(),
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl ScoreOracle {
    pub fn new(target: TargetSpec, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Domain {
                what: "horizon",
                value: horizon,
                domain: "[0, inf)".into(),
            });
        }
        let mut oracle = ScoreOracle {
            target,
            horizon,
            bounds: ScoreBounds {
                lipschitz: 0.0,
                magnitude: 0.0,
                box_half_width: 0.0,
                method: String::new(),
            },
            cache: RwLock::new(HashMap::new()),
        };
        oracle.bounds = oracle.compute_bounds();
        Ok(oracle)
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn horizon_t(&self) -> f64 {
        self.horizon
    }

    pub fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    fn marginal(&self, t: f64) -> Arc<Marginal> {
        let key = t.to_bits();
        if let Some(m) = self.cache.read().get(&key) {
            return m.clone();
        }
        let m = Arc::new(self.build_marginal(t));
        self.cache.write().entry(key).or_insert(m).clone()
    }

    fn build_marginal(&self, t: f64) -> Marginal {
        let law = ou_marginal(&self.target, t).expect("time validated by caller");
        let diagonal = self.target.is_diagonal();
        let d = self.dim();
        let comps = law
            .weights
            .iter()
            .zip(&law.components)
            .map(|(&w, c)| {
                let (precision, log_det) = if diagonal {
                    let var: Vec<f64> = (0..d).map(|i| c.cov[(i, i)]).collect();
                    let log_det = var.iter().map(|v| v.ln()).sum();
                    (Precision::Diagonal(var.iter().map(|v| 1.0 / v).collect()), log_det)
                } else {
                    let chol = c.cov.clone().cholesky().expect("OU marginal of a PD covariance is PD");
                    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                    (Precision::Dense(chol), log_det)
                };
                Component {
                    log_norm: w.ln() - 0.5 * (log_det + d as f64 * (2.0 * PI).ln()),
                    mean: c.mean.as_slice().to_vec(),
                    precision,
                }
            })
            .collect();
        Marginal { comps }
    }

    fn check_forward_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || t > self.horizon + HORIZON_SLACK {
            return Err(Error::Domain {
                what: "forward time",
                value: t,
                domain: format!("[0, {}]", self.horizon),
            });
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// ∇ log p_t(x) at forward time `t`.
    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_forward_time(t)?;
        self.check_dim(x)?;
        let mut out = vec![0.0; x.len()];
        self.score_into(t.max(0.0), x, &mut out);
        Ok(out)
    }

    /// ∇ log p̌_t(x) = ∇ log p_{T-t}(x) at backward time `t`.
    pub fn backward_score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(t >= 0.0) || t > self.horizon {
            return Err(Error::Domain {
                what: "backward time",
                value: t,
                domain: format!("[0, {}]", self.horizon),
            });
        }
        self.score(self.horizon - t, x)
    }

    /// log p_t(x) at forward time `t`.
    pub fn log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.check_forward_time(t)?;
        self.check_dim(x)?;
        let m = self.marginal(t.max(0.0));
        let mut z = vec![0.0; x.len()];
        let logs: Vec<f64> = m
            .comps
            .iter()
            .map(|c| c.log_norm - 0.5 * c.whiten(x, &mut z))
            .collect();
        Ok(log_sum_exp(&logs))
    }

    pub(crate) fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let m = self.marginal(t);
        if m.comps.len() == 1 {
            m.comps[0].whiten(x, out);
            out.iter_mut().for_each(|v| *v = -*v);
            return;
        }
        // Responsibility-weighted component scores, normalized in log space.
        let d = x.len();
        let mut z = vec![0.0; d * m.comps.len()];
        let logs: Vec<f64> = m
            .comps
            .iter()
            .zip(z.chunks_mut(d))
            .map(|(c, zc)| c.log_norm - 0.5 * c.whiten(x, zc))
            .collect();
        let lse = log_sum_exp(&logs);
        out.fill(0.0);
        for (l, zc) in logs.iter().zip(z.chunks(d)) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(zc) {
                *o -= r * v;
            }
        }
    }

    /// Jacobian of the score at forward time `t` (symmetric).
    pub fn score_jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_forward_time(t)?;
        self.check_dim(x)?;
        let law = ou_marginal(&self.target, t)?;
        let d = x.len();
        let xv = DVector::from_column_slice(x);
        let mut logs = Vec::new();
        let mut scores = Vec::new();
        let mut precisions = Vec::new();
        let marginal = self.marginal(t);
        for (c, mc) in law.components.iter().zip(&marginal.comps) {
            let p = c
                .cov
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular("marginal covariance".into()))?;
            let s = -(&p * (&xv - &c.mean));
            let mut z = vec![0.0; d];
            logs.push(mc.log_norm - 0.5 * mc.whiten(x, &mut z));
            scores.push(s);
            precisions.push(p);
        }
        let lse = log_sum_exp(&logs);
        let mut mean_s = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        for ((l, s), p) in logs.iter().zip(&scores).zip(&precisions) {
            let r = (l - lse).exp();
            mean_s += s * r;
            jac += (s * s.transpose() - p) * r;
        }
        jac -= &mean_s * mean_s.transpose();
        Ok(jac)
    }

    fn compute_bounds(&self) -> ScoreBounds {
        let d = self.dim();
        let law = self.target.law();
        let max_abs_mean = law
            .components
            .iter()
            .flat_map(|c| c.mean.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        let max_sd = law
            .components
            .iter()
            .flat_map(|c| (0..d).map(move |i| c.cov[(i, i)].sqrt()))
            .fold(0.0, f64::max)
            .max(1.0);
        let half_width = 3.0 + max_abs_mean + 3.0 * max_sd;
        let decay_t = (-self.horizon).exp();

        if law.components.len() == 1 {
            // Eigenvalues of Σ_t move monotonically from λ (t=0) towards 1, so the
            // extreme inverse eigenvalue sits at t = 0 or t = T.
            let comp = &law.components[0];
            let eig = SymmetricEigen::new(comp.cov.clone()).eigenvalues;
            let lipschitz = eig
                .iter()
                .map(|&l| {
                    let at_t = decay_t * l + 1.0 - decay_t;
                    (1.0 / l).max(1.0 / at_t)
                })
                .fold(0.0, f64::max);
            let magnitude = lipschitz * (half_width * (d as f64).sqrt() + comp.mean.norm());
            return ScoreBounds {
                lipschitz,
                magnitude,
                box_half_width: half_width,
                method: "closed form: max eigenvalue of inverse marginal covariance over [0,T]; magnitude via operator-norm bound on the box".into(),
            };
        }

        const TIMES: usize = 17;
        const POINTS: usize = 64;
        let mut rng = rng::substream(0xB0_0D5, &[d as u64, self.target.n_components() as u64]);
        let points: Vec<Vec<f64>> = (0..POINTS)
            .map(|_| (0..d).map(|_| rng.random_range(-half_width..=half_width)).collect())
            .chain(law.components.iter().map(|c| c.mean.as_slice().to_vec()))
            .chain(std::iter::once(vec![0.0; d]))
            .collect();
        let mut lipschitz: f64 = 0.0;
        let mut magnitude: f64 = 0.0;
        let mut buf = vec![0.0; d];
        for k in 0..TIMES {
            let t = self.horizon * k as f64 / (TIMES - 1) as f64;
            for x in &points {
                if let Ok(j) = self.score_jacobian(t, x) {
                    let eig = SymmetricEigen::new(j).eigenvalues;
                    lipschitz = lipschitz.max(eig.amax());
                }
                self.score_into(t, x, &mut buf);
                magnitude = magnitude.max(buf.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
        ScoreBounds {
            lipschitz,
            magnitude,
            box_half_width: half_width,
            method: format!(
                "sampled: {TIMES} times x {} box points, max Jacobian spectral norm and score norm",
                points.len()
            ),
        }
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<F: Scalar> ScoreFunction<F> for ScoreOracle {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn eval(&self, t: F, x: &[F], out: &mut [F]) {
        let forward = (self.horizon - t.f64()).max(0.0);
        let xs: Vec<f64> = x.iter().map(|v| v.f64()).collect();
        let mut o = vec![0.0; xs.len()];
        self.score_into(forward, &xs, &mut o);
        for (dst, v) in out.iter_mut().zip(o) {
            *dst = F::of(v);
        }
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.bounds.lipschitz)
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::target::identity_rows;

    #[test]
    fn standard_normal_score_is_minus_x() {
        let o = ScoreOracle::new(TargetSpec::standard_gaussian(3), 5.0).unwrap();
        let x = [0.3, -1.2, 2.0];
        let s = o.score(1.3, &x).unwrap();
        for (a, b) in s.iter().zip(x) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_cov_score_tracks_shrunk_mean() {
        let mu = vec![1.5, -0.5];
        let o = ScoreOracle::new(TargetSpec::gaussian(mu.clone(), identity_rows(2, 1.0)).unwrap(), 4.0).unwrap();
        let t = 0.8;
        let x = [0.1, 0.2];
        let s = o.score(t, &x).unwrap();
        for i in 0..2 {
            let expect = -(x[i] - (-t / 2.0f64).exp() * mu[i]);
            assert!((s[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_mixture_score_vanishes_at_origin() {
        let o = ScoreOracle::new(TargetSpec::symmetric_mixture(1, 1.0, 1.0).unwrap(), 1.0).unwrap();
        assert_eq!(o.score(0.0, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn backward_endpoints() {
        let target = TargetSpec::gaussian(vec![1.0, 0.0], vec![vec![0.5, 0.1], vec![0.1, 2.0]]).unwrap();
        let o = ScoreOracle::new(target, 3.0).unwrap();
        let x = [0.4, -0.7];
        assert_eq!(o.backward_score(3.0, &x).unwrap(), o.score(0.0, &x).unwrap());
        assert_eq!(o.backward_score(0.0, &x).unwrap(), o.score(3.0, &x).unwrap());
        assert!(matches!(o.backward_score(3.5, &x), Err(Error::Domain { .. })));
    }

    #[test]
    fn well_separated_mixture_stays_finite() {
        let o = ScoreOracle::new(TargetSpec::symmetric_mixture(2, 40.0, 0.01).unwrap(), 1.0).unwrap();
        for x in [[0.0, 0.0], [40.0, 0.0], [-1e3, 5.0], [1e4, -1e4]] {
            let s = o.score(0.0, &x).unwrap();
            assert!(s.iter().all(|v| v.is_finite()), "{s:?} at {x:?}");
        }
    }

    #[test]
    fn gaussian_lipschitz_is_extreme_inverse_eigenvalue() {
        let target = TargetSpec::gaussian(vec![0.0, 0.0], vec![vec![0.25, 0.0], vec![0.0, 4.0]]).unwrap();
        let o = ScoreOracle::new(target, 2.0).unwrap();
        assert!((o.bounds().lipschitz - 4.0).abs() < 1e-12);
        let wide = TargetSpec::gaussian(vec![0.0], vec![vec![9.0]]).unwrap();
        let o = ScoreOracle::new(wide, 2.0).unwrap();
        let expected = 1.0 / (1.0 + 8.0 * (-2.0f64).exp());
        assert!((o.bounds().lipschitz - expected).abs() < 1e-12);
    }

    #[test]
    fn mixture_bounds_dominate_samples() {
        let o = ScoreOracle::new(TargetSpec::symmetric_mixture(2, 1.0, 0.5).unwrap(), 2.0).unwrap();
        let b = o.bounds().clone();
        assert!(b.lipschitz >= 2.0 - 1e-9, "at least the component precision");
        let s = o.score(0.0, &[0.3, 0.1]).unwrap();
        assert!(s.iter().map(|v| v * v).sum::<f64>().sqrt() <= b.magnitude);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let o = ScoreOracle::new(TargetSpec::standard_gaussian(2), 1.0).unwrap();
        assert!(matches!(o.score(0.5, &[1.0]), Err(Error::Dimension { .. })));
    }
}
