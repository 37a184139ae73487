//! Data distributions p_0 with closed-form OU marginals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_law::GaussianLaw;
use crate::rng::{self, tag};
use crate::samples::Samples;

const WEIGHT_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVariant {
    Gaussian,
    GaussianMixture,
}

/// The data distribution: a Gaussian or a finite Gaussian mixture.
///
/// Construction validates every invariant, including deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget", into = "RawTarget")]
pub struct TargetSpec {
    variant: TargetVariant,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
    normalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTarget {
    variant: TargetVariant,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    normalized: bool,
}

impl TryFrom<RawTarget> for TargetSpec {
    type Error = Error;

    fn try_from(raw: RawTarget) -> Result<Self> {
        let weights = match (raw.variant, raw.weights) {
            (_, Some(w)) => w,
            (TargetVariant::Gaussian, None) => vec![1.0],
            (TargetVariant::GaussianMixture, None) => {
                return Err(Error::InvalidTarget("mixture requires weights".into()))
            }
        };
        TargetSpec::new(raw.variant, raw.means, raw.covariances, weights, raw.normalized)
    }
}

impl From<TargetSpec> for RawTarget {
    fn from(t: TargetSpec) -> Self {
        RawTarget {
            variant: t.variant,
            means: t.means,
            covariances: t.covariances,
            weights: Some(t.weights),
            normalized: t.normalized,
        }
    }
}

/// Mixture of Gaussian laws; a single Gaussian is the one-component case.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLaw {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianLaw>,
}

impl MixtureLaw {
    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Overall mean and covariance of the mixture.
    pub fn moments(&self) -> GaussianLaw {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            mean += &c.mean * *w;
        }
        let mut cov = DMatrix::zeros(d, d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let dm = &c.mean - &mean;
            cov += (&c.cov + &dm * dm.transpose()) * *w;
        }
        GaussianLaw::new_unchecked(mean, cov)
    }

    pub fn as_gaussian(&self) -> Option<&GaussianLaw> {
        (self.components.len() == 1).then(|| &self.components[0])
    }

    /// `n` independent draws; draw `i` uses the substream
    /// (seed, REFERENCE, i), so any prefix of the sample is reproducible.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Samples<f64>> {
        use rand::Rng;
        let d = self.dim();
        let factors = self
            .components
            .iter()
            .map(|c| {
                nalgebra::Cholesky::new(c.cov.clone())
                    .map(|ch| ch.l())
                    .ok_or_else(|| Error::Singular("mixture component covariance".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(n * d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            let mut r = rng::substream(seed, &[tag::REFERENCE, i as u64]);
            let u: f64 = r.random();
            let mut k = 0;
            let mut acc = self.weights[0];
            while u >= acc && k + 1 < self.weights.len() {
                k += 1;
                acc += self.weights[k];
            }
            rng::fill_normal(&mut r, z.as_mut_slice());
            let x = &self.components[k].mean + &factors[k] * &z;
            data.extend(x.iter());
        }
        Samples::new(d, data)
    }
}

impl TargetSpec {
    pub fn new(
        variant: TargetVariant,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
        weights: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::InvalidTarget("no components".into()));
        }
        if covariances.len() != k || weights.len() != k {
            return Err(Error::InvalidTarget(format!(
                "{} means, {} covariances, {} weights",
                k,
                covariances.len(),
                weights.len()
            )));
        }
        if variant == TargetVariant::Gaussian && k != 1 {
            return Err(Error::InvalidTarget(format!(
                "Gaussian variant needs exactly one component, got {k}"
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidTarget("zero dimension".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidTarget("weights must be finite and nonnegative".into()));
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidTarget(format!("weights sum to {wsum}, not 1")));
        }
        for (i, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != d || m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidTarget(format!("mean {i} malformed")));
            }
            if c.len() != d || c.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidTarget(format!("covariance {i} is not {d}x{d}")));
            }
            for r in 0..d {
                for s in 0..r {
                    if (c[r][s] - c[s][r]).abs() > SYMMETRY_TOL {
                        return Err(Error::InvalidTarget(format!(
                            "covariance {i} not symmetric at ({r},{s})"
                        )));
                    }
                }
            }
            if to_matrix(c).cholesky().is_none() {
                return Err(Error::InvalidTarget(format!(
                    "covariance {i} is not positive definite"
                )));
            }
        }
        let spec = TargetSpec {
            variant,
            means,
            covariances,
            weights,
            normalized,
        };
        if normalized {
            let cov = spec.law().moments().cov;
            let dev = (cov - DMatrix::identity(d, d)).abs().max();
            if dev > NORMALIZATION_TOL {
                return Err(Error::InvalidTarget(format!(
                    "flagged normalized but overall covariance deviates from I by {dev:e}"
                )));
            }
        }
        Ok(spec)
    }

    pub fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(TargetVariant::Gaussian, vec![mean], vec![cov], vec![1.0], false)
    }

    /// N(0, σ² I_d).
    pub fn isotropic_gaussian(d: usize, variance: f64) -> Result<Self> {
        Self::gaussian(vec![0.0; d], identity_rows(d, variance))
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::new(
            TargetVariant::Gaussian,
            vec![vec![0.0; d]],
            vec![identity_rows(d, 1.0)],
            vec![1.0],
            true,
        )
        .expect("standard Gaussian is valid")
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(TargetVariant::GaussianMixture, means, covariances, weights, false)
    }

    /// Equal-weight mixture of N(±offset·e_1, variance·I).
    pub fn symmetric_mixture(d: usize, offset: f64, variance: f64) -> Result<Self> {
        let mut plus = vec![0.0; d];
        plus[0] = offset;
        let minus = plus.iter().map(|x| -x).collect();
        Self::mixture(
            vec![0.5, 0.5],
            vec![plus, minus],
            vec![identity_rows(d, variance), identity_rows(d, variance)],
        )
    }

    /// Equal-weight mixture of two components at ±offset·e_1 whose overall
    /// covariance is exactly the identity (requires |offset| < 1).
    pub fn normalized_symmetric_mixture(d: usize, offset: f64) -> Result<Self> {
        if !(offset.abs() < 1.0) {
            return Err(Error::InvalidTarget("normalized mixture needs |offset| < 1".into()));
        }
        let mut cov = identity_rows(d, 1.0);
        cov[0][0] = 1.0 - offset * offset;
        let mut plus = vec![0.0; d];
        plus[0] = offset;
        let minus = plus.iter().map(|x| -x).collect();
        Self::new(
            TargetVariant::GaussianMixture,
            vec![plus, minus],
            vec![cov.clone(), cov],
            vec![0.5, 0.5],
            true,
        )
    }

    pub fn variant(&self) -> TargetVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<Vec<f64>>] {
        &self.covariances
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// True when every component covariance has zero off-diagonal entries.
    pub fn is_diagonal(&self) -> bool {
        self.covariances.iter().all(|c| {
            c.iter()
                .enumerate()
                .all(|(r, row)| row.iter().enumerate().all(|(s, &v)| r == s || v == 0.0))
        })
    }

    /// p_0 as a mixture law.
    pub fn law(&self) -> MixtureLaw {
        MixtureLaw {
            weights: self.weights.clone(),
            components: self
                .means
                .iter()
                .zip(&self.covariances)
                .map(|(m, c)| GaussianLaw::new_unchecked(DVector::from_column_slice(m), to_matrix(c)))
                .collect(),
        }
    }
}

/// Law of the forward OU process at time `t`: each component (μ, Σ) maps to
/// (e^{-t/2} μ, e^{-t} Σ + (1 - e^{-t}) I) with weights unchanged.
pub fn ou_marginal(target: &TargetSpec, t: f64) -> Result<MixtureLaw> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain {
            what: "forward time",
            value: t,
            domain: "[0, inf)".into(),
        });
    }
    Ok(ou_advance(&target.law(), t))
}

/// Advances an arbitrary mixture law by `t` units of OU flow.
pub fn ou_advance(law: &MixtureLaw, t: f64) -> MixtureLaw {
    let decay = (-0.5 * t).exp();
    let var_decay = (-t).exp();
    let fill = -(-t).exp_m1();
    MixtureLaw {
        weights: law.weights.clone(),
        components: law
            .components
            .iter()
            .map(|c| {
                let d = c.dim();
                let cov = &c.cov * var_decay + DMatrix::identity(d, d) * fill;
                GaussianLaw::new_unchecked(&c.mean * decay, cov)
            })
            .collect(),
    }
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |r, s| rows[r][s])
}

pub(crate) fn identity_rows(d: usize, v: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|r| (0..d).map(|s| if r == s { v } else { 0.0 }).collect())
        .collect()
}
