//! Sample diagnostics and residual analytics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::samples::Samples;
use crate::sde::SamplerReport;

/// Unbiased sample moments with standard errors.
///
/// `mean_se[i]` is the sample standard deviation of coordinate `i` over √n.
/// `cov_se[i][j]` is the sample standard deviation of the centered products
/// `(x_i - x̄_i)(x_j - x̄_j)` over √n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub mean_se: Vec<f64>,
    pub cov_se: Vec<Vec<f64>>,
}

impl MomentSummary {
    /// Largest |estimate - reference| / standard error over the mean and
    /// covariance entries (entries with zero standard error count only when
    /// they differ).
    pub fn max_z_score(&self, mean: &[f64], cov: &[Vec<f64>]) -> f64 {
        let z = |est: f64, truth: f64, se: f64| {
            let diff = (est - truth).abs();
            if se > 0.0 {
                diff / se
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        let d = self.mean.len();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            worst = worst.max(z(self.mean[i], mean[i], self.mean_se[i]));
            for j in 0..d {
                worst = worst.max(z(self.cov[i][j], cov[i][j], self.cov_se[i][j]));
            }
        }
        worst
    }
}

/// Sample mean, unbiased covariance and their standard errors.
pub fn moment_summary(samples: &Samples<f64>) -> Result<MomentSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Domain {
            what: "sample count",
            value: n as f64,
            domain: "[2, inf)".into(),
        });
    }
    let d = samples.dim();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for row in samples.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut sum = vec![vec![0.0; d]; d];
    let mut sum_sq = vec![vec![0.0; d]; d];
    let mut centered = vec![0.0; d];
    for row in samples.rows() {
        for i in 0..d {
            centered[i] = row[i] - mean[i];
        }
        for i in 0..d {
            for j in i..d {
                let p = centered[i] * centered[j];
                sum[i][j] += p;
                sum_sq[i][j] += p * p;
            }
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    let mut cov_se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let c = sum[i][j] / (nf - 1.0);
            let avg = sum[i][j] / nf;
            let var_p = ((sum_sq[i][j] / nf - avg * avg) * nf / (nf - 1.0)).max(0.0);
            let se = (var_p / nf).sqrt();
            cov[i][j] = c;
            cov[j][i] = c;
            cov_se[i][j] = se;
            cov_se[j][i] = se;
        }
    }
    let mean_se = (0..d).map(|i| (cov[i][i].max(0.0) / nf).sqrt()).collect();
    Ok(MomentSummary {
        n,
        mean,
        cov,
        mean_se,
        cov_se,
    })
}

/// Squared 1-D W₂ between two empirical distributions given as sorted values,
/// integrating the quantile difference exactly over merged breakpoints.
fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        acc += (next - u) * diff * diff;
        u = next;
        // Advance whichever quantile step ends here (both on ties).
        let end_a = (i + 1) * nb <= (j + 1) * na;
        let end_b = (j + 1) * na <= (i + 1) * nb;
        if end_a {
            i += 1;
        }
        if end_b {
            j += 1;
        }
    }
    acc
}

/// Average over `n_projections` random unit directions of the 1-D W₂
/// distance between the projected samples. Deterministic given `seed`.
pub fn sliced_w2(a: &Samples<f64>, b: &Samples<f64>, n_projections: usize, seed: u64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.len() < 2 || b.len() < 2 || n_projections == 0 {
        return Err(Error::Domain {
            what: "sample count",
            value: a.len().min(b.len()) as f64,
            domain: "[2, inf) samples and at least one projection".into(),
        });
    }
    let d = a.dim();
    let project = |s: &Samples<f64>, dir: &[f64]| {
        let mut v: Vec<f64> = s.rows().map(|r| r.iter().zip(dir).map(|(x, w)| x * w).sum()).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let mut total = 0.0;
    for j in 0..n_projections {
        let mut dir = rng::normal_vec::<f64>(seed, &[tag::PROJECTION, j as u64], d);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        total += w2_sq_sorted(&project(a, &dir), &project(b, &dir)).sqrt();
    }
    Ok(total / n_projections as f64)
}

/// Per-block sup-squared residuals after each Picard sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualTrace {
    pub residuals: Vec<Vec<f64>>,
}

impl ResidualTrace {
    pub fn new(residuals: Vec<Vec<f64>>) -> Self {
        ResidualTrace { residuals }
    }

    /// Single-path trace of a sampler report.
    pub fn from_path(report: &SamplerReport) -> Self {
        ResidualTrace::new(report.residual_history.clone())
    }

    /// Batch-mean trace of a sampler report.
    pub fn from_batch_mean(report: &SamplerReport) -> Self {
        ResidualTrace::new(report.mean_residual_history.clone())
    }

    /// Whether every block's residuals are non-increasing from sweep `from`
    /// (1-based) on.
    pub fn monotone_from(&self, from: usize) -> bool {
        self.residuals
            .iter()
            .all(|r| r.iter().skip(from.saturating_sub(1)).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0]))
    }

    /// `(block, sweep, residual)` rows with 1-based sweeps.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.residuals
            .iter()
            .enumerate()
            .flat_map(|(b, r)| r.iter().enumerate().map(move |(k, &v)| (b, k + 1, v)))
    }
}

/// Least-squares slope of `ln r_k` against `k` over sweeps `2..=K-1`
/// (1-based), per block: the log of the per-sweep contraction factor.
/// Non-positive residuals are skipped; with fewer than two usable points the
/// rate is `-∞` (the iteration converged outright).
pub fn picard_rate(trace: &ResidualTrace) -> Result<Vec<f64>> {
    trace
        .residuals
        .iter()
        .map(|r| {
            let k_max = r.len();
            if k_max < 4 {
                return Err(Error::Domain {
                    what: "Picard depth",
                    value: k_max as f64,
                    domain: "[4, inf)".into(),
                });
            }
            let pts: Vec<(f64, f64)> = (2..k_max)
                .filter(|&k| r[k - 1] > 0.0)
                .map(|k| (k as f64, r[k - 1].ln()))
                .collect();
            if pts.len() < 2 {
                return Ok(f64::NEG_INFINITY);
            }
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            Ok(sxy / sxx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(rows: &[&[f64]]) -> Samples<f64> {
        Samples::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn constant_samples_have_zero_cov() {
        let s = samples(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let m = moment_summary(&s).unwrap();
        assert_eq!(m.mean, vec![1.0, 2.0]);
        assert!(m.cov.iter().flatten().all(|&c| c == 0.0));
        assert!(moment_summary(&samples(&[&[1.0]])).is_err());
    }

    #[test]
    fn unbiased_covariance() {
        let s = samples(&[&[0.0], &[2.0]]);
        let m = moment_summary(&s).unwrap();
        assert_eq!(m.cov[0][0], 2.0);
    }

    #[test]
    fn sliced_identical_and_shifted() {
        let a = Samples::new(2, crate::rng::normal_vec::<f64>(1, &[9], 400)).unwrap();
        assert_eq!(sliced_w2(&a, &a, 20, 3).unwrap(), 0.0);
        let v = [0.6, -0.8];
        let shifted = Samples::new(2, a.as_slice().chunks(2).flat_map(|r| [r[0] + v[0], r[1] + v[1]]).collect()).unwrap();
        let w = sliced_w2(&a, &shifted, 50, 3).unwrap();
        assert!(w <= 1.0 + 1e-12 && w > 0.0);
        let b = Samples::new(2, crate::rng::normal_vec::<f64>(2, &[9], 300)).unwrap();
        assert_eq!(sliced_w2(&a, &b, 7, 5).unwrap(), sliced_w2(&b, &a, 7, 5).unwrap());
    }

    #[test]
    fn quantile_merge_unequal_sizes() {
        // {0, 1} vs {0, 0.5, 1}: the quantile difference is 0.5 in absolute
        // value on [1/3, 2/3) and 0 elsewhere.
        let w = w2_sq_sorted(&[0.0, 1.0], &[0.0, 0.5, 1.0]);
        assert!((w - 0.25 / 3.0).abs() < 1e-15);
        assert!((w - w2_sq_sorted(&[0.0, 0.5, 1.0], &[0.0, 1.0])).abs() < 1e-15);
    }

    #[test]
    fn geometric_rate_is_exact() {
        let rho: f64 = 0.3;
        let r: Vec<f64> = (1..=8).map(|k| 2.0 * rho.powi(k)).collect();
        let rate = picard_rate(&ResidualTrace::new(vec![r])).unwrap();
        assert!((rate[0] - rho.ln()).abs() < 1e-10);
    }

    #[test]
    fn converged_rate_is_neg_infinity() {
        let rate = picard_rate(&ResidualTrace::new(vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]])).unwrap();
        assert_eq!(rate[0], f64::NEG_INFINITY);
        assert!(picard_rate(&ResidualTrace::new(vec![vec![1.0, 0.5]])).is_err());
    }

    #[test]
    fn monotone_check() {
        let t = ResidualTrace::new(vec![vec![1.0, 2.0, 1.0, 0.5]]);
        assert!(!t.monotone_from(1));
        assert!(t.monotone_from(2));
    }
}
