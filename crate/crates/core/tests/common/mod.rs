#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use picard_diffusion::exact_law::GaussianLaw;
use picard_diffusion::rng;
use picard_diffusion::TargetSpec;

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    rng::substream(seed, &[0xACCE])
}

/// Random SPD matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(r: &mut impl Rng, d: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let a = nalgebra::DMatrix::from_fn(d, d, |_, _| r.random::<f64>() - 0.5);
    let q = a.qr().q();
    let eig = nalgebra::DVector::from_fn(d, |_, _| lo + (hi - lo) * r.random::<f64>());
    let m = &q * nalgebra::DMatrix::from_diagonal(&eig) * q.transpose();
    let m = (&m + m.transpose()) * 0.5;
    (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect()
}

pub fn random_vec(r: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * (2.0 * r.random::<f64>() - 1.0)).collect()
}

pub fn random_gaussian(r: &mut impl Rng, d: usize) -> TargetSpec {
    TargetSpec::gaussian(random_vec(r, d, 1.0), random_spd(r, d, 0.3, 2.0)).unwrap()
}

pub fn random_mixture(r: &mut impl Rng, d: usize) -> TargetSpec {
    let w = 0.2 + 0.6 * r.random::<f64>();
    TargetSpec::mixture(
        vec![w, 1.0 - w],
        vec![random_vec(r, d, 1.5), random_vec(r, d, 1.5)],
        vec![random_spd(r, d, 0.3, 1.5), random_spd(r, d, 0.3, 1.5)],
    )
    .unwrap()
}

pub fn random_law(r: &mut impl Rng, d: usize) -> GaussianLaw {
    GaussianLaw::new(random_vec(r, d, 1.0), random_spd(r, d, 0.2, 3.0)).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest per-node relative error between two node-major paths.
pub fn max_node_rel_err(a: &[f64], b: &[f64], width: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    a.chunks(width)
        .zip(b.chunks(width))
        .map(|(x, y)| {
            let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            norm(&diff) / norm(y).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}
