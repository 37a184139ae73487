//! Exact Gaussian laws of the samplers on Gaussian targets.
//!
//! With a Gaussian target the score is affine in the state, so every sampler
//! step is an affine map of the state plus independent Gaussian noise and the
//! output law is Gaussian. This module propagates those laws in closed form,
//! both step by step (the sequential solve) and symbolically through a finite
//! number of Picard sweeps, and evaluates KL, W₂ and a Pinsker TV bound.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{predictor_step_coefficients, CorrectorCoefficients};
use crate::schedule::{CorrectorPlan, DiscretizationPlan};
use crate::score::{ScoreFunction, ScoreOracle, TargetSpec};
use crate::sde::sde_step_coefficients;
use crate::Mode;

/// Gaussian law N(mean, cov). Serializes as `{"mean": [...], "cov": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLaw {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<RawLaw> for GaussianLaw {
    type Error = Error;

    fn try_from(r: RawLaw) -> Result<Self> {
        GaussianLaw::new(r.mean, r.cov)
    }
}

impl From<GaussianLaw> for RawLaw {
    fn from(l: GaussianLaw) -> Self {
        RawLaw {
            mean: l.mean.iter().copied().collect(),
            cov: l.cov_rows(),
        }
    }
}

impl GaussianLaw {
    /// Validated constructor from a mean and row-major covariance.
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: cov.len(),
            });
        }
        let law = GaussianLaw {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_fn(d, d, |r, c| cov[r][c]),
        };
        law.validate()?;
        Ok(law)
    }

    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let law = GaussianLaw { mean, cov };
        law.validate()?;
        Ok(law)
    }

    /// Skips validation; callers guarantee symmetry and PSD.
    pub fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianLaw { mean, cov }
    }

    /// N(0, I_d).
    pub fn standard(d: usize) -> Self {
        GaussianLaw {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetric within 1e-12 and eigenvalues ≥ -1e-10 (both relative to the
    /// largest entry when that exceeds one).
    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite law entries".into()));
        }
        let scale = self.cov.amax().max(1.0);
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Singular(format!("covariance asymmetric by {asym:e}")));
        }
        if self.dim() > 0 {
            let min = SymmetricEigen::new(self.symmetric_cov()).eigenvalues.min();
            if min < -1e-10 * scale {
                return Err(Error::Singular(format!("covariance has eigenvalue {min:e}")));
            }
        }
        Ok(())
    }

    fn symmetric_cov(&self) -> DMatrix<f64> {
        (&self.cov + self.cov.transpose()) * 0.5
    }

    pub fn cov_rows(&self) -> Vec<Vec<f64>> {
        self.cov.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Law of the leading `k` coordinates.
    pub fn marginal(&self, k: usize) -> GaussianLaw {
        GaussianLaw {
            mean: self.mean.rows(0, k).into_owned(),
            cov: self.cov.view((0, 0), (k, k)).into_owned(),
        }
    }

    /// Joint law of independent `self` and `other`.
    pub fn product(&self, other: &GaussianLaw) -> GaussianLaw {
        let (a, b) = (self.dim(), other.dim());
        let mut mean = DVector::zeros(a + b);
        mean.rows_mut(0, a).copy_from(&self.mean);
        mean.rows_mut(a, b).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(a + b, a + b);
        cov.view_mut((0, 0), (a, a)).copy_from(&self.cov);
        cov.view_mut((a, a), (b, b)).copy_from(&other.cov);
        GaussianLaw { mean, cov }
    }

    /// Largest absolute difference over all mean and covariance entries.
    pub fn max_abs_diff(&self, other: &GaussianLaw) -> f64 {
        (&self.mean - &other.mean).amax().max((&self.cov - &other.cov).amax())
    }
}

/// Affine score `s(x) = jacobian · x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScore {
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineScore {
    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Score of N(mean, cov): `-cov⁻¹ (x - mean)`.
    pub fn of_gaussian(law: &GaussianLaw) -> Result<Self> {
        let chol = Cholesky::new(law.symmetric_cov())
            .ok_or_else(|| Error::Singular("score of a degenerate Gaussian".into()))?;
        let precision = chol.inverse();
        Ok(AffineScore {
            offset: &precision * &law.mean,
            jacobian: -precision,
        })
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * x + &self.offset
    }
}

/// Time-indexed affine score, in backward time.
pub trait AffineScoreField: Sync {
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> Result<AffineScore>;
}

impl AffineScoreField for AffineScore {
    fn dim(&self) -> usize {
        self.offset.len()
    }
    fn at(&self, _t: f64) -> Result<AffineScore> {
        Ok(self.clone())
    }
}

impl ScoreFunction<f64> for AffineScore {
    fn dim(&self) -> usize {
        self.offset.len()
    }
    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let y = &self.jacobian * DVector::from_column_slice(x) + &self.offset;
        out.copy_from_slice(y.as_slice());
    }
}

/// Backward score of an OU-evolved Gaussian target: at backward time `t` it
/// is the score of the forward marginal at time `horizon - t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScoreParams {
    pub target: GaussianLaw,
    pub horizon: f64,
}

impl GaussianScoreParams {
    pub fn new(target: GaussianLaw, horizon: f64) -> Self {
        GaussianScoreParams { target, horizon }
    }

    /// Single-Gaussian targets only; mixtures have non-affine scores.
    pub fn from_target(target: &TargetSpec, horizon: f64) -> Result<Self> {
        let law = target.law();
        match law.as_gaussian() {
            Some(g) => Ok(GaussianScoreParams::new(g.clone(), horizon)),
            None => Err(Error::Unsupported(
                "exact laws need a single Gaussian target; mixture scores are not affine".into(),
            )),
        }
    }

    pub fn from_oracle(oracle: &ScoreOracle) -> Result<Self> {
        Self::from_target(oracle.target(), oracle.horizon_t())
    }

    /// Forward OU marginal at forward time `s`.
    pub fn forward_marginal(&self, s: f64) -> GaussianLaw {
        let d = self.target.dim();
        GaussianLaw {
            mean: &self.target.mean * (-0.5 * s).exp(),
            cov: &self.target.cov * (-s).exp() + DMatrix::identity(d, d) * -(-s).exp_m1(),
        }
    }

    /// Law p̌_t of the exact backward process at backward time `t`.
    pub fn backward_marginal(&self, t: f64) -> GaussianLaw {
        self.forward_marginal((self.horizon - t).max(0.0))
    }
}

impl AffineScoreField for GaussianScoreParams {
    fn dim(&self) -> usize {
        self.target.dim()
    }
    fn at(&self, t: f64) -> Result<AffineScore> {
        AffineScore::of_gaussian(&self.backward_marginal(t))
    }
}

impl ScoreFunction<f64> for GaussianScoreParams {
    fn dim(&self) -> usize {
        self.target.dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self.at(t) {
            Ok(s) => ScoreFunction::eval(&s, t, x, out),
            Err(_) => out.fill(f64::NAN),
        }
    }
    fn horizon(&self) -> Option<f64> {
        Some(self.horizon)
    }
}

/// Which update a step applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerStep {
    Sde { mode: Mode },
    /// `first` marks step 0 of a block (the verbatim predictor differs there).
    Predictor { mode: Mode, first: bool },
    /// Step `index` of a corrector block with `steps` steps and friction `gamma`.
    Corrector { mode: Mode, gamma: f64, steps: usize, index: usize },
}

/// One discrete step: its kind, the backward time of its score evaluation and
/// its length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDescriptor {
    pub kind: SamplerStep,
    pub time: f64,
    pub eps: f64,
}

/// `x' = a x + b + L n` with `n ~ N(0, I)`; `noise_cov = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStep {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub noise_factor: DMatrix<f64>,
}

impl AffineStep {
    pub fn noise_cov(&self) -> DMatrix<f64> {
        &self.noise_factor * self.noise_factor.transpose()
    }

    pub fn apply(&self, x: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b + &self.noise_factor * noise
    }
}

/// Step split as `x' = phi x + psi s(x[..d]) + noise · n`.
struct StepParts {
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
    noise: DMatrix<f64>,
}

fn step_parts(step: &StepDescriptor, d: usize) -> Result<StepParts> {
    let eye = DMatrix::<f64>::identity(d, d);
    Ok(match step.kind {
        SamplerStep::Sde { mode } => {
            let c = sde_step_coefficients(step.eps, mode);
            StepParts {
                phi: &eye * c.state,
                psi: &eye * c.score,
                noise: &eye * c.noise,
            }
        }
        SamplerStep::Predictor { mode, first } => {
            let c = predictor_step_coefficients(step.eps, mode, first);
            StepParts {
                phi: &eye * c.state,
                psi: &eye * c.score,
                noise: DMatrix::zeros(d, 0),
            }
        }
        SamplerStep::Corrector {
            mode,
            gamma,
            steps,
            index,
        } => {
            let c = CorrectorCoefficients::new(gamma, step.eps, steps, mode)?;
            let [_, g12, _, g22] = c.g.blocks;
            let mut phi = DMatrix::identity(2 * d, 2 * d);
            phi.view_mut((0, d), (d, d)).copy_from(&(&eye * g12));
            phi.view_mut((d, d), (d, d)).copy_from(&(&eye * g22));
            let mut psi = DMatrix::zeros(2 * d, d);
            psi.view_mut((0, 0), (d, d)).copy_from(&(&eye * c.drift.0));
            psi.view_mut((d, 0), (d, d)).copy_from(&(&eye * c.drift.1));
            let noise = match mode {
                Mode::Exact => {
                    let (l11, l21, l22) = c.noise_factor;
                    let mut l = DMatrix::zeros(2 * d, 2 * d);
                    l.view_mut((0, 0), (d, d)).copy_from(&(&eye * l11));
                    l.view_mut((d, 0), (d, d)).copy_from(&(&eye * l21));
                    l.view_mut((d, d), (d, d)).copy_from(&(&eye * l22));
                    l
                }
                Mode::PaperVerbatim => {
                    let mut l = DMatrix::zeros(2 * d, d);
                    l.view_mut((d, 0), (d, d)).copy_from(&(&eye * c.verbatim_noise[index]));
                    l
                }
            };
            StepParts { phi, psi, noise }
        }
    })
}

/// Affine form of one step under an affine score evaluated at the leading
/// `score.dim()` coordinates of the state.
pub fn affine_of_step(step: &StepDescriptor, score: &AffineScore) -> Result<AffineStep> {
    let d = score.dim();
    let parts = step_parts(step, d)?;
    let p = parts.phi.nrows();
    let mut a = parts.phi;
    let sj = &parts.psi * &score.jacobian;
    let mut lead = a.view_mut((0, 0), (p, d));
    lead += &sj;
    Ok(AffineStep {
        a,
        b: &parts.psi * &score.offset,
        noise_factor: parts.noise,
    })
}

/// Law of `a x + b + L n` for `x ~ law`.
pub fn propagate(law: &GaussianLaw, step: &AffineStep) -> GaussianLaw {
    let mean = &step.a * &law.mean + &step.b;
    let cov = &step.a * &law.cov * step.a.transpose() + step.noise_cov();
    GaussianLaw {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
    }
}

/// Sweeps to model per block.
#[derive(Debug, Clone, PartialEq)]
pub enum Depth {
    /// The sequential solve (the Picard fixed point).
    Sequential,
    /// The same number of sweeps in every block.
    Uniform(usize),
    /// Sweeps per block.
    PerBlock(Vec<usize>),
}

impl Depth {
    fn get(&self, n: usize) -> Option<usize> {
        match self {
            Depth::Sequential => None,
            Depth::Uniform(k) => Some(*k),
            Depth::PerBlock(v) => Some(v.get(n).copied().unwrap_or(0)),
        }
    }
}

/// Output law of one block after `depth` Picard sweeps (`None`: sequential).
pub fn block_law(
    law_in: &GaussianLaw,
    steps: &[StepDescriptor],
    field: &dyn AffineScoreField,
    depth: Option<usize>,
) -> Result<GaussianLaw> {
    let d = field.dim();
    let scores = steps.iter().map(|s| field.at(s.time)).collect::<Result<Vec<_>>>()?;
    match depth {
        None => {
            let mut law = law_in.clone();
            for (s, sc) in steps.iter().zip(&scores) {
                law = propagate(&law, &affine_of_step(s, sc)?);
            }
            Ok(law)
        }
        Some(k) => picard_block_law(law_in, steps, &scores, d, k),
    }
}

/// Tracks every node as an affine function of (start, ξ_0, ..., ξ_{M-1})
/// through `k` Picard sweeps.
fn picard_block_law(
    law_in: &GaussianLaw,
    steps: &[StepDescriptor],
    scores: &[AffineScore],
    d: usize,
    k: usize,
) -> Result<GaussianLaw> {
    let p = law_in.dim();
    let parts = steps.iter().map(|s| step_parts(s, d)).collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(parts.len() + 1);
    let mut cols = p;
    for part in &parts {
        offsets.push(cols);
        cols += part.noise.ncols();
    }
    let m_steps = steps.len();
    let mut start_lin = DMatrix::zeros(p, cols);
    start_lin.view_mut((0, 0), (p, p)).fill_with_identity();
    let start = (start_lin, DVector::<f64>::zeros(p));
    let mut prev: Vec<(DMatrix<f64>, DVector<f64>)> = vec![start.clone(); m_steps + 1];
    // Per step: psi·J restricted to the leading coordinates, and psi·c.
    let drive: Vec<(DMatrix<f64>, DVector<f64>)> = parts
        .iter()
        .zip(scores)
        .map(|(pt, sc)| (&pt.psi * &sc.jacobian, &pt.psi * &sc.offset))
        .collect();
    for _ in 0..k {
        let mut next = Vec::with_capacity(m_steps + 1);
        next.push(start.clone());
        for m in 0..m_steps {
            let (ref cur_lin, ref cur_off) = next[m];
            let (ref old_lin, ref old_off) = prev[m];
            let (ref pj, ref pc) = drive[m];
            let mut lin = &parts[m].phi * cur_lin + pj * old_lin.rows(0, d);
            let off = &parts[m].phi * cur_off + pj * old_off.rows(0, d) + pc;
            let q = parts[m].noise.ncols();
            if q > 0 {
                let mut block = lin.view_mut((0, offsets[m]), (p, q));
                block += &parts[m].noise;
            }
            next.push((lin, off));
        }
        prev = next;
    }
    let (lin, off) = &prev[m_steps];
    let ls = lin.view((0, 0), (p, p));
    let lx = lin.view((0, p), (p, cols - p));
    let mean = ls * &law_in.mean + off;
    let cov = ls * &law_in.cov * ls.transpose() + lx * lx.transpose();
    Ok(GaussianLaw {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
    })
}

/// Steps of SDE block `n`.
pub fn sde_steps(plan: &DiscretizationPlan<f64>, n: usize, mode: Mode) -> Vec<StepDescriptor> {
    let t0 = plan.block_start(n);
    let g = plan.grid(n);
    g.windows(2)
        .map(|w| StepDescriptor {
            kind: SamplerStep::Sde { mode },
            time: t0 + w[0],
            eps: w[1] - w[0],
        })
        .collect()
}

/// Steps of predictor block `n`.
pub fn predictor_steps(plan: &DiscretizationPlan<f64>, n: usize, mode: Mode) -> Vec<StepDescriptor> {
    let t0 = plan.block_start(n);
    let g = plan.grid(n);
    g.windows(2)
        .enumerate()
        .map(|(m, w)| StepDescriptor {
            kind: SamplerStep::Predictor { mode, first: m == 0 },
            time: t0 + w[0],
            eps: w[1] - w[0],
        })
        .collect()
}

/// Steps of one corrector block with the score frozen at `time`.
pub fn corrector_steps(cplan: &CorrectorPlan<f64>, time: f64, mode: Mode) -> Vec<StepDescriptor> {
    (0..cplan.steps())
        .map(|index| StepDescriptor {
            kind: SamplerStep::Corrector {
                mode,
                gamma: cplan.gamma(),
                steps: cplan.steps(),
                index,
            },
            time,
            eps: cplan.step(),
        })
        .collect()
}

/// Output law of the SDE sampler started from N(0, I).
pub fn sde_output_law(
    plan: &DiscretizationPlan<f64>,
    field: &dyn AffineScoreField,
    mode: Mode,
    depth: &Depth,
) -> Result<GaussianLaw> {
    let mut law = GaussianLaw::standard(field.dim());
    for n in 0..plan.n_blocks() {
        law = block_law(&law, &sde_steps(plan, n, mode), field, depth.get(n))?;
    }
    Ok(law)
}

/// Output law of the predictor–corrector sampler started from N(0, I).
/// The momentum is resampled from N(0, I) before each outer block's
/// correctors and the position marginal is kept afterwards.
pub fn ode_output_law(
    plan: &DiscretizationPlan<f64>,
    cplan: &CorrectorPlan<f64>,
    field: &dyn AffineScoreField,
    mode: Mode,
    depth: &Depth,
    corrector_depth: &Depth,
) -> Result<GaussianLaw> {
    let d = field.dim();
    let mut law = GaussianLaw::standard(d);
    let mut inner = 0;
    for n in 0..plan.n_blocks() {
        law = block_law(&law, &predictor_steps(plan, n, mode), field, depth.get(n))?;
        if !cplan.is_enabled() {
            continue;
        }
        let steps = corrector_steps(cplan, plan.block_start(n + 1), mode);
        let mut phase = law.product(&GaussianLaw::standard(d));
        for _ in 0..cplan.blocks() {
            phase = block_law(&phase, &steps, field, corrector_depth.get(inner))?;
            inner += 1;
        }
        law = phase.marginal(d);
    }
    Ok(law)
}

/// Law after every step of the sequential SDE solve, in order.
pub fn sde_step_laws(plan: &DiscretizationPlan<f64>, field: &dyn AffineScoreField, mode: Mode) -> Result<Vec<GaussianLaw>> {
    let mut law = GaussianLaw::standard(field.dim());
    let mut out = Vec::with_capacity(plan.total_steps());
    for n in 0..plan.n_blocks() {
        for s in sde_steps(plan, n, mode) {
            law = propagate(&law, &affine_of_step(&s, &field.at(s.time)?)?);
            out.push(law.clone());
        }
    }
    Ok(out)
}

/// Exact law after running true underdamped Langevin dynamics
/// `du = v dt, dv = (s(u) - γ v) dt + √(2γ) dW` for time `t` from a
/// Gaussian phase law (position first).
pub fn ulmc_flow_law(law: &GaussianLaw, score: &AffineScore, gamma: f64, t: f64) -> Result<GaussianLaw> {
    let d = score.dim();
    if law.dim() != 2 * d {
        return Err(Error::Dimension {
            expected: 2 * d,
            got: law.dim(),
        });
    }
    let p = 2 * d;
    let mut b = DMatrix::zeros(p, p);
    b.view_mut((0, d), (d, d)).fill_with_identity();
    b.view_mut((d, 0), (d, d)).copy_from(&score.jacobian);
    b.view_mut((d, d), (d, d)).copy_from(&(DMatrix::<f64>::identity(d, d) * -gamma));
    // Mean: exp of the augmented generator [[B, c], [0, 0]].
    let mut aug = DMatrix::zeros(p + 1, p + 1);
    aug.view_mut((0, 0), (p, p)).copy_from(&(&b * t));
    aug.view_mut((d, p), (d, 1)).copy_from(&(&score.offset * t));
    let e = aug.exp();
    let phi = e.view((0, 0), (p, p)).into_owned();
    let shift = e.view((0, p), (p, 1)).into_owned();
    // Covariance: Van Loan's block exponential.
    let mut q = DMatrix::zeros(p, p);
    q.view_mut((d, d), (d, d)).copy_from(&(DMatrix::<f64>::identity(d, d) * (2.0 * gamma)));
    let mut vl = DMatrix::zeros(2 * p, 2 * p);
    vl.view_mut((0, 0), (p, p)).copy_from(&(-&b * t));
    vl.view_mut((0, p), (p, p)).copy_from(&(&q * t));
    vl.view_mut((p, p), (p, p)).copy_from(&(b.transpose() * t));
    let ev = vl.exp();
    let f22 = ev.view((p, p), (p, p)).into_owned();
    let f12 = ev.view((0, p), (p, p)).into_owned();
    let qd = f22.transpose() * f12;
    let mean = &phi * &law.mean + DVector::from_column_slice(shift.as_slice());
    let cov = &phi * &law.cov * phi.transpose() + (&qd + qd.transpose()) * 0.5;
    Ok(GaussianLaw {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
    })
}

fn chol(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new((m + m.transpose()) * 0.5).ok_or_else(|| Error::Singular(format!("{what} covariance is not positive definite")))
}

/// KL(p ‖ q) between Gaussian laws.
pub fn kl_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let cq = chol(&q.cov, "reference")?;
    let cp = chol(&p.cov, "first")?;
    let d = p.dim() as f64;
    let trace = cq.solve(&p.cov).trace();
    let dm = &q.mean - &p.mean;
    let quad = dm.dot(&cq.solve(&dm));
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let kl = 0.5 * (trace + quad - d + logdet(&cq) - logdet(&cp));
    Ok(kl.max(0.0))
}

/// Square root of a PSD matrix by symmetric eigendecomposition (negative
/// round-off eigenvalues are clamped to zero).
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// 2-Wasserstein distance between Gaussian laws.
pub fn w2_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let sq = sqrt_psd(&q.cov);
    let cross = sqrt_psd(&(&sq * &p.cov * &sq));
    let w2sq = (&p.mean - &q.mean).norm_squared() + p.cov.trace() + q.cov.trace() - 2.0 * cross.trace();
    Ok(w2sq.max(0.0).sqrt())
}

/// Pinsker bound `√(KL/2)` on total variation.
pub fn tv_bound_from_kl(kl: f64) -> f64 {
    (kl.max(0.0) / 2.0).sqrt()
}
