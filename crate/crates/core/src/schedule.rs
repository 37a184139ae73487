//! Two-level time discretization of the backward horizon.
//!
//! The horizon [0, T - η] is cut into N blocks. Blocks 0..N-2 have length
//! h = T/N and a uniform grid of step ε; the last block has length h - η and
//! a grid whose steps shrink geometrically towards the data end so that
//! every step satisfies ε_m ≤ min(ε, ε·(h - τ_{m+1})).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative tolerance used for rounding-sensitive grid checks.
fn rounding_tol<F: Scalar>() -> f64 {
    (64.0 * F::epsilon().f64()).max(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastBlockRule {
    /// τ_{m+1} = τ_m + min(ε, ε(h - τ_m)/(1 + ε)), stopped at h - η.
    #[default]
    Geometric,
}

/// The full time grid of a blockwise sampler. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan<F>", into = "RawPlan<F>", bound = "F: Scalar")]
pub struct DiscretizationPlan<F: Scalar> {
    horizon: F,
    eta: F,
    block_lengths: Vec<F>,
    grids: Vec<Vec<F>>,
    base_step: F,
    picard_depth: usize,
    block_starts: Vec<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawPlan<F: Scalar> {
    #[serde(rename = "T")]
    horizon: F,
    eta: F,
    #[serde(rename = "N")]
    blocks: usize,
    block_lengths: Vec<F>,
    grids: Vec<Vec<F>>,
    base_step: F,
    picard_depth: usize,
}

impl<F: Scalar> TryFrom<RawPlan<F>> for DiscretizationPlan<F> {
    type Error = Error;

    fn try_from(raw: RawPlan<F>) -> Result<Self> {
        if raw.blocks != raw.block_lengths.len() {
            return Err(Error::InvalidPlan(format!(
                "N = {} but {} block lengths",
                raw.blocks,
                raw.block_lengths.len()
            )));
        }
        let plan = DiscretizationPlan::from_parts(
            raw.horizon,
            raw.eta,
            raw.block_lengths,
            raw.grids,
            raw.base_step,
            raw.picard_depth,
        );
        plan.validate()?;
        Ok(plan)
    }
}

impl<F: Scalar> From<DiscretizationPlan<F>> for RawPlan<F> {
    fn from(p: DiscretizationPlan<F>) -> Self {
        RawPlan {
            horizon: p.horizon,
            eta: p.eta,
            blocks: p.block_lengths.len(),
            block_lengths: p.block_lengths,
            grids: p.grids,
            base_step: p.base_step,
            picard_depth: p.picard_depth,
        }
    }
}

impl<F: Scalar> DiscretizationPlan<F> {
    /// Builds and validates a plan. `eps` must divide h = T/N.
    pub fn build(horizon: F, eta: F, blocks: usize, eps: F, depth: usize, rule: LastBlockRule) -> Result<Self> {
        let (t, e, s) = (horizon.f64(), eta.f64(), eps.f64());
        if !(t > e && e > 0.0) {
            return Err(Error::InvalidPlan(format!("need T > eta > 0, got T={t}, eta={e}")));
        }
        if blocks == 0 {
            return Err(Error::InvalidPlan("need at least one block".into()));
        }
        if !(s > 0.0) {
            return Err(Error::InvalidPlan(format!("step must be positive, got {s}")));
        }
        if depth == 0 {
            return Err(Error::InvalidPlan("Picard depth must be positive".into()));
        }
        let h = t / blocks as f64;
        if e >= h {
            return Err(Error::InvalidPlan(format!("eta = {e} must be below the block length {h}")));
        }
        let per_block = (h / s).round();
        if per_block < 1.0 || (per_block * s - h).abs() > rounding_tol::<F>() * h.max(1.0) {
            return Err(Error::InvalidPlan(format!("step {s} does not divide block length {h}")));
        }
        let per_block = per_block as usize;
        let h_f = F::of(h);

        let mut block_lengths = Vec::with_capacity(blocks);
        let mut grids = Vec::with_capacity(blocks);
        for _ in 0..blocks - 1 {
            let mut g: Vec<F> = (0..per_block).map(|m| F::of(m as f64) * eps).collect();
            g.push(h_f);
            block_lengths.push(h_f);
            grids.push(g);
        }
        let last_len = h - e;
        let last = match rule {
            LastBlockRule::Geometric => geometric_grid(h, F::of(last_len), s)?,
        };
        block_lengths.push(F::of(last_len));
        grids.push(last);

        let plan = Self::from_parts(horizon, eta, block_lengths, grids, eps, depth);
        plan.validate().map_err(|err| Error::PlanInconsistent(err.to_string()))?;
        let m_last = plan.steps_in_block(blocks - 1);
        let bound = ((h / e).ln() / s).ceil() as usize + (h / s).ceil() as usize;
        if m_last > bound {
            return Err(Error::PlanInconsistent(format!(
                "last block has {m_last} steps, above the log(h/eta)/eps + h/eps bound {bound}"
            )));
        }
        Ok(plan)
    }

    fn from_parts(horizon: F, eta: F, block_lengths: Vec<F>, grids: Vec<Vec<F>>, base_step: F, picard_depth: usize) -> Self {
        let n = block_lengths.len();
        let block_starts = if n == 0 {
            Vec::new()
        } else {
            let h = (horizon.f64()) / n as f64;
            (0..n)
                .map(|i| F::of(h * i as f64))
                .chain(std::iter::once(horizon - eta))
                .collect()
        };
        DiscretizationPlan {
            horizon,
            eta,
            block_lengths,
            grids,
            base_step,
            picard_depth,
            block_starts,
        }
    }

    /// Checks every structural invariant; the decay inequality of the last
    /// block is checked without tolerance.
    pub fn validate(&self) -> Result<()> {
        let (t, e, s) = (self.horizon.f64(), self.eta.f64(), self.base_step.f64());
        let fail = |msg: String| Err(Error::InvalidPlan(msg));
        if !(t > e && e > 0.0) {
            return fail(format!("need T > eta > 0, got T={t}, eta={e}"));
        }
        let n = self.block_lengths.len();
        if n == 0 || self.grids.len() != n {
            return fail(format!("{} block lengths but {} grids", n, self.grids.len()));
        }
        if self.picard_depth == 0 {
            return fail("Picard depth must be positive".into());
        }
        if !(s > 0.0) {
            return fail("base step must be positive".into());
        }
        let h = t / n as f64;
        let tol = rounding_tol::<F>();
        let total: f64 = self.block_lengths.iter().map(|v| v.f64()).sum();
        if (total - (t - e)).abs() > tol.max(1e-10) * t.max(1.0) {
            return fail(format!("block lengths sum to {total}, expected {}", t - e));
        }
        for (i, (g, hn)) in self.grids.iter().zip(&self.block_lengths).enumerate() {
            let hn = hn.f64();
            if g.len() < 2 || g[0] != F::zero() || (g[g.len() - 1].f64() - hn).abs() > tol * hn.max(1.0) {
                return fail(format!("grid {i} must run from 0 to h_{i} = {hn}"));
            }
            if g.windows(2).any(|w| !(w[1] > w[0])) {
                return fail(format!("grid {i} is not strictly increasing"));
            }
            if i + 1 < n {
                if (hn - h).abs() > tol * h.max(1.0) {
                    return fail(format!("block {i} has length {hn}, expected {h}"));
                }
                if g.windows(2).any(|w| ((w[1] - w[0]).f64() - s).abs() > tol.max(1e-9) * h.max(1.0)) {
                    return fail(format!("block {i} is not uniform with step {s}"));
                }
            } else {
                for (m, w) in g.windows(2).enumerate() {
                    let step = (w[1] - w[0]).f64();
                    let cap = decay_cap(s, h, w[1].f64());
                    if step > cap {
                        return fail(format!("last block step {m} = {step:e} exceeds min(eps, eps(h - tau_m+1)) = {cap:e}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn eta(&self) -> F {
        self.eta
    }

    pub fn n_blocks(&self) -> usize {
        self.block_lengths.len()
    }

    /// Nominal block length h = T/N.
    pub fn nominal_block_length(&self) -> F {
        F::of(self.horizon.f64() / self.n_blocks() as f64)
    }

    pub fn block_lengths(&self) -> &[F] {
        &self.block_lengths
    }

    pub fn base_step(&self) -> F {
        self.base_step
    }

    pub fn picard_depth(&self) -> usize {
        self.picard_depth
    }

    pub fn with_picard_depth(&self, depth: usize) -> Self {
        let mut p = self.clone();
        p.picard_depth = depth.max(1);
        p
    }

    /// Block start times t_0..t_N (t_N = T - η).
    pub fn block_starts(&self) -> &[F] {
        &self.block_starts
    }

    pub fn block_start(&self, n: usize) -> F {
        self.block_starts[n]
    }

    /// Grid τ_{n,0..M_n} of block `n`, relative to its start.
    pub fn grid(&self, n: usize) -> &[F] {
        &self.grids[n]
    }

    pub fn grids(&self) -> &[Vec<F>] {
        &self.grids
    }

    /// M_n.
    pub fn steps_in_block(&self, n: usize) -> usize {
        self.grids[n].len() - 1
    }

    pub fn max_steps_per_block(&self) -> usize {
        (0..self.n_blocks()).map(|n| self.steps_in_block(n)).max().unwrap_or(0)
    }

    pub fn total_steps(&self) -> usize {
        (0..self.n_blocks()).map(|n| self.steps_in_block(n)).sum()
    }

    /// ε_{n,m} for all m.
    pub fn steps(&self, n: usize) -> Vec<F> {
        self.grids[n].windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// I_n(τ): the unique m with τ_{n,m} ≤ τ < τ_{n,m+1}; M_n - 1 at τ = h_n.
    pub fn index(&self, n: usize, tau: F) -> Result<usize> {
        let g = self.grids.get(n).ok_or_else(|| Error::Domain {
            what: "block index",
            value: n as f64,
            domain: format!("[0, {})", self.n_blocks()),
        })?;
        let hn = g[g.len() - 1];
        if !(tau >= F::zero() && tau <= hn) {
            return Err(Error::Domain {
                what: "tau",
                value: tau.f64(),
                domain: format!("[0, {}]", hn),
            });
        }
        let m = g.partition_point(|&node| node <= tau);
        Ok((m - 1).min(g.len() - 2))
    }

    /// g_n(τ) = τ_{n, I_n(τ)}.
    pub fn snap(&self, n: usize, tau: F) -> Result<F> {
        Ok(self.grids[n][self.index(n, tau)?])
    }

    /// L_s² h_n e^{2 h_n} per block. Logs a warning when any exceeds 0.5.
    pub fn contraction_margin(&self, lipschitz: f64) -> Vec<f64> {
        let margins: Vec<f64> = self
            .block_lengths
            .iter()
            .map(|h| {
                let h = h.f64();
                lipschitz * lipschitz * h * (2.0 * h).exp()
            })
            .collect();
        if let Some(worst) = margins.iter().cloned().reduce(f64::max) {
            if worst > 0.5 {
                log::warn!("Picard contraction margin L_s^2 h e^(2h) = {worst:.3} exceeds 0.5");
            }
        }
        margins
    }
}

/// Decay cap min(ε, ε(h - τ_{m+1})) on a last-block step ending at `next`.
fn decay_cap(eps: f64, h: f64, next: f64) -> f64 {
    eps.min(eps * (h - next))
}

/// Geometric last-block grid from 0 to `end` = h - η. Each proposed node is
/// pulled back until the decay inequality holds exactly in the working
/// precision.
fn geometric_grid<F: Scalar>(h: f64, end: F, eps: f64) -> Result<Vec<F>> {
    let shrink = 1.0 - 4.0 * F::epsilon().f64();
    let mut g = vec![F::zero()];
    let mut tau = F::zero();
    while tau < end {
        let mut step = eps.min(eps * (h - tau.f64()) / (1.0 + eps));
        let next = loop {
            let mut next = tau + F::of(step);
            if next >= end {
                next = end;
            }
            if !(next > tau) {
                return Err(Error::PlanInconsistent(format!(
                    "last-block grid stalls at tau = {tau}; eta is too small for this precision"
                )));
            }
            if (next - tau).f64() <= decay_cap(eps, h, next.f64()) {
                break next;
            }
            step *= shrink;
        };
        tau = next;
        g.push(tau);
    }
    Ok(g)
}

/// Parameters of the underdamped Langevin corrector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCorrector<F>", into = "RawCorrector<F>", bound = "F: Scalar")]
pub struct CorrectorPlan<F: Scalar> {
    horizon: F,
    blocks: usize,
    block_length: F,
    steps: usize,
    step: F,
    depth: usize,
    gamma: F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawCorrector<F: Scalar> {
    #[serde(rename = "T_dagger")]
    horizon: F,
    #[serde(rename = "N_dagger")]
    blocks: usize,
    #[serde(rename = "h_dagger", default, skip_serializing_if = "Option::is_none")]
    block_length: Option<F>,
    #[serde(rename = "M_dagger")]
    steps: usize,
    #[serde(rename = "eps_dagger", default, skip_serializing_if = "Option::is_none")]
    step: Option<F>,
    #[serde(rename = "K_dagger")]
    depth: usize,
    gamma: F,
}

impl<F: Scalar> TryFrom<RawCorrector<F>> for CorrectorPlan<F> {
    type Error = Error;

    fn try_from(r: RawCorrector<F>) -> Result<Self> {
        let plan = CorrectorPlan::new(r.horizon, r.blocks, r.steps, r.depth, r.gamma)?;
        let close = |a: F, b: F| (a.f64() - b.f64()).abs() <= 1e-12 * b.f64().abs().max(1.0);
        if r.block_length.is_some_and(|h| !close(h, plan.block_length)) || r.step.is_some_and(|e| !close(e, plan.step)) {
            return Err(Error::InvalidPlan(
                "h_dagger / eps_dagger inconsistent with T_dagger / N_dagger / M_dagger".into(),
            ));
        }
        Ok(plan)
    }
}

impl<F: Scalar> From<CorrectorPlan<F>> for RawCorrector<F> {
    fn from(p: CorrectorPlan<F>) -> Self {
        RawCorrector {
            horizon: p.horizon,
            blocks: p.blocks,
            block_length: Some(p.block_length),
            steps: p.steps,
            step: Some(p.step),
            depth: p.depth,
            gamma: p.gamma,
        }
    }
}

impl<F: Scalar> CorrectorPlan<F> {
    /// `blocks = 0` (with `horizon = 0`) disables the corrector.
    pub fn new(horizon: F, blocks: usize, steps: usize, depth: usize, gamma: F) -> Result<Self> {
        if !(gamma > F::zero()) {
            return Err(Error::InvalidPlan("friction gamma must be positive".into()));
        }
        if steps == 0 || depth == 0 {
            return Err(Error::InvalidPlan("corrector steps and depth must be positive".into()));
        }
        if blocks == 0 {
            if horizon != F::zero() {
                return Err(Error::InvalidPlan("N_dagger = 0 requires T_dagger = 0".into()));
            }
            return Ok(CorrectorPlan {
                horizon,
                blocks,
                block_length: F::one(),
                steps,
                step: F::one() / F::of(steps as f64),
                depth,
                gamma,
            });
        }
        if !(horizon > F::zero()) {
            return Err(Error::InvalidPlan("corrector horizon must be positive".into()));
        }
        let block_length = horizon / F::of(blocks as f64);
        Ok(CorrectorPlan {
            horizon,
            blocks,
            block_length,
            steps,
            step: block_length / F::of(steps as f64),
            depth,
            gamma,
        })
    }

    pub fn disabled() -> Self {
        Self::new(F::zero(), 0, 1, 1, F::one()).expect("valid")
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }
    pub fn blocks(&self) -> usize {
        self.blocks
    }
    pub fn block_length(&self) -> F {
        self.block_length
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn step(&self) -> F {
        self.step
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn gamma(&self) -> F {
        self.gamma
    }
    pub fn is_enabled(&self) -> bool {
        self.blocks > 0
    }

    pub fn with_depth(&self, depth: usize) -> Self {
        let mut p = self.clone();
        p.depth = depth.max(1);
        p
    }

    /// Grid node m·ε† of a corrector block.
    pub fn node(&self, m: usize) -> F {
        F::of(m as f64) * self.step
    }
}

/// Hidden constants of the parameter presets. All default to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetConstants {
    /// T = ⌈c·log(dδ⁻²)/h⌉·h.
    pub horizon: f64,
    /// h.
    pub block_length: f64,
    /// Multiplier on the base step ε.
    pub step: f64,
    /// K = ⌈c·log(dδ⁻²)⌉.
    pub depth: f64,
    /// η = c·δ².
    pub early_stop: f64,
    /// T† = c.
    pub corrector_horizon: f64,
    /// N† = ⌈c⌉.
    pub corrector_blocks: f64,
    /// Multiplier on ε†.
    pub corrector_step: f64,
    /// K† = ⌈c·log(dδ⁻²)⌉.
    pub corrector_depth: f64,
    /// Lipschitz constant L_p of the true score; γ = max(1, √L_p).
    pub score_lipschitz: f64,
    /// Refuse presets with more steps per block than this.
    pub max_steps_per_block: usize,
}

impl Default for PresetConstants {
    fn default() -> Self {
        PresetConstants {
            horizon: 1.0,
            block_length: 1.0,
            step: 1.0,
            depth: 1.0,
            early_stop: 1.0,
            corrector_horizon: 1.0,
            corrector_blocks: 1.0,
            corrector_step: 1.0,
            corrector_depth: 1.0,
            score_lipschitz: 1.0,
            max_steps_per_block: 20_000_000,
        }
    }
}

/// Resolved numbers of a preset, before any grid is allocated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetParameters {
    pub horizon: f64,
    pub blocks: usize,
    pub block_length: f64,
    pub eta: f64,
    /// Unquantized step from the order formula.
    pub step_target: f64,
    /// Steps per uniform block, ⌈h/step_target⌉.
    pub steps: usize,
    pub depth: usize,
    pub corrector: Option<CorrectorParameters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorParameters {
    pub horizon: f64,
    pub blocks: usize,
    pub step_target: f64,
    pub steps: usize,
    pub depth: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Theorem1,
    Theorem2,
}

fn check_preset_inputs(d: usize, delta: f64, c: &PresetConstants) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidPlan("dimension must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            what: "delta",
            value: delta,
            domain: "(0, 1)".into(),
        });
    }
    if !(c.block_length > 0.0) {
        return Err(Error::InvalidPlan("preset block length must be positive".into()));
    }
    Ok((d as f64 / (delta * delta)).ln())
}

/// Resolves a preset's parameter orders with the given constants.
pub fn preset_parameters(preset: Preset, d: usize, delta: f64, c: &PresetConstants) -> Result<PresetParameters> {
    let log_term = check_preset_inputs(d, delta, c)?;
    let h = c.block_length;
    let blocks = ((c.horizon * log_term / h).ceil() as usize).max(1);
    let horizon = blocks as f64 * h;
    let eta = c.early_stop * delta * delta;
    let depth = ((c.depth * log_term).ceil() as usize).max(1);
    let sqrt_d = (d as f64).sqrt();
    let step_target = match preset {
        Preset::Theorem1 => c.step * delta * delta / (d as f64 * horizon),
        Preset::Theorem2 => c.step * delta / sqrt_d,
    };
    let steps = (h / step_target).ceil() as usize;
    let corrector = match preset {
        Preset::Theorem1 => None,
        Preset::Theorem2 => {
            let t_dagger = c.corrector_horizon;
            let n_dagger = c.corrector_blocks.ceil().max(0.0) as usize;
            let h_dagger = if n_dagger == 0 { 1.0 } else { t_dagger / n_dagger as f64 };
            let step_target = c.corrector_step * delta / sqrt_d;
            Some(CorrectorParameters {
                horizon: if n_dagger == 0 { 0.0 } else { t_dagger },
                blocks: n_dagger,
                step_target,
                steps: ((h_dagger / step_target).ceil() as usize).max(1),
                depth: ((c.corrector_depth * log_term).ceil() as usize).max(1),
                gamma: c.score_lipschitz.sqrt().max(1.0),
            })
        }
    };
    let p = PresetParameters {
        horizon,
        blocks,
        block_length: h,
        eta,
        step_target,
        steps,
        depth,
        corrector,
    };
    let last_estimate = ((h / eta).ln() / (h / steps as f64)).ceil() as usize + steps;
    let worst = p
        .steps
        .max(last_estimate)
        .max(p.corrector.as_ref().map_or(0, |c| c.steps));
    if worst > c.max_steps_per_block {
        return Err(Error::MemoryCap {
            steps: worst,
            cap: c.max_steps_per_block,
        });
    }
    Ok(p)
}

impl PresetParameters {
    pub fn plan<F: Scalar>(&self) -> Result<DiscretizationPlan<F>> {
        let eps = self.block_length / self.steps as f64;
        DiscretizationPlan::build(
            F::of(self.horizon),
            F::of(self.eta),
            self.blocks,
            F::of(eps),
            self.depth,
            LastBlockRule::Geometric,
        )
    }

    pub fn corrector_plan<F: Scalar>(&self) -> Option<Result<CorrectorPlan<F>>> {
        self.corrector.as_ref().map(|c| {
            CorrectorPlan::new(F::of(c.horizon), c.blocks, c.steps, c.depth, F::of(c.gamma))
        })
    }
}

/// Plan with T, N = O(log(dδ⁻²)), h = Θ(1), ε = Θ(δ²/(dT)), K = O(log(dδ⁻²)).
pub fn theorem1_preset<F: Scalar>(d: usize, delta: f64, c: &PresetConstants) -> Result<DiscretizationPlan<F>> {
    preset_parameters(Preset::Theorem1, d, delta, c)?.plan()
}

/// Plan with ε = Θ(δ/√d) plus the corrector plan with T†, N† = O(1),
/// ε† = Θ(δ/√d), K† = O(log(dδ⁻²)).
pub fn theorem2_preset<F: Scalar>(
    d: usize,
    delta: f64,
    c: &PresetConstants,
) -> Result<(DiscretizationPlan<F>, CorrectorPlan<F>)> {
    let p = preset_parameters(Preset::Theorem2, d, delta, c)?;
    let corrector = p.corrector_plan().expect("the second preset has a corrector")?;
    Ok((p.plan()?, corrector))
}
