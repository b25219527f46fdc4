//! Right-hand sides of the averaged-gradient and function-gap bounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::weighted_sqnorm;
use crate::problem::QuadraticProblem;
use crate::sketch::SketchKind;

use super::fixed_point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `(1/K) Σ_{k<K} E‖∇f(x^k)‖²_{L̄⁻¹} ≤ …`, indexed by `K`.
    AveragedGradient,
    /// `E f(x^k) − f* ≤ …`, indexed by `k`.
    FunctionGap,
}

/// Per-index values of a bound together with its parameters.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub gamma: f64,
    pub beta: f64,
    pub c: f64,
    /// `values[j]` is the bound at index `first_index + j`.
    pub first_index: usize,
    pub values: Vec<f64>,
    /// The `k`-independent part of the bound.
    pub neighborhood: f64,
}

impl BoundCurve {
    pub fn at(&self, index: usize) -> Option<f64> {
        index.checked_sub(self.first_index).and_then(|j| self.values.get(j).copied())
    }
}

/// `‖h‖²_{L̄}` and `σ²` of a problem/sketch pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundTerms {
    pub h_sq_l: f64,
    pub sigma2: f64,
}

impl BoundTerms {
    /// `h = x* − x^∞` and the exact heterogeneity for `kind`.
    pub fn for_problem(p: &QuadraticProblem, kind: SketchKind) -> Result<Self> {
        let h = p.solution()? - fixed_point(p, kind)?;
        Ok(BoundTerms {
            h_sq_l: weighted_sqnorm(&h, p.l_bar())?.max(0.0),
            sigma2: crate::estimator::heterogeneity_sigma2(p, kind)?,
        })
    }
}

/// `γ_{c,β} = (1 − c − β)/(β + ½)`, requiring `β > 0`, `c > 0`, `β + c < 1`.
pub fn step_limit(c: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && c > 0.0 && beta + c < 1.0) {
        return Err(Error::BetaOutOfRange { beta, c });
    }
    Ok((1.0 - c - beta) / (beta + 0.5))
}

fn check_gamma(gamma: f64, limit: f64) -> Result<()> {
    if !(gamma > 0.0) || gamma > limit * (1.0 + super::STEP_TOL) {
        return Err(Error::StepSizeOutOfRange { gamma, limit });
    }
    Ok(())
}

/// Averaged-gradient bound for general `c`:
/// `(f₀ − E f_K)/(cγK) + ((1−γ)/(cβ) + γ/(2c))‖h‖²_{L̄} + γσ²/(2c)`.
///
/// `f_traj[k]` is `E f(x^k)` for `k = 0..=K`; `f_traj[0]` is `f(x⁰)`. The
/// curve holds the bound for every horizon `1..=K`.
pub fn gen_thm_bound(terms: &BoundTerms, gamma: f64, beta: f64, c: f64, f_traj: &[f64]) -> Result<BoundCurve> {
    let limit = step_limit(c, beta)?;
    check_gamma(gamma, limit)?;
    if f_traj.len() < 2 {
        return Err(Error::ConfigInvalid("bound needs at least one iteration".into()));
    }
    let neighborhood =
        ((1.0 - gamma) / (c * beta) + gamma / (2.0 * c)) * terms.h_sq_l + gamma / (2.0 * c) * terms.sigma2;
    let f0 = f_traj[0];
    let values = f_traj[1..]
        .iter()
        .enumerate()
        .map(|(j, fk)| (f0 - fk) / (c * gamma * (j + 1) as f64) + neighborhood)
        .collect();
    Ok(BoundCurve { kind: BoundKind::AveragedGradient, gamma, beta, c, first_index: 1, values, neighborhood })
}

/// The `c = ½` case: `2(f₀ − E f_K)/(γK) + (2β⁻¹(1−γ) + γ)‖h‖²_{L̄} + γσ²`.
pub fn thm2_bound(terms: &BoundTerms, gamma: f64, beta: f64, f_traj: &[f64]) -> Result<BoundCurve> {
    gen_thm_bound(terms, gamma, beta, 0.5, f_traj)
}

/// Function-gap bound on a homogeneous preconditioned problem:
/// `(1 − 2γc)^k (f₀ − f*) + (1/(2c))(β⁻¹(1−γ) + γ/2)‖h‖²_{L̃}`.
pub fn thm4_bound(h_sq: f64, gamma: f64, beta: f64, c: f64, k: usize, f0_gap: f64) -> Result<f64> {
    Ok(thm4_curve(h_sq, gamma, beta, c, k, f0_gap)?.values[k])
}

/// [`thm4_bound`] for every `k` in `0..=k_max`.
pub fn thm4_curve(h_sq: f64, gamma: f64, beta: f64, c: f64, k_max: usize, f0_gap: f64) -> Result<BoundCurve> {
    let limit = step_limit(c, beta)?;
    check_gamma(gamma, limit)?;
    let neighborhood = ((1.0 - gamma) / beta + gamma / 2.0) / (2.0 * c) * h_sq;
    let factor = 1.0 - 2.0 * gamma * c;
    let values = (0..=k_max).map(|k| factor.powi(k as i32) * f0_gap + neighborhood).collect();
    Ok(BoundCurve { kind: BoundKind::FunctionGap, gamma, beta, c, first_index: 0, values, neighborhood })
}

/// `Ψ(β, γ) = (β⁻¹(1−γ) + γ/2)/(1 − γ/2 − β(1−γ))`.
pub fn neighborhood_psi(beta: f64, gamma: f64) -> Result<f64> {
    let den = 1.0 - gamma / 2.0 - beta * (1.0 - gamma);
    if !(den > 0.0) {
        return Err(Error::DenominatorNonpositive { beta, gamma });
    }
    Ok(((1.0 - gamma) / beta + gamma / 2.0) / den)
}

/// Grid `β ∈ {step, 2·step, …} ∩ (0, beta_max]`, `γ ∈ {step, …} ∩ (0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct PsiGrid {
    pub beta_max: f64,
    pub step: f64,
}

impl Default for PsiGrid {
    fn default() -> Self {
        PsiGrid { beta_max: 5.0, step: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PsiMinimum {
    pub beta: f64,
    pub gamma: f64,
    pub psi: f64,
    /// Grid points attaining exactly the same value.
    pub ties: usize,
}

/// Grid argmin of `Ψ`, skipping points with a non-positive denominator. The
/// first minimizer in (β, γ) scan order is reported.
pub fn minimize_psi(grid: PsiGrid) -> Result<PsiMinimum> {
    if !(grid.step > 0.0 && grid.beta_max >= grid.step) {
        return Err(Error::ConfigInvalid(format!("bad psi grid {grid:?}")));
    }
    let nb = (grid.beta_max / grid.step + 1e-9).floor() as usize;
    let ng = (1.0 / grid.step + 1e-9).floor() as usize;
    let mut best: Option<PsiMinimum> = None;
    for ib in 1..=nb {
        let beta = ib as f64 * grid.step;
        for ig in 1..=ng {
            let gamma = ig as f64 * grid.step;
            let Ok(psi) = neighborhood_psi(beta, gamma) else { continue };
            match &mut best {
                Some(b) if psi == b.psi => b.ties += 1,
                Some(b) if psi > b.psi => {}
                _ => best = Some(PsiMinimum { beta, gamma, psi, ties: 1 }),
            }
        }
    }
    best.ok_or_else(|| Error::ConfigInvalid("psi grid has no admissible point".into()))
}
