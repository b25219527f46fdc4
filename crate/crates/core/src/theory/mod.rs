//! Convergence certificates for sketched gradient methods on quadratics.
//!
//! A certificate bundles `W = ½(L̄·E[B] + E[B]·L̄)`, the tightest `θ` with
//! `E[B·L̄·B] ⪯ θ·W`, the contraction factor `ρ`, the fixed point `x^∞` of the
//! mean recursion, the bias `h = x* − x^∞` and the heterogeneity `σ²`.

mod bounds;
mod moments;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimator::heterogeneity_sigma2;
use crate::linalg::{eig_sym, psd_check, weighted_sqnorm, SymMatrix, Vector, PSD_TOL, RANK_TOL};
use crate::problem::QuadraticProblem;
use crate::sketch::{self, ExpectationReport, SketchKind};

pub use bounds::{
    gen_thm_bound, minimize_psi, neighborhood_psi, step_limit, thm2_bound, thm4_bound, thm4_curve,
    BoundCurve, BoundKind, BoundTerms, PsiGrid, PsiMinimum,
};
pub use moments::{expected_iterate, MomentPropagator, Moments};

/// Relative slack allowed when comparing a step size with `1/θ`.
pub const STEP_TOL: f64 = 1e-12;

/// `θ` as a value: finite, or `inadmissible` when no `θ > 0` satisfies
/// `E[B·L̄·B] ⪯ θ·W`. Serialized as a number or the string `"inadmissible"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Theta {
    Finite(f64),
    Inadmissible,
}

impl Theta {
    pub fn value(&self) -> Option<f64> {
        match self {
            Theta::Finite(t) => Some(*t),
            Theta::Inadmissible => None,
        }
    }

    pub fn is_admissible(&self) -> bool {
        matches!(self, Theta::Finite(_))
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Finite(t) => write!(f, "{t}"),
            Theta::Inadmissible => write!(f, "inadmissible"),
        }
    }
}

impl Serialize for Theta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Theta::Finite(t) => s.serialize_f64(*t),
            Theta::Inadmissible => s.serialize_str("inadmissible"),
        }
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(Theta::Finite(t)),
            Raw::Text(s) if s == "inadmissible" => Ok(Theta::Inadmissible),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("unexpected theta '{s}'"))),
        }
    }
}

/// `W = ½(L̄·E_B + E_B·L̄)`.
pub fn w_from(p: &QuadraticProblem, e_b: &SymMatrix) -> SymMatrix {
    p.l_bar().sym_product(e_b)
}

pub fn compute_w(p: &QuadraticProblem, kind: SketchKind) -> Result<SymMatrix> {
    let rep = sketch::expectation(kind, p)?;
    Ok(w_from(p, &rep.e_b))
}

/// Largest generalized eigenvalue of the pencil `(E_BLB, W)` on `range(W)`.
pub fn theta_from(e_blb: &SymMatrix, w: &SymMatrix) -> Result<Theta> {
    if !psd_check(w, PSD_TOL)? {
        return Ok(Theta::Inadmissible);
    }
    let spec = eig_sym(w)?;
    let cut = RANK_TOL * spec.lambda_max().max(0.0);
    let d = w.dim();
    let range: Vec<usize> = (0..d).filter(|&j| spec.eigenvalues[j] > cut).collect();
    if range.is_empty() {
        return Ok(Theta::Inadmissible);
    }
    let a = e_blb.as_matrix();
    let scale = e_blb.max_abs();
    // E_BLB must vanish on null(W), otherwise no finite θ exists.
    for j in (0..d).filter(|j| !range.contains(j)) {
        let v = spec.eigenvectors.column(j);
        if (a * v).amax() > RANK_TOL * scale.max(f64::MIN_POSITIVE) {
            return Ok(Theta::Inadmissible);
        }
    }
    let r = range.len();
    let mut basis = DMatrix::zeros(d, r);
    for (c, &j) in range.iter().enumerate() {
        let s = 1.0 / spec.eigenvalues[j].sqrt();
        basis.set_column(c, &(spec.eigenvectors.column(j) * s));
    }
    let reduced = SymMatrix::new(basis.transpose() * a * &basis)?;
    let theta = eig_sym(&reduced)?.lambda_max();
    if theta > 0.0 {
        Ok(Theta::Finite(theta))
    } else {
        Ok(Theta::Inadmissible)
    }
}

pub fn compute_theta(p: &QuadraticProblem, kind: SketchKind) -> Result<Theta> {
    let rep = sketch::expectation(kind, p)?;
    theta_from(&rep.e_blb, &w_from(p, &rep.e_b))
}

/// `ρ = 1 − γ·λ_min(L̄^{-1/2}·W·L̄^{-1/2})`, clamped into `[0, 1]` against
/// round-off.
pub fn contraction_rho(p: &QuadraticProblem, w: &SymMatrix, gamma: f64) -> Result<f64> {
    let half = p.l_bar_spectrum().inv_sqrt();
    let lam = eig_sym(&half.sandwich(w))?.lambda_min();
    Ok((1.0 - gamma * lam).clamp(0.0, 1.0))
}

fn check_step(gamma: f64, theta: f64) -> Result<()> {
    let limit = 1.0 / theta;
    if !(gamma > 0.0) || gamma > limit * (1.0 + STEP_TOL) {
        return Err(Error::StepTooLarge { gamma, limit });
    }
    Ok(())
}

/// `(2/γ, ρ)`: the coefficient of `f(x⁰) − E f(x^K)` over `K` in the averaged
/// gradient bound, and the per-step contraction of `E‖x − x*‖²_{L̄}`.
pub fn interpolation_rates(p: &QuadraticProblem, kind: SketchKind, gamma: f64) -> Result<(f64, f64)> {
    if !p.is_interpolation() {
        return Err(Error::NotInterpolation);
    }
    let rep = sketch::expectation(kind, p)?;
    let w = w_from(p, &rep.e_b);
    let theta = theta_from(&rep.e_blb, &w)?.value().ok_or(Error::ThetaInadmissible)?;
    check_step(gamma, theta)?;
    Ok((2.0 / gamma, contraction_rho(p, &w, gamma)?))
}

/// `h = L̄⁻¹b̄ − n^{-3/2} Σ Dᵢ^{-1/2}bᵢ`.
pub fn bias_h(p: &QuadraticProblem) -> Result<Vector> {
    for i in 0..p.n() {
        if let Some((index, value)) = p.d_i(i).first_nonpositive() {
            return Err(Error::NonPositiveDiagonal { index, value });
        }
    }
    Ok(p.solution()? - sketch::scaled_db(p))
}

fn fixed_point_from(rep: &ExpectationReport) -> Result<Vector> {
    let spec = eig_sym(&rep.e_b)?;
    if spec.lambda_min().abs() <= spec.rank_cutoff() || spec.lambda_min() <= 0.0 {
        return Err(Error::SingularMatrix(spec.lambda_min()));
    }
    spec.pinv_apply(&rep.e_cb)
}

/// Fixed point `x^∞ = E[B]⁻¹·E[C̄b]` of the exact mean recursion
/// `E x^{k+1} = (I − γE[B])·E x^k + γE[C̄b]`.
pub fn fixed_point(p: &QuadraticProblem, kind: SketchKind) -> Result<Vector> {
    fixed_point_from(&sketch::expectation(kind, p)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoryCertificate {
    pub sketch: String,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "W_psd")]
    pub w_psd: bool,
    pub theta: Theta,
    pub gamma_max: Option<f64>,
    /// Step size at which `rho` is evaluated (`1/θ` unless requested).
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
    pub bias_h: Option<Vec<f64>>,
    #[serde(rename = "h_norm_L")]
    pub h_norm_l: Option<f64>,
    pub x_inf: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
    pub expectation: String,
    pub notes: Vec<String>,
}

impl TheoryCertificate {
    pub fn w_matrix(&self) -> SymMatrix {
        let d = self.w.len();
        let flat: Vec<f64> = self.w.iter().flatten().copied().collect();
        SymMatrix::from_row_major(d, &flat).expect("square by construction")
    }
}

/// Builds the full certificate. `gamma` defaults to `1/θ` when `θ` is finite.
pub fn certificate(p: &QuadraticProblem, kind: SketchKind, gamma: Option<f64>) -> Result<TheoryCertificate> {
    kind.validate_for(p)?;
    let rep = sketch::expectation(kind, p)?;
    let w = w_from(p, &rep.e_b);
    let w_psd = psd_check(&w, PSD_TOL)?;
    let theta = theta_from(&rep.e_blb, &w)?;
    let mut notes = Vec::new();

    let gamma_max = theta.value().map(|t| 1.0 / t);
    let gamma = gamma.or(gamma_max);
    let rho = match (gamma, theta) {
        (Some(g), Theta::Finite(t)) => {
            if g > (1.0 / t) * (1.0 + STEP_TOL) {
                notes.push(format!("gamma = {g} exceeds 1/theta; rho is not a certified rate"));
            }
            Some(contraction_rho(p, &w, g)?)
        }
        _ => {
            notes.push("theta inadmissible: no certified contraction".into());
            None
        }
    };

    let (x_inf, bias) = match fixed_point_from(&rep) {
        Ok(x_inf) => match p.solution() {
            Ok(xs) => {
                let h = &xs - &x_inf;
                (Some(x_inf), Some(h))
            }
            Err(e) => {
                notes.push(format!("no solution: {e}"));
                (Some(x_inf), None)
            }
        },
        Err(e) => {
            notes.push(format!("no fixed point: {e}"));
            (None, None)
        }
    };
    let h_norm_l = match &bias {
        Some(h) => Some(weighted_sqnorm(h, p.l_bar())?.max(0.0).sqrt()),
        None => None,
    };
    let sigma2 = match heterogeneity_sigma2(p, kind) {
        Ok(s) => Some(s),
        Err(e) => {
            notes.push(format!("sigma2 unavailable: {e}"));
            None
        }
    };
    Ok(TheoryCertificate {
        sketch: kind.to_string(),
        w: (0..w.dim()).map(|i| (0..w.dim()).map(|j| w.get(i, j)).collect()).collect(),
        w_psd,
        theta,
        gamma_max,
        gamma,
        rho,
        bias_h: bias.map(|h| h.as_slice().to_vec()),
        h_norm_l,
        x_inf: x_inf.map(|x| x.as_slice().to_vec()),
        sigma2,
        expectation: format!("{:?}", rep.method),
        notes,
    })
}

/// Two clients sharing `L = [[a, c], [c, b]]` with zero linear terms.
pub fn remark_instance(a: f64, b: f64, c: f64) -> Result<QuadraticProblem> {
    let l = SymMatrix::from_row_major(2, &[a, c, c, b])?;
    QuadraticProblem::new(vec![l.clone(), l], vec![Vector::zeros(2); 2], None)
}

/// Homogeneous preconditioned instance with `n = d`, `L̃ = (1−α)I + α·11ᵀ`,
/// `α = 1/(√n + 1)` and `c̃ = 1`. Here `L̃·1 = √n·1`, so `x* = x^∞ = 1/√n`.
pub fn equicorrelation_instance(n: usize) -> Result<QuadraticProblem> {
    let alpha = 1.0 / ((n as f64).sqrt() + 1.0);
    let l = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { alpha });
    let l = SymMatrix::new(l)?;
    QuadraticProblem::new(vec![l; n], vec![Vector::from_element(n, 1.0); n], None)
}
