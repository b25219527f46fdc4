//! Exact first and second moments of the iterates.
//!
//! With `x^{k+1} = (I − γB)x^k + γC̄b` and `(B, C̄b)` drawn afresh each round,
//! the mean follows `m' = (I − γE[B])m + γE[C̄b]` and the second moment about
//! `x*` follows from enumerating the joint outcomes once.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::{check_dim, SymMatrix, Vector};
use crate::problem::QuadraticProblem;
use crate::sketch::{self, for_each_outcome, SketchKind, ENUMERATION_BUDGET};

/// `E x^k` for `k` rounds of the sketched method from `x0`.
///
/// When `E[B] = I` this is `(1−γ)^k x⁰ + (1 − (1−γ)^k)·x^∞`; otherwise the
/// affine recursion is iterated directly.
pub fn expected_iterate(p: &QuadraticProblem, kind: SketchKind, x0: &Vector, gamma: f64, k: usize) -> Result<Vector> {
    check_dim(p.d(), x0.len())?;
    let rep = sketch::expectation(kind, p)?;
    if rep.e_b == SymMatrix::identity(p.d()) {
        let decay = (1.0 - gamma).powi(k as i32);
        return Ok(x0 * decay + &rep.e_cb * (1.0 - decay));
    }
    let mut m = x0.clone();
    for _ in 0..k {
        m = &m - (rep.e_b.mul_vec(&m)? - &rep.e_cb) * gamma;
    }
    Ok(m)
}

/// Mean and second moment of `e = x − x*`.
#[derive(Clone, Debug)]
pub struct Moments {
    pub mean_err: Vector,
    pub second_err: DMatrix<f64>,
}

impl Moments {
    pub fn point(x: &Vector, x_star: &Vector) -> Self {
        let e = x - x_star;
        let second_err = &e * e.transpose();
        Moments { mean_err: e, second_err }
    }

    /// `E‖x − x*‖²_{L̄} = tr(L̄·E[eeᵀ])`, which also equals
    /// `E‖∇f(x)‖²_{L̄⁻¹}` and `2(E f(x) − f*)`.
    pub fn dist_sq_l(&self, p: &QuadraticProblem) -> f64 {
        p.l_bar().as_matrix().component_mul(&self.second_err).sum()
    }
}

/// Enumerated outcomes `(I − γB, γ(C̄b − B·x*), probability)`.
pub struct MomentPropagator {
    outcomes: Vec<(DMatrix<f64>, Vector, f64)>,
    x_star: Vector,
}

impl MomentPropagator {
    pub fn new(p: &QuadraticProblem, kind: SketchKind, gamma: f64) -> Result<Self> {
        let x_star = p.solution()?;
        let d = p.d();
        let mut outcomes = Vec::new();
        let mut err = None;
        for_each_outcome(kind, p, ENUMERATION_BUDGET, |s, w| {
            let b = s.b_matrix(p);
            let shift = match b.mul_vec(&x_star) {
                Ok(bx) => (s.cb(p) - bx) * gamma,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            let a = DMatrix::identity(d, d) - b.into_inner() * gamma;
            outcomes.push((a, shift, w));
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(MomentPropagator { outcomes, x_star })
    }

    pub fn x_star(&self) -> &Vector {
        &self.x_star
    }

    pub fn step(&self, m: &Moments) -> Moments {
        let d = m.mean_err.len();
        let mut mean = Vector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for (a, c, w) in &self.outcomes {
            let am = a * &m.mean_err;
            let cross = &am * c.transpose();
            second += (a * &m.second_err * a.transpose() + &cross + cross.transpose() + c * c.transpose()) * *w;
            mean += (am + c) * *w;
        }
        Moments { mean_err: mean, second_err: (&second + second.transpose()) * 0.5 }
    }

    /// Moments for `k = 0..=k_max` from the deterministic start `x0`.
    pub fn trajectory(&self, x0: &Vector, k_max: usize) -> Vec<Moments> {
        let mut out = Vec::with_capacity(k_max + 1);
        out.push(Moments::point(x0, &self.x_star));
        for k in 0..k_max {
            let next = self.step(&out[k]);
            out.push(next);
        }
        out
    }
}
