//! Exact and sampled expectations of `B = (1/n) Σ CᵢLᵢCᵢ`, `B·L̄·B` and
//! `C̄b = (1/n) Σ Cᵢbᵢ`.

use nalgebra::DMatrix;
use rand::Rng;

use super::{enumerate::for_each_outcome, sample, SketchKind, ENUMERATION_BUDGET};
use crate::error::{Error, Result};
use crate::linalg::{SymMatrix, Vector};
use crate::problem::QuadraticProblem;

#[derive(Clone, Debug, PartialEq)]
pub enum ExpectationMethod {
    ClosedForm,
    Enumeration { outcomes: usize },
    MonteCarlo { samples: usize },
}

#[derive(Clone, Debug)]
pub struct ExpectationReport {
    pub e_b: SymMatrix,
    pub e_blb: SymMatrix,
    pub e_cb: Vector,
    pub method: ExpectationMethod,
    /// Elementwise standard errors of `E_B` (Monte Carlo only).
    pub b_std_err: Option<DMatrix<f64>>,
    /// Componentwise standard errors of `E_Cb` (Monte Carlo only).
    pub cb_std_err: Option<Vector>,
}

impl ExpectationReport {
    fn exact(e_b: SymMatrix, e_blb: SymMatrix, e_cb: Vector, method: ExpectationMethod) -> Self {
        ExpectationReport { e_b, e_blb, e_cb, method, b_std_err: None, cb_std_err: None }
    }
}

/// Expectations of the diagonal random matrix `B` with `B_jj = scale · [L_{σ(j)}]_jj`,
/// where `σ` is a uniformly random bijection clients → coordinates (`n = d`).
fn random_diagonal_moments(p: &QuadraticProblem, scale: f64) -> (SymMatrix, SymMatrix) {
    let (n, d) = (p.n(), p.d());
    let nf = n as f64;
    let diag = |i: usize, j: usize| p.d_i(i).0[j];
    let col_sum: Vec<f64> = (0..d).map(|j| (0..n).map(|i| diag(i, j)).sum()).collect();
    let e_b = SymMatrix::from_diagonal(&col_sum.iter().map(|s| scale * s / nf).collect::<Vec<_>>());
    let mut second = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in 0..d {
            second[(j, k)] = if j == k {
                (0..n).map(|i| diag(i, j).powi(2)).sum::<f64>() / nf
            } else {
                let same: f64 = (0..n).map(|i| diag(i, j) * diag(i, k)).sum();
                (col_sum[j] * col_sum[k] - same) / (nf * (nf - 1.0))
            };
        }
    }
    let l_bar = p.l_bar().as_matrix();
    let e_blb = SymMatrix::new(second.component_mul(l_bar) * scale * scale).expect("square");
    (e_b, e_blb)
}

/// Closed-form expectations. Available for `Identity`; `PermQ`,
/// `ScaledPermHomog` and `ScaledPermHet` with `n = d`; and `PermMultiset` on
/// homogeneous problems.
pub fn expected_b(kind: SketchKind, p: &QuadraticProblem) -> Result<ExpectationReport> {
    kind.validate_for(p)?;
    let (n, d) = (p.n(), p.d());
    let nf = n as f64;
    let l_bar = p.l_bar();
    let no_closed_form = || Err(Error::NoClosedForm(kind.to_string()));
    let closed = ExpectationMethod::ClosedForm;
    match kind {
        SketchKind::Identity => Ok(ExpectationReport::exact(
            l_bar.clone(),
            l_bar.sandwich(l_bar),
            p.b_bar().clone(),
            closed,
        )),
        SketchKind::PermQ if n == d => {
            let (e_b, e_blb) = random_diagonal_moments(p, nf);
            Ok(ExpectationReport::exact(e_b, e_blb, p.b_bar().clone(), closed))
        }
        SketchKind::ScaledPermHomog if n == d => {
            let (e_b, e_blb) = random_diagonal_moments(p, 1.0);
            Ok(ExpectationReport::exact(e_b, e_blb, p.b_bar() / nf.sqrt(), closed))
        }
        SketchKind::ScaledPermHet if n == d => {
            Ok(ExpectationReport::exact(SymMatrix::identity(d), l_bar.clone(), scaled_db(p), closed))
        }
        SketchKind::PermMultiset if p.is_homogeneous() => {
            let diag = p.d_i(0).to_sym();
            let e_blb = diag.sandwich(p.l(0));
            Ok(ExpectationReport::exact(diag, e_blb, p.b(0) / (d as f64).sqrt(), closed))
        }
        _ => no_closed_form(),
    }
}

/// `(1/√n)·(1/n) Σ Dᵢ^{-1/2} bᵢ`.
pub(crate) fn scaled_db(p: &QuadraticProblem) -> Vector {
    let n = p.n() as f64;
    let mut acc = Vector::zeros(p.d());
    for i in 0..p.n() {
        let s = p.d_i(i).0.map(|v| 1.0 / v.sqrt());
        acc += p.b(i).component_mul(&s);
    }
    acc / (n * n.sqrt())
}

/// Probability-weighted average over the full joint outcome space.
pub fn enumerate_expectation(kind: SketchKind, p: &QuadraticProblem) -> Result<ExpectationReport> {
    enumerate_expectation_with_budget(kind, p, ENUMERATION_BUDGET)
}

pub fn enumerate_expectation_with_budget(
    kind: SketchKind,
    p: &QuadraticProblem,
    budget: usize,
) -> Result<ExpectationReport> {
    let d = p.d();
    let l_bar = p.l_bar().as_matrix();
    let mut e_b = DMatrix::zeros(d, d);
    let mut e_blb = DMatrix::zeros(d, d);
    let mut e_cb = Vector::zeros(d);
    let outcomes = for_each_outcome(kind, p, budget, |s, w| {
        let b = s.b_matrix(p).into_inner();
        e_blb += (&b * l_bar * &b) * w;
        e_b += b * w;
        e_cb += s.cb(p) * w;
    })?;
    Ok(ExpectationReport::exact(
        SymMatrix::new(e_b)?,
        SymMatrix::new(e_blb)?,
        e_cb,
        ExpectationMethod::Enumeration { outcomes },
    ))
}

/// Sample means over `samples` independent joint draws, with standard errors.
pub fn monte_carlo_expectation<R: Rng + ?Sized>(
    kind: SketchKind,
    p: &QuadraticProblem,
    samples: usize,
    rng: &mut R,
) -> Result<ExpectationReport> {
    if samples == 0 {
        return Err(Error::ConfigInvalid("monte carlo needs at least one sample".into()));
    }
    let d = p.d();
    let l_bar = p.l_bar().as_matrix();
    // Welford accumulators: running means and sums of squared deviations.
    let mut mean_b = DMatrix::zeros(d, d);
    let mut m2_b = DMatrix::zeros(d, d);
    let mut mean_blb = DMatrix::zeros(d, d);
    let mut mean_cb = Vector::zeros(d);
    let mut m2_cb = Vector::zeros(d);
    for t in 1..=samples {
        let s = sample(kind, p, rng)?;
        let b = s.b_matrix(p).into_inner();
        let cb = s.cb(p);
        let tf = t as f64;
        mean_blb += (&b * l_bar * &b - &mean_blb) / tf;
        let delta = &b - &mean_b;
        mean_b += &delta / tf;
        m2_b += delta.component_mul(&(&b - &mean_b));
        let delta = &cb - &mean_cb;
        mean_cb += &delta / tf;
        m2_cb += delta.component_mul(&(&cb - &mean_cb));
    }
    let m = samples as f64;
    let se = |m2: f64| if samples < 2 { 0.0 } else { (m2.max(0.0) / (m - 1.0) / m).sqrt() };
    let b_std_err = m2_b.map(se);
    let cb_std_err = m2_cb.map(se);
    Ok(ExpectationReport {
        e_b: SymMatrix::new(mean_b)?,
        e_blb: SymMatrix::new(mean_blb)?,
        e_cb: mean_cb,
        method: ExpectationMethod::MonteCarlo { samples },
        b_std_err: Some(b_std_err),
        cb_std_err: Some(cb_std_err),
    })
}

/// Closed form when one exists, otherwise exact enumeration.
pub fn expectation(kind: SketchKind, p: &QuadraticProblem) -> Result<ExpectationReport> {
    match expected_b(kind, p) {
        Err(Error::NoClosedForm(_)) => match enumerate_expectation(kind, p) {
            Err(Error::TooLarge { .. }) => Err(Error::NoExpectation(kind.to_string())),
            other => other,
        },
        other => other,
    }
}
