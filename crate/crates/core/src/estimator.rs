//! Gradient estimators for one communication round.
//!
//! * `Ist(C)`: `g = (1/n) Σ Cᵢ(LᵢCᵢx − bᵢ)`, the submodel gradient with one
//!   local step and exact local gradients.
//! * `Dgd`: `g = (1/n) Σ (Lᵢx − bᵢ)`, evaluated through the same per-client
//!   path as `Ist(Identity)` so the two agree bitwise.
//! * `Cgd(C)`: `g = (1/n) Σ Cᵢ(Lᵢx − bᵢ)`, compressed gradient descent.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_dim, weighted_sqnorm, Vector};
use crate::problem::QuadraticProblem;
use crate::sketch::{self, for_each_outcome, SketchKind, SketchSample, ENUMERATION_BUDGET};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatorKind {
    Ist(SketchKind),
    Dgd,
    Cgd(SketchKind),
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Ist(k) => write!(f, "ist[{k}]"),
            EstimatorKind::Dgd => write!(f, "dgd"),
            EstimatorKind::Cgd(k) => write!(f, "cgd[{k}]"),
        }
    }
}

impl EstimatorKind {
    pub fn sketch(&self) -> SketchKind {
        match self {
            EstimatorKind::Ist(k) | EstimatorKind::Cgd(k) => *k,
            EstimatorKind::Dgd => SketchKind::Identity,
        }
    }

    pub fn validate_for(&self, p: &QuadraticProblem) -> Result<()> {
        self.sketch().validate_for(p)
    }
}

/// IST estimator for a fixed joint sample. Each client only touches its own
/// coordinates: `(CᵢLᵢCᵢx)ⱼ = wⱼ Σ_{l ∈ Sᵢ} [Lᵢ]ⱼₗ wₗ xₗ` for `j ∈ Sᵢ`.
pub fn ist_gradient(sample: &SketchSample, p: &QuadraticProblem, x: &Vector) -> Result<Vector> {
    check_dim(p.d(), x.len())?;
    let mut g = Vector::zeros(p.d());
    let mut sub = Vec::new();
    for (i, client) in sample.per_client.iter().enumerate() {
        let l = p.l(i).as_matrix();
        let b = p.b(i);
        sub.clear();
        sub.extend(client.iter().map(|&(j, w)| w * x[j]));
        for &(j, wj) in client {
            let mut v = 0.0;
            for (&(k, _), &u) in client.iter().zip(&sub) {
                v += l[(j, k)] * u;
            }
            g[j] += wj * (v - b[j]);
        }
    }
    Ok(g / p.n() as f64)
}

/// CGD estimator for a fixed joint sample.
pub fn cgd_gradient(sample: &SketchSample, p: &QuadraticProblem, x: &Vector) -> Result<Vector> {
    check_dim(p.d(), x.len())?;
    let mut g = Vector::zeros(p.d());
    for (i, client) in sample.per_client.iter().enumerate() {
        let l = p.l(i).as_matrix();
        let b = p.b(i);
        for &(j, w) in client {
            let row = l.row(j).transpose().dot(x);
            g[j] += w * (row - b[j]);
        }
    }
    Ok(g / p.n() as f64)
}

/// Evaluates the estimator on an already drawn sample (`Dgd` expects the
/// identity sample).
pub fn evaluate(kind: EstimatorKind, sample: &SketchSample, p: &QuadraticProblem, x: &Vector) -> Result<Vector> {
    match kind {
        EstimatorKind::Dgd | EstimatorKind::Ist(_) => ist_gradient(sample, p, x),
        EstimatorKind::Cgd(_) => cgd_gradient(sample, p, x),
    }
}

/// Draws a fresh joint sample (none for `Dgd`) and evaluates the estimator.
pub fn estimate<R: Rng + ?Sized>(
    kind: EstimatorKind,
    p: &QuadraticProblem,
    x: &Vector,
    rng: &mut R,
) -> Result<(Vector, Option<SketchSample>)> {
    match kind {
        EstimatorKind::Dgd => {
            let s = sketch::sample(SketchKind::Identity, p, rng)?;
            Ok((ist_gradient(&s, p, x)?, None))
        }
        EstimatorKind::Ist(k) => {
            let s = sketch::sample(k, p, rng)?;
            Ok((ist_gradient(&s, p, x)?, Some(s)))
        }
        EstimatorKind::Cgd(k) => {
            let s = sketch::sample(k, p, rng)?;
            Ok((cgd_gradient(&s, p, x)?, Some(s)))
        }
    }
}

/// `E[Cᵢ]ⱼⱼ` for client `i`.
fn mean_weight(kind: SketchKind, p: &QuadraticProblem, i: usize, j: usize) -> f64 {
    let (n, d) = (p.n() as f64, p.d() as f64);
    match kind {
        SketchKind::Identity | SketchKind::PermQ | SketchKind::RandQ(_) | SketchKind::Bernoulli(_) => 1.0,
        SketchKind::ScaledPermHomog => 1.0 / n.sqrt(),
        SketchKind::ScaledPermHet => 1.0 / (n * p.d_i(i).0[j]).sqrt(),
        SketchKind::PermMultiset => 1.0 / d.sqrt(),
    }
}

/// `E[g]` at `x`. IST uses `E[B]·x − E[C̄b]` (closed form, else enumeration).
pub fn expected_estimate(kind: EstimatorKind, p: &QuadraticProblem, x: &Vector) -> Result<Vector> {
    check_dim(p.d(), x.len())?;
    match kind {
        EstimatorKind::Dgd => p.grad(x),
        EstimatorKind::Ist(k) => {
            let rep = sketch::expectation(k, p)?;
            Ok(rep.e_b.mul_vec(x)? - rep.e_cb)
        }
        EstimatorKind::Cgd(k) => {
            k.validate_for(p)?;
            let mut g = Vector::zeros(p.d());
            for i in 0..p.n() {
                let local = p.l(i).mul_vec(x)? - p.b(i);
                for j in 0..p.d() {
                    g[j] += mean_weight(k, p, i, j) * local[j];
                }
            }
            Ok(g / p.n() as f64)
        }
    }
}

/// `E‖C̄b − E[C̄b]‖²_{L̄}` for sketches whose `B` is the same on every
/// realization, where it equals `E‖g − E[g]‖²_{L̄}` at every `x`.
///
/// Closed form for `ScaledPermHet` and `ScaledPermHomog` with `n = d`
/// (the latter needs equal client diagonals); otherwise exact enumeration.
pub fn heterogeneity_sigma2(p: &QuadraticProblem, kind: SketchKind) -> Result<f64> {
    kind.validate_for(p)?;
    let (n, d) = (p.n(), p.d());
    let equal_diagonals = (1..n).all(|i| p.d_i(i) == p.d_i(0));
    let closed = match kind {
        SketchKind::ScaledPermHet if n == d => true,
        SketchKind::ScaledPermHomog if n == d && equal_diagonals => true,
        SketchKind::Identity => return Ok(0.0),
        _ => false,
    };
    if closed {
        return Ok(permutation_cb_variance(p, kind));
    }
    enumerated_sigma2(p, kind)
}

/// With `n = d`, coordinate `j` of `C̄b` is `a[σ(j)][j]` for a uniform
/// bijection `σ`, where `a[i][j] = wᵢⱼ·bᵢⱼ/n`.
fn permutation_cb_variance(p: &QuadraticProblem, kind: SketchKind) -> f64 {
    let n = p.n();
    let nf = n as f64;
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let w = match kind {
                        SketchKind::ScaledPermHet => (nf / p.d_i(i).0[j]).sqrt(),
                        _ => nf.sqrt(),
                    };
                    w * p.b(i)[j] / nf
                })
                .collect()
        })
        .collect();
    let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i][j]).sum()).collect();
    let mean: Vec<f64> = col.iter().map(|s| s / nf).collect();
    let l_bar = p.l_bar();
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            let second = if j == k {
                (0..n).map(|i| a[i][j] * a[i][j]).sum::<f64>() / nf
            } else {
                let same: f64 = (0..n).map(|i| a[i][j] * a[i][k]).sum();
                (col[j] * col[k] - same) / (nf * (nf - 1.0))
            };
            total += l_bar.get(j, k) * (second - mean[j] * mean[k]);
        }
    }
    total.max(0.0)
}

fn enumerated_sigma2(p: &QuadraticProblem, kind: SketchKind) -> Result<f64> {
    let mut first: Option<crate::linalg::SymMatrix> = None;
    let mut varies = false;
    let mut mean = Vector::zeros(p.d());
    let mut outcomes = Vec::new();
    for_each_outcome(kind, p, ENUMERATION_BUDGET, |s, w| {
        let b = s.b_matrix(p);
        match &first {
            None => first = Some(b),
            Some(b0) => {
                let scale = b0.max_abs().max(1.0);
                if (b.as_matrix() - b0.as_matrix()).amax() > 1e-12 * scale {
                    varies = true;
                }
            }
        }
        let cb = s.cb(p);
        mean += &cb * w;
        outcomes.push((cb, w));
    })?;
    if varies {
        return Err(Error::WrongKind(format!(
            "{kind}: B varies across realizations, so the estimator variance depends on x"
        )));
    }
    let mut total = 0.0;
    for (cb, w) in &outcomes {
        total += w * weighted_sqnorm(&(cb - &mean), p.l_bar())?;
    }
    Ok(total)
}

/// Monte Carlo estimate of the same quantity: the unbiased sample variance of
/// `C̄b` in the `L̄` norm, with its standard error.
pub fn heterogeneity_sigma2_mc<R: Rng + ?Sized>(
    p: &QuadraticProblem,
    kind: SketchKind,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::ConfigInvalid("need at least two samples".into()));
    }
    let draws: Vec<Vector> = (0..samples)
        .map(|_| sketch::sample(kind, p, rng).map(|s| s.cb(p)))
        .collect::<Result<_>>()?;
    let m = samples as f64;
    let mean = draws.iter().fold(Vector::zeros(p.d()), |acc, c| acc + c) / m;
    let sq: Vec<f64> = draws
        .iter()
        .map(|c| weighted_sqnorm(&(c - &mean), p.l_bar()))
        .collect::<Result<_>>()?;
    let avg = sq.iter().sum::<f64>() / m;
    let var = sq.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((avg * m / (m - 1.0), (var / m).sqrt()))
}
