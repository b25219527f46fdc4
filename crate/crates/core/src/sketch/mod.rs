//! Sketch operators `Cᵢ`.
//!
//! Every sketch in this crate is a diagonal selection `Cᵢ = Σ wⱼ eⱼeⱼᵀ`, so a
//! sample stores, per client, the kept coordinates and their weights. Shapes:
//!
//! | kind                | shape       | per-client support        | weight            |
//! |---------------------|-------------|---------------------------|-------------------|
//! | `Identity`          | any         | all of `[d]`              | 1                 |
//! | `PermQ`             | `d = q·n`   | `q` coords of a partition | `n`               |
//! | `ScaledPermHomog`   | `d = q·n`   | `q` coords of a partition | `√n`              |
//! | `ScaledPermHet`     | `d = q·n`   | `q` coords of a partition | `√(n/[Lᵢ]ⱼⱼ)`     |
//! | `PermMultiset`      | `n = q·d`   | one coord, each used `q`× | `√d`              |
//! | `RandQ(q)`          | `q ≤ d`     | independent `q`-subset    | `d/q`             |
//! | `Bernoulli(p)`      | `0 < p ≤ 1` | each coord w.p. `p`       | `1/p`             |

mod enumerate;
mod expectation;

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, SymMatrix, Vector};
use crate::problem::QuadraticProblem;

pub(crate) use expectation::scaled_db;
pub use enumerate::{for_each_outcome, outcome_count, ENUMERATION_BUDGET};
pub use expectation::{
    enumerate_expectation, enumerate_expectation_with_budget, expectation, expected_b,
    monte_carlo_expectation, ExpectationMethod,
    ExpectationReport,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SketchKind {
    Identity,
    PermQ,
    PermMultiset,
    ScaledPermHomog,
    ScaledPermHet,
    RandQ(usize),
    Bernoulli(f64),
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SketchKind::Identity => write!(f, "identity"),
            SketchKind::PermQ => write!(f, "perm_q"),
            SketchKind::PermMultiset => write!(f, "perm_multiset"),
            SketchKind::ScaledPermHomog => write!(f, "scaled_perm_homog"),
            SketchKind::ScaledPermHet => write!(f, "scaled_perm_het"),
            SketchKind::RandQ(q) => write!(f, "rand_q(q={q})"),
            SketchKind::Bernoulli(p) => write!(f, "bernoulli(p={p})"),
        }
    }
}

impl SketchKind {
    /// Checks the shape constraints for `n` clients in dimension `d`.
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::IncompatibleShape(msg));
        match *self {
            SketchKind::Identity => Ok(()),
            SketchKind::PermQ | SketchKind::ScaledPermHomog | SketchKind::ScaledPermHet => {
                if !d.is_multiple_of(n) {
                    return bad(format!("{self} needs d = q·n, got n = {n}, d = {d}"));
                }
                Ok(())
            }
            SketchKind::PermMultiset => {
                if !n.is_multiple_of(d) {
                    return bad(format!("{self} needs n = q·d, got n = {n}, d = {d}"));
                }
                Ok(())
            }
            SketchKind::RandQ(q) => {
                if q == 0 || q > d {
                    return bad(format!("rand_q needs 1 <= q <= d, got q = {q}, d = {d}"));
                }
                Ok(())
            }
            SketchKind::Bernoulli(p) => {
                if !(p > 0.0 && p <= 1.0) {
                    return bad(format!("bernoulli needs 0 < p <= 1, got {p}"));
                }
                Ok(())
            }
        }
    }

    /// Validates shape and, for `ScaledPermHet`, strictly positive diagonals.
    pub fn validate_for(&self, p: &QuadraticProblem) -> Result<()> {
        self.validate(p.n(), p.d())?;
        if *self == SketchKind::ScaledPermHet {
            for i in 0..p.n() {
                if let Some((index, value)) = p.d_i(i).first_nonpositive() {
                    return Err(Error::NonPositiveDiagonal { index, value });
                }
            }
        }
        Ok(())
    }

    /// Block size `q` of the partition-based kinds.
    pub fn block_size(&self, n: usize, d: usize) -> usize {
        match self {
            SketchKind::PermQ | SketchKind::ScaledPermHomog | SketchKind::ScaledPermHet => d / n,
            SketchKind::PermMultiset => n / d,
            SketchKind::RandQ(q) => *q,
            _ => 1,
        }
    }

    fn is_partition(&self) -> bool {
        matches!(self, SketchKind::PermQ | SketchKind::ScaledPermHomog | SketchKind::ScaledPermHet)
    }
}

/// Serialized form: `{"kind": "perm_q", "q": 2}`; `q` is required for
/// `rand_q`, optional for `perm_q` (checked against `d/n`), and `p` is
/// required for `bernoulli`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl SketchSpec {
    pub fn named(kind: &str) -> Self {
        SketchSpec { kind: kind.to_string(), q: None, p: None }
    }

    pub fn to_kind(&self) -> Result<SketchKind> {
        let unexpected = |field: &str| {
            Err(Error::ConfigInvalid(format!("sketch '{}' does not take '{field}'", self.kind)))
        };
        let kind = match self.kind.as_str() {
            "identity" => SketchKind::Identity,
            "perm_q" => SketchKind::PermQ,
            "perm_multiset" => SketchKind::PermMultiset,
            "scaled_perm_homog" => SketchKind::ScaledPermHomog,
            "scaled_perm_het" => SketchKind::ScaledPermHet,
            "rand_q" => {
                let q = self
                    .q
                    .ok_or_else(|| Error::ConfigInvalid("rand_q requires 'q'".into()))?;
                SketchKind::RandQ(q)
            }
            "bernoulli" => {
                let p = self
                    .p
                    .ok_or_else(|| Error::ConfigInvalid("bernoulli requires 'p'".into()))?;
                SketchKind::Bernoulli(p)
            }
            other => return Err(Error::ConfigInvalid(format!("unknown sketch kind '{other}'"))),
        };
        if self.p.is_some() && !matches!(kind, SketchKind::Bernoulli(_)) {
            return unexpected("p");
        }
        if self.q.is_some() && !matches!(kind, SketchKind::RandQ(_) | SketchKind::PermQ) {
            return unexpected("q");
        }
        Ok(kind)
    }

    /// Resolves against a problem shape, checking an explicit `perm_q` block size.
    pub fn resolve(&self, n: usize, d: usize) -> Result<SketchKind> {
        let kind = self.to_kind()?;
        kind.validate(n, d)?;
        if let (SketchKind::PermQ, Some(q)) = (kind, self.q) {
            if q * n != d {
                return Err(Error::IncompatibleShape(format!("perm_q with q = {q} needs d = {}", q * n)));
            }
        }
        Ok(kind)
    }

    pub fn from_kind(kind: SketchKind) -> Self {
        match kind {
            SketchKind::RandQ(q) => SketchSpec { kind: "rand_q".into(), q: Some(q), p: None },
            SketchKind::Bernoulli(p) => SketchSpec { kind: "bernoulli".into(), q: None, p: Some(p) },
            other => SketchSpec::named(&other.to_string()),
        }
    }
}

/// One joint realization `{C₁, …, Cₙ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchSample {
    pub kind: SketchKind,
    /// Per client, kept coordinates (ascending) with their weights.
    pub per_client: Vec<Vec<(usize, f64)>>,
    /// The permutation for partition and multiset kinds.
    pub permutation: Option<Vec<usize>>,
    pub d: usize,
}

impl SketchSample {
    pub fn n(&self) -> usize {
        self.per_client.len()
    }

    /// `Cᵢ·x`.
    pub fn apply(&self, i: usize, x: &Vector) -> Result<Vector> {
        check_dim(self.d, x.len())?;
        let mut out = Vector::zeros(self.d);
        for &(j, w) in &self.per_client[i] {
            out[j] = w * x[j];
        }
        Ok(out)
    }

    /// Diagonal of `(1/n) Σ Cᵢ`.
    pub fn mean_sketch(&self) -> Vector {
        let mut out = Vector::zeros(self.d);
        for client in &self.per_client {
            for &(j, w) in client {
                out[j] += w;
            }
        }
        out / self.n() as f64
    }

    /// Dense `B = (1/n) Σ CᵢLᵢCᵢ`.
    pub fn b_matrix(&self, p: &QuadraticProblem) -> SymMatrix {
        let d = self.d;
        let mut out = DMatrix::zeros(d, d);
        for (i, client) in self.per_client.iter().enumerate() {
            let l = p.l(i);
            for &(j, wj) in client {
                for &(k, wk) in client {
                    out[(j, k)] += wj * wk * l.get(j, k);
                }
            }
        }
        SymMatrix::new(out / self.n() as f64).expect("square")
    }

    /// `C̄b = (1/n) Σ Cᵢbᵢ`.
    pub fn cb(&self, p: &QuadraticProblem) -> Vector {
        let mut out = Vector::zeros(self.d);
        for (i, client) in self.per_client.iter().enumerate() {
            let b = p.b(i);
            for &(j, w) in client {
                out[j] += w * b[j];
            }
        }
        out / self.n() as f64
    }
}

// ---------------------------------------------------------------------------
// Construction from an outcome
// ---------------------------------------------------------------------------

/// Builds the sample for a partition permutation `perm` of `[d]`
/// (client `i` takes `perm[q·i .. q·(i+1)]`).
pub(crate) fn from_partition(kind: SketchKind, p: &QuadraticProblem, perm: Vec<usize>) -> SketchSample {
    let (n, d) = (p.n(), p.d());
    let q = d / n;
    let nf = n as f64;
    let per_client = (0..n)
        .map(|i| {
            let mut coords: Vec<(usize, f64)> = perm[q * i..q * (i + 1)]
                .iter()
                .map(|&j| {
                    let w = match kind {
                        SketchKind::PermQ => nf,
                        SketchKind::ScaledPermHomog => nf.sqrt(),
                        SketchKind::ScaledPermHet => (nf / p.d_i(i).0[j]).sqrt(),
                        _ => unreachable!("not a partition kind"),
                    };
                    (j, w)
                })
                .collect();
            coords.sort_by_key(|c| c.0);
            coords
        })
        .collect();
    SketchSample { kind, per_client, permutation: Some(perm), d }
}

/// Client `i` takes coordinate `arrangement[i]` of the multiset.
pub(crate) fn from_multiset(p: &QuadraticProblem, arrangement: Vec<usize>) -> SketchSample {
    let w = (p.d() as f64).sqrt();
    let per_client = arrangement.iter().map(|&j| vec![(j, w)]).collect();
    SketchSample { kind: SketchKind::PermMultiset, per_client, permutation: Some(arrangement), d: p.d() }
}

pub(crate) fn from_subsets(kind: SketchKind, d: usize, subsets: Vec<Vec<usize>>) -> SketchSample {
    let w = match kind {
        SketchKind::RandQ(q) => d as f64 / q as f64,
        SketchKind::Bernoulli(prob) => 1.0 / prob,
        _ => unreachable!("not a subset kind"),
    };
    let per_client = subsets
        .into_iter()
        .map(|s| s.into_iter().map(|j| (j, w)).collect())
        .collect();
    SketchSample { kind, per_client, permutation: None, d }
}

pub(crate) fn identity_sample(n: usize, d: usize) -> SketchSample {
    let full: Vec<(usize, f64)> = (0..d).map(|j| (j, 1.0)).collect();
    SketchSample { kind: SketchKind::Identity, per_client: vec![full; n], permutation: None, d }
}

/// Multiset `{0,…,0, 1,…,1, …}` with each coordinate repeated `n/d` times, sorted.
pub(crate) fn sorted_multiset(n: usize, d: usize) -> Vec<usize> {
    let q = n / d;
    (0..d).flat_map(|j| std::iter::repeat_n(j, q)).collect()
}

/// Draws one joint realization. Permutations use Fisher–Yates
/// (`SliceRandom::shuffle`); `RandQ` subsets are drawn independently per client.
pub fn sample<R: Rng + ?Sized>(kind: SketchKind, p: &QuadraticProblem, rng: &mut R) -> Result<SketchSample> {
    kind.validate_for(p)?;
    let (n, d) = (p.n(), p.d());
    Ok(match kind {
        SketchKind::Identity => identity_sample(n, d),
        k if k.is_partition() => {
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(rng);
            from_partition(k, p, perm)
        }
        SketchKind::PermMultiset => {
            let mut arr = sorted_multiset(n, d);
            arr.shuffle(rng);
            from_multiset(p, arr)
        }
        SketchKind::RandQ(q) => {
            let subsets = (0..n)
                .map(|_| {
                    let mut s = index::sample(rng, d, q).into_vec();
                    s.sort_unstable();
                    s
                })
                .collect();
            from_subsets(kind, d, subsets)
        }
        SketchKind::Bernoulli(prob) => {
            let subsets = (0..n)
                .map(|_| (0..d).filter(|_| rng.random_bool(prob)).collect())
                .collect();
            from_subsets(kind, d, subsets)
        }
        _ => unreachable!(),
    })
}
