//! Distributed quadratic ensembles `f(x) = (1/n) Σ ½xᵀLᵢx − xᵀbᵢ`.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_dim, eig_sym, DiagMatrix, Spectrum, SymMatrix, Vector};
use crate::rng::{self, Purpose};

/// Relative threshold on `λ_min(L̄)/λ_max(L̄)` below which a generated
/// ensemble is rejected.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Loader tolerance on `|Lᵢ[j][k] − Lᵢ[k][j]|`, relative to the largest entry.
pub const FILE_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    n: usize,
    d: usize,
    l_list: Vec<SymMatrix>,
    b_list: Vec<Vector>,
    l_bar: SymMatrix,
    b_bar: Vector,
    d_list: Vec<DiagMatrix>,
    interpolation: bool,
    seed: Option<u64>,
    l_bar_spectrum: OnceLock<Spectrum>,
}

impl QuadraticProblem {
    pub fn new(l_list: Vec<SymMatrix>, b_list: Vec<Vector>, seed: Option<u64>) -> Result<Self> {
        let n = l_list.len();
        if n == 0 {
            return Err(Error::IncompatibleShape("at least one client is required".into()));
        }
        if b_list.len() != n {
            return Err(Error::DimMismatch { expected: n, got: b_list.len() });
        }
        let d = l_list[0].dim();
        for (l, b) in l_list.iter().zip(&b_list) {
            check_dim(d, l.dim())?;
            check_dim(d, b.len())?;
            if !l.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        let inv_n = 1.0 / n as f64;
        let mut sum_l = DMatrix::zeros(d, d);
        let mut sum_b = Vector::zeros(d);
        for (l, b) in l_list.iter().zip(&b_list) {
            sum_l += l.as_matrix();
            sum_b += b;
        }
        let l_bar = SymMatrix::new(sum_l * inv_n)?;
        let b_bar = sum_b * inv_n;
        let d_list = l_list.iter().map(SymMatrix::diag).collect();
        let interpolation = b_list.iter().all(|b| b.iter().all(|&v| v == 0.0));
        Ok(QuadraticProblem {
            n,
            d,
            l_list,
            b_list,
            l_bar,
            b_bar,
            d_list,
            interpolation,
            seed,
            l_bar_spectrum: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self, i: usize) -> &SymMatrix {
        &self.l_list[i]
    }

    pub fn b(&self, i: usize) -> &Vector {
        &self.b_list[i]
    }

    pub fn l_list(&self) -> &[SymMatrix] {
        &self.l_list
    }

    pub fn b_list(&self) -> &[Vector] {
        &self.b_list
    }

    /// Diagonal of `Lᵢ`.
    pub fn d_i(&self, i: usize) -> &DiagMatrix {
        &self.d_list[i]
    }

    pub fn l_bar(&self) -> &SymMatrix {
        &self.l_bar
    }

    pub fn b_bar(&self) -> &Vector {
        &self.b_bar
    }

    pub fn is_interpolation(&self) -> bool {
        self.interpolation
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// All `Lᵢ` and `bᵢ` bitwise equal to client 0's.
    pub fn is_homogeneous(&self) -> bool {
        self.first_heterogeneous_client().is_none()
    }

    fn first_heterogeneous_client(&self) -> Option<usize> {
        (1..self.n).find(|&i| self.l_list[i] != self.l_list[0] || self.b_list[i] != self.b_list[0])
    }

    pub fn l_bar_spectrum(&self) -> &Spectrum {
        self.l_bar_spectrum
            .get_or_init(|| eig_sym(&self.l_bar).expect("entries validated finite"))
    }

    pub fn grad(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.d, x.len())?;
        Ok(self.l_bar.as_matrix() * x - &self.b_bar)
    }

    pub fn f_val(&self, x: &Vector) -> Result<f64> {
        check_dim(self.d, x.len())?;
        Ok(0.5 * linalg::weighted_sqnorm(x, &self.l_bar)? - x.dot(&self.b_bar))
    }

    pub fn f_i_val(&self, i: usize, x: &Vector) -> Result<f64> {
        check_dim(self.d, x.len())?;
        Ok(0.5 * linalg::weighted_sqnorm(x, &self.l_list[i])? - x.dot(&self.b_list[i]))
    }

    /// `x* = L̄⁻¹b̄`.
    pub fn solution(&self) -> Result<Vector> {
        let spec = self.l_bar_spectrum();
        if spec.lambda_min() <= spec.rank_cutoff() {
            return Err(Error::SingularMatrix(spec.lambda_min()));
        }
        spec.pinv_apply(&self.b_bar)
    }

    /// Copy with every `bᵢ = 0`.
    pub fn set_interpolation(&self) -> QuadraticProblem {
        let b_list = vec![Vector::zeros(self.d); self.n];
        QuadraticProblem::new(self.l_list.clone(), b_list, self.seed).expect("shapes unchanged")
    }

    /// Change of variables `x̃ = D^{1/2}x` with `D = Diag(L)` on a homogeneous
    /// problem. The returned problem has `L̃ = D^{-1/2}LD^{-1/2}` with an exact
    /// unit diagonal and `c̃ = D^{-1/2}b` on every client.
    pub fn precondition_homogeneous(&self) -> Result<(QuadraticProblem, ProblemTransformRecord)> {
        if let Some(i) = (1..self.n).find(|&i| self.l_list[i] != self.l_list[0]) {
            return Err(Error::NotHomogeneous(i));
        }
        let diag = self.l_list[0].diag();
        let scale = diag.inv_sqrt()?;
        let mut lt = linalg::precondition(&self.l_list[0], &diag)?.into_inner();
        for j in 0..self.d {
            lt[(j, j)] = 1.0;
        }
        let lt = SymMatrix::new(lt)?;
        let b_list = self.b_list.iter().map(|b| b.component_mul(&scale.0)).collect();
        let problem = QuadraticProblem::new(vec![lt; self.n], b_list, self.seed)?;
        let record = ProblemTransformRecord {
            kind: TransformKind::HomogeneousDiagPrecondition,
            diag,
        };
        Ok((problem, record))
    }

    // -----------------------------------------------------------------------
    // JSON file format
    // -----------------------------------------------------------------------

    pub fn to_file_repr(&self) -> ProblemFile {
        ProblemFile {
            n: self.n,
            d: self.d,
            l: self.l_list.iter().map(SymMatrix::to_row_major).collect(),
            b: self.b_list.iter().map(|b| b.as_slice().to_vec()).collect(),
            seed: self.seed,
        }
    }

    pub fn from_file_repr(file: ProblemFile) -> Result<Self> {
        let ProblemFile { n, d, l, b, seed } = file;
        if n == 0 || d == 0 {
            return Err(Error::InvalidProblemFile("n and d must be positive".into()));
        }
        if l.len() != n || b.len() != n {
            return Err(Error::InvalidProblemFile(format!(
                "expected {n} matrices and vectors, found {} and {}",
                l.len(),
                b.len()
            )));
        }
        let mut l_list = Vec::with_capacity(n);
        for (i, rows) in l.iter().enumerate() {
            if rows.len() != d * d {
                return Err(Error::InvalidProblemFile(format!(
                    "L[{i}] has {} entries, expected {}",
                    rows.len(),
                    d * d
                )));
            }
            let scale = rows.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            for j in 0..d {
                for k in (j + 1)..d {
                    let gap = (rows[j * d + k] - rows[k * d + j]).abs();
                    if !(gap <= FILE_SYMMETRY_TOL * scale) {
                        return Err(Error::InvalidProblemFile(format!(
                            "L[{i}] is not symmetric at ({j}, {k})"
                        )));
                    }
                }
            }
            l_list.push(SymMatrix::from_row_major(d, rows)?);
        }
        let mut b_list = Vec::with_capacity(n);
        for (i, v) in b.into_iter().enumerate() {
            if v.len() != d {
                return Err(Error::InvalidProblemFile(format!("b[{i}] has length {}", v.len())));
            }
            b_list.push(Vector::from_vec(v));
        }
        QuadraticProblem::new(l_list, b_list, seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file_repr())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file_repr(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout: `L` holds one row-major `d·d` array per client.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    None,
    HomogeneousDiagPrecondition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemTransformRecord {
    pub kind: TransformKind,
    pub diag: DiagMatrix,
}

impl ProblemTransformRecord {
    pub fn identity(d: usize) -> Self {
        ProblemTransformRecord { kind: TransformKind::None, diag: DiagMatrix::identity(d) }
    }

    /// Original variable to transformed: `x̃ = D^{1/2}x`.
    pub fn forward(&self, x: &Vector) -> Vector {
        match self.kind {
            TransformKind::None => x.clone(),
            TransformKind::HomogeneousDiagPrecondition => x.component_mul(&self.diag.0.map(f64::sqrt)),
        }
    }

    /// Transformed variable to original: `x = D^{-1/2}x̃`.
    pub fn inverse(&self, xt: &Vector) -> Vector {
        match self.kind {
            TransformKind::None => xt.clone(),
            TransformKind::HomogeneousDiagPrecondition => {
                xt.component_mul(&self.diag.0.map(|v| 1.0 / v.sqrt()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// One client's `(BᵀB, b)` with `B` filled row-major and then `b`, all from
/// the client's own stream.
fn gaussian_block(d: usize, seed: u64, client: usize) -> (SymMatrix, Vector) {
    let mut rng = rng::stream(seed, Purpose::Client, client as u64);
    let mut entries = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        entries.push(rng::standard_normal(&mut rng));
    }
    let b_mat = DMatrix::from_row_slice(d, d, &entries);
    let b = Vector::from_fn(d, |_, _| rng::standard_normal(&mut rng));
    let l = SymMatrix::new(b_mat.tr_mul(&b_mat)).expect("square");
    (l, b)
}

fn check_degenerate(p: &QuadraticProblem) -> Result<()> {
    let spec = p.l_bar_spectrum();
    let (lo, hi) = (spec.lambda_min(), spec.lambda_max());
    if !(lo > DEGENERACY_TOL * hi) {
        return Err(Error::DegenerateEnsemble { lambda_min: lo, lambda_max: hi });
    }
    Ok(())
}

fn check_sizes(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::IncompatibleShape(format!("n = {n}, d = {d} must both be positive")));
    }
    Ok(())
}

/// `Lᵢ = BᵢᵀBᵢ`, `bᵢ` with i.i.d. standard normal entries, independently per client.
pub fn gen_heterogeneous(n: usize, d: usize, seed: u64) -> Result<QuadraticProblem> {
    check_sizes(n, d)?;
    let blocks: Vec<(SymMatrix, Vector)> =
        (0..n).into_par_iter().map(|i| gaussian_block(d, seed, i)).collect();
    let (l_list, b_list) = blocks.into_iter().unzip();
    let p = QuadraticProblem::new(l_list, b_list, Some(seed))?;
    check_degenerate(&p)?;
    Ok(p)
}

/// One `(L, b)` drawn as client 0 would be, replicated to all `n` clients.
pub fn gen_homogeneous(n: usize, d: usize, seed: u64) -> Result<QuadraticProblem> {
    check_sizes(n, d)?;
    let (l, b) = gaussian_block(d, seed, 0);
    let p = QuadraticProblem::new(vec![l; n], vec![b; n], Some(seed))?;
    check_degenerate(&p)?;
    Ok(p)
}
