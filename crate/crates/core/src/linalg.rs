//! Dense symmetric-matrix numerics.
//!
//! Matrices are stored column-major through `nalgebra::DMatrix`. Every
//! [`SymMatrix`] is exactly symmetric: construction stores `(M + Mᵀ)/2`, and
//! the floating-point sum is commutative, so `m[(i, j)] == m[(j, i)]` bitwise.
//!
//! Inverses and square roots go through [`Spectrum`]. Eigenvalues below
//! `RANK_TOL · λ_max` are treated as zero, which turns inversion into a
//! pseudo-inverse on singular PSD inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Relative accuracy promised by [`eig_sym`].
pub const EIG_TOL: f64 = 1e-9;
/// Default tolerance for [`psd_check`].
pub const PSD_TOL: f64 = 1e-9;
/// Relative eigenvalue cut-off for pseudo-inverses.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m`. Fails on non-square or empty input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (r, c) = m.shape();
        if r != c {
            return Err(Error::DimMismatch { expected: r, got: c });
        }
        if r == 0 {
            return Err(Error::IncompatibleShape("matrix dimension must be at least 1".into()));
        }
        let mut out = m;
        for j in 0..r {
            for i in (j + 1)..r {
                let s = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        Ok(SymMatrix(out))
    }

    pub fn from_row_major(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::DimMismatch { expected: d * d, got: entries.len() });
        }
        Self::new(DMatrix::from_row_slice(d, d, entries))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diag(&self) -> DiagMatrix {
        DiagMatrix(self.0.diagonal())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.0 * x)
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `A·B·A` for symmetric `A`, `B`; the result is symmetric up to round-off
    /// and is symmetrized.
    pub fn sandwich(&self, inner: &SymMatrix) -> SymMatrix {
        SymMatrix::new(&self.0 * &inner.0 * &self.0).expect("square product")
    }

    /// `½(A·B + B·A)`.
    pub fn sym_product(&self, other: &SymMatrix) -> SymMatrix {
        let ab = &self.0 * &other.0;
        SymMatrix::new(0.5 * (&ab + ab.transpose())).expect("square product")
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }
}

/// Diagonal matrix stored as its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagMatrix(pub Vector);

impl DiagMatrix {
    pub fn identity(d: usize) -> Self {
        DiagMatrix(Vector::from_element(d, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &Vector {
        &self.0
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(DMatrix::from_diagonal(&self.0))
    }

    /// First index whose entry is not strictly positive.
    pub fn first_nonpositive(&self) -> Option<(usize, f64)> {
        self.0.iter().copied().enumerate().find(|&(_, v)| !(v > 0.0))
    }

    /// `D^{-1/2}` as a diagonal.
    pub fn inv_sqrt(&self) -> Result<DiagMatrix> {
        if let Some((index, value)) = self.first_nonpositive() {
            return Err(Error::NonPositiveDiagonal { index, value });
        }
        Ok(DiagMatrix(self.0.map(|v| 1.0 / v.sqrt())))
    }
}

/// Eigen-decomposition `M = V·Λ·Vᵀ` with eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vector,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Cut-off below which eigenvalues count as zero.
    pub fn rank_cutoff(&self) -> f64 {
        RANK_TOL * self.spectral_radius()
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|l| l)
    }

    /// `V·f(Λ)·Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let s = f(l);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMatrix::new(&scaled * v.transpose()).expect("square reconstruction")
    }

    /// Moore–Penrose pseudo-inverse with the relative rank cut-off.
    pub fn pinv(&self) -> SymMatrix {
        let cut = self.rank_cutoff();
        self.map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 })
    }

    /// Pseudo-inverse square root of the PSD part.
    pub fn inv_sqrt(&self) -> SymMatrix {
        let cut = self.rank_cutoff();
        self.map(|l| if l > cut { 1.0 / l.sqrt() } else { 0.0 })
    }

    pub fn sqrt(&self) -> SymMatrix {
        self.map(|l| l.max(0.0).sqrt())
    }

    /// `M⁺·b` through the eigenbasis.
    pub fn pinv_apply(&self, b: &Vector) -> Result<Vector> {
        check_dim(self.eigenvalues.len(), b.len())?;
        let cut = self.rank_cutoff();
        let mut coeffs = self.eigenvectors.tr_mul(b);
        for (c, &l) in coeffs.iter_mut().zip(self.eigenvalues.iter()) {
            *c = if l.abs() > cut { *c / l } else { 0.0 };
        }
        Ok(&self.eigenvectors * coeffs)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, got })
    }
}

pub fn eig_sym(m: &SymMatrix) -> Result<Spectrum> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let d = m.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = Vector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// `xᵀ·M·x`.
pub fn weighted_sqnorm(x: &Vector, m: &SymMatrix) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    Ok(x.dot(&(m.as_matrix() * x)))
}

/// True iff `λ_min(M) ≥ −tol·max(1, max|λ|)`.
pub fn psd_check(m: &SymMatrix, tol: f64) -> Result<bool> {
    let spec = eig_sym(m)?;
    Ok(spec.lambda_min() >= -tol * spec.spectral_radius().max(1.0))
}

/// `D^{-1/2}·L·D^{-1/2}`.
pub fn precondition(l: &SymMatrix, d: &DiagMatrix) -> Result<SymMatrix> {
    check_dim(l.dim(), d.dim())?;
    let s = d.inv_sqrt()?;
    let n = l.dim();
    let mut out = l.as_matrix().clone();
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] *= s.0[i] * s.0[j];
        }
    }
    SymMatrix::new(out)
}

/// Solves `M·x = b` through the pseudo-inverse, refusing matrices whose
/// smallest eigenvalue falls below the rank cut-off.
pub fn solve_spd(m: &SymMatrix, b: &Vector) -> Result<Vector> {
    let spec = eig_sym(m)?;
    if spec.lambda_min() <= spec.rank_cutoff() {
        return Err(Error::SingularMatrix(spec.lambda_min()));
    }
    spec.pinv_apply(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sym(d: usize, rows: &[f64]) -> SymMatrix {
        SymMatrix::from_row_major(d, rows).unwrap()
    }

    #[test]
    fn eig_of_diagonal_and_identity() {
        let s = eig_sym(&SymMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[1.0, 3.0]);
        let s = eig_sym(&SymMatrix::identity(4)).unwrap();
        for &l in s.eigenvalues.iter() {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn eig_of_two_by_two() {
        // (2-λ)² - 1 = 0  ->  λ ∈ {1, 3}
        let s = eig_sym(&sym(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_rejects_nan() {
        let m = SymMatrix(DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]));
        assert!(matches!(eig_sym(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn construction_symmetrizes() {
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0])).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let x = Vector::from_vec(vec![1.0, 0.0]);
        assert_eq!(weighted_sqnorm(&x, &SymMatrix::identity(2)).unwrap(), 1.0);
        // (1,1)·[[2,1],[1,2]]·(1,1) = 2+1+1+2
        let x = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(weighted_sqnorm(&x, &sym(2, &[2.0, 1.0, 1.0, 2.0])).unwrap(), 6.0);
        assert_eq!(weighted_sqnorm(&Vector::zeros(2), &SymMatrix::identity(2)).unwrap(), 0.0);
        assert!(matches!(
            weighted_sqnorm(&Vector::zeros(3), &SymMatrix::identity(2)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn psd_examples() {
        assert!(psd_check(&SymMatrix::identity(3), PSD_TOL).unwrap());
        // det = 1 - 2.25 = -1.25
        assert!(!psd_check(&sym(2, &[1.0, 1.5, 1.5, 1.0]), PSD_TOL).unwrap());
        assert!(psd_check(&SymMatrix::zeros(3), PSD_TOL).unwrap());
    }

    #[test]
    fn precondition_examples() {
        let l = sym(2, &[4.0, 2.0, 2.0, 9.0]);
        let p = precondition(&l, &l.diag()).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.get(1, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.get(0, 1), 1.0 / 3.0, epsilon = 1e-15);

        let i = SymMatrix::identity(3);
        assert_eq!(precondition(&i, &DiagMatrix::identity(3)).unwrap(), i);

        let dl = SymMatrix::from_diagonal(&[5.0, 0.25]);
        let p = precondition(&dl, &dl.diag()).unwrap();
        assert_abs_diff_eq!(p.as_matrix(), SymMatrix::identity(2).as_matrix(), epsilon = 1e-15);

        let bad = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(
            precondition(&bad, &bad.diag()),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn pinv_handles_singular_psd() {
        let m = SymMatrix::from_diagonal(&[2.0, 0.0]);
        let p = eig_sym(&m).unwrap().pinv();
        assert_abs_diff_eq!(p.get(0, 0), 0.5, epsilon = 1e-15);
        assert_eq!(p.get(1, 1), 0.0);
        assert!(matches!(solve_spd(&m, &Vector::zeros(2)), Err(Error::SingularMatrix(_))));
    }

    fn random_sym(d: usize, seed: u64) -> SymMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        SymMatrix::new(DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_spd(d: usize, seed: u64) -> SymMatrix {
        let a = random_sym(d, seed).into_inner();
        SymMatrix::new(a.transpose() * &a + DMatrix::identity(d, d) * 1e-3).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eig_round_trip(d in 1usize..200, seed in any::<u64>()) {
            let m = random_sym(d, seed);
            let s = eig_sym(&m).unwrap();
            let err = (s.reconstruct().as_matrix() - m.as_matrix()).norm();
            prop_assert!(err <= EIG_TOL * m.frobenius().max(f64::MIN_POSITIVE));
            let vtv = s.eigenvectors.tr_mul(&s.eigenvectors) - DMatrix::identity(d, d);
            prop_assert!(vtv.amax() <= 1e-9);
            prop_assert!(s.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn unit_diagonal_after_preconditioning(d in 1usize..60, seed in any::<u64>()) {
            let l = random_spd(d, seed);
            let p = precondition(&l, &l.diag()).unwrap();
            for i in 0..d {
                prop_assert!((p.get(i, i) - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn trace_of_inverse_preconditioned(d in 1usize..60, seed in any::<u64>()) {
            let l = random_spd(d, seed);
            let p = precondition(&l, &l.diag()).unwrap();
            let tr = eig_sym(&p).unwrap().pinv().trace();
            prop_assert!(tr >= d as f64 - 1e-9);
        }

        #[test]
        fn only_symmetric_part_matters(d in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let direct = x.dot(&(&raw * &x));
            let sym = weighted_sqnorm(&x, &SymMatrix::new(raw).unwrap()).unwrap();
            prop_assert!((direct - sym).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}
