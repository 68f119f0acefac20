//! Dense linear-algebra substrate: symmetric eigendecomposition by cyclic
//! Jacobi rotations, spectral and Taylor matrix logarithms, PSD helpers and
//! centered cross-covariances of embedding batches.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major). Symmetric inputs
//! are wrapped in [`SymMatrix`], which checks symmetry once at construction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sum::pairwise_sum;

/// Default relative symmetry tolerance for [`SymMatrix::new`].
pub const SYM_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOL` are treated as round-off around zero. For
/// matrices with spectral radius above 1 the threshold scales with it, since
/// the eigensolver's error does.
pub const PSD_TOL: f64 = 1e-9;

/// `PSD_TOL · max(1, ρ)` for spectral radius `ρ`.
pub fn psd_tolerance(radius: f64) -> f64 {
    PSD_TOL * radius.max(1.0)
}
/// Default eigenvalue floor below which `log` is taken to be 0.
pub const LOG_FLOOR: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// A square symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after checking squareness and symmetry at [`SYM_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, SYM_TOL)
    }

    pub fn with_tolerance(m: DMatrix<f64>, sym_tol: f64) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::Empty("symmetric matrix"));
        }
        for j in 0..cols {
            for i in (j + 1)..rows {
                let a = m[(i, j)];
                let b = m[(j, i)];
                let gap = (a - b).abs();
                if gap > sym_tol * a.abs().max(1.0) || gap.is_nan() {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(Self(m))
    }

    /// Returns `(A + Aᵀ)/2`. This is the only route from a general square
    /// matrix to a `SymMatrix` that does not check the input.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::Empty("symmetric matrix"));
        }
        Ok(Self((m + m.transpose()) * 0.5))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        Self(DMatrix::identity(n, n) * c)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds from row-major nested slices; convenient for literals in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        pairwise_sum(self.0.diagonal().as_slice())
    }

    /// `self + c·I`
    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        Self(m)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    /// `U A Uᵀ` for a square `U` of matching size.
    pub fn congruence(&self, u: &DMatrix<f64>) -> Result<Self> {
        if u.nrows() != self.dim() || u.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "congruence by {}x{} on a {}x{} matrix",
                u.nrows(),
                u.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        Self::symmetrize(&(u * &self.0 * u.transpose()))
    }
}

/// Eigenvalues sorted non-increasing with matching orthonormal eigenvectors
/// stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrized to remove round-off asymmetry.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> SymMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let g = f(lam);
            scaled.column_mut(j).scale_mut(g);
        }
        let m = &scaled * v.transpose();
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.apply(|l| l)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converges when the off-diagonal Frobenius norm falls to `1e-12·‖A‖_F`,
/// or fails with [`Error::NonConvergence`] after 100 sweeps. Eigenvalues in
/// `[-1e-9, 0)` are clamped to zero.
pub fn sym_eig(a: &SymMatrix) -> Result<Spectrum> {
    let n = a.dim();
    let mut m = a.0.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = m.norm();
    let target = JACOBI_REL_TOL * norm;

    let off_norm = |m: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    let mut last_off = off_norm(&m);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if last_off <= target || last_off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        last_off = off_norm(&m);
    }
    if !converged {
        if last_off <= target {
            converged = true;
        } else {
            return Err(Error::NonConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                off_norm: last_off,
            });
        }
    }
    debug_assert!(converged);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let tol = psd_tolerance((0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max));
    let mut eigenvalues = DVector::zeros(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut lam = m[(src, src)];
        if lam < 0.0 && lam >= -tol {
            lam = 0.0;
        }
        eigenvalues[dst] = lam;
        eigenvectors.set_column(dst, &v.column(src));
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// `g(λ) = ln λ` above the floor and 0 at or below it.
#[inline]
pub fn floored_ln(lambda: f64, floor: f64) -> f64 {
    if lambda > floor {
        lambda.ln()
    } else {
        0.0
    }
}

/// Principal logarithm of a PSD matrix through its spectrum, with eigenvalues
/// at or below `floor` mapped to 0.
pub fn matrix_log_spectral(a: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    let spec = sym_eig(a)?;
    check_psd(&spec)?;
    Ok(spec.apply(|l| floored_ln(l, floor)))
}

pub(crate) fn check_psd(spec: &Spectrum) -> Result<()> {
    let min = spec.min_eigenvalue();
    if min < -psd_tolerance(spec.max_eigenvalue().abs().max(min.abs())) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(())
}

/// Truncated Mercator series `Σ_{m=1..order} (−1)^{m+1} (A−I)^m / m`.
///
/// Valid for any square matrix; it converges to the principal logarithm
/// only when the spectral radius of `A − I` is below one.
pub fn matrix_log_taylor(a: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    if order < 1 {
        return Err(Error::InvalidOrder(order));
    }
    let (n, cols) = a.shape();
    if n != cols {
        return Err(Error::NotSquare { rows: n, cols });
    }
    let x = a - DMatrix::<f64>::identity(n, n);
    let mut power = x.clone();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for m in 1..=order {
        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
        acc += &power * (sign / m as f64);
        if m < order {
            power = &power * &x;
        }
    }
    Ok(acc)
}

/// Norms of `A − I`, used to report whether the Taylor logarithm is inside
/// its convergence region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorDomain {
    pub spectral_norm: f64,
    pub frobenius_norm: f64,
}

impl TaylorDomain {
    pub fn spectral_ok(&self) -> bool {
        self.spectral_norm < 1.0
    }

    pub fn frobenius_ok(&self) -> bool {
        self.frobenius_norm < 1.0
    }
}

pub fn taylor_domain(a: &DMatrix<f64>) -> Result<TaylorDomain> {
    let (n, cols) = a.shape();
    if n != cols {
        return Err(Error::NotSquare { rows: n, cols });
    }
    let x = a - DMatrix::<f64>::identity(n, n);
    let gram = SymMatrix::symmetrize(&(x.transpose() * &x))?;
    let top = sym_eig(&gram)?.max_eigenvalue().max(0.0);
    Ok(TaylorDomain {
        spectral_norm: top.sqrt(),
        frobenius_norm: x.norm(),
    })
}

/// Truncated exponential series `Σ_{k=0..order} A^k / k!`.
pub fn matrix_exp_series(a: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    let (n, cols) = a.shape();
    if n != cols {
        return Err(Error::NotSquare { rows: n, cols });
    }
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut acc = term.clone();
    for k in 1..=order {
        term = &term * a / k as f64;
        acc += &term;
    }
    Ok(acc)
}

/// True iff the smallest eigenvalue is at least `-tol`.
pub fn is_psd(a: &SymMatrix, tol: f64) -> bool {
    match sym_eig(a) {
        Ok(spec) => spec.min_eigenvalue() >= -tol,
        Err(_) => false,
    }
}

/// `Σ ln λᵢ` for a symmetric positive definite matrix.
pub fn logdet_spd(a: &SymMatrix) -> Result<f64> {
    logdet_spd_with_floor(a, LOG_FLOOR)
}

pub fn logdet_spd_with_floor(a: &SymMatrix, floor: f64) -> Result<f64> {
    let spec = sym_eig(a)?;
    let min = spec.min_eigenvalue();
    if min <= floor {
        return Err(Error::Singular { min_eigenvalue: min });
    }
    let logs: Vec<f64> = spec.eigenvalues.iter().map(|l| l.ln()).collect();
    Ok(pairwise_sum(&logs))
}

/// Whether covariance estimates subtract the per-feature batch mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    #[default]
    On,
    Off,
}

/// A `d×B` batch of feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    columns: DMatrix<f64>,
    unit_norm: bool,
}

/// Column-norm tolerance for unit-norm batches.
pub const UNIT_NORM_TOL: f64 = 1e-8;

impl EmbeddingBatch {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(Error::Empty("embedding batch"));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::PreconditionViolated(
                "embedding batch contains non-finite values".into(),
            ));
        }
        Ok(Self {
            columns,
            unit_norm: false,
        })
    }

    /// Wraps columns that must already have unit Euclidean norm.
    pub fn new_unit_norm(columns: DMatrix<f64>) -> Result<Self> {
        let mut batch = Self::new(columns)?;
        for (j, col) in batch.columns.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { column: j, norm });
            }
        }
        batch.unit_norm = true;
        Ok(batch)
    }

    /// Rescales every column to unit norm; zero columns are rejected.
    pub fn normalized(mut columns: DMatrix<f64>) -> Result<Self> {
        for (j, mut col) in columns.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::NotUnitNorm { column: j, norm });
            }
            col /= norm;
        }
        let mut batch = Self::new(columns)?;
        batch.unit_norm = true;
        Ok(batch)
    }

    /// Standard normal entries, columns normalized to the unit sphere.
    pub fn random_unit<R: Rng + ?Sized>(d: usize, b: usize, rng: &mut R) -> Result<Self> {
        let m = DMatrix::from_fn(d, b, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::normalized(m)
    }

    pub fn from_column_slice(d: usize, b: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * b {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {d}x{b} batch",
                data.len()
            )));
        }
        Self::new(DMatrix::from_column_slice(d, b, data))
    }

    pub fn d(&self) -> usize {
        self.columns.nrows()
    }

    pub fn batch_size(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    /// `(1/B)·Z Zᵀ`, uncentered.
    pub fn second_moment(&self) -> SymMatrix {
        let b = self.batch_size() as f64;
        let m = &self.columns * self.columns.transpose() / b;
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    /// `Z Zᵀ`
    pub fn outer_gram(&self) -> SymMatrix {
        let m = &self.columns * self.columns.transpose();
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    /// `Zᵀ Z`
    pub fn inner_gram(&self) -> SymMatrix {
        let m = self.columns.transpose() * &self.columns;
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    pub fn column_mean(&self) -> DVector<f64> {
        self.columns.column_mean()
    }
}

fn check_same_shape(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<()> {
    if z1.d() != z2.d() || z1.batch_size() != z2.batch_size() {
        return Err(Error::DimensionMismatch(format!(
            "batches are {}x{} and {}x{}",
            z1.d(),
            z1.batch_size(),
            z2.d(),
            z2.batch_size()
        )));
    }
    Ok(())
}

pub(crate) fn require_same_shape(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<()> {
    check_same_shape(z1, z2)
}

/// Subtracts each row's mean, i.e. right-multiplies by `H_B`.
pub fn center_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = z.column_mean();
    let mut out = z.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

/// `H_B = I_B − (1/B)·𝟙𝟙ᵀ`
pub fn centering_matrix(b: usize) -> DMatrix<f64> {
    DMatrix::identity(b, b) - DMatrix::from_element(b, b, 1.0 / b as f64)
}

/// `(1/B)·Z1 H_B Z2ᵀ`, the centered cross-covariance.
pub fn centered_cross_cov(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<DMatrix<f64>> {
    cross_cov(z1, z2, Centering::On)
}

/// Cross-covariance with centering selectable; with [`Centering::Off`] this
/// is the raw `(1/B)·Z1 Z2ᵀ`.
pub fn cross_cov(z1: &EmbeddingBatch, z2: &EmbeddingBatch, centering: Centering) -> Result<DMatrix<f64>> {
    check_same_shape(z1, z2)?;
    let b = z1.batch_size();
    match centering {
        Centering::On => {
            if b < 2 {
                return Err(Error::DimensionMismatch(
                    "centered covariance needs a batch of at least 2".into(),
                ));
            }
            let c1 = center_rows(z1.matrix());
            let c2 = center_rows(z2.matrix());
            Ok(c1 * c2.transpose() / b as f64)
        }
        Centering::Off => Ok(z1.matrix() * z2.matrix().transpose() / b as f64),
    }
}

/// Auto-covariance `C(Z, Z)` as a symmetric matrix.
pub fn auto_cov(z: &EmbeddingBatch, centering: Centering) -> Result<SymMatrix> {
    SymMatrix::symmetrize(&cross_cov(z, z, centering)?)
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix,
/// with column signs fixed so the distribution is Haar.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random SPD matrix `U diag(λ) Uᵀ` with eigenvalues drawn uniformly from
/// `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> SymMatrix {
    let u = random_orthogonal(n, rng);
    let eig: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    SymMatrix::from_diagonal(&eig)
        .congruence(&u)
        .expect("square orthogonal factor")
}
