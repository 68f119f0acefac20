//! Matrix entropy, von Neumann entropy, matrix KL divergence, matrix
//! cross-entropy and effective rank.
//!
//! All logarithms are natural. Eigenvalues at or below the configured floor
//! have `log λ := 0`, which also gives `0·log 0 = 0`.
//!
//! [`mkl`] and [`mce`] return `f64::INFINITY` instead of an error when `Q`
//! is singular along a direction where `P` has mass, so that sweeps over
//! rank-deficient covariances keep going.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_psd, floored_ln, sym_eig, Spectrum, SymMatrix, LOG_FLOOR, SYM_TOL};
use crate::sum::{pairwise_sum, pairwise_sum_by};

/// Eigenvalue floor shared by every logarithm in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoConfig {
    pub floor: f64,
}

impl Default for InfoConfig {
    fn default() -> Self {
        Self { floor: LOG_FLOOR }
    }
}

impl InfoConfig {
    pub fn new(floor: f64) -> Result<Self> {
        if !(floor >= 0.0) {
            return Err(Error::InvalidConfig(format!("floor must be >= 0, got {floor}")));
        }
        Ok(Self { floor })
    }
}

fn psd_spectrum(a: &SymMatrix) -> Result<Spectrum> {
    let spec = sym_eig(a)?;
    check_psd(&spec)?;
    Ok(spec)
}

/// `−Σ λ log λ` over a spectrum, with the floor convention.
fn spectral_entropy(eigenvalues: &[f64], floor: f64) -> f64 {
    -pairwise_sum_by(eigenvalues.iter(), |&l| l * floored_ln(l, floor))
}

/// `ME(A) = −tr(A log A) + tr(A)`.
pub fn matrix_entropy(a: &SymMatrix) -> Result<f64> {
    matrix_entropy_with(a, &InfoConfig::default())
}

pub fn matrix_entropy_with(a: &SymMatrix, cfg: &InfoConfig) -> Result<f64> {
    let spec = psd_spectrum(a)?;
    let ev = spec.eigenvalues.as_slice();
    Ok(spectral_entropy(ev, cfg.floor) + pairwise_sum(ev))
}

/// Von Neumann entropy `−tr(A log A)`.
pub fn vne(a: &SymMatrix) -> Result<f64> {
    vne_with(a, &InfoConfig::default())
}

pub fn vne_with(a: &SymMatrix, cfg: &InfoConfig) -> Result<f64> {
    let spec = psd_spectrum(a)?;
    Ok(spectral_entropy(spec.eigenvalues.as_slice(), cfg.floor))
}

/// `tr(P log Q)` evaluated in the eigenbasis of `Q`, or `None` when `Q` has a
/// floored eigenvalue along which `P` carries mass.
fn tr_p_log_q(p: &SymMatrix, q_spec: &Spectrum, floor: f64) -> Option<f64> {
    let pm = p.as_matrix();
    let mass_tol = 1e-12 * pm.norm().max(1.0);
    let mut terms = Vec::with_capacity(q_spec.dim());
    for (j, &mu) in q_spec.eigenvalues.iter().enumerate() {
        let w = q_spec.eigenvectors.column(j);
        let mass = (w.transpose() * pm * w)[(0, 0)];
        if mu <= floor {
            if mass > mass_tol {
                return None;
            }
            continue;
        }
        terms.push(mass * mu.ln());
    }
    Some(pairwise_sum(&terms))
}

fn check_pair(p: &SymMatrix, q: &SymMatrix) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "P is {0}x{0}, Q is {1}x{1}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// `MKL(P‖Q) = tr(P log P − P log Q − P + Q)`.
pub fn mkl(p: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    mkl_with(p, q, &InfoConfig::default())
}

pub fn mkl_with(p: &SymMatrix, q: &SymMatrix, cfg: &InfoConfig) -> Result<f64> {
    check_pair(p, q)?;
    let p_spec = psd_spectrum(p)?;
    let q_spec = psd_spectrum(q)?;
    let Some(cross) = tr_p_log_q(p, &q_spec, cfg.floor) else {
        return Ok(f64::INFINITY);
    };
    let pev = p_spec.eigenvalues.as_slice();
    let self_term = -spectral_entropy(pev, cfg.floor);
    let terms = [
        self_term,
        -cross,
        -pairwise_sum(pev),
        pairwise_sum(q_spec.eigenvalues.as_slice()),
    ];
    Ok(pairwise_sum(&terms))
}

/// `MCE(P, Q) = tr(−P log Q + Q)`.
pub fn mce(p: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    mce_with(p, q, &InfoConfig::default())
}

pub fn mce_with(p: &SymMatrix, q: &SymMatrix, cfg: &InfoConfig) -> Result<f64> {
    check_pair(p, q)?;
    psd_spectrum(p)?;
    let q_spec = psd_spectrum(q)?;
    let Some(cross) = tr_p_log_q(p, &q_spec, cfg.floor) else {
        return Ok(f64::INFINITY);
    };
    Ok(-cross + pairwise_sum(q_spec.eigenvalues.as_slice()))
}

/// Shannon entropy (nats) of a probability vector; zero entries contribute 0.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    -pairwise_sum_by(p.iter(), |&x| if x > 0.0 { x * x.ln() } else { 0.0 })
}

/// Effective rank from a list of singular values: `exp(H(σ/Σσ))`.
pub fn erank_from_singular_values(sv: &[f64]) -> Result<f64> {
    let total = pairwise_sum(sv);
    if !(total > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let p: Vec<f64> = sv.iter().map(|&s| s.max(0.0) / total).collect();
    Ok(shannon_entropy(&p).exp())
}

/// Singular values of a square matrix. Symmetric inputs use `|λ|`; others
/// use square roots of the eigenvalues of `AᵀA`.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    match SymMatrix::with_tolerance(a.clone(), SYM_TOL) {
        Ok(s) => Ok(sym_eig(&s)?.eigenvalues.iter().map(|l| l.abs()).collect()),
        Err(Error::NotSymmetric { .. }) => {
            let gram = SymMatrix::symmetrize(&(a.transpose() * a))?;
            Ok(sym_eig(&gram)?.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect())
        }
        Err(e) => Err(e),
    }
}

/// Effective rank of a non-zero square matrix.
pub fn erank(a: &DMatrix<f64>) -> Result<f64> {
    erank_from_singular_values(&singular_values(a)?)
}

/// Effective rank of a symmetric matrix.
pub fn erank_sym(a: &SymMatrix) -> Result<f64> {
    let spec = sym_eig(a)?;
    let sv: Vec<f64> = spec.eigenvalues.iter().map(|l| l.abs()).collect();
    erank_from_singular_values(&sv)
}

/// Like [`erank`], but the all-zero matrix maps to 0 ("fully collapsed").
pub fn erank_or_zero(a: &DMatrix<f64>) -> Result<f64> {
    match erank(a) {
        Err(Error::ZeroMatrix) => Ok(0.0),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_orthogonal, random_spd, EmbeddingBatch};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entropy_examples() {
        assert!(close(matrix_entropy(&SymMatrix::identity(2)).unwrap(), 2.0, 1e-15));
        assert_eq!(matrix_entropy(&SymMatrix::zeros(3)).unwrap(), 0.0);
        let v = matrix_entropy(&SymMatrix::from_diagonal(&[2.0, 1.0])).unwrap();
        assert!(close(v, 3.0 - 2.0 * 2f64.ln(), 1e-14));
        assert!(close(v, 1.61371, 1e-5));
        assert!(matches!(
            matrix_entropy(&SymMatrix::from_diagonal(&[1.0, -0.5])),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn vne_examples() {
        for d in 1..6 {
            let v = vne(&SymMatrix::scaled_identity(d, 1.0 / d as f64)).unwrap();
            assert!(close(v, (d as f64).ln(), 1e-14));
        }
        assert_eq!(vne(&SymMatrix::from_diagonal(&[1.0, 0.0, 0.0])).unwrap(), 0.0);
        let v = vne(&SymMatrix::from_diagonal(&[0.5, 0.5, 0.0])).unwrap();
        assert!(close(v, 2f64.ln(), 1e-15));
    }

    #[test]
    fn mkl_illustrative_cases() {
        let p1 = SymMatrix::identity(2);
        let q1 = SymMatrix::from_rows(&[&[1.0, 0.96], &[0.96, 1.0]]).unwrap();
        let v1 = mkl(&p1, &q1).unwrap();
        assert!(close(v1, 2.55, 0.01), "{v1}");
        // tr(−log Q) = −ln(0.0784) with the other terms cancelling.
        assert!(close(v1, -0.0784f64.ln(), 1e-12));

        let p2 = SymMatrix::from_rows(&[&[1.36, 0.48], &[0.48, 0.64]]).unwrap();
        let q2 = SymMatrix::from_rows(&[&[0.64, 0.48], &[0.48, 1.36]]).unwrap();
        let v2 = mkl(&p2, &q2).unwrap();
        assert!(close(v2, 0.60, 0.01), "{v2}");
    }

    #[test]
    fn mkl_infinite_when_support_escapes() {
        let p = SymMatrix::identity(2);
        let q = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert_eq!(mkl(&p, &q).unwrap(), f64::INFINITY);
        assert_eq!(mce(&p, &q).unwrap(), f64::INFINITY);
        // Support contained: finite.
        let p = SymMatrix::from_diagonal(&[0.5, 0.0]);
        assert!(mkl(&p, &q).unwrap().is_finite());
    }

    #[test]
    fn mce_examples() {
        let i2 = SymMatrix::identity(2);
        assert!(close(mce(&i2, &i2).unwrap(), 2.0, 1e-15));
        let q = SymMatrix::from_rows(&[&[1.0, 0.96], &[0.96, 1.0]]).unwrap();
        let v = mce(&i2, &q).unwrap();
        assert!(close(v, -0.0784f64.ln() + 2.0, 1e-12));
        assert!(close(v, 4.545_931_351_625_775, 1e-12));
        assert!(matches!(
            mce(&SymMatrix::identity(3), &q),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn self_divergence_and_entropy_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let p = random_spd(5, 0.05, 3.0, &mut rng);
            assert!(mkl(&p, &p).unwrap().abs() < 1e-12);
            assert!(close(mce(&p, &p).unwrap(), matrix_entropy(&p).unwrap(), 1e-12));
        }
    }

    #[test]
    fn erank_examples() {
        for d in 1..7 {
            let v = erank(&DMatrix::identity(d, d)).unwrap();
            assert!(close(v, d as f64, 1e-12));
        }
        let diag = |v: &[f64]| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v));
        assert!(close(erank(&diag(&[1.0, 0.0])).unwrap(), 1.0, 1e-15));
        assert!(close(erank(&diag(&[2.0, 1.0, 1.0])).unwrap(), 2f64.powf(1.5), 1e-12));
        assert_eq!(erank(&DMatrix::zeros(3, 3)), Err(Error::ZeroMatrix));
        assert_eq!(erank_or_zero(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn erank_non_symmetric_uses_singular_values() {
        // Rotation scaled by 2: singular values (2, 2).
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        assert!(close(erank(&r).unwrap(), 2.0, 1e-12));
        // Nilpotent: singular values (1, 0).
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(close(erank(&n).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn erank_mkl_identity_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let d = rng.random_range(2..=8);
            let b = rng.random_range(1..=20);
            let z = EmbeddingBatch::random_unit(d, b, &mut rng).unwrap();
            let s = z.second_moment();
            let er = erank_sym(&s).unwrap();
            let div = mkl(&s, &SymMatrix::scaled_identity(d, 1.0 / d as f64)).unwrap();
            assert!(((er * div.exp()) / d as f64 - 1.0).abs() < 1e-9);
            assert!((er / vne(&s).unwrap().exp() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unitary_invariance_of_mkl() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let p = random_spd(4, 0.1, 2.0, &mut rng);
            let q = random_spd(4, 0.1, 2.0, &mut rng);
            let u = random_orthogonal(4, &mut rng);
            let a = mkl(&p, &q).unwrap();
            let b = mkl(&p.congruence(&u).unwrap(), &q.congruence(&u).unwrap()).unwrap();
            assert!(close(a, b, 1e-9));
        }
    }

    proptest! {
        #[test]
        fn mce_decomposes_into_mkl_plus_entropy(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_spd(n, 0.01, 4.0, &mut rng);
            let q = random_spd(n, 0.01, 4.0, &mut rng);
            let gap = mce(&p, &q).unwrap() - mkl(&p, &q).unwrap() - matrix_entropy(&p).unwrap();
            prop_assert!(gap.abs() < 1e-9);
            prop_assert!(mkl(&p, &q).unwrap() >= -1e-10);
        }

        #[test]
        fn erank_bounds_and_scale_invariance(seed in any::<u64>(), n in 1usize..7, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let e = erank(&g).unwrap();
            let rank = g.clone().svd(false, false).rank(1e-12) as f64;
            prop_assert!(e >= 1.0 - 1e-12);
            prop_assert!(e <= rank + 1e-9);
            prop_assert!((erank(&(g * c)).unwrap() - e).abs() < 1e-9);
        }
    }
}
