//! Representation-collapse diagnostics.
//!
//! Intra-class effective rank averages the effective rank of each class's
//! scatter matrix (uniform 1/K weights); inter-class effective rank is the
//! effective rank of the scatter of class means around the global mean.
//! A scatter that is numerically zero counts as effective rank 0.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, EmbeddingBatch, SymMatrix};
use crate::matinfo::{erank_from_singular_values, erank_sym, mkl, vne};
use crate::sum::pairwise_sum;

/// Scatter traces below this fraction of the data scale count as zero.
const ZERO_SCATTER_REL: f64 = 1e-20;
/// Relative eigenvalue tolerance of the spectral ETF test.
pub const ETF_SPECTRAL_TOL: f64 = 2e-5;
/// Required agreement between a certified ETF's Gram erank and `K − 1`.
pub const ETF_ERANK_TOL: f64 = 1e-8;
const ETF_PRECONDITION_TOL: f64 = 1e-6;

/// Feature columns with one class id per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    z: DMatrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledEmbeddings {
    /// `K` is inferred as `max(label) + 1`; every class in `[0, K)` must be
    /// populated.
    pub fn new(z: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::Empty("labeled embeddings"));
        }
        if labels.len() != z.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                z.ncols()
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; num_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::PreconditionViolated(format!("class {c} has no samples")));
        }
        Ok(Self { z, labels, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn d(&self) -> usize {
        self.z.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn class_columns(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }

    fn class_mean(&self, idx: &[usize]) -> DVector<f64> {
        let mut m = DVector::zeros(self.d());
        for &i in idx {
            m += self.z.column(i);
        }
        m / idx.len() as f64
    }

    fn scale(&self) -> f64 {
        self.z.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max)
    }
}

/// Effective rank of a PSD scatter matrix, 0 when its trace is negligible
/// against `scale`.
fn scatter_erank(scatter: &SymMatrix, scale: f64) -> Result<f64> {
    let spec = sym_eig(scatter)?;
    let sv: Vec<f64> = spec.eigenvalues.iter().map(|l| l.abs()).collect();
    if pairwise_sum(&sv) <= ZERO_SCATTER_REL * scale.max(f64::MIN_POSITIVE) {
        return Ok(0.0);
    }
    erank_from_singular_values(&sv)
}

fn scatter_of<I>(vectors: I, center: &DVector<f64>, d: usize, weight: f64) -> Result<SymMatrix>
where
    I: IntoIterator<Item = DVector<f64>>,
{
    let mut s = DMatrix::zeros(d, d);
    for v in vectors {
        let diff = v - center;
        s += &diff * diff.transpose();
    }
    SymMatrix::symmetrize(&(s * weight))
}

/// Per-class and averaged intra-class effective rank.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraClass {
    pub mean: f64,
    pub per_class: Vec<f64>,
}

pub fn intra_class_erank(data: &LabeledEmbeddings) -> Result<IntraClass> {
    let d = data.d();
    let scale = data.scale();
    let mut per_class = Vec::with_capacity(data.num_classes);
    for c in 0..data.num_classes {
        let idx = data.class_columns(c);
        let mu = data.class_mean(&idx);
        let cols = idx.iter().map(|&i| data.z.column(i).into_owned());
        let scatter = scatter_of(cols, &mu, d, 1.0 / idx.len() as f64)?;
        per_class.push(scatter_erank(&scatter, scale)?);
    }
    let mean = pairwise_sum(&per_class) / data.num_classes as f64;
    Ok(IntraClass { mean, per_class })
}

/// Effective rank of `(1/K)·Σ_c (μ_c − μ_G)(μ_c − μ_G)ᵀ`.
pub fn inter_class_erank(data: &LabeledEmbeddings) -> Result<f64> {
    let k = data.num_classes;
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    let global = data.z.column_mean();
    let means = (0..k).map(|c| data.class_mean(&data.class_columns(c)));
    let scatter = scatter_of(means, &global, data.d(), 1.0 / k as f64)?;
    scatter_erank(&scatter, data.scale())
}

/// `√(K/(K−1))·(I_K − (1/K)·𝟙𝟙ᵀ)`
pub fn simplex_etf_core(k: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    let kf = k as f64;
    let h = DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / kf);
    Ok(h * (kf / (kf - 1.0)).sqrt())
}

/// `α·U·M` with `M` the simplex core. `basis = None` uses the first `K`
/// coordinate axes of `ℝ^d`.
pub fn build_simplex_etf(k: usize, d: usize, alpha: f64, basis: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    if d < k {
        return Err(Error::DimensionError { d, k });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    let m = simplex_etf_core(k)?;
    let u = match basis {
        Some(u) => {
            if u.shape() != (d, k) {
                return Err(Error::DimensionMismatch(format!(
                    "basis is {}x{}, expected {d}x{k}",
                    u.nrows(),
                    u.ncols()
                )));
            }
            let residual = (u.transpose() * u - DMatrix::identity(k, k))
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            if residual > 1e-8 {
                return Err(Error::NotPartialOrthogonal { residual });
            }
            u.clone()
        }
        None => DMatrix::identity(d, k),
    };
    Ok(u * m * alpha)
}

/// Outcome of [`etf_erank_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtfCheck {
    pub erank: f64,
    pub is_etf: bool,
    /// `max |VᵀV − (K/(K−1))·(I − 𝟙𝟙ᵀ/K)|`
    pub gram_residual: f64,
}

/// Tests whether unit-norm, zero-mean columns form a simplex ETF by looking
/// at the Gram spectrum: `K−1` eigenvalues equal to `K/(K−1)` and one zero.
pub fn etf_erank_check(v: &DMatrix<f64>) -> Result<EtfCheck> {
    let k = v.ncols();
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    for (j, col) in v.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > ETF_PRECONDITION_TOL {
            return Err(Error::PreconditionViolated(format!(
                "column {j} has norm {norm}, expected 1"
            )));
        }
    }
    let mean_norm = v.column_mean().norm();
    if mean_norm > ETF_PRECONDITION_TOL {
        return Err(Error::PreconditionViolated(format!(
            "column mean has norm {mean_norm}, expected 0"
        )));
    }

    let kf = k as f64;
    let level = kf / (kf - 1.0);
    let gram = SymMatrix::symmetrize(&(v.transpose() * v))?;
    let target = simplex_etf_core(k)?;
    let target = target.transpose() * &target;
    let gram_residual = (gram.as_matrix() - target).iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let spec = sym_eig(&gram)?;
    let ev = spec.eigenvalues.as_slice();
    let top_ok = ev[..k - 1]
        .iter()
        .all(|&l| (l - level).abs() <= ETF_SPECTRAL_TOL * level);
    let bottom_ok = ev[k - 1].abs() <= ETF_SPECTRAL_TOL * level;
    let erank = erank_sym(&gram)?;
    let is_etf = top_ok && bottom_ok && (erank - (kf - 1.0)).abs() <= ETF_ERANK_TOL;
    Ok(EtfCheck {
        erank,
        is_etf,
        gram_residual,
    })
}

/// Effective rank of `ZᵀZ` cross-checked against `ZZᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramErank {
    /// `erank(ZᵀZ)`
    pub gram: f64,
    /// `erank(ZZᵀ)`
    pub outer: f64,
}

impl GramErank {
    pub fn gap(&self) -> f64 {
        (self.gram - self.outer).abs()
    }
}

pub fn gram_erank(z: &EmbeddingBatch) -> Result<GramErank> {
    Ok(GramErank {
        gram: erank_sym(&z.inner_gram())?,
        outer: erank_sym(&z.outer_gram())?,
    })
}

/// All collapse metrics for one labeled (or unlabeled) embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub global_erank: f64,
    pub vne_global: f64,
    /// `MKL((1/n)ZZᵀ ‖ I/d)`
    pub mkl_to_uniform: f64,
    pub intra_class_erank: Option<f64>,
    pub inter_class_erank: Option<f64>,
    pub per_class_eranks: Vec<f64>,
}

/// Global metrics of `(1/n)·Z Zᵀ` plus class metrics when labels are given.
/// Inter-class rank is omitted for fewer than two classes.
pub fn collapse_report(z: &EmbeddingBatch, labels: Option<&[usize]>) -> Result<CollapseReport> {
    let second = z.second_moment();
    let d = z.d();
    let global_erank = match erank_sym(&second) {
        Err(Error::ZeroMatrix) => 0.0,
        other => other?,
    };
    let vne_global = vne(&second)?;
    let mkl_to_uniform = mkl(&second, &SymMatrix::scaled_identity(d, 1.0 / d as f64))?;
    let mut report = CollapseReport {
        global_erank,
        vne_global,
        mkl_to_uniform,
        intra_class_erank: None,
        inter_class_erank: None,
        per_class_eranks: Vec::new(),
    };
    if let Some(labels) = labels {
        let data = LabeledEmbeddings::new(z.matrix().clone(), labels.to_vec())?;
        let intra = intra_class_erank(&data)?;
        report.intra_class_erank = Some(intra.mean);
        report.per_class_eranks = intra.per_class;
        if data.num_classes() >= 2 {
            report.inter_class_erank = Some(inter_class_erank(&data)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn repeated_vectors_have_zero_intra_rank() {
        let z = DMatrix::from_row_slice(2, 6, &[0.1, 0.1, 0.1, 0.7, 0.7, 0.7, 0.3, 0.3, 0.3, -0.2, -0.2, -0.2]);
        let data = LabeledEmbeddings::new(z, vec![0, 0, 0, 1, 1, 1]).unwrap();
        let intra = intra_class_erank(&data).unwrap();
        assert_eq!(intra.mean, 0.0);
        assert_eq!(intra.per_class, vec![0.0, 0.0]);
    }

    #[test]
    fn isotropic_single_class_has_full_rank() {
        // Columns ±√d·eᵢ: zero mean, class scatter a multiple of I.
        let d = 4;
        let mut z = DMatrix::zeros(d, 2 * d);
        for i in 0..d {
            z[(i, 2 * i)] = (d as f64).sqrt();
            z[(i, 2 * i + 1)] = -(d as f64).sqrt();
        }
        let data = LabeledEmbeddings::new(z, vec![0; 2 * d]).unwrap();
        let intra = intra_class_erank(&data).unwrap();
        assert!(close(intra.mean, d as f64, 1e-12));
        assert_eq!(inter_class_erank(&data), Err(Error::TooFewClasses(1)));
    }

    #[test]
    fn line_classes_have_unit_intra_rank() {
        let m0 = [1.0, 2.0, 0.0];
        let m1 = [-1.0, 0.5, 3.0];
        let v0 = [0.3, -0.1, 0.2];
        let v1 = [0.0, 0.4, 0.4];
        let mut cols = Vec::new();
        for s in [1.0, -1.0] {
            cols.extend(m0.iter().zip(&v0).map(|(m, v)| m + s * v));
        }
        for s in [1.0, -1.0, 2.0, -2.0] {
            cols.extend(m1.iter().zip(&v1).map(|(m, v)| m + s * v));
        }
        let z = DMatrix::from_column_slice(3, 6, &cols);
        let data = LabeledEmbeddings::new(z, vec![0, 0, 1, 1, 1, 1]).unwrap();
        let intra = intra_class_erank(&data).unwrap();
        assert!(close(intra.mean, 1.0, 1e-9));
        assert!(close(inter_class_erank(&data).unwrap(), 1.0, 1e-9));
    }

    #[test]
    fn equal_means_give_zero_inter_rank() {
        let z = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, -1.0, 1.0, 0.5, -0.5, 0.5, -0.5]);
        let data = LabeledEmbeddings::new(z, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(inter_class_erank(&data).unwrap(), 0.0);
    }

    #[test]
    fn etf_means_give_k_minus_one_inter_rank() {
        let etf = build_simplex_etf(3, 3, 1.0, None).unwrap();
        let data = LabeledEmbeddings::new(etf, vec![0, 1, 2]).unwrap();
        assert!(close(inter_class_erank(&data).unwrap(), 2.0, 1e-12));
    }

    #[test]
    fn etf_construction_examples() {
        let etf = build_simplex_etf(2, 2, 1.0, None).unwrap();
        let gram = etf.transpose() * &etf;
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((gram - expected).amax() < 1e-15);

        let etf = build_simplex_etf(3, 5, 1.0, None).unwrap();
        let gram = etf.transpose() * &etf;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 };
                assert!(close(gram[(i, j)], want, 1e-15));
            }
        }
        assert!(etf.column_mean().amax() < 1e-15);

        assert_eq!(
            build_simplex_etf(5, 3, 1.0, None),
            Err(Error::DimensionError { d: 3, k: 5 })
        );
        let bad = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            build_simplex_etf(2, 3, 1.0, Some(&bad)),
            Err(Error::NotPartialOrthogonal { .. })
        ));
    }

    #[test]
    fn etf_check_examples() {
        let etf = build_simplex_etf(3, 3, 1.0, None).unwrap();
        let check = etf_erank_check(&etf).unwrap();
        assert!(check.is_etf);
        assert!(close(check.erank, 2.0, 1e-12));
        assert!(check.gram_residual < 1e-15);

        let same = DMatrix::from_fn(3, 4, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert!(matches!(etf_erank_check(&same), Err(Error::PreconditionViolated(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut v = DMatrix::from_fn(8, 4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        for _ in 0..50 {
            v = crate::linalg::center_rows(&v);
            for mut c in v.column_iter_mut() {
                let n = c.norm();
                c /= n;
            }
        }
        let check = etf_erank_check(&v).unwrap();
        assert!(check.erank < 3.0);
        assert!(!check.is_etf);
    }

    #[test]
    fn rotated_etf_with_general_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(6, &mut rng);
        let u = q.columns(0, 4).into_owned();
        let etf = build_simplex_etf(4, 6, 1.0, Some(&u)).unwrap();
        let check = etf_erank_check(&etf).unwrap();
        assert!(check.is_etf);
        assert!(close(check.erank, 3.0, 1e-10));
    }

    #[test]
    fn gram_erank_examples() {
        let z = EmbeddingBatch::new(DMatrix::identity(5, 3)).unwrap();
        let g = gram_erank(&z).unwrap();
        assert!(close(g.gram, 3.0, 1e-12));
        assert!(g.gap() < 1e-12);

        let padded = EmbeddingBatch::new(DMatrix::identity(4, 2)).unwrap();
        assert!(gram_erank(&padded).unwrap().gap() < 1e-12);

        let zero = EmbeddingBatch::new(DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(gram_erank(&zero), Err(Error::ZeroMatrix));
    }

    #[test]
    fn gram_erank_from_batch_spectra_concatenation() {
        // Block-diagonal data: batch A lives on the first 2 coordinates,
        // batch B on the last 3. The full Gram spectrum is the union of the
        // two per-batch spectra.
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let a = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let mut full = DMatrix::zeros(5, 9);
        full.view_mut((0, 0), (2, 4)).copy_from(&a);
        full.view_mut((2, 4), (3, 5)).copy_from(&b);
        let ga = SymMatrix::symmetrize(&(a.transpose() * &a)).unwrap();
        let gb = SymMatrix::symmetrize(&(b.transpose() * &b)).unwrap();
        let mut spectrum: Vec<f64> = sym_eig(&ga).unwrap().eigenvalues.iter().copied().collect();
        spectrum.extend(sym_eig(&gb).unwrap().eigenvalues.iter().copied());
        let oracle = erank_from_singular_values(&spectrum.iter().map(|l| l.abs()).collect::<Vec<_>>()).unwrap();
        let g = gram_erank(&EmbeddingBatch::new(full).unwrap()).unwrap();
        assert!(close(g.gram, oracle, 1e-9));
        assert!(g.gap() < 1e-9);
    }

    #[test]
    fn intra_rank_invariant_to_translation_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let z = DMatrix::from_fn(4, 12, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let base = intra_class_erank(&LabeledEmbeddings::new(z.clone(), labels.clone()).unwrap()).unwrap();

        let mut shifted = z.clone();
        let offsets = [[1.0, 2.0, -1.0, 0.5], [-3.0, 0.0, 0.2, 0.1], [0.0, 0.0, 5.0, -2.0]];
        for (j, mut col) in shifted.column_iter_mut().enumerate() {
            col += DVector::from_column_slice(&offsets[labels[j]]);
        }
        let moved = intra_class_erank(&LabeledEmbeddings::new(shifted, labels.clone()).unwrap()).unwrap();
        assert!(close(base.mean, moved.mean, 1e-9));

        let q = random_orthogonal(4, &mut rng);
        let rotated = intra_class_erank(&LabeledEmbeddings::new(&q * &z, labels.clone()).unwrap()).unwrap();
        assert!(close(base.mean, rotated.mean, 1e-9));
        let inter = inter_class_erank(&LabeledEmbeddings::new(z.clone(), labels.clone()).unwrap()).unwrap();
        let inter_rot = inter_class_erank(&LabeledEmbeddings::new(&q * &z, labels.clone()).unwrap()).unwrap();
        assert!(close(inter, inter_rot, 1e-9));

        // Relabeling permutation.
        let perm = [2usize, 0, 1];
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let r = collapse_report(&EmbeddingBatch::new(z.clone()).unwrap(), Some(&relabeled)).unwrap();
        let o = collapse_report(&EmbeddingBatch::new(z).unwrap(), Some(&labels)).unwrap();
        assert!(close(r.intra_class_erank.unwrap(), o.intra_class_erank.unwrap(), 1e-12));
        assert!(close(r.inter_class_erank.unwrap(), o.inter_class_erank.unwrap(), 1e-12));
    }

    #[test]
    fn inter_rank_equals_gram_erank_of_scaled_means() {
        // Balanced classes, zero global mean, each class collapsed to its mean.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for k in 2..6 {
            let d = 6;
            let mut means = DMatrix::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
            means = crate::linalg::center_rows(&means);
            let per = 3;
            let mut z = DMatrix::zeros(d, k * per);
            let mut labels = Vec::new();
            for c in 0..k {
                for r in 0..per {
                    z.set_column(c * per + r, &means.column(c));
                    labels.push(c);
                }
            }
            let inter = inter_class_erank(&LabeledEmbeddings::new(z, labels).unwrap()).unwrap();
            let scaled = EmbeddingBatch::new(&means / (k as f64).sqrt()).unwrap();
            let g = gram_erank(&scaled).unwrap();
            assert!(close(inter, g.gram, 1e-9), "{inter} vs {}", g.gram);
        }
    }

    #[test]
    fn report_on_identity() {
        let z = EmbeddingBatch::new(DMatrix::identity(2, 2)).unwrap();
        let r = collapse_report(&z, None).unwrap();
        assert!(close(r.global_erank, 2.0, 1e-12));
        assert!(close(r.vne_global, 2f64.ln(), 1e-12));
        assert!(r.mkl_to_uniform.abs() < 1e-12);
        assert!(r.intra_class_erank.is_none());
    }

    #[test]
    fn labels_must_cover_classes() {
        let z = DMatrix::identity(2, 3);
        assert!(LabeledEmbeddings::new(z.clone(), vec![0, 2, 2]).is_err());
        assert!(LabeledEmbeddings::new(z, vec![0, 1]).is_err());
    }
}
