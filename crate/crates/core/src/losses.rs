//! Self-supervised objectives computed from embedding batches.
//!
//! With `C(Z1, Z2) = (1/B)·Z1 H_B Z2ᵀ` the (optionally centered)
//! cross-covariance and `λ` the ridge added to every covariance:
//!
//! | loss | value |
//! |------|-------|
//! | TCR | `−½ log det(I + (d/(Bε²)) Z Zᵀ)` |
//! | MEC | `−μ tr log(I + (d/(Bε²)) Z1 Z2ᵀ)` |
//! | uniformity | `MCE(I/d, C(Z1,Z2) + λI)` |
//! | alignment | `−tr C(Z1,Z2) + γ·MCE(C(Z1,Z1) + λI, C(Z2,Z2) + λI)` |
//! | Matrix-SSL | uniformity + alignment |
//! | Matrix-SSL-KL | same with every MCE replaced by MKL |
//!
//! The cross-covariance is not symmetric, so the uniformity log goes
//! through the Taylor series by default ([`LogMode::Taylor`]). The matrix
//! is first divided by `s = tr(A)/d`, which puts its spectrum around 1, and
//! `d·log s` is added back exactly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    auto_cov, cross_cov, floored_ln, matrix_log_taylor, sym_eig, Centering, EmbeddingBatch, SymMatrix, LOG_FLOOR,
};
use crate::matinfo::{matrix_entropy_with, mce_with, mkl_with, InfoConfig};
use crate::sum::{pairwise_sum, pairwise_sum_by};

/// How the logarithm of the (possibly non-symmetric) regularized
/// cross-covariance is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogMode {
    /// Truncated Mercator series at `taylor_order` on the rescaled matrix.
    #[default]
    Taylor,
    /// Spectral log of the symmetrized matrix.
    Exact,
}

/// Scalar hyperparameters shared by every loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// ε², the coding distortion.
    pub eps_sq: f64,
    /// μ, the MEC weight.
    pub mu: f64,
    /// Ridge λ added to each covariance as `λI`.
    pub lambda_reg: f64,
    /// γ, the matrix-alignment weight.
    pub gamma: f64,
    pub taylor_order: usize,
    /// Treat `Z1` as a constant when differentiating.
    pub stop_grad_branch1: bool,
    pub log_mode: LogMode,
    pub centering: Centering,
    /// Eigenvalue floor for spectral logs.
    pub floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eps_sq: 0.5,
            mu: 1.0,
            lambda_reg: 1e-3,
            gamma: 1.0,
            taylor_order: 4,
            stop_grad_branch1: true,
            log_mode: LogMode::Taylor,
            centering: Centering::On,
            floor: LOG_FLOOR,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_sq > 0.0) {
            return Err(Error::InvalidConfig(format!("eps_sq must be > 0, got {}", self.eps_sq)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfig(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_reg must be >= 0, got {}",
                self.lambda_reg
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.taylor_order < 1 {
            return Err(Error::InvalidOrder(self.taylor_order));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::InvalidConfig(format!("floor must be >= 0, got {}", self.floor)));
        }
        Ok(())
    }

    pub(crate) fn info(&self) -> InfoConfig {
        InfoConfig { floor: self.floor }
    }
}

/// `d / (B·ε²)`
pub fn coding_coefficient(d: usize, b: usize, eps_sq: f64) -> f64 {
    d as f64 / (b as f64 * eps_sq)
}

fn trace(m: &DMatrix<f64>) -> f64 {
    pairwise_sum(m.diagonal().as_slice())
}

/// Total coding rate `−½ log det(I + (d/(Bε²)) Z Zᵀ)`, evaluated as
/// `−½ Σ log(1 + cλᵢ)` over the spectrum of the smaller Gram matrix.
pub fn tcr_loss(z: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let c = coding_coefficient(z.d(), z.batch_size(), cfg.eps_sq);
    let gram = if z.d() <= z.batch_size() {
        z.outer_gram()
    } else {
        z.inner_gram()
    };
    let spec = sym_eig(&gram)?;
    Ok(-0.5 * pairwise_sum_by(spec.eigenvalues.iter(), |&l| (c * l.max(0.0)).ln_1p()))
}

fn mec_argument(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    crate::linalg::require_same_shape(z1, z2)?;
    let d = z1.d();
    let c = coding_coefficient(d, z1.batch_size(), cfg.eps_sq);
    Ok(DMatrix::identity(d, d) + z1.matrix() * z2.matrix().transpose() * c)
}

/// MEC loss `−μ tr log(I + c Z1 Z2ᵀ)` with the Taylor logarithm.
pub fn mec_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    let m = mec_argument(z1, z2, cfg)?;
    Ok(-cfg.mu * trace(&matrix_log_taylor(&m, cfg.taylor_order)?))
}

/// MEC value together with the log-det of the symmetrized argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MecCheck {
    pub taylor: f64,
    /// `−μ log det((M + Mᵀ)/2)`, absent when that matrix is not positive
    /// definite.
    pub logdet_sym: Option<f64>,
    pub gap: Option<f64>,
}

pub fn mec_loss_verified(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<MecCheck> {
    let taylor = mec_loss(z1, z2, cfg)?;
    let m = mec_argument(z1, z2, cfg)?;
    let logdet_sym = crate::linalg::logdet_spd_with_floor(&SymMatrix::symmetrize(&m)?, cfg.floor)
        .ok()
        .map(|ld| -cfg.mu * ld);
    Ok(MecCheck {
        taylor,
        logdet_sym,
        gap: logdet_sym.map(|v| (taylor - v).abs()),
    })
}

/// How the uniformity argument was rescaled before the Taylor series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScaleKind {
    /// `s = tr(A)/d`
    Trace,
    /// `s = ‖A‖_F/√d`, used when the trace is not positive.
    Frobenius,
}

pub(crate) fn uniformity_scale(a: &DMatrix<f64>) -> Option<(f64, ScaleKind)> {
    let d = a.nrows() as f64;
    let s = trace(a) / d;
    if s > 0.0 {
        return Some((s, ScaleKind::Trace));
    }
    let fro = a.norm();
    if fro > 0.0 {
        Some((fro / d.sqrt(), ScaleKind::Frobenius))
    } else {
        None
    }
}

/// `−(1/d)·tr log A + tr A` with `log A = (log s)·I + log_T(A/s)`.
/// Infinite for the zero matrix.
pub(crate) fn uniformity_taylor(a: &DMatrix<f64>, order: usize) -> Result<f64> {
    let d = a.nrows() as f64;
    let Some((s, _)) = uniformity_scale(a) else {
        return Ok(f64::INFINITY);
    };
    let log_t = matrix_log_taylor(&(a / s), order)?;
    let tr_log = d * s.ln() + trace(&log_t);
    Ok(-tr_log / d + trace(a))
}

/// `C(Z1, Z2) + λI`
pub(crate) fn regularized_cross(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<DMatrix<f64>> {
    let mut a = cross_cov(z1, z2, cfg.centering)?;
    for i in 0..a.nrows() {
        a[(i, i)] += cfg.lambda_reg;
    }
    Ok(a)
}

pub(crate) fn regularized_auto(z: &EmbeddingBatch, cfg: &LossConfig) -> Result<SymMatrix> {
    Ok(auto_cov(z, cfg.centering)?.shifted(cfg.lambda_reg))
}

fn uniformity_from_argument(a: &DMatrix<f64>, cfg: &LossConfig) -> Result<f64> {
    match cfg.log_mode {
        LogMode::Taylor => uniformity_taylor(a, cfg.taylor_order),
        LogMode::Exact => {
            let d = a.nrows();
            let target = SymMatrix::scaled_identity(d, 1.0 / d as f64);
            mce_with(&target, &SymMatrix::symmetrize(a)?, &cfg.info())
        }
    }
}

/// Matrix-Uniformity `MCE(I/d, C(Z1,Z2) + λI)`.
pub fn uniformity_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let a = regularized_cross(z1, z2, cfg)?;
    uniformity_from_argument(&a, cfg)
}

fn gamma_times(gamma: f64, v: f64) -> f64 {
    if gamma == 0.0 {
        0.0
    } else {
        gamma * v
    }
}

/// Matrix-Alignment `−tr C(Z1,Z2) + γ·MCE(C(Z1,Z1)+λI, C(Z2,Z2)+λI)`.
pub fn alignment_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    let t = matrix_ssl_terms(z1, z2, cfg)?;
    Ok(t.trace_term + t.matrix_alignment)
}

/// The pieces of Matrix-SSL. `total = uniformity + trace_term +
/// matrix_alignment`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslTerms {
    pub uniformity: f64,
    /// `−tr C(Z1, Z2)`
    pub trace_term: f64,
    /// `γ·MCE(...)` for Matrix-SSL, `γ·MKL(...)` for Matrix-SSL-KL.
    pub matrix_alignment: f64,
    pub total: f64,
}

pub fn matrix_ssl_terms(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<SslTerms> {
    cfg.validate()?;
    let a = regularized_cross(z1, z2, cfg)?;
    let uniformity = uniformity_from_argument(&a, cfg)?;
    let trace_term = -trace(&cross_cov(z1, z2, cfg.centering)?);
    let p = regularized_auto(z1, cfg)?;
    let q = regularized_auto(z2, cfg)?;
    let matrix_alignment = gamma_times(cfg.gamma, mce_with(&p, &q, &cfg.info())?);
    Ok(SslTerms {
        uniformity,
        trace_term,
        matrix_alignment,
        total: uniformity + (trace_term + matrix_alignment),
    })
}

/// Matrix-SSL = uniformity + alignment.
pub fn matrix_ssl_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    Ok(matrix_ssl_terms(z1, z2, cfg)?.total)
}

pub fn matrix_ssl_kl_terms(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<SslTerms> {
    cfg.validate()?;
    let a = regularized_cross(z1, z2, cfg)?;
    let d = a.nrows();
    let target = SymMatrix::scaled_identity(d, 1.0 / d as f64);
    let uniformity = match cfg.log_mode {
        LogMode::Exact => mkl_with(&target, &SymMatrix::symmetrize(&a)?, &cfg.info())?,
        LogMode::Taylor => uniformity_taylor(&a, cfg.taylor_order)? - matrix_entropy_with(&target, &cfg.info())?,
    };
    let trace_term = -trace(&cross_cov(z1, z2, cfg.centering)?);
    let p = regularized_auto(z1, cfg)?;
    let q = regularized_auto(z2, cfg)?;
    let matrix_alignment = gamma_times(cfg.gamma, mkl_with(&p, &q, &cfg.info())?);
    Ok(SslTerms {
        uniformity,
        trace_term,
        matrix_alignment,
        total: uniformity + (trace_term + matrix_alignment),
    })
}

/// Matrix-SSL with every MCE replaced by the matching MKL.
pub fn matrix_ssl_kl_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    Ok(matrix_ssl_kl_terms(z1, z2, cfg)?.total)
}

/// Element-wise alignment `Σᵢ ‖z1ᵢ − z2ᵢ‖²` (the BYOL-type MSE).
pub fn vector_alignment_mse(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<f64> {
    crate::linalg::require_same_shape(z1, z2)?;
    Ok(pairwise_sum_by(
        z1.matrix().column_iter().zip(z2.matrix().column_iter()),
        |(a, b)| (a - b).norm_squared(),
    ))
}

const PROB_TOL: f64 = 1e-9;
const EMBED_NORM_TOL: f64 = 1e-8;

/// One next-token step: target distribution `p`, model distribution `q`,
/// and the unit-norm token embeddings (one column per vocabulary entry).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStep {
    p: Vec<f64>,
    q: Vec<f64>,
    embeddings: DMatrix<f64>,
}

fn check_distribution(name: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{name}[{i}] = {}", v[i])));
    }
    let s = pairwise_sum(v);
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

impl TokenStep {
    pub fn new(p: Vec<f64>, q: Vec<f64>, embeddings: DMatrix<f64>) -> Result<Self> {
        let n = embeddings.ncols();
        if p.len() != n || q.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary of {n} tokens but distributions of length {} and {}",
                p.len(),
                q.len()
            )));
        }
        check_distribution("p", &p)?;
        check_distribution("q", &q)?;
        for (j, col) in embeddings.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > EMBED_NORM_TOL {
                return Err(Error::NotUnitNorm { column: j, norm });
            }
        }
        Ok(Self { p, q, embeddings })
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.embeddings
    }

    /// `Σᵢ wᵢ eᵢ eᵢᵀ`
    fn weighted_outer(&self, w: &[f64]) -> Result<SymMatrix> {
        let mut scaled = self.embeddings.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= w[j];
        }
        SymMatrix::symmetrize(&(scaled * self.embeddings.transpose()))
    }
}

/// Classical cross-entropy `−Σ pᵢ log qᵢ`; infinite when `q` vanishes
/// (at or below the floor) where `p` has mass.
pub fn cross_entropy(p: &[f64], q: &[f64], floor: f64) -> f64 {
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi <= floor {
            return f64::INFINITY;
        }
        terms.push(-pi * floored_ln(qi, floor));
    }
    pairwise_sum(&terms)
}

/// Matrix-LLM objective split into its two sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlmLoss {
    pub cross_entropy: f64,
    pub matrix_cross_entropy: f64,
    pub total: f64,
    /// `Σₖ tr Q⁽ᵏ⁾`, equal to the number of steps for unit-norm embeddings.
    pub trace_q: f64,
}

/// `Σₖ CE(p⁽ᵏ⁾, q⁽ᵏ⁾) + Σₖ MCE(P⁽ᵏ⁾, Q⁽ᵏ⁾)` with `P = Σᵢ pᵢ eᵢeᵢᵀ` and
/// `Q = Σⱼ qⱼ eⱼeⱼᵀ`. The `+tr Q` term of MCE is kept.
pub fn matrix_llm_loss(steps: &[TokenStep], floor: f64) -> Result<LlmLoss> {
    let Some(first) = steps.first() else {
        return Err(Error::Empty("token steps"));
    };
    let info = InfoConfig::new(floor)?;
    let mut ce_terms = Vec::with_capacity(steps.len());
    let mut mce_terms = Vec::with_capacity(steps.len());
    let mut trace_terms = Vec::with_capacity(steps.len());
    for (k, step) in steps.iter().enumerate() {
        if step.embeddings != first.embeddings {
            return Err(Error::EmbeddingMismatch(k));
        }
        ce_terms.push(cross_entropy(&step.p, &step.q, floor));
        let p = step.weighted_outer(&step.p)?;
        let q = step.weighted_outer(&step.q)?;
        trace_terms.push(q.trace());
        mce_terms.push(mce_with(&p, &q, &info)?);
    }
    let cross_entropy = pairwise_sum(&ce_terms);
    let matrix_cross_entropy = pairwise_sum(&mce_terms);
    Ok(LlmLoss {
        cross_entropy,
        matrix_cross_entropy,
        total: cross_entropy + matrix_cross_entropy,
        trace_q: pairwise_sum(&trace_terms),
    })
}
