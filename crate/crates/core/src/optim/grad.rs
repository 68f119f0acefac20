//! Analytic gradients of the matrix information quantities and losses.
//!
//! Gradients are Frobenius-dual: `dL = ⟨G, dX⟩ = tr(Gᵀ dX)`. Losses go
//! through the covariance matrices first and are then pulled back to the
//! embedding columns with the chain rule on `C = (1/B)·Z1 H Z2ᵀ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{center_rows, check_psd, matrix_log_spectral, sym_eig, Centering, EmbeddingBatch, SymMatrix};
use crate::losses::{
    alignment_loss, coding_coefficient, matrix_ssl_kl_loss, matrix_ssl_loss, mec_loss, regularized_auto,
    regularized_cross, tcr_loss, uniformity_loss, uniformity_scale, LogMode, LossConfig, ScaleKind,
};

/// Eigenvalue gaps below this use the confluent divided difference.
const DEGENERATE_GAP: f64 = 1e-10;

fn spd_spectrum(q: &SymMatrix) -> Result<crate::linalg::Spectrum> {
    let spec = sym_eig(q)?;
    check_psd(&spec)?;
    let min = spec.min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::Singular { min_eigenvalue: min });
    }
    Ok(spec)
}

/// `−P·Q⁻¹ + I`, symmetrized. This is the gradient of `Q ↦ MCE(P, Q)` only
/// when `P` and `Q` commute; [`grad_tr_plogq`] is exact in general.
pub fn grad_mce_q_commuting(p: &SymMatrix, q: &SymMatrix) -> Result<SymMatrix> {
    let q_inv = spd_spectrum(q)?.apply(|l| 1.0 / l);
    let n = q.dim();
    SymMatrix::symmetrize(&(DMatrix::identity(n, n) - p.as_matrix() * q_inv.as_matrix()))
}

/// First divided difference of `ln` at `(a, b)`.
fn log_divided_difference(a: f64, b: f64) -> f64 {
    let gap = a - b;
    if gap.abs() < DEGENERATE_GAP {
        1.0 / a
    } else {
        (gap / b).ln_1p() / gap
    }
}

/// Exact gradient of `Q ↦ tr(P log Q)`: `V (P̃ ∘ L) Vᵀ` with `P̃ = VᵀPV`
/// and `L` the divided differences of `ln` on the spectrum of `Q`.
pub fn grad_tr_plogq(p: &SymMatrix, q: &SymMatrix) -> Result<SymMatrix> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "P is {0}x{0}, Q is {1}x{1}",
            p.dim(),
            q.dim()
        )));
    }
    let spec = spd_spectrum(q)?;
    let v = &spec.eigenvectors;
    let lam = spec.eigenvalues.as_slice();
    let mut pt = v.transpose() * p.as_matrix() * v;
    for j in 0..lam.len() {
        for i in 0..lam.len() {
            pt[(i, j)] *= log_divided_difference(lam[i], lam[j]);
        }
    }
    SymMatrix::symmetrize(&(v * pt * v.transpose()))
}

/// Gradient of one loss with respect to each branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub value: f64,
    pub z2: DMatrix<f64>,
    /// Absent when branch 1 is treated as a constant.
    pub z1: Option<DMatrix<f64>>,
}

/// Both partial gradients, regardless of stop-gradient settings.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Partials {
    pub value: f64,
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
}

impl Partials {
    fn into_gradient(self, cfg: &LossConfig) -> Gradient {
        Gradient {
            value: self.value,
            z2: self.z2,
            z1: (!cfg.stop_grad_branch1).then_some(self.z1),
        }
    }
}

/// Gradients with respect to `C(Z1,Z2)`, `C(Z1,Z1)` and `C(Z2,Z2)`.
struct CovGrads {
    g12: DMatrix<f64>,
    g11: DMatrix<f64>,
    g22: DMatrix<f64>,
}

impl CovGrads {
    fn zeros(d: usize) -> Self {
        Self {
            g12: DMatrix::zeros(d, d),
            g11: DMatrix::zeros(d, d),
            g22: DMatrix::zeros(d, d),
        }
    }

    /// Pulls back to `(∂/∂Z1, ∂/∂Z2)`.
    fn chain(&self, z1: &EmbeddingBatch, z2: &EmbeddingBatch, centering: Centering) -> (DMatrix<f64>, DMatrix<f64>) {
        let (h1, h2) = match centering {
            Centering::On => (center_rows(z1.matrix()), center_rows(z2.matrix())),
            Centering::Off => (z1.matrix().clone(), z2.matrix().clone()),
        };
        let b = z1.batch_size() as f64;
        let g1 = (&self.g12 * &h2 + (&self.g11 + self.g11.transpose()) * &h1) / b;
        let g2 = (self.g12.transpose() * &h1 + (&self.g22 + self.g22.transpose()) * &h2) / b;
        (g1, g2)
    }
}

/// `Σ_{k<order} (I − X)^k`, the derivative kernel of the truncated log.
fn taylor_log_kernel(x: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let y = DMatrix::identity(n, n) - x;
    let mut power = DMatrix::identity(n, n);
    let mut acc = DMatrix::zeros(n, n);
    for k in 0..order {
        acc += &power;
        if k + 1 < order {
            power = &power * &y;
        }
    }
    acc
}

/// Gradient of the uniformity term with respect to `A = C(Z1,Z2) + λI`.
/// The same expression serves the KL variant, which differs by a constant.
fn uniformity_grad_a(a: &DMatrix<f64>, cfg: &LossConfig) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let df = d as f64;
    let eye = DMatrix::<f64>::identity(d, d);
    match cfg.log_mode {
        LogMode::Taylor => {
            let (s, kind) = uniformity_scale(a).ok_or(Error::ZeroMatrix)?;
            let g = taylor_log_kernel(&(a / s), cfg.taylor_order);
            let dv_ds = -1.0 / s + (&g * a).trace() / (df * s * s);
            let ds_da = match kind {
                ScaleKind::Trace => &eye / df,
                ScaleKind::Frobenius => a / (df.sqrt() * a.norm()),
            };
            Ok(-g.transpose() / (df * s) + &eye + ds_da * dv_ds)
        }
        LogMode::Exact => {
            let s = SymMatrix::symmetrize(a)?;
            let target = SymMatrix::scaled_identity(d, 1.0 / df);
            Ok(eye - grad_tr_plogq(&target, &s)?.into_matrix())
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Divergence {
    CrossEntropy,
    Kl,
}

fn add_alignment(
    g: &mut CovGrads,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    cfg: &LossConfig,
    kind: Divergence,
) -> Result<()> {
    let d = z1.d();
    g.g12 -= DMatrix::<f64>::identity(d, d);
    if cfg.gamma == 0.0 {
        return Ok(());
    }
    let p = regularized_auto(z1, cfg)?;
    let q = regularized_auto(z2, cfg)?;
    let dq = DMatrix::<f64>::identity(d, d) - grad_tr_plogq(&p, &q)?.into_matrix();
    g.g22 += dq * cfg.gamma;
    let log_q = matrix_log_spectral(&q, cfg.floor)?.into_matrix();
    let dp = match kind {
        Divergence::CrossEntropy => -log_q,
        Divergence::Kl => matrix_log_spectral(&p, cfg.floor)?.into_matrix() - log_q,
    };
    g.g11 += dp * cfg.gamma;
    Ok(())
}

fn add_uniformity(g: &mut CovGrads, z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<()> {
    let a = regularized_cross(z1, z2, cfg)?;
    g.g12 += uniformity_grad_a(&a, cfg)?;
    Ok(())
}

fn pull_back(g: CovGrads, value: f64, z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Partials {
    let (g1, g2) = g.chain(z1, z2, cfg.centering);
    Partials { value, z1: g1, z2: g2 }
}

pub(crate) fn uniformity_partials(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Partials> {
    let value = uniformity_loss(z1, z2, cfg)?;
    let mut g = CovGrads::zeros(z1.d());
    add_uniformity(&mut g, z1, z2, cfg)?;
    Ok(pull_back(g, value, z1, z2, cfg))
}

pub(crate) fn alignment_partials(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Partials> {
    let value = alignment_loss(z1, z2, cfg)?;
    let mut g = CovGrads::zeros(z1.d());
    add_alignment(&mut g, z1, z2, cfg, Divergence::CrossEntropy)?;
    Ok(pull_back(g, value, z1, z2, cfg))
}

pub(crate) fn matrix_ssl_partials(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Partials> {
    let value = matrix_ssl_loss(z1, z2, cfg)?;
    let mut g = CovGrads::zeros(z1.d());
    add_uniformity(&mut g, z1, z2, cfg)?;
    add_alignment(&mut g, z1, z2, cfg, Divergence::CrossEntropy)?;
    Ok(pull_back(g, value, z1, z2, cfg))
}

pub(crate) fn matrix_ssl_kl_partials(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Partials> {
    let value = matrix_ssl_kl_loss(z1, z2, cfg)?;
    let mut g = CovGrads::zeros(z1.d());
    add_uniformity(&mut g, z1, z2, cfg)?;
    add_alignment(&mut g, z1, z2, cfg, Divergence::Kl)?;
    Ok(pull_back(g, value, z1, z2, cfg))
}

pub(crate) fn mec_partials(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Partials> {
    let value = mec_loss(z1, z2, cfg)?;
    let d = z1.d();
    let c = coding_coefficient(d, z1.batch_size(), cfg.eps_sq);
    let m = DMatrix::identity(d, d) + z1.matrix() * z2.matrix().transpose() * c;
    let g = taylor_log_kernel(&m, cfg.taylor_order);
    let scale = -cfg.mu * c;
    Ok(Partials {
        value,
        z1: g.transpose() * z2.matrix() * scale,
        z2: g * z1.matrix() * scale,
    })
}

/// TCR value and its gradient `−c (I + c ZZᵀ)⁻¹ Z`.
pub fn grad_tcr(z: &EmbeddingBatch, cfg: &LossConfig) -> Result<(f64, DMatrix<f64>)> {
    let value = tcr_loss(z, cfg)?;
    let d = z.d();
    let c = coding_coefficient(d, z.batch_size(), cfg.eps_sq);
    let m = SymMatrix::symmetrize(&(DMatrix::identity(d, d) + z.outer_gram().as_matrix() * c))?;
    let m_inv = spd_spectrum(&m)?.apply(|l| 1.0 / l);
    Ok((value, m_inv.as_matrix() * z.matrix() * (-c)))
}

pub fn grad_mec(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Gradient> {
    Ok(mec_partials(z1, z2, cfg)?.into_gradient(cfg))
}

pub fn grad_uniformity(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Gradient> {
    Ok(uniformity_partials(z1, z2, cfg)?.into_gradient(cfg))
}

pub fn grad_alignment(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Gradient> {
    Ok(alignment_partials(z1, z2, cfg)?.into_gradient(cfg))
}

/// Gradient of Matrix-SSL with respect to `Z2`, and `Z1` unless
/// `cfg.stop_grad_branch1`.
pub fn grad_matrix_ssl(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Gradient> {
    Ok(matrix_ssl_partials(z1, z2, cfg)?.into_gradient(cfg))
}

pub fn grad_matrix_ssl_kl(z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Gradient> {
    Ok(matrix_ssl_kl_partials(z1, z2, cfg)?.into_gradient(cfg))
}

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of `f` at `x`, one entry at a time.
pub fn finite_difference<F>(f: F, x: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + step;
            let up = f(&probe)?;
            probe[(i, j)] = orig - step;
            let down = f(&probe)?;
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`, zero when both vanish.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}
