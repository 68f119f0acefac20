//! Sphere-constrained gradient descent on free embedding columns, and
//! descent of a covariance towards a fixed target.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grad::{
    alignment_partials, grad_tcr, grad_tr_plogq, matrix_ssl_kl_partials, matrix_ssl_partials, mec_partials,
    uniformity_partials, Partials,
};
use crate::error::{Error, Result};
use crate::linalg::{check_psd, sym_eig, EmbeddingBatch, SymMatrix, LOG_FLOOR, UNIT_NORM_TOL};
use crate::losses::LossConfig;
use crate::matinfo::{erank_sym, mce};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_FACTOR: f64 = 0.5;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the (projected) gradient norm is at most this.
    pub tol_grad_norm: f64,
    /// Seed for the random starting batch.
    pub seed: u64,
    /// Renormalize every column after each step.
    pub project_sphere: bool,
    /// Armijo backtracking from `step_size`.
    pub backtracking: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_iters: 5000,
            tol_grad_norm: 1e-7,
            seed: 0,
            project_sphere: true,
            backtracking: false,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(self.tol_grad_norm >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gradient tolerance must be >= 0, got {}",
                self.tol_grad_norm
            )));
        }
        Ok(())
    }

    /// Standard normal `d×B` batch with unit columns, drawn from `seed`.
    pub fn initial_batch(&self, d: usize, b: usize) -> Result<EmbeddingBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        EmbeddingBatch::random_unit(d, b, &mut rng)
    }
}

/// The loss being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// TCR of branch 2 alone.
    Tcr,
    Mec,
    Uniformity,
    Alignment,
    #[default]
    MatrixSsl,
    MatrixSslKl,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::Tcr,
        Objective::Mec,
        Objective::Uniformity,
        Objective::Alignment,
        Objective::MatrixSsl,
        Objective::MatrixSslKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Tcr => "tcr",
            Objective::Mec => "mec",
            Objective::Uniformity => "uniformity",
            Objective::Alignment => "alignment",
            Objective::MatrixSsl => "matrix-ssl",
            Objective::MatrixSslKl => "matrix-ssl-kl",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }

    pub(crate) fn partials(self, z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<Partials> {
        match self {
            Objective::Tcr => {
                let (value, g) = grad_tcr(z2, cfg)?;
                Ok(Partials {
                    value,
                    z1: DMatrix::zeros(z1.d(), z1.batch_size()),
                    z2: g,
                })
            }
            Objective::Mec => mec_partials(z1, z2, cfg),
            Objective::Uniformity => uniformity_partials(z1, z2, cfg),
            Objective::Alignment => alignment_partials(z1, z2, cfg),
            Objective::MatrixSsl => matrix_ssl_partials(z1, z2, cfg),
            Objective::MatrixSslKl => matrix_ssl_kl_partials(z1, z2, cfg),
        }
    }

    pub fn value(self, z1: &EmbeddingBatch, z2: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
        use crate::losses::*;
        match self {
            Objective::Tcr => tcr_loss(z2, cfg),
            Objective::Mec => mec_loss(z1, z2, cfg),
            Objective::Uniformity => uniformity_loss(z1, z2, cfg),
            Objective::Alignment => alignment_loss(z1, z2, cfg),
            Objective::MatrixSsl => matrix_ssl_loss(z1, z2, cfg),
            Objective::MatrixSslKl => matrix_ssl_kl_loss(z1, z2, cfg),
        }
    }
}

/// One row of a [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub loss: f64,
    /// `erank((1/B)·Z2 Z2ᵀ)`
    pub erank: f64,
    /// `‖(1/B)·Z2 Z2ᵀ − I/d‖_F`
    pub dist_to_uniform: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&Record> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIters,
    /// No step size passed the Armijo test.
    Stalled,
    /// The loss or gradient became non-finite at this iteration.
    Diverged {
        iteration: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentRun {
    pub trajectory: Trajectory,
    pub z1: EmbeddingBatch,
    pub z2: EmbeddingBatch,
    pub stop: StopReason,
}

fn uniform_distance(z: &EmbeddingBatch) -> Result<(f64, f64)> {
    let m = z.second_moment();
    let d = z.d();
    let erank = match erank_sym(&m) {
        Err(Error::ZeroMatrix) => 0.0,
        other => other?,
    };
    let dist = (m.as_matrix() - DMatrix::<f64>::identity(d, d) / d as f64).norm();
    Ok((erank, dist))
}

/// Removes the radial component of each column's gradient.
fn tangent(z: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = g.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let zj = z.column(j);
        let radial = zj.dot(&g.column(j));
        col.axpy(-radial, &zj, 1.0);
    }
    out
}

/// `None` when the step leaves the finite range.
fn step_to(z: &DMatrix<f64>, dir: &DMatrix<f64>, t: f64, sphere: bool) -> Result<Option<EmbeddingBatch>> {
    let moved = z - dir * t;
    if !all_finite(&moved) || moved.column_iter().any(|c| !c.norm().is_finite()) {
        return Ok(None);
    }
    if sphere {
        EmbeddingBatch::normalized(moved).map(Some)
    } else {
        EmbeddingBatch::new(moved).map(Some)
    }
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

struct Point {
    z1: EmbeddingBatch,
    z2: EmbeddingBatch,
    value: f64,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    grad_norm: f64,
}

impl Point {
    fn evaluate(
        objective: Objective,
        z1: EmbeddingBatch,
        z2: EmbeddingBatch,
        lcfg: &LossConfig,
        dcfg: &DescentConfig,
    ) -> Result<Self> {
        let p = objective.partials(&z1, &z2, lcfg)?;
        let (d1, d2) = if dcfg.project_sphere {
            (tangent(z1.matrix(), &p.z1), tangent(z2.matrix(), &p.z2))
        } else {
            (p.z1, p.z2)
        };
        let mut sq = d2.norm_squared();
        if !lcfg.stop_grad_branch1 {
            sq += d1.norm_squared();
        }
        Ok(Self {
            z1,
            z2,
            value: p.value,
            d1,
            d2,
            grad_norm: sq.sqrt(),
        })
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && all_finite(&self.d1) && all_finite(&self.d2)
    }

    fn record(&self, iter: usize) -> Result<Record> {
        let (erank, dist_to_uniform) = uniform_distance(&self.z2)?;
        Ok(Record {
            iter,
            loss: self.value,
            erank,
            dist_to_uniform,
            grad_norm: self.grad_norm,
        })
    }
}

/// Projected gradient descent on the embedding columns.
///
/// With `lcfg.stop_grad_branch1` branch 1 is the target: each step moves
/// only `Z2` (with `Z1` held fixed) and then copies `Z2` into `Z1`, so the
/// two branches stay tied after the first step. Otherwise both branches
/// follow their full partial gradients. Backtracking, when enabled, tests
/// the Armijo condition on the objective as seen by the moving branches.
pub fn descend(
    objective: Objective,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    lcfg: &LossConfig,
    dcfg: &DescentConfig,
) -> Result<DescentRun> {
    lcfg.validate()?;
    dcfg.validate()?;
    crate::linalg::require_same_shape(z1, z2)?;
    if dcfg.project_sphere {
        for z in [z1, z2] {
            for (j, col) in z.matrix().column_iter().enumerate() {
                let norm = col.norm();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::NotUnitNorm { column: j, norm });
                }
            }
        }
    }
    let tied = lcfg.stop_grad_branch1;
    let mut trajectory = Trajectory::default();
    let mut point = Point::evaluate(objective, z1.clone(), z2.clone(), lcfg, dcfg)?;
    if !point.is_finite() {
        return Ok(DescentRun {
            trajectory,
            z1: point.z1,
            z2: point.z2,
            stop: StopReason::Diverged { iteration: 0 },
        });
    }
    trajectory.records.push(point.record(0)?);

    let mut stop = StopReason::MaxIters;
    for it in 1..=dcfg.max_iters {
        if point.grad_norm <= dcfg.tol_grad_norm {
            stop = StopReason::Converged;
            break;
        }
        let mut t = dcfg.step_size;
        let mut accepted = None;
        let mut overflowed = false;
        for _ in 0..=MAX_HALVINGS {
            let next2 = step_to(point.z2.matrix(), &point.d2, t, dcfg.project_sphere)?;
            let next1 = if tied {
                Some(point.z1.clone())
            } else {
                step_to(point.z1.matrix(), &point.d1, t, dcfg.project_sphere)?
            };
            let (Some(next1), Some(next2)) = (next1, next2) else {
                overflowed = true;
                if dcfg.backtracking {
                    t *= BACKTRACK_FACTOR;
                    continue;
                }
                break;
            };
            overflowed = false;
            if !dcfg.backtracking {
                accepted = Some((next1, next2));
                break;
            }
            let f = objective.value(&next1, &next2, lcfg)?;
            if f.is_finite() && f <= point.value - ARMIJO_C * t * point.grad_norm * point.grad_norm {
                accepted = Some((next1, next2));
                break;
            }
            t *= BACKTRACK_FACTOR;
        }
        let Some((next1, next2)) = accepted else {
            stop = if overflowed {
                StopReason::Diverged { iteration: it }
            } else {
                StopReason::Stalled
            };
            break;
        };
        let next1 = if tied { next2.clone() } else { next1 };
        point = Point::evaluate(objective, next1, next2, lcfg, dcfg)?;
        if !point.is_finite() {
            stop = StopReason::Diverged { iteration: it };
            break;
        }
        trajectory.records.push(point.record(it)?);
    }
    if stop == StopReason::MaxIters && point.grad_norm <= dcfg.tol_grad_norm {
        stop = StopReason::Converged;
    }
    Ok(DescentRun {
        trajectory,
        z1: point.z1,
        z2: point.z2,
        stop,
    })
}

pub fn descend_matrix_ssl(
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    lcfg: &LossConfig,
    dcfg: &DescentConfig,
) -> Result<DescentRun> {
    descend(Objective::MatrixSsl, z1, z2, lcfg, dcfg)
}

/// Endpoint of [`descend_mce_to_p`].
#[derive(Debug, Clone, PartialEq)]
pub struct MceDescent {
    pub q: SymMatrix,
    pub iterations: usize,
    /// Frobenius norm of the gradient at `q`.
    pub grad_norm: f64,
    pub converged: bool,
}

fn require_spd(a: &SymMatrix) -> Result<()> {
    let spec = sym_eig(a)?;
    check_psd(&spec)?;
    let min = spec.min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::Singular { min_eigenvalue: min });
    }
    Ok(())
}

/// Gradient descent on `Q ↦ MCE(P, Q)`, whose `Q`-gradient
/// `I − ∇tr(P log Q)` is shared with `MKL(P‖Q)`. After each step the
/// eigenvalues of `Q` are clamped at the log floor.
pub fn descend_mce_to_p(p: &SymMatrix, init_q: &SymMatrix, dcfg: &DescentConfig) -> Result<MceDescent> {
    dcfg.validate()?;
    require_spd(p)?;
    require_spd(init_q)?;
    let n = p.dim();
    let mut q = init_q.clone();
    let mut it = 0;
    loop {
        let g = DMatrix::identity(n, n) - grad_tr_plogq(p, &q)?.into_matrix();
        let grad_norm = g.norm();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss: mce(p, &q).unwrap_or(f64::NAN),
            });
        }
        if grad_norm <= dcfg.tol_grad_norm || it == dcfg.max_iters {
            return Ok(MceDescent {
                q,
                iterations: it,
                grad_norm,
                converged: grad_norm <= dcfg.tol_grad_norm,
            });
        }
        let stepped = SymMatrix::symmetrize(&(q.as_matrix() - g * dcfg.step_size))?;
        if stepped.as_matrix().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: it + 1,
                loss: f64::NAN,
            });
        }
        q = sym_eig(&stepped)?.apply(|l| l.max(LOG_FLOOR));
        it += 1;
    }
}
