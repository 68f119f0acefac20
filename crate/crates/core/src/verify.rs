//! Numerical check batteries for the identities and optima implemented in
//! this crate.
//!
//! Each battery returns named [`Check`]s (pass iff `|measured − expected| ≤
//! tolerance`) together with scalar results and tables for reporting.
//! Random instances come from per-trial streams of one seed, so batteries
//! are reproducible and may run trials in parallel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::collapse::{build_simplex_etf, etf_erank_check};
use crate::error::{Error, Result};
use crate::linalg::{matrix_log_spectral, matrix_log_taylor, random_spd, EmbeddingBatch, SymMatrix, LOG_FLOOR};
use crate::losses::{
    alignment_loss, matrix_ssl_kl_loss, matrix_ssl_loss, mec_loss, tcr_loss, uniformity_loss, vector_alignment_mse,
    LogMode, LossConfig,
};
use crate::matinfo::{erank_sym, mce, mkl, vne};
use crate::optim::{
    descend_matrix_ssl, descend_mce_to_p, finite_difference, grad_alignment, grad_matrix_ssl, grad_matrix_ssl_kl,
    grad_mce_q_commuting, grad_mec, grad_tcr, grad_tr_plogq, grad_uniformity, relative_error, relative_gap,
    verify_theorem_4_1, DescentConfig, Gradient, FD_STEP,
};

/// One named comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            expected,
            tolerance,
        }
    }

    /// A relative error compared against zero.
    pub fn relative(name: impl Into<String>, rel_err: f64, tolerance: f64) -> Self {
        Self::new(name, rel_err, 0.0, tolerance)
    }

    pub fn pass(&self) -> bool {
        (self.measured - self.expected).abs() <= self.tolerance
    }
}

/// Column-labelled numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Battery {
    pub checks: Vec<Check>,
    pub scalars: Vec<(String, f64)>,
    pub tables: Vec<Table>,
}

impl Battery {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.pass()).count()
    }

    fn extend(&mut self, other: Battery) {
        self.checks.extend(other.checks);
        self.scalars.extend(other.scalars);
        self.tables.extend(other.tables);
    }

    fn scalar(&mut self, name: impl Into<String>, v: f64) {
        self.scalars.push((name.into(), v));
    }
}

/// Named check batteries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Thm41,
    Prop61,
    Minimizers,
    Etf,
    Taylor,
    Stopgrad,
    Example33,
    Gradients,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::All,
        Suite::Thm41,
        Suite::Prop61,
        Suite::Minimizers,
        Suite::Etf,
        Suite::Taylor,
        Suite::Stopgrad,
        Suite::Example33,
        Suite::Gradients,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Thm41 => "thm41",
            Suite::Prop61 => "prop61",
            Suite::Minimizers => "minimizers",
            Suite::Etf => "etf",
            Suite::Taylor => "taylor",
            Suite::Stopgrad => "stopgrad",
            Suite::Example33 => "example33",
            Suite::Gradients => "gradients",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Runs one battery with `trials` random instances where it uses any.
pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<Battery> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    match suite {
        Suite::Example33 => example33(),
        Suite::Prop61 => prop61(trials, seed),
        Suite::Thm41 => thm41(trials, seed),
        Suite::Minimizers => minimizers(trials, seed),
        Suite::Etf => etf(),
        Suite::Taylor => taylor(trials, seed),
        Suite::Stopgrad => stopgrad(trials, seed),
        Suite::Gradients => gradients(trials, seed),
        Suite::All => {
            let mut all = Battery::default();
            for s in [
                Suite::Example33,
                Suite::Prop61,
                Suite::Thm41,
                Suite::Minimizers,
                Suite::Etf,
                Suite::Taylor,
                Suite::Stopgrad,
                Suite::Gradients,
            ] {
                all.extend(run_suite(s, trials, seed)?);
            }
            Ok(all)
        }
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn par_trials<T, F>(trials: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| f(i, &mut stream(seed, i as u64)))
        .collect()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// The two-sample illustration: identical vector MSE, very different MKL.
pub fn example33() -> Result<Battery> {
    let batch = |rows: &[f64]| EmbeddingBatch::new(DMatrix::from_row_slice(2, 2, rows));
    let cases = [
        (batch(&[1.0, 0.0, 0.0, 1.0])?, batch(&[0.8, 0.6, 0.6, 0.8])?, 2.55),
        (batch(&[1.0, 0.6, 0.0, 0.8])?, batch(&[0.8, 0.0, 0.6, 1.0])?, 0.60),
    ];
    let mut out = Battery::default();
    for (i, (z1, z2, quoted)) in cases.iter().enumerate() {
        let p = SymMatrix::symmetrize(&(z1.matrix() * z1.matrix().transpose()))?;
        let q = SymMatrix::symmetrize(&(z2.matrix() * z2.matrix().transpose()))?;
        let v = mkl(&p, &q)?;
        out.checks
            .push(Check::new(format!("example33.case{}.mkl", i + 1), v, *quoted, 0.01));
        out.scalar(format!("example33.case{}.mse", i + 1), vector_alignment_mse(z1, z2)?);
    }
    Ok(out)
}

/// `erank·exp(MKL(C‖I/d)) = d` and `erank = exp(VNE)` for `C = (1/B)ZZᵀ`.
pub fn prop61(trials: usize, seed: u64) -> Result<Battery> {
    let rows = par_trials(trials, seed, |_, rng| {
        let d = rng.random_range(1..=16usize);
        let b = rng.random_range(1..=2 * d);
        let z = EmbeddingBatch::random_unit(d, b, rng)?;
        let c = z.second_moment();
        let er = erank_sym(&c)?;
        let kl = mkl(&c, &SymMatrix::scaled_identity(d, 1.0 / d as f64))?;
        let h = vne(&c)?;
        let e1 = relative_gap(er * kl.exp(), d as f64);
        let e2 = relative_gap(er, h.exp());
        Ok(vec![d as f64, b as f64, er, kl, h, e1, e2])
    })?;
    let mut out = Battery::default();
    for (i, r) in rows.iter().enumerate() {
        out.checks
            .push(Check::relative(format!("prop61[{i}]"), r[5].max(r[6]), 1e-9));
    }
    out.tables.push(Table {
        name: "prop61".into(),
        columns: ["d", "B", "erank", "mkl_to_uniform", "vne", "rel_err_mkl", "rel_err_vne"]
            .map(String::from)
            .to_vec(),
        rows,
    });
    Ok(out)
}

pub fn thm41(trials: usize, seed: u64) -> Result<Battery> {
    let report = verify_theorem_4_1(trials, seed)?;
    let mut out = Battery::default();
    let id = &report.probes[0];
    out.checks
        .push(Check::new("thm41.probe_identity.mce_direct", id.mce_direct, 2.0, 1e-12));
    out.checks.push(Check::new(
        "thm41.probe_identity.mce_corrected",
        id.mce_corrected,
        2.0,
        1e-12,
    ));
    out.checks.push(Check::new(
        "thm41.probe_identity.mkl_corrected",
        id.mkl_corrected,
        id.mkl_direct,
        1e-12,
    ));
    let line = &report.probes[1];
    out.checks.push(Check::new(
        "thm41.probe_d1.mce_stated_gap",
        line.mce_stated_gap(),
        0.0,
        1e-12,
    ));
    out.checks.push(Check::new(
        "thm41.probe_d1.mkl_stated_gap",
        line.mkl_stated_gap(),
        0.0,
        1e-12,
    ));
    for (i, r) in report.trials.iter().enumerate() {
        out.checks.push(Check::relative(
            format!("thm41[{i}]"),
            r.mce_rel_err().max(r.mkl_rel_err()),
            1e-9,
        ));
    }
    out.scalar("thm41.max_rel_err", report.max_rel_err());
    out.scalar("thm41.probe_identity.mce_stated", id.mce_stated);
    let min_gap = report
        .trials
        .iter()
        .map(|r| r.mce_stated_gap())
        .fold(f64::INFINITY, f64::min);
    out.scalar("thm41.min_stated_gap_d_ge_2", min_gap);
    out.tables.push(Table {
        name: "thm41".into(),
        columns: [
            "d",
            "B",
            "eps_sq",
            "tcr",
            "mce_direct",
            "mce_corrected",
            "mce_stated",
            "mkl_direct",
            "mkl_corrected",
            "mkl_stated",
            "mce_stated_gap",
            "mkl_stated_gap",
        ]
        .map(String::from)
        .to_vec(),
        rows: report
            .rows()
            .map(|r| {
                vec![
                    r.d as f64,
                    r.b as f64,
                    r.eps_sq,
                    r.tcr,
                    r.mce_direct,
                    r.mce_corrected,
                    r.mce_stated,
                    r.mkl_direct,
                    r.mkl_corrected,
                    r.mkl_stated,
                    r.mce_stated_gap(),
                    r.mkl_stated_gap(),
                ]
            })
            .collect(),
    });
    Ok(out)
}

/// Columns `±eᵢ` cycled over the axes. For `2d | B` this is a zero-mean
/// frame with `(1/B)ZZᵀ = I/d`.
pub fn orthogonal_frame(d: usize, b: usize) -> Result<EmbeddingBatch> {
    let mut z = DMatrix::zeros(d, b);
    for j in 0..b {
        z[((j / 2) % d, j)] = if j % 2 == 0 { 1.0 } else { -1.0 };
    }
    EmbeddingBatch::new_unit_norm(z)
}

/// Number of random batches compared against the frame's TCR value.
pub const TCR_SEARCH_SAMPLES: usize = 10_000;
/// Toy descent shapes used for the TCR-minimizer checks.
pub const TOY_SHAPES: [(usize, usize); 2] = [(2, 4), (4, 8)];

/// Descent on `Q` towards random SPD targets, toy descent to the uniform
/// covariance, and a random search against the orthogonal frame.
pub fn minimizers(trials: usize, seed: u64) -> Result<Battery> {
    let dcfg = DescentConfig::default();
    let rows = par_trials(trials.min(20), seed, |_, rng| {
        let d = rng.random_range(2..=6usize);
        let p = random_spd(d, 0.2, 3.0, rng);
        let q0 = random_spd(d, 0.2, 3.0, rng);
        let out = descend_mce_to_p(&p, &q0, &dcfg)?;
        let dist = (out.q.as_matrix() - p.as_matrix()).norm();
        Ok(vec![d as f64, out.iterations as f64, out.grad_norm, dist])
    })?;
    let mut out = Battery::default();
    for (i, r) in rows.iter().enumerate() {
        out.checks
            .push(Check::new(format!("minimizers.mce_to_p[{i}].dist"), r[3], 0.0, 1e-4));
        out.checks.push(Check::new(
            format!("minimizers.mce_to_p[{i}].grad_norm"),
            r[2],
            0.0,
            1e-7,
        ));
    }
    out.tables.push(Table {
        name: "mce_to_p".into(),
        columns: ["d", "iterations", "grad_norm", "dist"].map(String::from).to_vec(),
        rows,
    });

    let lcfg = LossConfig::default();
    let toy = DescentConfig { seed, ..dcfg };
    for (d, b) in TOY_SHAPES {
        let z = toy.initial_batch(d, b)?;
        let run = descend_matrix_ssl(&z, &z, &lcfg, &toy)?;
        let last = run.trajectory.last().map_or(f64::INFINITY, |r| r.dist_to_uniform);
        out.checks.push(Check::new(
            format!("minimizers.toy_d{d}_b{b}.dist_to_uniform"),
            last,
            0.0,
            1e-3,
        ));

        let frame_value = tcr_loss(&orthogonal_frame(d, b)?, &lcfg)?;
        let values = par_trials(TCR_SEARCH_SAMPLES, seed ^ 0x7c3, |_, rng| {
            tcr_loss(&EmbeddingBatch::random_unit(d, b, rng)?, &lcfg)
        })?;
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        // Positive when some random batch beats the frame.
        out.checks.push(Check::new(
            format!("minimizers.tcr_search_d{d}_b{b}.frame_minus_best"),
            (frame_value - best).max(0.0),
            0.0,
            0.0,
        ));
        out.scalar(format!("minimizers.tcr_frame_d{d}_b{b}"), frame_value);
        out.scalar(format!("minimizers.tcr_best_random_d{d}_b{b}"), best);
    }
    Ok(out)
}

pub const ETF_CLASSES: std::ops::RangeInclusive<usize> = 2..=8;

/// Simplex ETFs for `K = 2..=8`: Gram erank `K−1` and off-diagonals
/// `−1/(K−1)`.
pub fn etf() -> Result<Battery> {
    let mut out = Battery::default();
    for k in ETF_CLASSES {
        let v = build_simplex_etf(k, k, 1.0, None)?;
        let check = etf_erank_check(&v)?;
        let target = -1.0 / (k as f64 - 1.0);
        let gram = v.transpose() * &v;
        let mut off = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    off = off.max((gram[(i, j)] - target).abs());
                }
            }
        }
        out.checks
            .push(Check::new(format!("etf.k{k}.erank"), check.erank, k as f64 - 1.0, 1e-8));
        out.checks
            .push(Check::new(format!("etf.k{k}.offdiag_dev"), off, 0.0, 1e-10));
        out.checks.push(Check::new(
            format!("etf.k{k}.is_etf"),
            f64::from(u8::from(check.is_etf)),
            1.0,
            0.0,
        ));
    }
    Ok(out)
}

pub const TAYLOR_HIGH_ORDER: usize = 40;

/// Order-40 Taylor log against the spectral log on SPD matrices with
/// eigenvalues uniform in `(0.1, 1.9)`, plus the order-4 scalar probe.
pub fn taylor(trials: usize, seed: u64) -> Result<Battery> {
    let rows = par_trials(trials.min(50), seed, |_, rng| {
        let d = rng.random_range(2..=6usize);
        let a = random_spd(d, 0.1, 1.9, rng);
        let spectral = matrix_log_spectral(&a, LOG_FLOOR)?;
        let series = matrix_log_taylor(a.as_matrix(), TAYLOR_HIGH_ORDER)?;
        let ev = crate::linalg::sym_eig(&a)?;
        let radius = (ev.max_eigenvalue() - 1.0).abs().max((ev.min_eigenvalue() - 1.0).abs());
        Ok(vec![d as f64, radius, max_abs(&(series - spectral.as_matrix()))])
    })?;
    let mut out = Battery::default();
    for (i, r) in rows.iter().enumerate() {
        out.checks
            .push(Check::new(format!("taylor.order40[{i}]"), r[2], 0.0, 1e-6));
    }
    let probe = matrix_log_taylor(&DMatrix::from_element(1, 1, 2.0), 4)?[(0, 0)];
    out.checks
        .push(Check::new("taylor.order4_log2", probe, 7.0 / 12.0, 1e-15));
    out.scalar("taylor.log2", 2f64.ln());
    out.scalar("taylor.max_entry_err", rows.iter().map(|r| r[2]).fold(0.0, f64::max));
    out.tables.push(Table {
        name: "taylor".into(),
        columns: ["d", "spectral_radius_of_A_minus_I", "max_entry_err"]
            .map(String::from)
            .to_vec(),
        rows,
    });
    Ok(out)
}

/// Two correlated unit-norm views of a Gaussian batch.
pub fn correlated_views<R: Rng + ?Sized>(
    d: usize,
    b: usize,
    noise: f64,
    rng: &mut R,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    let base = DMatrix::from_fn(d, b, |_, _| rng.sample::<f64, _>(StandardNormal));
    let jitter = DMatrix::from_fn(d, b, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
    Ok((
        EmbeddingBatch::normalized(base.clone())?,
        EmbeddingBatch::normalized(base + jitter)?,
    ))
}

fn fd_batch<F>(f: F, z2: &EmbeddingBatch) -> Result<DMatrix<f64>>
where
    F: Fn(&EmbeddingBatch) -> Result<f64>,
{
    finite_difference(|x| f(&EmbeddingBatch::new(x.clone())?), z2.matrix(), FD_STEP)
}

/// Random `(d ≤ 6, d+1 ≤ B ≤ 12)` instance used by the gradient batteries.
fn gradient_instance(rng: &mut ChaCha8Rng) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    views_with_noise(rng, 0.3)
}

fn views_with_noise(rng: &mut ChaCha8Rng, noise: f64) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    let d = rng.random_range(2..=6usize);
    let b = rng.random_range(d + 1..=12usize);
    correlated_views(d, b, noise, rng)
}

/// Stop-gradient equivalence: with `Z1` constant, Matrix-SSL and
/// Matrix-SSL-KL differ by a function of `Z1` alone, so their `Z2`
/// gradients coincide.
pub fn stopgrad(trials: usize, seed: u64) -> Result<Battery> {
    let cfg = LossConfig::default();
    let rows = par_trials(trials.min(20), seed, |_, rng| {
        let (z1, z2) = gradient_instance(rng)?;
        let fd_ssl = fd_batch(|z| matrix_ssl_loss(&z1, z, &cfg), &z2)?;
        let fd_kl = fd_batch(|z| matrix_ssl_kl_loss(&z1, z, &cfg), &z2)?;
        let g_ssl = grad_matrix_ssl(&z1, &z2, &cfg)?.z2;
        let g_kl = grad_matrix_ssl_kl(&z1, &z2, &cfg)?.z2;
        Ok(vec![max_abs(&(fd_ssl - fd_kl)), max_abs(&(g_ssl - g_kl))])
    })?;
    let mut out = Battery::default();
    for (i, r) in rows.iter().enumerate() {
        out.checks
            .push(Check::new(format!("stopgrad[{i}].fd_gap"), r[0], 0.0, 1e-8));
        out.checks
            .push(Check::new(format!("stopgrad[{i}].analytic_gap"), r[1], 0.0, 1e-8));
    }
    Ok(out)
}

type LossFn = fn(&EmbeddingBatch, &EmbeddingBatch, &LossConfig) -> Result<f64>;
type GradFn = fn(&EmbeddingBatch, &EmbeddingBatch, &LossConfig) -> Result<Gradient>;

fn branch_gradient_error(
    grad: GradFn,
    loss: LossFn,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    cfg: &LossConfig,
) -> Result<f64> {
    let full = LossConfig {
        stop_grad_branch1: false,
        ..*cfg
    };
    let g = grad(z1, z2, &full)?;
    let fd2 = fd_batch(|z| loss(z1, z, cfg), z2)?;
    let fd1 = fd_batch(|z| loss(z, z2, cfg), z1)?;
    let g1 =
        g.z1.as_ref()
            .ok_or(Error::PreconditionViolated("missing branch-1 gradient".into()))?;
    Ok(relative_error(&g.z2, &fd2).max(relative_error(g1, &fd1)))
}

/// Names of the gradients covered by [`gradients`].
pub const GRADIENT_CASES: [&str; 10] = [
    "grad_mce_q_commuting",
    "grad_tr_plogq",
    "tcr",
    "mec",
    "uniformity_taylor",
    "uniformity_exact",
    "alignment",
    "matrix_ssl",
    "matrix_ssl_kl",
    "matrix_ssl_exact",
];

fn gradient_case(case: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = LossConfig::default();
    // The exact log needs sym(C12) + λI positive definite, so these
    // instances use closer views and a larger ridge.
    let exact = LossConfig {
        log_mode: LogMode::Exact,
        lambda_reg: 0.05,
        ..cfg
    };
    let sym_fd = |f: &dyn Fn(&SymMatrix) -> Result<f64>, at: &SymMatrix| {
        finite_difference(|x| f(&SymMatrix::symmetrize(x)?), at.as_matrix(), FD_STEP)
    };
    match case {
        "grad_mce_q_commuting" => {
            let d = rng.random_range(2..=6usize);
            let u = crate::linalg::random_orthogonal(d, rng);
            let pd: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..=3.0)).collect();
            let qd: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..=3.0)).collect();
            let p = SymMatrix::from_diagonal(&pd).congruence(&u)?;
            let q = SymMatrix::from_diagonal(&qd).congruence(&u)?;
            let fd = sym_fd(&|q| mce(&p, q), &q)?;
            Ok(relative_error(grad_mce_q_commuting(&p, &q)?.as_matrix(), &fd))
        }
        "grad_tr_plogq" => {
            let d = rng.random_range(2..=6usize);
            let p = random_spd(d, 0.2, 3.0, rng);
            let q = random_spd(d, 0.2, 3.0, rng);
            let fd = sym_fd(
                &|q| Ok((p.as_matrix() * matrix_log_spectral(q, LOG_FLOOR)?.as_matrix()).trace()),
                &q,
            )?;
            Ok(relative_error(grad_tr_plogq(&p, &q)?.as_matrix(), &fd))
        }
        "tcr" => {
            let d = rng.random_range(2..=6usize);
            let b = rng.random_range(1..=12usize);
            let z = EmbeddingBatch::random_unit(d, b, rng)?;
            let fd = fd_batch(|z| tcr_loss(z, &cfg), &z)?;
            Ok(relative_error(&grad_tcr(&z, &cfg)?.1, &fd))
        }
        "mec" => {
            let (z1, z2) = gradient_instance(rng)?;
            // ε² large enough that the Taylor argument stays near I.
            let c = LossConfig { eps_sq: 4.0, ..cfg };
            branch_gradient_error(grad_mec, mec_loss, &z1, &z2, &c)
        }
        "uniformity_taylor" => {
            let (z1, z2) = gradient_instance(rng)?;
            branch_gradient_error(grad_uniformity, uniformity_loss, &z1, &z2, &cfg)
        }
        "uniformity_exact" => {
            let (z1, z2) = views_with_noise(rng, 0.1)?;
            branch_gradient_error(grad_uniformity, uniformity_loss, &z1, &z2, &exact)
        }
        "alignment" => {
            let (z1, z2) = gradient_instance(rng)?;
            branch_gradient_error(grad_alignment, alignment_loss, &z1, &z2, &cfg)
        }
        "matrix_ssl" => {
            let (z1, z2) = gradient_instance(rng)?;
            branch_gradient_error(grad_matrix_ssl, matrix_ssl_loss, &z1, &z2, &cfg)
        }
        "matrix_ssl_kl" => {
            let (z1, z2) = gradient_instance(rng)?;
            branch_gradient_error(grad_matrix_ssl_kl, matrix_ssl_kl_loss, &z1, &z2, &cfg)
        }
        "matrix_ssl_exact" => {
            let (z1, z2) = views_with_noise(rng, 0.1)?;
            branch_gradient_error(grad_matrix_ssl, matrix_ssl_loss, &z1, &z2, &exact)
        }
        other => Err(Error::InvalidConfig(format!("unknown gradient case {other}"))),
    }
}

/// Analytic gradients against central differences (step `1e-5`), relative
/// Frobenius error at most `1e-6`, `min(trials, 50)` instances per case.
pub fn gradients(trials: usize, seed: u64) -> Result<Battery> {
    let n = trials.min(50);
    let mut out = Battery::default();
    for (ci, case) in GRADIENT_CASES.iter().enumerate() {
        let errs = par_trials(n, seed.wrapping_add(ci as u64 * 0x9e37), |_, rng| {
            gradient_case(case, rng)
        })?;
        for (i, e) in errs.iter().enumerate() {
            out.checks
                .push(Check::relative(format!("gradients.{case}[{i}]"), *e, 1e-6));
        }
        out.scalar(
            format!("gradients.{case}.max_rel_err"),
            errs.iter().copied().fold(0.0, f64::max),
        );
    }
    Ok(out)
}
