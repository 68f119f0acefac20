//! Command-line front end for `matrixinfo`.
//!
//! Every command prints one JSON report on standard output. Exit statuses
//! are listed in [`error::exit`].

pub mod error;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use matrixinfo::collapse::{build_simplex_etf, collapse_report, etf_erank_check};
use matrixinfo::losses::{matrix_ssl_kl_terms, matrix_ssl_terms, mec_loss_verified, tcr_loss};
use matrixinfo::optim::{descend, StopReason, Trajectory};
use matrixinfo::verify::{run_suite, Suite};
use matrixinfo::{Centering, DescentConfig, EmbeddingBatch, LogMode, LossConfig, Objective};
use serde_json::Value;

use crate::error::{exit, CliError};
use crate::io::{format_f64, read_labels, EmbeddingFile};
use crate::report::{int, num, nums, opt, Report};

#[derive(Debug, Parser)]
#[command(
    name = "matrixinfo",
    version,
    about = "Matrix information measures, SSL losses and collapse metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Effective rank, entropy and collapse metrics of an embedding file.
    Analyze {
        input: PathBuf,
        /// Sidecar label file; overrides labels stored in the input.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Evaluate one loss on a pair of embedding files.
    Loss {
        z1: PathBuf,
        /// Second view; required by every loss except tcr.
        z2: Option<PathBuf>,
        #[arg(long, default_value = "matrix-ssl")]
        loss: String,
        #[command(flatten)]
        params: LossArgs,
    },
    /// Run a numerical check battery.
    Verify {
        /// One of all, thm41, prop61, minimizers, etf, taylor, stopgrad,
        /// example33, gradients.
        suite: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sphere-constrained descent from a random batch.
    Optimize {
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long = "B", default_value_t = 8)]
        b: usize,
        #[arg(long, default_value = "matrix-ssl")]
        loss: String,
        #[command(flatten)]
        params: LossArgs,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Armijo backtracking from `--step`.
        #[arg(long)]
        backtracking: bool,
        /// Trajectory CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a standard simplex ETF.
    Etf {
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        d: usize,
        /// Embedding file destination (CSV when the extension is .csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LogArg {
    Taylor,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long = "eps-sq")]
    eps_sq: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "lambda-reg")]
    lambda_reg: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "taylor-order")]
    taylor_order: Option<usize>,
    #[arg(long, value_enum)]
    log: Option<LogArg>,
    #[arg(long, value_enum)]
    centering: Option<OnOff>,
}

impl LossArgs {
    fn to_config(&self) -> Result<LossConfig, CliError> {
        let d = LossConfig::default();
        let cfg = LossConfig {
            eps_sq: self.eps_sq.unwrap_or(d.eps_sq),
            mu: self.mu.unwrap_or(d.mu),
            lambda_reg: self.lambda_reg.unwrap_or(d.lambda_reg),
            gamma: self.gamma.unwrap_or(d.gamma),
            taylor_order: self.taylor_order.unwrap_or(d.taylor_order),
            log_mode: match self.log {
                Some(LogArg::Exact) => LogMode::Exact,
                Some(LogArg::Taylor) | None => LogMode::Taylor,
            },
            centering: match self.centering {
                Some(OnOff::Off) => Centering::Off,
                Some(OnOff::On) | None => Centering::On,
            },
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn echo_loss_config(r: &mut Report, cfg: &LossConfig) {
    r.config("eps_sq", num(cfg.eps_sq))
        .config("mu", num(cfg.mu))
        .config("lambda_reg", num(cfg.lambda_reg))
        .config("gamma", num(cfg.gamma))
        .config("taylor_order", int(cfg.taylor_order))
        .config(
            "log",
            match cfg.log_mode {
                LogMode::Taylor => "taylor",
                LogMode::Exact => "exact",
            },
        )
        .config(
            "centering",
            match cfg.centering {
                Centering::On => "on",
                Centering::Off => "off",
            },
        );
}

fn objective(name: &str) -> Result<Objective, CliError> {
    Objective::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = Objective::ALL.iter().map(|o| o.name()).collect();
        CliError::Usage(format!("unknown loss `{name}`; expected one of {}", known.join(", ")))
    })
}

fn path_str(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Outcome of a command: the report plus the exit status it implies.
struct Outcome {
    report: Report,
    status: i32,
}

impl From<Report> for Outcome {
    fn from(report: Report) -> Self {
        Self {
            report,
            status: exit::OK,
        }
    }
}

fn cmd_analyze(input: &Path, labels_path: Option<&Path>) -> Result<Outcome, CliError> {
    let file = EmbeddingFile::read(input)?;
    let labels = match labels_path {
        Some(p) => Some(read_labels(p)?),
        None => file.labels.clone(),
    };
    if let Some(l) = &labels {
        if l.len() != file.batch_size() {
            return Err(CliError::Shape(format!(
                "{} labels for {} columns",
                l.len(),
                file.batch_size()
            )));
        }
    }
    let labels: Option<Vec<usize>> = labels.map(|l| l.into_iter().map(|x| x as usize).collect());
    let z = EmbeddingBatch::new(file.columns.clone())?;
    let rep = collapse_report(&z, labels.as_deref())?;

    let mut r = Report::new("analyze");
    r.config("input", path_str(input))
        .config("labels", labels_path.map_or(Value::Null, path_str));
    r.result("d", int(file.d()))
        .result("B", int(file.batch_size()))
        .result("labelled", labels.is_some())
        .result("global_erank", num(rep.global_erank))
        .result("vne", num(rep.vne_global))
        .result("mkl_to_uniform", num(rep.mkl_to_uniform))
        .result("intra_class_erank", opt(rep.intra_class_erank))
        .result("inter_class_erank", opt(rep.inter_class_erank))
        .result("per_class_eranks", nums(&rep.per_class_eranks));
    Ok(r.into())
}

fn load_batch(p: &Path) -> Result<EmbeddingBatch, CliError> {
    Ok(EmbeddingBatch::new(EmbeddingFile::read(p)?.columns)?)
}

fn cmd_loss(z1_path: &Path, z2_path: Option<&Path>, name: &str, params: &LossArgs) -> Result<Outcome, CliError> {
    let obj = objective(name)?;
    let cfg = params.to_config()?;
    let z1 = load_batch(z1_path)?;
    let z2 = match (z2_path, obj) {
        (Some(p), _) => load_batch(p)?,
        (None, Objective::Tcr) => z1.clone(),
        (None, _) => return Err(CliError::Usage(format!("loss `{name}` needs two input files"))),
    };
    if obj != Objective::Tcr && (z1.d(), z1.batch_size()) != (z2.d(), z2.batch_size()) {
        return Err(CliError::Shape(format!(
            "Z1 is {}x{} but Z2 is {}x{}",
            z1.d(),
            z1.batch_size(),
            z2.d(),
            z2.batch_size()
        )));
    }

    let mut r = Report::new("loss");
    r.config("loss", obj.name())
        .config("z1", path_str(z1_path))
        .config("z2", z2_path.map_or(Value::Null, path_str));
    echo_loss_config(&mut r, &cfg);
    r.result("d", int(z1.d())).result("B", int(z1.batch_size()));
    match obj {
        Objective::Tcr => {
            r.result("value", num(tcr_loss(&z1, &cfg)?));
        }
        Objective::Mec => {
            let m = mec_loss_verified(&z1, &z2, &cfg)?;
            r.result("value", num(m.taylor))
                .result("logdet_symmetrized", opt(m.logdet_sym))
                .result("taylor_gap", opt(m.gap));
        }
        Objective::Uniformity => {
            r.result("value", num(obj.value(&z1, &z2, &cfg)?));
        }
        Objective::Alignment | Objective::MatrixSsl | Objective::MatrixSslKl => {
            let t = if obj == Objective::MatrixSslKl {
                matrix_ssl_kl_terms(&z1, &z2, &cfg)?
            } else {
                matrix_ssl_terms(&z1, &z2, &cfg)?
            };
            let value = if obj == Objective::Alignment {
                t.trace_term + t.matrix_alignment
            } else {
                t.total
            };
            r.result("value", num(value));
            if obj != Objective::Alignment {
                r.result("uniformity", num(t.uniformity));
            }
            r.result("trace_term", num(t.trace_term))
                .result("matrix_alignment", num(t.matrix_alignment));
        }
    }
    Ok(r.into())
}

fn cmd_verify(suite_name: &str, trials: usize, seed: u64) -> Result<Outcome, CliError> {
    let suite = Suite::from_name(suite_name).ok_or_else(|| {
        let known: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        CliError::Usage(format!(
            "unknown suite `{suite_name}`; expected one of {}",
            known.join(", ")
        ))
    })?;
    let battery = run_suite(suite, trials, seed)?;
    let mut r = Report::new("verify");
    r.config("suite", suite.name())
        .config("trials", int(trials))
        .config("seed", Value::from(seed));
    r.result("all_pass", battery.all_pass());
    r.battery(&battery);
    let status = if battery.all_pass() {
        exit::OK
    } else {
        exit::VERIFY_FAILED
    };
    Ok(Outcome { report: r, status })
}

pub fn trajectory_csv(t: &Trajectory) -> String {
    let mut s = String::from("iter,loss,erank,dist_to_uniform,grad_norm\n");
    for rec in &t.records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.iter,
            format_f64(rec.loss),
            format_f64(rec.erank),
            format_f64(rec.dist_to_uniform),
            format_f64(rec.grad_norm)
        ));
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    d: usize,
    b: usize,
    name: &str,
    params: &LossArgs,
    iters: usize,
    step: f64,
    seed: u64,
    backtracking: bool,
    out: Option<&Path>,
) -> Result<Outcome, CliError> {
    let obj = objective(name)?;
    let lcfg = params.to_config()?;
    if d == 0 || b == 0 {
        return Err(CliError::Usage(format!(
            "--d and --B must be positive, got {d} and {b}"
        )));
    }
    let dcfg = DescentConfig {
        step_size: step,
        max_iters: iters,
        seed,
        backtracking,
        ..DescentConfig::default()
    };
    dcfg.validate()?;
    let z = dcfg.initial_batch(d, b)?;
    let run = descend(obj, &z, &z, &lcfg, &dcfg)?;
    if let Some(p) = out {
        fs::write(p, trajectory_csv(&run.trajectory)).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }

    let mut r = Report::new("optimize");
    r.config("d", int(d)).config("B", int(b)).config("loss", obj.name());
    echo_loss_config(&mut r, &lcfg);
    r.config("iters", int(iters))
        .config("step", num(step))
        .config("seed", Value::from(seed))
        .config("backtracking", backtracking)
        .config("out", out.map_or(Value::Null, path_str));
    let (stop, status) = match run.stop {
        StopReason::Converged => ("converged", exit::OK),
        StopReason::MaxIters => ("max_iters", exit::OK),
        StopReason::Stalled => ("stalled", exit::OK),
        StopReason::Diverged { .. } => ("diverged", exit::DIVERGED),
    };
    r.result("stop", stop).result("records", int(run.trajectory.len()));
    if let StopReason::Diverged { iteration } = run.stop {
        r.result("diverged_at", int(iteration));
    }
    let first = run.trajectory.first();
    let last = run.trajectory.last();
    r.result("initial_erank", opt(first.map(|x| x.erank)))
        .result("final_erank", opt(last.map(|x| x.erank)))
        .result("final_loss", opt(last.map(|x| x.loss)))
        .result("final_dist_to_uniform", opt(last.map(|x| x.dist_to_uniform)))
        .result("final_grad_norm", opt(last.map(|x| x.grad_norm)));
    Ok(Outcome { report: r, status })
}

fn cmd_etf(k: usize, d: usize, out: Option<&Path>) -> Result<Outcome, CliError> {
    if d < k {
        return Err(CliError::Shape(format!("--d {d} is smaller than --K {k}")));
    }
    let v = build_simplex_etf(k, d, 1.0, None)?;
    let check = etf_erank_check(&v)?;
    let gram = v.transpose() * &v;
    let mut off_min = f64::INFINITY;
    let mut off_max = f64::NEG_INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                off_min = off_min.min(gram[(i, j)]);
                off_max = off_max.max(gram[(i, j)]);
            }
        }
    }
    if let Some(p) = out {
        let file = EmbeddingFile {
            columns: v.clone(),
            labels: Some((0..k as u32).collect()),
        };
        file.write(p)?;
    }
    let mut r = Report::new("etf");
    r.config("K", int(k))
        .config("d", int(d))
        .config("out", out.map_or(Value::Null, path_str));
    r.result("erank", num(check.erank))
        .result("is_etf", check.is_etf)
        .result("gram_residual", num(check.gram_residual))
        .result("gram_offdiag_min", opt(off_min.is_finite().then_some(off_min)))
        .result("gram_offdiag_max", opt(off_max.is_finite().then_some(off_max)));
    Ok(r.into())
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Analyze { input, labels } => cmd_analyze(&input, labels.as_deref()),
        Command::Loss { z1, z2, loss, params } => cmd_loss(&z1, z2.as_deref(), &loss, &params),
        Command::Verify { suite, trials, seed } => cmd_verify(&suite, trials, seed),
        Command::Optimize {
            d,
            b,
            loss,
            params,
            iters,
            step,
            seed,
            backtracking,
            out,
        } => cmd_optimize(d, b, &loss, &params, iters, step, seed, backtracking, out.as_deref()),
        Command::Etf { k, d, out } => cmd_etf(k, d, out.as_deref()),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status. The report goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(cli) {
        Ok(o) => {
            if out.write_all(o.report.render().as_bytes()).is_err() {
                return exit::PARSE;
            }
            o.status
        }
        Err(e) => {
            let _ = writeln!(err, "matrixinfo: {e}");
            e.exit_code()
        }
    }
}
