//! Numerical check of the MCE/MKL closed forms in terms of TCR.
//!
//! With `λ = ε²/d`, `P = (1/d + λ)I` and `Q = (1/B)ZZᵀ + λI`:
//!
//! ```text
//! MCE(P, Q)  = −(1+dλ)·ln λ + (2(1+dλ)/d)·L_TCR + 1 + dλ
//! MKL(P‖Q)   = (1+dλ)·ln((1+dλ)/(dλ)) + (2(1+dλ)/d)·L_TCR
//! ```
//!
//! The often-stated forms (`*_stated` below) carry the coefficient `2(1+dλ)` instead of
//! `2(1+dλ)/d`; both are evaluated so the gap can be reported. They agree
//! only at `d = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{EmbeddingBatch, SymMatrix};
use crate::losses::{tcr_loss, LossConfig};
use crate::matinfo::{mce, mkl};

/// One evaluated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thm41Row {
    pub d: usize,
    pub b: usize,
    pub eps_sq: f64,
    pub lambda: f64,
    pub tcr: f64,
    pub mce_direct: f64,
    pub mce_corrected: f64,
    pub mce_stated: f64,
    pub mkl_direct: f64,
    pub mkl_corrected: f64,
    pub mkl_stated: f64,
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

impl Thm41Row {
    pub fn mce_rel_err(&self) -> f64 {
        relative_gap(self.mce_direct, self.mce_corrected)
    }

    pub fn mkl_rel_err(&self) -> f64 {
        relative_gap(self.mkl_direct, self.mkl_corrected)
    }

    /// `|direct − stated form|` for MCE.
    pub fn mce_stated_gap(&self) -> f64 {
        (self.mce_direct - self.mce_stated).abs()
    }

    pub fn mkl_stated_gap(&self) -> f64 {
        (self.mkl_direct - self.mkl_stated).abs()
    }
}

/// Evaluates both sides of the identity for one batch.
pub fn evaluate_thm41(z: &EmbeddingBatch, eps_sq: f64) -> Result<Thm41Row> {
    if !(eps_sq > 0.0) {
        return Err(Error::InvalidConfig(format!("eps_sq must be > 0, got {eps_sq}")));
    }
    let d = z.d();
    let df = d as f64;
    let lambda = eps_sq / df;
    let p = SymMatrix::scaled_identity(d, 1.0 / df + lambda);
    let q = z.second_moment().shifted(lambda);
    let cfg = LossConfig {
        eps_sq,
        ..LossConfig::default()
    };
    let tcr = tcr_loss(z, &cfg)?;
    let k = 1.0 + df * lambda;
    Ok(Thm41Row {
        d,
        b: z.batch_size(),
        eps_sq,
        lambda,
        tcr,
        mce_direct: mce(&p, &q)?,
        mce_corrected: -k * lambda.ln() + 2.0 * k / df * tcr + k,
        mce_stated: k * (-lambda.ln() + 1.0 + 2.0 * tcr),
        mkl_direct: mkl(&p, &q)?,
        mkl_corrected: k * (k / (df * lambda)).ln() + 2.0 * k / df * tcr,
        mkl_stated: k * ((k / (df * lambda)).ln() + 2.0 * tcr),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thm41Report {
    /// Fixed probes: `Z = I₂` with `ε² = 1`, and a `d = 1` batch.
    pub probes: Vec<Thm41Row>,
    /// Random instances in trial order.
    pub trials: Vec<Thm41Row>,
}

impl Thm41Report {
    pub fn rows(&self) -> impl Iterator<Item = &Thm41Row> {
        self.probes.iter().chain(&self.trials)
    }

    /// Worst relative error over the random trials. The probes are checked
    /// absolutely: at `d = 1` with unit columns `Q = P`, so MKL is exactly 0.
    pub fn max_rel_err(&self) -> f64 {
        self.trials
            .iter()
            .map(|r| r.mce_rel_err().max(r.mkl_rel_err()))
            .fold(0.0, f64::max)
    }
}

fn probes() -> Result<Vec<Thm41Row>> {
    let i2 = EmbeddingBatch::new_unit_norm(nalgebra::DMatrix::identity(2, 2))?;
    let line = EmbeddingBatch::new_unit_norm(nalgebra::DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 1.0]))?;
    Ok(vec![evaluate_thm41(&i2, 1.0)?, evaluate_thm41(&line, 0.5)?])
}

fn random_trial(seed: u64, index: u64) -> Result<Thm41Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let d = rng.random_range(2..=8usize);
    let b = rng.random_range(d..=4 * d);
    let eps_sq = rng.random_range(0.25..=4.0);
    let z = EmbeddingBatch::random_unit(d, b, &mut rng)?;
    evaluate_thm41(&z, eps_sq)
}

/// Probes plus `trials` random instances with `d ∈ [2,8]`, `B ∈ [d,4d]`,
/// `ε² ∈ [0.25,4]` and unit-norm columns. Trials run in parallel, each from
/// its own stream of `seed`, and are returned in trial order.
pub fn verify_theorem_4_1(trials: usize, seed: u64) -> Result<Thm41Report> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let trials = (0..trials as u64)
        .into_par_iter()
        .map(|i| random_trial(seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Thm41Report {
        probes: probes()?,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_probe() {
        let r = &probes().unwrap()[0];
        assert!((r.mce_direct - 2.0).abs() < 1e-12);
        assert!((r.mce_corrected - 2.0).abs() < 1e-12);
        assert!((r.mce_stated - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert!((r.mkl_direct - r.mkl_corrected).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_forms_coincide() {
        let r = &probes().unwrap()[1];
        assert_eq!(r.d, 1);
        assert!(r.mce_rel_err() < 1e-12);
        assert!(r.mce_stated_gap() < 1e-12);
        assert!(r.mkl_direct.abs() < 1e-12 && r.mkl_stated_gap() < 1e-12);
    }

    #[test]
    fn random_trials_match_corrected_form() {
        let report = verify_theorem_4_1(100, 42).unwrap();
        assert_eq!(report.trials.len(), 100);
        assert!(report.max_rel_err() <= 1e-9, "{}", report.max_rel_err());
        assert!(report.trials.iter().all(|r| r.mce_stated_gap() > 1e-6));
        assert_eq!(report, verify_theorem_4_1(100, 42).unwrap());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(verify_theorem_4_1(0, 1).is_err());
    }
}
