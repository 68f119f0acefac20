//! Matrix information theory for self-supervised representation learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: Jacobi eigensolver, spectral and Taylor matrix logarithms,
//!   centered covariances.
//! - [`matinfo`]: matrix entropy, von Neumann entropy, matrix KL divergence,
//!   matrix cross-entropy, effective rank.
//! - [`losses`]: TCR, MEC, Matrix-Uniformity, Matrix-Alignment, Matrix-SSL,
//!   Matrix-SSL-KL and the Matrix-LLM objective.
//! - [`collapse`]: intra/inter-class effective rank and simplex ETFs.
//! - [`optim`]: analytic gradients, finite-difference checks and the toy
//!   sphere-constrained descent.
//! - [`verify`]: numerical check batteries for the identities above.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collapse;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod matinfo;
pub mod optim;
pub mod sum;
pub mod verify;

pub use collapse::{CollapseReport, EtfCheck, LabeledEmbeddings};
pub use error::{Error, Result};
pub use linalg::{Centering, EmbeddingBatch, Spectrum, SymMatrix};
pub use losses::{LogMode, LossConfig};
pub use matinfo::InfoConfig;
pub use optim::{DescentConfig, Objective, Trajectory};
pub use verify::{Battery, Check, Suite};
