//! Gradients, finite-difference checks and the toy descent demonstrator.

mod descent;
mod grad;
mod thm41;

pub use descent::{
    descend, descend_matrix_ssl, descend_mce_to_p, DescentConfig, DescentRun, MceDescent, Objective, Record,
    StopReason, Trajectory,
};
pub use grad::{
    finite_difference, grad_alignment, grad_matrix_ssl, grad_matrix_ssl_kl, grad_mce_q_commuting, grad_mec, grad_tcr,
    grad_tr_plogq, grad_uniformity, relative_error, Gradient, FD_STEP,
};
pub use thm41::{evaluate_thm41, relative_gap, verify_theorem_4_1, Thm41Report, Thm41Row};
