//! The replicated-feature toy problem: sampling, the replication map, the
//! hard-margin solver, closed-form decoder and loss, the reconstruction-
//! constrained program, and the end-to-end comparison report.

mod frr;
mod qp;
mod toy;
mod verify;

pub use frr::{
    frr_constrained_solve, frr_expected_max_solve, frr_population_loss, moment_audit, optimal_linear_decoder,
    second_moments, FrrOptions, FrrSolution, MomentAudit, MomentRow,
};
pub use qp::{max_margin_solve, project_onto_halfspaces, MaxMarginSolution, QpOptions};
pub use toy::{projected_classifier, replicate, sample_toy, sample_toy_ood, Axis, ReplicationMap, ToyDistribution};
pub use verify::{accuracy, group_equality_residual, verify_theory, write_theory_outputs, TheoryReport, TheoryRow, VerifyOptions};
