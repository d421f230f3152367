//! Dense semidefinite programming with dual certificates.
//!
//! Problems have one real symmetric PSD block and a vector of non-negative
//! scalars (see [`SdpProblem`]). Hermitian variables go through
//! [`HermitianEmbedding`]. Any [`ConicSolver`] returns an [`SdpSolution`]
//! whose `certified_bound` is a rigorous upper bound on the optimum whenever
//! the problem carries variable bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod embed;
mod error;
mod external;
mod ipm;
mod problem;
mod solution;

pub use embed::HermitianEmbedding;
pub use error::{ConicError, Result};
pub use external::{CommandSolver, ExternalReply};
pub use ipm::{solve, InteriorPointSolver, SolverConfig};
pub use problem::{
    ConstraintJson, FunctionalJson, LinearFunctional, ProblemJson, SdpProblem, VariableBounds, PROBLEM_SCHEMA,
};
pub use solution::{certify, SdpSolution, SolveStatus};

/// Common contract for the built-in solver and external back ends.
pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution>;
}
