//! Strict linear matrix inequalities over matrix decision variables.

pub mod expr;
mod problem;
mod projection;
pub mod sdp;

pub use expr::{AffineMatrixExpr, Term, VarKind, VarRef};
pub use problem::{LmiConstraint, LmiProblem, LmiSolution, LmiStatus, Sense, SolverOptions};
pub use projection::solve_for_single_unknown;
