//! Exact linear programming, polynomial systems and rational reconstruction.

pub mod lp;
pub mod poly;
pub mod reconstruct;
pub mod solve;

pub use lp::{lp_solve, LinearProgram, LpOutcome, LpStatus, Relation};
pub use poly::Poly;
pub use reconstruct::{rational_reconstruct, rational_reconstruct_f64, simplest_in, simplest_near};
pub use solve::{solve_poly_system, Inequality, PolySystem, SolveMode};
