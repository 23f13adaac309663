//! Herglotz variational problems and contact Hamilton-Jacobi evolution.

// `!(a > b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bounds;
pub mod charflow;
pub mod error;
pub mod evolve;
pub mod io;
pub mod model;
pub mod ode;
pub mod varmin;
pub mod verify;

pub use bounds::BoundsReport;
pub use charflow::{fundamental_neg, fundamental_pos, CharState, CharTrajectory, Fundamental, ShootOptions};
pub use error::{Error, Result};
pub use evolve::{evolve, EvolveOptions, EvolveResult, GridFunction, Operator};
pub use model::{AssumptionConstants, AuditBox, AuditReport, Discount, Expr, ModelSpec, Potential};
pub use ode::{solve_ivp, solve_tvp, CaraSolution, DiscreteCurve};
pub use varmin::{minimize, minimize_terminal, MinimizeOptions, MinimizeResult};
pub use verify::ResidualReport;
