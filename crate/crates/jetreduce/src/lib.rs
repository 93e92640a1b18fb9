//! jetreduce: differential constraints and reduced-ODE solutions for
//! evolution PDEs of the form ∂_t u = Σ cⁱ(t) F_i(x, u, u_σ).
//!
//! The crate builds constraint manifolds by composing characteristic flows of
//! the generators, derives the reduced ODE system on the resulting chart,
//! integrates it, reconstructs solution fields, and verifies them against the
//! original PDE with independent finite-difference oracles.

pub mod charflow;
pub mod config;
pub mod constraint;
pub mod jetcalc;
pub mod oracle;
pub mod pipeline;
pub mod problems;
pub mod reduce;
pub mod report;
pub mod symexpr;

pub use symexpr::{parse_expr, Coord, Expr, MultiIndex, Point};
