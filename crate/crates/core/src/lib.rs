//! Equilibrium solvers and verifiers for time-inconsistent stochastic linear-quadratic control.
//!
//! The state follows `dX = (AX + Bu + b)ds + (CX + Du + σ)dW` and the cost carries
//! conditional-mean penalties that break Bellman consistency. The crate integrates the
//! backward kernel systems, synthesizes closed-loop representations and closed-loop
//! equilibrium strategies, checks open-loop candidates, and probes equilibria by Monte Carlo.

pub mod classical;
pub mod cli;
pub mod closed_rep;
pub mod closed_strategy;
pub mod error;
pub mod export;
pub mod kernel;
pub mod linalg;
pub mod mc;
pub mod open_loop;
pub mod problem;
pub mod report;
pub mod scalar;
pub mod strategy;
mod synthesis;

pub use closed_rep::{rep_first_order_residual, synthesize_rep, verify_rep, Synthesis};
pub use closed_strategy::{compare_rep_vs_strategy, synthesize_strategy, verify_strategy, Divergence};
pub use error::{Error, Result};
pub use open_loop::{check_open, second_order_condition};
pub use problem::{CoefficientSet, FeedbackControl, ProblemSpec, TimeGrid};
pub use report::{EquilibriumReport, Tolerances};
pub use scalar::Real;
pub use strategy::{StrategyKind, StrategyPair};

pub type Problem64 = CoefficientSet<f64>;
pub type Problem32 = CoefficientSet<f32>;
pub type Strategy64 = StrategyPair<f64>;
pub type Strategy32 = StrategyPair<f32>;
pub type Kernel64 = kernel::KernelSolution<f64>;
pub type Kernel32 = kernel::KernelSolution<f32>;
