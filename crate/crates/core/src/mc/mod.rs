//! Monte Carlo verification: simulation, nested cost estimates, spike-perturbation experiments.

mod cost;
mod engine;
mod ensemble;
mod first_order;
mod probe;
mod stats;
mod variation;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{add_paths, CoefficientSet, FeedbackControl};
use crate::scalar::Real;

pub use cost::{estimate_cost, CostEstimate};
pub use ensemble::{simulate, SimulationEnsemble};
pub use first_order::{first_order_terms, FirstOrderTerms};
pub use probe::{perturbation_quotient, steepest_direction, QuotientRow, QuotientTable};
pub use stats::Estimate;
pub use variation::{decompose_variation, deviation_estimate, DeviationRow, DeviationTable, VariationRow, VariationTable};

/// Sampling budget: `outer` independent batches of `inner` paths each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McParams {
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
}

impl McParams {
    pub const DEFAULT_OUTER: usize = 4096;
    pub const DEFAULT_INNER: usize = 256;

    /// Default budget with the given seed.
    pub fn new(seed: u64) -> Self {
        Self {
            outer: Self::DEFAULT_OUTER,
            inner: Self::DEFAULT_INNER,
            seed,
        }
    }
}

/// Which perturbed control a spike probe compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// The feedback keeps reading the unperturbed state.
    Open,
    /// The feedback reads the perturbed state.
    Closed,
}

/// Spike `v` on `[t, t+ε]` for each `ε = e·h` in `eps_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationProbe<T: Real> {
    pub node: usize,
    pub v: DVector<T>,
    pub eps_steps: Vec<usize>,
    pub mode: ProbeMode,
}

impl<T: Real> PerturbationProbe<T> {
    pub fn new(node: usize, v: DVector<T>, eps_steps: Vec<usize>, mode: ProbeMode) -> Self {
        Self {
            node,
            v,
            eps_steps,
            mode,
        }
    }

    pub fn check(&self, problem: &CoefficientSet<T>) -> Result<()> {
        if self.v.len() != problem.m() {
            return Err(Error::dim("v", problem.m(), self.v.len()));
        }
        if self.eps_steps.is_empty() || self.eps_steps.contains(&0) {
            return Err(Error::Config("perturbation widths must be positive multiples of the step".into()));
        }
        let widest = self.eps_steps.iter().max().copied().unwrap_or(0);
        if self.node + widest > problem.grid().steps() {
            return Err(Error::Config(format!(
                "perturbation [t_{}, t_{}] leaves the grid of {} steps",
                self.node,
                self.node + widest,
                problem.grid().steps()
            )));
        }
        Ok(())
    }
}

/// The feedback with its gain moved entirely to the perturbed (closed) or unperturbed (open) state.
pub fn probe_control<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
    mode: ProbeMode,
) -> Result<FeedbackControl<T>> {
    let grid = [control.theta1.grid(), control.theta2.grid()]
        .into_iter()
        .flatten()
        .max_by_key(|g| g.steps())
        .copied()
        .unwrap_or(*problem.grid());
    let total = add_paths(&control.theta1, &control.theta2, &grid)?;
    let zero = total.map(|m: &DMatrix<T>| DMatrix::zeros(m.nrows(), m.ncols()));
    Ok(match mode {
        ProbeMode::Closed => FeedbackControl::new(total, zero, control.phi.clone()),
        ProbeMode::Open => FeedbackControl::new(zero, total, control.phi.clone()),
    })
}
