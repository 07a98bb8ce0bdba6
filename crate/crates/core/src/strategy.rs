//! Affine feedback strategies `u = ΘX + φ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, FeedbackControl, MatrixPath, Path, TimeGrid, VectorPath};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Closed-loop representation of an open-loop equilibrium control.
    OpenRep,
    /// Closed-loop equilibrium strategy.
    ClosedStrategy,
}

/// Gain and affine term. Never depends on the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyPair<T: Real> {
    pub theta: MatrixPath<T>,
    pub phi: VectorPath<T>,
    pub kind: StrategyKind,
}

impl<T: Real> StrategyPair<T> {
    pub fn new(theta: MatrixPath<T>, phi: VectorPath<T>, kind: StrategyKind) -> Self {
        Self { theta, phi, kind }
    }

    pub fn zero(problem: &CoefficientSet<T>, kind: StrategyKind) -> Self {
        let h = problem.horizon();
        Self {
            theta: Path::constant(h, DMatrix::zeros(problem.m(), problem.n())),
            phi: Path::constant(h, DVector::zeros(problem.m())),
            kind,
        }
    }

    pub fn at(&self, s: T) -> Result<(DMatrix<T>, DVector<T>)> {
        Ok((self.theta.sample(s)?, self.phi.sample(s)?))
    }

    /// Feedback in the role this strategy plays under a spike perturbation.
    ///
    /// An open-loop representation keeps the unperturbed state in the feedback,
    /// a closed-loop strategy feeds back the perturbed state.
    pub fn control(&self) -> FeedbackControl<T> {
        let zero = self.theta.map(|m| DMatrix::zeros(m.nrows(), m.ncols()));
        match self.kind {
            StrategyKind::OpenRep => FeedbackControl::new(zero, self.theta.clone(), self.phi.clone()),
            StrategyKind::ClosedStrategy => FeedbackControl::new(self.theta.clone(), zero, self.phi.clone()),
        }
    }

    /// Gain shifted by a constant matrix.
    pub fn with_gain_offset(&self, delta: &DMatrix<T>) -> Self {
        Self {
            theta: self.theta.map(|m| m + delta),
            ..self.clone()
        }
    }

    pub fn check_shape(&self, n: usize, m: usize) -> Result<()> {
        self.control().check_shape(n, m)
    }

    /// Grid on which the strategy is stored, if sampled.
    pub fn grid(&self) -> Option<TimeGrid<T>> {
        self.theta.grid().copied()
    }
}

/// Checks that `grid` is the problem grid or its half-step refinement.
pub(crate) fn check_strategy_grid<T: Real>(strategy: &StrategyPair<T>, problem: &CoefficientSet<T>) -> Result<()> {
    let base = problem.grid();
    for g in [strategy.theta.grid(), strategy.phi.grid()].into_iter().flatten() {
        if g.horizon() != base.horizon() || (g.steps() != base.steps() && g.steps() != 2 * base.steps()) {
            return Err(Error::Shape(format!(
                "strategy grid ({} steps over {}) does not match the problem grid ({} steps over {})",
                g.steps(),
                g.horizon(),
                base.steps(),
                base.horizon()
            )));
        }
    }
    Ok(())
}
