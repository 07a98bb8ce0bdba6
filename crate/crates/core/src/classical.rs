//! Stochastic Riccati equation of the time-consistent problem, used as a reference solution.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::integrate_backward;
use crate::linalg::pinv;
use crate::problem::{CoefficientSet, Snapshot, TimeGrid};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct ClassicalSolution<T: Real> {
    pub grid: TimeGrid<T>,
    /// Value kernel `P`, with value `½ ξᵀPξ` for the homogeneous problem.
    pub p: Vec<DMatrix<T>>,
    /// Optimal feedback gain `K`.
    pub gain: Vec<DMatrix<T>>,
}

fn gain<T: Real>(c: &Snapshot<T>, p: &DMatrix<T>, rtol: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let dt = c.d.transpose();
    let weight = &c.r + &dt * p * &c.d;
    let cross = c.b.transpose() * p + &dt * p * &c.c + &c.s;
    let k = -(pinv(&weight, rtol)?.pinv * &cross);
    Ok((k, cross))
}

/// Backward sweep of
/// `Ṗ + PA + AᵀP + CᵀPC + Q − (PB + CᵀPD + Sᵀ)(R + DᵀPD)⁻¹(BᵀP + DᵀPC + S) = 0`, `P(T) = G`.
pub fn classical_riccati_oracle<T: Real>(problem: &CoefficientSet<T>, rtol: T) -> Result<ClassicalSolution<T>> {
    if !problem.is_time_consistent() {
        return Err(Error::Config(
            "the classical Riccati equation needs Q̃ = S̃ = R̃ = 0 and G̃ = 0".into(),
        ));
    }
    let grid = *problem.grid();
    let p = integrate_backward(&grid, problem.g().clone(), |s, p: &DMatrix<T>| {
        let c = problem.at(s)?;
        let (k, cross) = gain(&c, p, rtol)?;
        let lin = p * &c.a + c.a.transpose() * p + c.c.transpose() * p * &c.c + &c.q;
        Ok(-(lin + cross.transpose() * k))
    })?;
    let gain = p
        .iter()
        .enumerate()
        .map(|(k, pk)| Ok(gain(&problem.at(grid.node(k))?, pk, rtol)?.0))
        .collect::<Result<_>>()?;
    Ok(ClassicalSolution { grid, p, gain })
}
