//! Generic linear backward system
//!
//! ```text
//! dP1 = -(P1 A1 + C1 P1 + C2 P1 B1 + C3) ds,   P1(T) = D1
//! dP2 = -(P2 A1 + C1 P2 + C4) ds,              P2(T) = D2
//! dP3 = -(C1 P3 + P2 A2 + C6) ds,              P3(T) = 0
//! dP4 = -(C1 P4 + C2 P1 B2 + P1 A2 + C5) ds,   P4(T) = D3
//! ```

use nalgebra::{DMatrix, DVector};

use super::{integrate_backward, KernelSolution, KernelState, KernelVariant};
use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, MatrixPath, Path, TimeGrid, VectorPath};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct GenericBackwardSpec<T: Real> {
    pub a1: MatrixPath<T>,
    pub b1: MatrixPath<T>,
    pub c1: MatrixPath<T>,
    pub c2: MatrixPath<T>,
    pub c3: MatrixPath<T>,
    pub c4: MatrixPath<T>,
    pub a2: VectorPath<T>,
    pub b2: VectorPath<T>,
    pub c5: VectorPath<T>,
    pub c6: VectorPath<T>,
    pub d1: DMatrix<T>,
    pub d2: DMatrix<T>,
    pub d3: DVector<T>,
}

impl<T: Real> GenericBackwardSpec<T> {
    /// All coefficients zero.
    pub fn zeros(n: usize, horizon: T) -> Self {
        let mz = Path::constant(horizon, DMatrix::zeros(n, n));
        let vz = Path::constant(horizon, DVector::zeros(n));
        Self {
            a1: mz.clone(),
            b1: mz.clone(),
            c1: mz.clone(),
            c2: mz.clone(),
            c3: mz.clone(),
            c4: mz,
            a2: vz.clone(),
            b2: vz.clone(),
            c5: vz.clone(),
            c6: vz,
            d1: DMatrix::zeros(n, n),
            d2: DMatrix::zeros(n, n),
            d3: DVector::zeros(n),
        }
    }

    /// Instance reproducing the open-loop kernel for a deterministic control `u`.
    ///
    /// Control-dependent inputs are sampled at the problem nodes.
    pub fn from_open(problem: &CoefficientSet<T>, u: &VectorPath<T>) -> Result<Self> {
        let grid = *problem.grid();
        let at = |s: T| problem.at(s);
        let vec = |f: &dyn Fn(T) -> Result<DVector<T>>| -> Result<VectorPath<T>> {
            Ok(Path::Sampled {
                grid,
                values: grid.nodes().into_iter().map(f).collect::<Result<_>>()?,
            })
        };
        Ok(Self {
            a1: problem.a().clone(),
            b1: problem.c().clone(),
            c1: problem.a().map(|a| a.transpose()),
            c2: problem.c().map(|c| c.transpose()),
            c3: problem.q().map(|q| -q),
            c4: problem.q_tilde().map(|q| -q),
            a2: vec(&|s| {
                let c = at(s)?;
                Ok(&c.b * u.sample(s)? + &c.b_vec)
            })?,
            b2: vec(&|s| {
                let c = at(s)?;
                Ok(&c.d * u.sample(s)? + &c.sigma)
            })?,
            c5: vec(&|s| Ok(-(at(s)?.s.transpose() * u.sample(s)?)))?,
            c6: vec(&|s| Ok(-(at(s)?.s_tilde.transpose() * u.sample(s)?)))?,
            d1: -problem.g(),
            d2: -problem.g_tilde(),
            d3: -problem.g_vec(),
        })
    }

    fn check(&self) -> Result<usize> {
        let n = self.d1.nrows();
        let square = |name: &str, p: &MatrixPath<T>| -> Result<()> {
            for m in p.samples() {
                if m.shape() != (n, n) {
                    return Err(Error::dim(name, format!("{n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
                }
            }
            Ok(())
        };
        let vector = |name: &str, p: &VectorPath<T>| -> Result<()> {
            for v in p.samples() {
                if v.len() != n {
                    return Err(Error::dim(name, n, v.len()));
                }
            }
            Ok(())
        };
        square("A1", &self.a1)?;
        square("B1", &self.b1)?;
        square("C1", &self.c1)?;
        square("C2", &self.c2)?;
        square("C3", &self.c3)?;
        square("C4", &self.c4)?;
        vector("A2", &self.a2)?;
        vector("B2", &self.b2)?;
        vector("C5", &self.c5)?;
        vector("C6", &self.c6)?;
        if self.d1.shape() != (n, n) || self.d2.shape() != (n, n) {
            return Err(Error::dim("D1/D2", format!("{n}x{n}"), format!("{:?}", self.d2.shape())));
        }
        if self.d3.len() != n {
            return Err(Error::dim("D3", n, self.d3.len()));
        }
        Ok(n)
    }
}

pub fn solve_generic_kernel<T: Real>(spec: &GenericBackwardSpec<T>, grid: &TimeGrid<T>) -> Result<KernelSolution<T>> {
    let n = spec.check()?;
    let terminal = KernelState::new(spec.d1.clone(), spec.d2.clone(), DVector::zeros(n), spec.d3.clone());
    let states = integrate_backward(grid, terminal, |s, y: &KernelState<T>| {
        let (a1, b1, c1, c2) = (spec.a1.sample(s)?, spec.b1.sample(s)?, spec.c1.sample(s)?, spec.c2.sample(s)?);
        let a2 = spec.a2.sample(s)?;
        let c2p1 = &c2 * &y.p1;
        let p1 = &y.p1 * &a1 + &c1 * &y.p1 + &c2p1 * &b1 + spec.c3.sample(s)?;
        let p2 = &y.p2 * &a1 + &c1 * &y.p2 + spec.c4.sample(s)?;
        let p3 = &c1 * &y.p3 + &y.p2 * &a2 + spec.c6.sample(s)?;
        let p4 = &c1 * &y.p4 + &c2p1 * spec.b2.sample(s)? + &y.p1 * &a2 + spec.c5.sample(s)?;
        Ok(KernelState::new(-p1, -p2, -p3, -p4))
    })?;
    Ok(KernelSolution {
        variant: KernelVariant::Generic,
        grid: *grid,
        states,
        symmetry_correction: T::zero(),
    })
}
