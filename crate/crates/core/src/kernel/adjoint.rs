//! Adjoint pair `(M, N)` assembled from a kernel, and the decoupling residual.

use nalgebra::{DMatrix, DVector};

use super::{integrate_forward, KernelSolution};
use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, FeedbackControl, Snapshot};
use crate::scalar::Real;

/// Evaluates `M(s,t) = P1 X + P2 E_t X + P3 + P4` and `N = P1 (C X + D u + σ)` at grid nodes.
#[derive(Clone, Copy, Debug)]
pub struct AdjointPair<'a, T: Real> {
    kernel: &'a KernelSolution<T>,
}

impl<'a, T: Real> AdjointPair<'a, T> {
    pub fn new(kernel: &'a KernelSolution<T>) -> Self {
        Self { kernel }
    }

    /// `M(s,t)` at node `k` for state `x` with conditional mean `mean`.
    pub fn m(&self, k: usize, x: &DVector<T>, mean: &DVector<T>) -> DVector<T> {
        let st = self.kernel.state(k);
        &st.p1 * x + &st.p2 * mean + &st.p3 + &st.p4
    }

    /// `M(s,s)`, where the conditional mean collapses onto the state.
    pub fn m_diag(&self, k: usize, x: &DVector<T>) -> DVector<T> {
        let st = self.kernel.state(k);
        (&st.p1 + &st.p2) * x + &st.p3 + &st.p4
    }

    pub fn n(&self, k: usize, c: &Snapshot<T>, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let st = self.kernel.state(k);
        &st.p1 * (&c.c * x + &c.d * u + &c.sigma) + self.kernel.l4(k)
    }
}

/// Mean state `E X(s)` for `s` at nodes `start..=N`, started from `xi` at node `start`.
pub fn mean_trajectory<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
    start: usize,
    xi: &DVector<T>,
) -> Result<Vec<DVector<T>>> {
    integrate_forward(problem.grid(), start, xi.clone(), |s, x: &DVector<T>| {
        let c = problem.at(s)?;
        let (t1, t2, phi) = control.at(s)?;
        let u = (t1 + t2) * x + phi;
        Ok(&c.a * x + &c.b * u + &c.b_vec)
    })
}

#[derive(Clone, Debug)]
pub struct DecouplingResidual<T: Real> {
    /// Node indices the residual is reported at.
    pub nodes: Vec<usize>,
    pub residual: Vec<T>,
}

impl<T: Real> DecouplingResidual<T> {
    pub fn max(&self) -> T {
        self.residual.iter().fold(T::zero(), |a, &x| a.max(x))
    }
}

fn mixed_weights<T: Real>(
    c: &Snapshot<T>,
    t1: &DMatrix<T>,
    t2: &DMatrix<T>,
    phi: &DVector<T>,
    x: &DVector<T>,
) -> (DMatrix<T>, DMatrix<T>, DVector<T>) {
    let th = t1 + t2;
    let t1t = t1.transpose();
    let a1t = (&c.a + &c.b * t1).transpose();
    let c1t = (&c.c + &c.d * t1).transpose();
    let st = c.s_agg.transpose();
    let f1 = (&c.q_agg + &t1t * &c.s_agg + &t1t * &c.r_agg * &th + &st * &th) * x + (&st + &t1t * &c.r_agg) * phi;
    (a1t, c1t, f1)
}

/// Node-wise residual of the mean adjoint equation along the mean trajectory from `x0`, for `s ≥ t`.
///
/// `control` must be the feedback whose kernel `kernel` is (open: zero gains; representation:
/// `Θ₂`; strategy: `Θ₁`). The derivative in `s` is a central difference in the interior and a
/// second-order one-sided difference at the ends.
pub fn decoupling_residual<T: Real>(
    kernel: &KernelSolution<T>,
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
    t: T,
) -> Result<DecouplingResidual<T>> {
    let grid = problem.grid();
    let start = grid.index_of(t).ok_or_else(|| Error::OutOfRange {
        time: t.as_f64(),
        horizon: grid.horizon().as_f64(),
    })?;
    let n = grid.steps();
    let xbar = mean_trajectory(problem, control, 0, problem.x0())?;
    let pair = AdjointPair::new(kernel);
    let m: Vec<DVector<T>> = (start..=n).map(|k| pair.m_diag(k, &xbar[k])).collect();

    if start == n {
        let g_agg = problem.g() + problem.g_tilde();
        let expect = -(&g_agg * &xbar[n]) - problem.g_vec();
        return Ok(DecouplingResidual {
            nodes: vec![n],
            residual: vec![(&m[0] - expect).norm()],
        });
    }

    let h = grid.step();
    let len = m.len();
    let two_h = h * T::lit(2.0);
    let deriv = |j: usize| -> DVector<T> {
        if len == 2 {
            return (&m[1] - &m[0]) / h;
        }
        if j == 0 {
            (&m[1] * T::lit(4.0) - &m[0] * T::lit(3.0) - &m[2]) / two_h
        } else if j == len - 1 {
            (&m[j] * T::lit(3.0) - &m[j - 1] * T::lit(4.0) + &m[j - 2]) / two_h
        } else {
            (&m[j + 1] - &m[j - 1]) / two_h
        }
    };

    let mut residual = Vec::with_capacity(len);
    for j in 0..len {
        let k = start + j;
        let s = grid.node(k);
        let c = problem.at(s)?;
        let (t1, t2, phi) = control.at(s)?;
        let x = &xbar[k];
        let u = (&t1 + &t2) * x + &phi;
        let (a1t, c1t, f1) = mixed_weights(&c, &t1, &t2, &phi, x);
        let nn = pair.n(k, &c, x, &u);
        let r = deriv(j) + &a1t * &m[j] + &c1t * nn - f1;
        residual.push(r.norm());
    }
    Ok(DecouplingResidual {
        nodes: (start..=n).collect(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::solve_open_kernel;
    use crate::problem::{Path, ProblemSpec};
    use nalgebra::{dmatrix, dvector};

    fn scalar(n: usize) -> CoefficientSet<f64> {
        let mut spec = ProblemSpec::new(1, 1, 1.0, n);
        spec.a = dmatrix![0.7].into();
        spec.q = dmatrix![1.5].into();
        spec.g = dmatrix![0.4];
        spec.x0 = dvector![1.0];
        spec.validate().unwrap()
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let p = ProblemSpec::<f64>::new(2, 1, 1.0, 20).validate().unwrap();
        let u = FeedbackControl::zero(&p);
        let k = solve_open_kernel(&p, &u.phi).unwrap();
        let r = decoupling_residual(&k, &p, &u, 0.0).unwrap();
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn second_order_under_refinement() {
        let err = |n| {
            let p = scalar(n);
            let u = FeedbackControl::zero(&p);
            let k = solve_open_kernel(&p, &u.phi).unwrap();
            decoupling_residual(&k, &p, &u, 0.0).unwrap().max()
        };
        let (e1, e2) = (err(40), err(80));
        assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
    }

    #[test]
    fn terminal_identity() {
        let p = scalar(10);
        let u = FeedbackControl::zero(&p);
        let k = solve_open_kernel(&p, &u.phi).unwrap();
        let r = decoupling_residual(&k, &p, &u, 1.0).unwrap();
        assert_eq!(r.nodes, vec![10]);
        assert_eq!(r.residual, vec![0.0]);
    }

    #[test]
    fn off_grid_time_rejected() {
        let p = scalar(10);
        let u = FeedbackControl::zero(&p);
        let k = solve_open_kernel(&p, &u.phi).unwrap();
        assert!(decoupling_residual(&k, &p, &u, 0.05).is_err());
    }

    #[test]
    fn mean_of_uncontrolled_linear_flow() {
        let p = scalar(100);
        let u = FeedbackControl::open_loop(Path::constant(1.0, dvector![0.0]), 1);
        let x = mean_trajectory(&p, &u, 0, &dvector![2.0]).unwrap();
        assert!((x[100][0] - 2.0 * 0.7f64.exp()).abs() < 1e-9);
    }
}
