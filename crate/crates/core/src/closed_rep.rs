//! Closed-loop representation of open-loop equilibrium controls.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::kernel::{solve_rep_kernel, KernelSolution};
use crate::open_loop::open_p1_path;
use crate::problem::CoefficientSet;
use crate::report::{EquilibriumReport, Tolerances};
use crate::scalar::Real;
use crate::strategy::{StrategyKind, StrategyPair};
use crate::synthesis::{coupled_sweep, feedback_report, first_order_residuals};

/// A synthesized strategy together with its kernel and verdict.
#[derive(Clone, Debug)]
pub struct Synthesis<T: Real> {
    pub strategy: StrategyPair<T>,
    pub kernel: KernelSolution<T>,
    pub report: EquilibriumReport,
}

/// `P₁` of the open-loop kernel, which does not depend on the control.
pub fn open_p1<T: Real>(problem: &CoefficientSet<T>) -> Result<Vec<DMatrix<T>>> {
    open_p1_path(problem)
}

/// Builds `(Θ*, φ*)` and checks the representation conditions.
///
/// The second-order margin uses the open-loop `P₁`, the residuals and range slacks the
/// representation kernel. Where the weight is singular the minimum-norm feedback is taken.
pub fn synthesize_rep<T: Real>(problem: &CoefficientSet<T>, tol: &Tolerances) -> Result<Synthesis<T>> {
    let (strategy, kernel) = coupled_sweep(problem, StrategyKind::OpenRep, T::lit(tol.rtol))?;
    let p1 = open_p1(problem)?;
    let report = feedback_report(problem, &strategy, &kernel, &p1, tol, Vec::new())?;
    Ok(Synthesis {
        strategy,
        kernel,
        report,
    })
}

/// Checks a given strategy as a closed-loop representation.
pub fn verify_rep<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    tol: &Tolerances,
) -> Result<Synthesis<T>> {
    let strategy = StrategyPair::new(strategy.theta.clone(), strategy.phi.clone(), StrategyKind::OpenRep);
    let kernel = solve_rep_kernel(problem, &strategy)?;
    let p1 = open_p1(problem)?;
    let report = feedback_report(problem, &strategy, &kernel, &p1, tol, Vec::new())?;
    Ok(Synthesis {
        strategy,
        kernel,
        report,
    })
}

/// Node-wise `max(‖WΘ − rhs‖, ‖Wφ − rhs‖)` of the representation identities.
pub fn rep_first_order_residual<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    kernel: &KernelSolution<T>,
    rtol: T,
) -> Result<Vec<T>> {
    Ok(first_order_residuals(problem, strategy, kernel, rtol)?
        .into_iter()
        .map(|(g, a)| g.max(a))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::solve_rep_kernel;
    use crate::problem::ProblemSpec;
    use nalgebra::{dmatrix, dvector};

    fn inconsistent() -> CoefficientSet<f64> {
        let mut p = ProblemSpec::new(2, 1, 1.0, 100);
        p.a = dmatrix![0.1, 0.4; -0.3, -0.2].into();
        p.b = dmatrix![1.0; 0.5].into();
        p.c = dmatrix![0.2, 0.0; 0.1, 0.3].into();
        p.d = dmatrix![0.3; 0.1].into();
        p.b_vec = dvector![0.2, -0.1].into();
        p.sigma = dvector![0.1, 0.2].into();
        p.q = DMatrix::identity(2, 2).into();
        p.r = dmatrix![1.0].into();
        p.g = DMatrix::identity(2, 2);
        p.g_tilde = dmatrix![1.0, 0.0; 0.0, 0.0];
        p.g_vec = dvector![0.3, -0.2];
        p.x0 = dvector![1.0, -1.0];
        p.validate().unwrap()
    }

    #[test]
    fn synthesis_is_self_consistent() {
        let p = inconsistent();
        let tol = Tolerances::default();
        let out = synthesize_rep(&p, &tol).unwrap();
        assert!(out.report.verdict, "{:?}", out.report.diagnostics);
        assert!(out.report.max_residual <= 1e-10);
        let again = solve_rep_kernel(&p, &out.strategy).unwrap();
        assert!(again.max_difference(&out.kernel) <= 1e-12);
    }

    #[test]
    fn independent_of_initial_state() {
        let p = inconsistent();
        let q = p.with_x0(dvector![5.0, 2.0]).unwrap();
        let tol = Tolerances::default();
        let a = synthesize_rep(&p, &tol).unwrap();
        let b = synthesize_rep(&q, &tol).unwrap();
        assert_eq!(a.strategy, b.strategy);
        assert_eq!(a.kernel.states, b.kernel.states);
    }

    #[test]
    fn no_control_channel_gives_zero_strategy() {
        let mut p = ProblemSpec::new(2, 1, 1.0, 40);
        p.a = dmatrix![0.1, 0.4; -0.3, -0.2].into();
        p.r = dmatrix![1.0].into();
        p.g = DMatrix::identity(2, 2);
        p.q_tilde = DMatrix::identity(2, 2).into();
        let p = p.validate().unwrap();
        let out = synthesize_rep(&p, &Tolerances::default()).unwrap();
        for th in out.strategy.theta.samples() {
            assert_eq!(th.amax(), 0.0);
        }
        for ph in out.strategy.phi.samples() {
            assert_eq!(ph.amax(), 0.0);
        }
    }

    #[test]
    fn perturbed_gain_raises_residual_linearly() {
        let p = inconsistent();
        let tol = Tolerances::default();
        let out = synthesize_rep(&p, &tol).unwrap();
        let res = |delta: f64| {
            let s = out.strategy.with_gain_offset(&dmatrix![delta, 0.0]);
            let k = solve_rep_kernel(&p, &s).unwrap();
            rep_first_order_residual(&p, &s, &k, 1e-10).unwrap()[0]
        };
        let (r1, r2) = (res(1e-3), res(2e-3));
        assert!(r1 > 1e-5);
        assert!((r2 / r1 - 2.0).abs() < 0.05, "{r1} {r2}");
    }

    #[test]
    fn kernel_is_asymmetric_under_terminal_mean_penalty() {
        let p = inconsistent();
        let out = synthesize_rep(&p, &Tolerances::default()).unwrap();
        let asym = (0..=100)
            .map(|k| (out.kernel.p1(k) - out.kernel.p1(k).transpose()).amax())
            .fold(0.0, f64::max);
        assert!(asym > 1e-4, "{asym}");
    }
}
