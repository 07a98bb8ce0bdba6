//! Closed-loop equilibrium strategies.

use serde::Serialize;

use crate::closed_rep::{synthesize_rep, Synthesis};
use crate::error::Result;
use crate::kernel::{solve_strategy_kernel, KernelSolution};
use crate::problem::CoefficientSet;
use crate::report::Tolerances;
use crate::scalar::Real;
use crate::strategy::{StrategyKind, StrategyPair};
use crate::synthesis::{coupled_sweep, feedback_report};

/// Builds `(Θ*, φ*)` and checks the strategy conditions, with the margin taken on the strategy kernel.
pub fn synthesize_strategy<T: Real>(problem: &CoefficientSet<T>, tol: &Tolerances) -> Result<Synthesis<T>> {
    let (strategy, kernel) = coupled_sweep(problem, StrategyKind::ClosedStrategy, T::lit(tol.rtol))?;
    let p1: Vec<_> = kernel.states.iter().map(|s| s.p1.clone()).collect();
    let report = feedback_report(problem, &strategy, &kernel, &p1, tol, Vec::new())?;
    Ok(Synthesis {
        strategy,
        kernel,
        report,
    })
}

/// Checks a given strategy against the closed-loop conditions.
pub fn verify_strategy<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    tol: &Tolerances,
) -> Result<Synthesis<T>> {
    let strategy = StrategyPair::new(strategy.theta.clone(), strategy.phi.clone(), StrategyKind::ClosedStrategy);
    let kernel = solve_strategy_kernel(problem, &strategy)?;
    let p1: Vec<_> = kernel.states.iter().map(|s| s.p1.clone()).collect();
    let report = feedback_report(problem, &strategy, &kernel, &p1, tol, Vec::new())?;
    Ok(Synthesis {
        strategy,
        kernel,
        report,
    })
}

/// Node-wise gaps between the representation and the strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Divergence {
    pub times: Vec<f64>,
    /// `‖𝒫₁ − 𝔰P₁‖_∞` per node.
    pub p1_gap: Vec<f64>,
    pub gain_gap: Vec<f64>,
    /// `‖𝒫₁ − 𝒫₁ᵀ‖_∞` per node.
    pub rep_asymmetry: Vec<f64>,
    pub strategy_asymmetry: Vec<f64>,
    pub max_p1_gap: f64,
    pub max_gain_gap: f64,
    pub max_rep_asymmetry: f64,
    pub max_strategy_asymmetry: f64,
}

fn asymmetry<T: Real>(kernel: &KernelSolution<T>, k: usize) -> f64 {
    let p = kernel.p1(k);
    (p - p.transpose()).amax().as_f64()
}

fn peak(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Solves both problems and measures how far apart they are.
pub fn compare_rep_vs_strategy<T: Real>(
    problem: &CoefficientSet<T>,
    tol: &Tolerances,
) -> Result<(Synthesis<T>, Synthesis<T>, Divergence)> {
    let rep = synthesize_rep(problem, tol)?;
    let strat = synthesize_strategy(problem, tol)?;
    let div = divergence(problem, &rep, &strat)?;
    Ok((rep, strat, div))
}

pub(crate) fn divergence<T: Real>(
    problem: &CoefficientSet<T>,
    rep: &Synthesis<T>,
    strat: &Synthesis<T>,
) -> Result<Divergence> {
    let grid = problem.grid();
    let mut times = Vec::new();
    let mut p1_gap = Vec::new();
    let mut gain_gap = Vec::new();
    let mut rep_asymmetry = Vec::new();
    let mut strategy_asymmetry = Vec::new();
    for k in 0..=grid.steps() {
        let s = grid.node(k);
        times.push(s.as_f64());
        p1_gap.push((rep.kernel.p1(k) - strat.kernel.p1(k)).amax().as_f64());
        let (a, _) = rep.strategy.at(s)?;
        let (b, _) = strat.strategy.at(s)?;
        gain_gap.push((a - b).amax().as_f64());
        rep_asymmetry.push(asymmetry(&rep.kernel, k));
        strategy_asymmetry.push(asymmetry(&strat.kernel, k));
    }
    Ok(Divergence {
        max_p1_gap: peak(&p1_gap),
        max_gain_gap: peak(&gain_gap),
        max_rep_asymmetry: peak(&rep_asymmetry),
        max_strategy_asymmetry: peak(&strategy_asymmetry),
        times,
        p1_gap,
        gain_gap,
        rep_asymmetry,
        strategy_asymmetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::solve_strategy_kernel;
    use crate::problem::ProblemSpec;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn instance(g_tilde: DMatrix<f64>) -> CoefficientSet<f64> {
        let mut p = ProblemSpec::new(2, 1, 1.0, 100);
        p.a = dmatrix![0.1, 0.4; -0.3, -0.2].into();
        p.b = dmatrix![1.0; 0.5].into();
        p.c = dmatrix![0.2, 0.0; 0.1, 0.3].into();
        p.d = dmatrix![0.3; 0.1].into();
        p.sigma = dvector![0.1, 0.2].into();
        p.q = DMatrix::identity(2, 2).into();
        p.r = dmatrix![1.0].into();
        p.g = DMatrix::identity(2, 2);
        p.g_tilde = g_tilde;
        p.g_vec = dvector![0.3, -0.2];
        p.validate().unwrap()
    }

    #[test]
    fn fixed_point_reproduces_kernel_exactly() {
        let p = instance(dmatrix![1.0, 0.0; 0.0, 0.0]);
        let out = synthesize_strategy(&p, &Tolerances::default()).unwrap();
        assert!(out.report.verdict, "{:?}", out.report.diagnostics);
        let again = solve_strategy_kernel(&p, &out.strategy).unwrap();
        assert_eq!(again.max_difference(&out.kernel), 0.0);
    }

    #[test]
    fn consistent_problem_has_no_divergence() {
        let p = instance(DMatrix::zeros(2, 2));
        let (_, _, d) = compare_rep_vs_strategy(&p, &Tolerances::default()).unwrap();
        assert!(d.max_p1_gap <= 1e-9, "{}", d.max_p1_gap);
        assert!(d.max_gain_gap <= 1e-9, "{}", d.max_gain_gap);
    }

    #[test]
    fn terminal_mean_penalty_splits_the_kernels() {
        let p = instance(dmatrix![1.0, 0.0; 0.0, 0.0]);
        let (_, _, d) = compare_rep_vs_strategy(&p, &Tolerances::default()).unwrap();
        assert!(d.max_rep_asymmetry >= 1e-4);
        assert!(d.max_strategy_asymmetry <= 1e-10);
        assert!(d.max_p1_gap > 1e-4);
    }

    #[test]
    fn scalar_closed_form() {
        let (a, b, q, r, g, t): (f64, f64, f64, f64, f64, f64) = (0.3, 1.2, 1.0, 0.5, 2.0, 1.0);
        let mut spec = ProblemSpec::new(1, 1, t, 400);
        spec.a = dmatrix![a].into();
        spec.b = dmatrix![b].into();
        spec.q = dmatrix![q].into();
        spec.r = dmatrix![r].into();
        spec.g = dmatrix![g];
        let p = spec.validate().unwrap();
        let out = synthesize_strategy(&p, &Tolerances::default()).unwrap();
        // Ṗ + 2aP + q − b²P²/r = 0, P(T) = g, through the roots of the quadratic.
        let k2 = b * b / r;
        let disc = (a * a + k2 * q).sqrt();
        let (lp, lm) = ((a + disc) / k2, (a - disc) / k2);
        let exact = |s: f64| {
            let c = (g - lp) / (g - lm);
            let e = c * (-2.0 * disc * (t - s)).exp();
            (lp - lm * e) / (1.0 - e)
        };
        for k in 0..=400 {
            let s = p.grid().node(k);
            let pcl = exact(s);
            assert!((out.kernel.p1(k)[(0, 0)] + pcl).abs() < 1e-9);
            let (th, _) = out.strategy.at(s).unwrap();
            assert!((th[(0, 0)] + b * pcl / r).abs() < 1e-8);
        }
    }
}
