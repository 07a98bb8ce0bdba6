//! Equilibrium checks for deterministic open-loop controls.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{integrate_backward, mean_trajectory, solve_open_kernel, AdjointPair, KernelSolution};
use crate::linalg::psd_margin;
use crate::mc::simulate;
use crate::problem::{CoefficientSet, FeedbackControl, Snapshot, VectorPath};
use crate::report::{EquilibriumReport, Tolerances};
use crate::scalar::Real;

/// Number of sample paths used for the pathwise residual when the problem is noisy.
pub const PATHWISE_SAMPLES: usize = 8;

/// `P₁` of the open-loop kernel alone, node by node.
pub fn open_p1_path<T: Real>(problem: &CoefficientSet<T>) -> Result<Vec<DMatrix<T>>> {
    let g = -problem.g().clone();
    integrate_backward(problem.grid(), g, |s, p1: &DMatrix<T>| {
        let c = problem.at(s)?;
        let ct = c.c.transpose();
        Ok(-(p1 * &c.a + c.a.transpose() * p1 + &ct * p1 * &c.c - &c.q))
    })
}

/// Node-wise smallest eigenvalue of `ℛ − DᵀP₁D`.
pub fn second_order_condition<T: Real>(problem: &CoefficientSet<T>) -> Result<Vec<T>> {
    let p1 = open_p1_path(problem)?;
    let grid = problem.grid();
    (0..=grid.steps())
        .map(|k| {
            let c = problem.at(grid.node(k))?;
            psd_margin(&(&c.r_agg - c.d.transpose() * &p1[k] * &c.d))
        })
        .collect()
}

fn stationarity<T: Real>(
    pair: &AdjointPair<'_, T>,
    k: usize,
    c: &Snapshot<T>,
    x: &DVector<T>,
    u: &DVector<T>,
) -> T {
    let r = &c.r_agg * u + &c.s_agg * x - c.b.transpose() * pair.m_diag(k, x) - c.d.transpose() * pair.n(k, c, x, u);
    r.norm()
}

/// Node-wise norm of the stationarity condition along one state trajectory.
pub fn open_residual<T: Real>(
    problem: &CoefficientSet<T>,
    kernel: &KernelSolution<T>,
    u: &VectorPath<T>,
    states: &[DVector<T>],
) -> Result<Vec<T>> {
    let grid = problem.grid();
    let pair = AdjointPair::new(kernel);
    (0..=grid.steps())
        .map(|k| {
            let s = grid.node(k);
            Ok(stationarity(&pair, k, &problem.at(s)?, &states[k], &u.sample(s)?))
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Checks whether the deterministic control `u` is an open-loop equilibrium from `x0`.
///
/// The first-order residual is taken along the mean trajectory. For noisy problems it is
/// also evaluated on [`PATHWISE_SAMPLES`] simulated paths drawn from `seed`; a pathwise
/// residual above tolerance fails the verdict.
pub fn check_open<T: Real>(
    problem: &CoefficientSet<T>,
    u: &VectorPath<T>,
    tol: &Tolerances,
    seed: u64,
) -> Result<EquilibriumReport> {
    let grid = problem.grid();
    let kernel = solve_open_kernel(problem, u)?;
    let margin = second_order_condition(problem)?;
    let control = FeedbackControl::open_loop(u.clone(), problem.n());
    let mean = mean_trajectory(problem, &control, 0, problem.x0())?;
    let residual = open_residual(problem, &kernel, u, &mean)?;

    let mut diagnostics = Vec::new();
    let mut pathwise_worst = 0.0f64;
    if !problem.is_noise_free() {
        let ens = simulate(problem, &control, problem.x0(), seed, PATHWISE_SAMPLES, None)?;
        let mut sup: Vec<f64> = Vec::with_capacity(PATHWISE_SAMPLES);
        for path in &ens.paths {
            let r = open_residual(problem, &kernel, u, path)?;
            sup.push(r.iter().fold(0.0f64, |a, x| a.max(x.as_f64())));
        }
        sup.sort_by(f64::total_cmp);
        pathwise_worst = *sup.last().unwrap();
        diagnostics.push(format!(
            "sampled pathwise check ({} paths, seed {seed}): sup residual median {:.3e}, q90 {:.3e}, max {:.3e}",
            PATHWISE_SAMPLES,
            quantile(&sup, 0.5),
            quantile(&sup, 0.9),
            pathwise_worst
        ));
    }

    let mut report = EquilibriumReport::assemble(
        grid.nodes().iter().map(|t| t.as_f64()).collect(),
        margin.iter().map(|m| m.as_f64()).collect(),
        residual.iter().map(|r| r.as_f64()).collect(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        tol,
        diagnostics,
    );
    if pathwise_worst.is_nan() || pathwise_worst > tol.res_tol {
        report.verdict = false;
        report
            .diagnostics
            .push(format!("first-order condition fails on a sampled path: residual {pathwise_worst:.3e}"));
    }
    Ok(report)
}

/// Rejects feedback candidates, which must be checked as strategies instead.
pub fn deterministic_part<T: Real>(control: &FeedbackControl<T>) -> Result<VectorPath<T>> {
    if !control.is_deterministic() {
        return Err(Error::StochasticControl(
            "candidate has a nonzero feedback gain; check it as a strategy".into(),
        ));
    }
    Ok(control.phi.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Path, ProblemSpec};
    use nalgebra::{dmatrix, dvector};

    fn zero_u(p: &CoefficientSet<f64>) -> VectorPath<f64> {
        Path::constant(p.horizon(), DVector::zeros(p.m()))
    }

    #[test]
    fn zero_problem_passes_with_zero_margin() {
        let p = ProblemSpec::<f64>::new(2, 2, 1.0, 20).validate().unwrap();
        let r = check_open(&p, &zero_u(&p), &Tolerances::default(), 0).unwrap();
        assert!(r.verdict);
        assert!(r.second_order_margin.iter().all(|&m| m == 0.0));
        assert!(r.first_order_residual.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn uncontrolled_terminal_pull_is_detected() {
        let mut spec = ProblemSpec::new(1, 1, 1.0, 50);
        spec.b = dmatrix![0.5].into();
        spec.r = dmatrix![1.0].into();
        spec.g = dmatrix![2.0];
        spec.g_tilde = dmatrix![-0.5];
        spec.g_vec = dvector![0.3];
        spec.x0 = dvector![1.5];
        let p = spec.validate().unwrap();
        let r = check_open(&p, &zero_u(&p), &Tolerances::default(), 0).unwrap();
        let expect: f64 = (0.5 * (-(2.0 - 0.5) * 1.5 - 0.3f64)).abs();
        for &res in &r.first_order_residual {
            assert!((res - expect).abs() < 1e-12, "{res} vs {expect}");
        }
        assert!(!r.verdict);
    }

    #[test]
    fn margin_without_diffusion_is_control_weight() {
        let mut spec = ProblemSpec::new(2, 2, 1.0, 20);
        spec.a = dmatrix![0.1, 0.3; -0.2, 0.0].into();
        spec.q = dmatrix![1.0, 0.0; 0.0, 2.0].into();
        spec.r = dmatrix![2.0, 0.5; 0.5, 1.0].into();
        spec.r_tilde = dmatrix![0.5, 0.0; 0.0, 0.0].into();
        let p = spec.validate().unwrap();
        let m = second_order_condition(&p).unwrap();
        let expect = dmatrix![2.5f64, 0.5; 0.5, 1.0].symmetric_eigenvalues().min();
        assert!(m.iter().all(|&x| (x - expect).abs() < 1e-12));
    }

    #[test]
    fn scalar_margin_closed_form() {
        let (a, c, q, g): (f64, f64, f64, f64) = (0.3, 0.4, 1.2, 0.7);
        let mut spec = ProblemSpec::new(1, 1, 1.0, 400);
        spec.a = dmatrix![a].into();
        spec.c = dmatrix![c].into();
        spec.d = dmatrix![1.0].into();
        spec.q = dmatrix![q].into();
        spec.r = dmatrix![1.0].into();
        spec.g = dmatrix![g];
        let p = spec.validate().unwrap();
        let m = second_order_condition(&p).unwrap();
        let k = 2.0 * a + c * c;
        for (i, s) in p.grid().nodes().into_iter().enumerate() {
            let p1 = q / k + (-g - q / k) * (k * (1.0 - s)).exp();
            assert!((m[i] - (1.0 - p1)).abs() < 1e-10);
        }
    }

    #[test]
    fn margin_ignores_the_control() {
        let mut spec = ProblemSpec::new(1, 1, 1.0, 40);
        spec.b = dmatrix![1.0].into();
        spec.d = dmatrix![0.5].into();
        spec.sigma = dvector![0.2].into();
        spec.r = dmatrix![1.0].into();
        spec.g = dmatrix![1.0];
        let p = spec.validate().unwrap();
        let tol = Tolerances::default();
        let a = check_open(&p, &zero_u(&p), &tol, 3).unwrap();
        let b = check_open(&p, &Path::constant(1.0, dvector![0.7]), &tol, 3).unwrap();
        assert_eq!(a.second_order_margin, b.second_order_margin);
        assert!(a.diagnostics.iter().any(|d| d.contains("sampled pathwise check")));
    }

    #[test]
    fn feedback_candidates_are_rejected() {
        let fc = FeedbackControl::new(
            Path::constant(1.0, dmatrix![0.5]),
            Path::constant(1.0, dmatrix![0.0]),
            Path::constant(1.0, dvector![0.0]),
        );
        assert!(matches!(deterministic_part(&fc), Err(Error::StochasticControl(_))));
    }
}
