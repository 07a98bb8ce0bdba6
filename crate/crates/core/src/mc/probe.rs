//! Spike-perturbation difference quotients of the cost.

use nalgebra::DVector;
use serde::Serialize;

use super::cost::{check_params, CostStat, CostWeights};
use super::engine::{Engine, Twin};
use super::first_order::first_order_terms;
use super::stats::{fit_slope, run_batches};
use super::{probe_control, McParams, PerturbationProbe, ProbeMode};
use crate::error::Result;
use crate::kernel::mean_trajectory;
use crate::problem::CoefficientSet;
use crate::scalar::Real;
use crate::strategy::StrategyPair;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientRow {
    pub t: f64,
    pub node: usize,
    pub mode: ProbeMode,
    pub v: Vec<f64>,
    pub eps: f64,
    pub eps_steps: usize,
    /// `[J(u^ε) − J(u)]/ε`.
    pub quotient: f64,
    pub stderr: f64,
    /// Least-squares slope of the quotient in `ε` for this `(t, v)`.
    pub slope: f64,
    /// The quotient must not fall below this.
    pub threshold: f64,
    /// Algebraic limit as `ε → 0`.
    pub predicted: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientTable {
    pub rows: Vec<QuotientRow>,
    pub verdict: bool,
    pub note: String,
}

/// Mean state at `node` under the strategy, used as the restart point `X*(t)`.
fn restart_point<T: Real>(
    problem: &CoefficientSet<T>,
    control: &crate::problem::FeedbackControl<T>,
    node: usize,
) -> Result<DVector<T>> {
    Ok(mean_trajectory(problem, control, 0, problem.x0())?.swap_remove(node))
}

/// Direction minimizing the quotient's limit at `node`; zero at an exact equilibrium.
pub fn steepest_direction<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    node: usize,
    mode: ProbeMode,
    rtol: T,
) -> Result<DVector<T>> {
    let control = probe_control(problem, &strategy.control(), mode)?;
    let xi = restart_point(problem, &control, node)?;
    first_order_terms(problem, &control)?.steepest(node, &xi, rtol)
}

/// Estimates every probe's quotients with common random numbers between base and perturbed paths.
///
/// A row passes when `quotient ≥ −(2·stderr + slope_tol·ε·|slope|)`. Finitely many `ε` only
/// give a surrogate for the lower limit as `ε → 0`.
pub fn perturbation_quotient<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    probes: &[PerturbationProbe<T>],
    params: &McParams,
    slope_tol: f64,
) -> Result<QuotientTable> {
    let weights = CostWeights::new(problem)?;
    check_params(params, &weights)?;
    for p in probes {
        p.check(problem)?;
    }
    let grid = problem.grid();
    let h = grid.step().as_f64();
    let mut groups: Vec<(usize, ProbeMode, Vec<&PerturbationProbe<T>>)> = Vec::new();
    for p in probes {
        match groups.iter_mut().find(|g| g.0 == p.node && g.1 == p.mode) {
            Some(g) => g.2.push(p),
            None => groups.push((p.node, p.mode, vec![p])),
        }
    }

    let mut rows = Vec::new();
    for (node, mode, members) in groups {
        let control = probe_control(problem, &strategy.control(), mode)?;
        let xi = restart_point(problem, &control, node)?;
        let terms = first_order_terms(problem, &control)?;
        let engine = Engine::new(problem, &control, params.seed)?;
        let mut twins = Vec::new();
        for p in &members {
            for &e in &p.eps_steps {
                twins.push(Twin {
                    v: p.v.as_slice().to_vec(),
                    from: node,
                    to: node + e,
                });
            }
        }
        let end = grid.steps();
        let copies = twins.len() + 1;
        let table = run_batches(&engine, params, node, end, xi.as_slice(), &twins, || {
            CostStat::new(&weights, copies, node, end)
        })?;
        let mut slot = 1;
        for p in members {
            let predicted = terms.limit(node, &xi, &p.v).as_f64();
            let mut group_rows = Vec::new();
            for &e in &p.eps_steps {
                let eps = e as f64 * h;
                let est = table.estimate(|r| (r[slot] - r[0]) / eps);
                slot += 1;
                group_rows.push(QuotientRow {
                    t: grid.node(node).as_f64(),
                    node,
                    mode,
                    v: p.v.iter().map(|x| x.as_f64()).collect(),
                    eps,
                    eps_steps: e,
                    quotient: est.mean,
                    stderr: est.stderr,
                    slope: 0.0,
                    threshold: 0.0,
                    predicted,
                    pass: false,
                });
            }
            let xs: Vec<f64> = group_rows.iter().map(|r| r.eps).collect();
            let ys: Vec<f64> = group_rows.iter().map(|r| r.quotient).collect();
            let slope = fit_slope(&xs, &ys);
            for r in &mut group_rows {
                r.slope = slope;
                r.threshold = -(2.0 * r.stderr + slope_tol * r.eps * slope.abs());
                r.pass = r.quotient >= r.threshold;
            }
            rows.extend(group_rows);
        }
    }
    let verdict = rows.iter().all(|r| r.pass);
    Ok(QuotientTable {
        rows,
        verdict,
        note: format!(
            "finite-eps surrogate for the lower limit: pass iff quotient >= -(2 stderr + {slope_tol} eps |slope|)"
        ),
    })
}
