//! Backward sweep coupling a kernel system with its algebraic feedback condition.
//!
//! Each step first integrates the fully coupled system (feedback recomputed at every
//! stage) to predict the kernel at the step midpoint and left node, reads the feedback
//! off those predictions, and then takes an ordinary RK4 step of the frozen-strategy
//! system. The left-node feedback is refreshed from the corrected kernel until it is
//! consistent. The strategy lives on the half-step grid, so feeding it back into the
//! frozen-strategy solver reproduces the kernel exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{
    check_blow_up, rep_drift, rk4_step, strategy_drift, symmetrize_step, FeedbackSolve, KernelSolution, KernelState,
    KernelVariant,
};
use crate::linalg::{psd_margin, range_inclusion_with};
use crate::problem::{CoefficientSet, Path, Snapshot};
use crate::report::{EquilibriumReport, Tolerances};
use crate::scalar::Real;
use crate::strategy::{StrategyKind, StrategyPair};

const MAX_REFRESH: usize = 12;

fn drift<T: Real>(
    kind: StrategyKind,
    c: &Snapshot<T>,
    theta: &DMatrix<T>,
    phi: &DVector<T>,
    y: &KernelState<T>,
) -> KernelState<T> {
    match kind {
        StrategyKind::OpenRep => rep_drift(c, theta, phi, y),
        StrategyKind::ClosedStrategy => strategy_drift(c, theta, phi, y),
    }
}

fn close<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, u: &DVector<T>, v: &DVector<T>) -> bool {
    let eps = T::default_epsilon() * T::lit(16.0);
    let gap = (a - b).amax().max((u - v).amax());
    gap <= eps * (T::one() + a.amax().max(u.amax()))
}

pub(crate) fn coupled_sweep<T: Real>(
    problem: &CoefficientSet<T>,
    kind: StrategyKind,
    rtol: T,
) -> Result<(StrategyPair<T>, KernelSolution<T>)> {
    let grid = *problem.grid();
    let fine = grid.refine(2);
    let n = grid.steps();
    let (nx, mu) = (problem.n(), problem.m());
    let mut thetas = vec![DMatrix::zeros(mu, nx); 2 * n + 1];
    let mut phis = vec![DVector::zeros(mu); 2 * n + 1];
    let mut y = KernelState::terminal(problem);
    let fb = FeedbackSolve::new(&problem.at(grid.horizon())?, &y, rtol)?;
    thetas[2 * n] = fb.theta;
    phis[2 * n] = fb.phi;
    let mut states = vec![y.clone()];
    let mut worst_sym = T::zero();

    for k in (0..n).rev() {
        let (t1, t0) = (grid.node(k + 1), grid.node(k));
        let tm = (t0 + t1) * T::lit(0.5);
        let mut coupled = |s: T, y: &KernelState<T>| -> Result<KernelState<T>> {
            let c = problem.at(s)?;
            let fb = FeedbackSolve::new(&c, y, rtol)?;
            Ok(drift(kind, &c, &fb.theta, &fb.phi, y))
        };
        let y_mid = rk4_step(t1, tm, &y, &mut coupled)?;
        let y_left = rk4_step(t1, t0, &y, &mut coupled)?;
        let c0 = problem.at(t0)?;
        let fb_mid = FeedbackSolve::new(&problem.at(tm)?, &y_mid, rtol)?;
        let fb_left = FeedbackSolve::new(&c0, &y_left, rtol)?;
        thetas[2 * k + 1] = fb_mid.theta;
        phis[2 * k + 1] = fb_mid.phi;
        thetas[2 * k] = fb_left.theta;
        phis[2 * k] = fb_left.phi;

        let mut next = None;
        for _ in 0..MAX_REFRESH {
            let mut frozen = |s: T, y: &KernelState<T>| -> Result<KernelState<T>> {
                let idx = fine
                    .index_of(s)
                    .ok_or_else(|| Error::Grid(format!("stage time {s} is off the half-step grid")))?;
                Ok(drift(kind, &problem.at(s)?, &thetas[idx], &phis[idx], y))
            };
            let mut cand = rk4_step(t1, t0, &y, &mut frozen)?;
            if kind == StrategyKind::ClosedStrategy {
                symmetrize_step(k, &mut cand, &mut worst_sym)?;
            }
            check_blow_up(&cand, k, t0)?;
            let fb = FeedbackSolve::new(&c0, &cand, rtol)?;
            let settled = close(&fb.theta, &thetas[2 * k], &fb.phi, &phis[2 * k]);
            next = Some(cand);
            if settled {
                break;
            }
            thetas[2 * k] = fb.theta;
            phis[2 * k] = fb.phi;
        }
        y = next.expect("at least one corrector pass");
        states.push(y.clone());
    }
    states.reverse();

    let variant = match kind {
        StrategyKind::OpenRep => KernelVariant::ClosedRep,
        StrategyKind::ClosedStrategy => KernelVariant::ClosedStrategy,
    };
    let strategy = StrategyPair::new(
        Path::sampled(fine, thetas)?,
        Path::sampled(fine, phis)?,
        kind,
    );
    let kernel = KernelSolution {
        variant,
        grid,
        states,
        symmetry_correction: worst_sym,
    };
    Ok((strategy, kernel))
}

/// Node-wise first-order residuals `(gain, affine)` of a strategy against its kernel.
pub(crate) fn first_order_residuals<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    kernel: &KernelSolution<T>,
    rtol: T,
) -> Result<Vec<(T, T)>> {
    let grid = problem.grid();
    (0..=grid.steps())
        .map(|k| {
            let s = grid.node(k);
            let fb = FeedbackSolve::new(&problem.at(s)?, kernel.state(k), rtol)?;
            let (theta, phi) = strategy.at(s)?;
            Ok(fb.residuals(&theta, &phi))
        })
        .collect()
}

/// Report for a synthesized strategy; `margin_p1[k]` is the P1 entering the second-order condition.
pub(crate) fn feedback_report<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
    kernel: &KernelSolution<T>,
    margin_p1: &[DMatrix<T>],
    tol: &Tolerances,
    mut diagnostics: Vec<String>,
) -> Result<EquilibriumReport> {
    let grid = problem.grid();
    let rtol = T::lit(tol.rtol);
    let range_tol = T::lit(tol.range_tol);
    let mut times = Vec::new();
    let mut margin = Vec::new();
    let mut residual = Vec::new();
    let mut slack_g = Vec::new();
    let mut slack_a = Vec::new();
    let mut nullity = Vec::new();
    for k in 0..=grid.steps() {
        let s = grid.node(k);
        let c = problem.at(s)?;
        let fb = FeedbackSolve::new(&c, kernel.state(k), rtol)?;
        let (theta, phi) = strategy.at(s)?;
        let (rg, ra) = fb.residuals(&theta, &phi);
        let w2 = &c.r_agg - c.d.transpose() * &margin_p1[k] * &c.d;
        times.push(s.as_f64());
        margin.push(psd_margin(&w2)?.as_f64());
        residual.push(rg.max(ra).as_f64());
        let aff = DMatrix::from_column_slice(fb.affine_rhs.len(), 1, fb.affine_rhs.as_slice());
        slack_g.push(range_inclusion_with(&fb.gain_rhs, &fb.weight, &fb.weight_pinv, range_tol)?.slack.as_f64());
        slack_a.push(range_inclusion_with(&aff, &fb.weight, &fb.weight_pinv, range_tol)?.slack.as_f64());
        nullity.push(fb.weight_pinv.nullity());
    }
    if kernel.symmetry_correction > T::zero() {
        diagnostics.push(format!(
            "largest per-step kernel symmetrization {:.3e}",
            kernel.symmetry_correction.as_f64()
        ));
    }
    Ok(EquilibriumReport::assemble(
        times, margin, residual, slack_g, slack_a, nullity, tol, diagnostics,
    ))
}
