//! Tolerances and equilibrium verdicts.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative singular-value cutoff for pseudo-inverses.
    pub rtol: f64,
    /// A second-order margin above `-psd_tol` counts as semidefinite.
    pub psd_tol: f64,
    pub range_tol: f64,
    /// Largest accepted first-order residual.
    pub res_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            psd_tol: 1e-8,
            range_tol: 1e-8,
            res_tol: 1e-6,
        }
    }
}

/// Node-wise evidence for or against an equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub times: Vec<f64>,
    pub second_order_margin: Vec<f64>,
    pub first_order_residual: Vec<f64>,
    pub range_slack_gain: Vec<f64>,
    pub range_slack_affine: Vec<f64>,
    /// Dimension of the free part of the feedback at each node.
    pub nullity: Vec<usize>,
    pub min_margin: f64,
    pub max_residual: f64,
    pub max_range_slack: f64,
    pub verdict: bool,
    pub diagnostics: Vec<String>,
}

fn fold_max(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &x| if x.is_nan() { f64::NAN } else { a.max(x) })
}

impl EquilibriumReport {
    /// Builds the report and its verdict. Empty slack paths mean the range test does not apply.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        times: Vec<f64>,
        second_order_margin: Vec<f64>,
        first_order_residual: Vec<f64>,
        range_slack_gain: Vec<f64>,
        range_slack_affine: Vec<f64>,
        nullity: Vec<usize>,
        tol: &Tolerances,
        mut diagnostics: Vec<String>,
    ) -> Self {
        let min_margin = second_order_margin.iter().fold(f64::INFINITY, |a, &x| a.min(x));
        let min_margin = if second_order_margin.is_empty() { 0.0 } else { min_margin };
        let max_residual = fold_max(&first_order_residual);
        let max_range_slack = fold_max(&range_slack_gain).max(fold_max(&range_slack_affine));
        let margin_ok = min_margin >= -tol.psd_tol;
        let residual_ok = max_residual <= tol.res_tol;
        let range_ok = max_range_slack <= tol.range_tol;
        if !margin_ok {
            let k = argmin(&second_order_margin);
            diagnostics.push(format!(
                "second-order condition fails: margin {:.3e} at t = {}",
                min_margin, times[k]
            ));
        }
        if !residual_ok {
            let k = argmax(&first_order_residual);
            diagnostics.push(format!(
                "first-order condition fails: residual {:.3e} at t = {}",
                max_residual, times[k]
            ));
        }
        if !range_ok {
            diagnostics.push(format!("range condition fails: slack {max_range_slack:.3e}"));
        }
        if nullity.iter().any(|&d| d > 0) {
            let worst = nullity.iter().max().copied().unwrap_or(0);
            diagnostics.push(format!(
                "weight matrix is singular at some nodes (nullity up to {worst}); minimum-norm feedback selected"
            ));
        }
        Self {
            times,
            second_order_margin,
            first_order_residual,
            range_slack_gain,
            range_slack_affine,
            nullity,
            min_margin,
            max_residual,
            max_range_slack,
            verdict: margin_ok && residual_ok && range_ok,
            diagnostics,
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] || v[i].is_nan() { i } else { b })
}
