//! Decomposition of the cost variation and the deviation estimate of the perturbed state.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::cost::{check_params, quad, CostStat, CostWeights};
use super::engine::{Block, Engine, Twin};
use super::first_order::first_order_terms;
use super::stats::{fit_slope, run_batches, BatchStatistic, Estimate};
use super::McParams;
use crate::error::{Error, Result};
use crate::kernel::mean_trajectory;
use crate::problem::{CoefficientSet, FeedbackControl};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationRow {
    pub eps: f64,
    pub eps_steps: usize,
    /// `J(u^ε) − J(u)` by direct simulation.
    pub direct: Estimate,
    /// Kernel expression of the first-order part along the simulated paths.
    pub j1: Estimate,
    /// `−(ε/2)·vᵀDᵀP̄₁Dv`.
    pub j2_formula: f64,
    /// Second-order part from its definition, quadratic in `X^ε − X`.
    pub j2_direct: Estimate,
    /// `E ∫_t^{t+ε} ⟨(𝒮ᵀ+Θ₁ᵀℛ)v, X^ε − X⟩`.
    pub cross: Estimate,
    /// `direct − (j1 + j2_formula + cross)`.
    pub reconstruction_error: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationTable {
    pub t: f64,
    pub v: Vec<f64>,
    pub rows: Vec<VariationRow>,
}

fn to_f64_flat<T: Real>(m: &DMatrix<T>) -> Vec<f64> {
    m.iter().map(|v| v.as_f64()).collect()
}

struct VariationData {
    n: usize,
    m: usize,
    h: f64,
    start: usize,
    end: usize,
    widths: Vec<usize>,
    /// `h·(⟨gain·x + offset, v⟩ + ½vᵀℛv)` splits into a state part (`gain_v`) and a constant.
    gain_v: Vec<Vec<f64>>,
    const_v: Vec<f64>,
    cross_v: Vec<Vec<f64>>,
    q_theta: Vec<Vec<f64>>,
    q_theta_tilde: Vec<Vec<f64>>,
    g: Vec<f64>,
    g_tilde: Vec<f64>,
    has_mean_terms: bool,
}

struct VariationStat<'a> {
    data: &'a VariationData,
    cost: CostStat<'a>,
    j1: Vec<f64>,
    cross: Vec<f64>,
    j2: Vec<f64>,
    x0_sum: Vec<f64>,
    q_sum: Vec<f64>,
    x0: Vec<f64>,
}

impl<'a> VariationStat<'a> {
    fn new(data: &'a VariationData, weights: &'a CostWeights) -> Self {
        let twins = data.widths.len();
        let nodes = data.end - data.start + 1;
        let mean_len = if data.has_mean_terms { twins * nodes } else { 0 };
        Self {
            data,
            cost: CostStat::new(weights, twins + 1, data.start, data.end),
            j1: vec![0.0; twins],
            cross: vec![0.0; twins],
            j2: vec![0.0; twins],
            x0_sum: vec![0.0; mean_len * data.n],
            q_sum: vec![0.0; mean_len],
            x0: vec![0.0; data.n],
        }
    }
}

impl<T: Real> BatchStatistic<T> for VariationStat<'_> {
    fn observe(&mut self, j: usize, block: &Block<'_, T>) {
        self.cost.observe(j, block);
        let d = self.data;
        let n = d.n;
        let copies = block.copies;
        let terminal = j == d.end;
        let slot = j - d.start;
        let nodes = d.end - d.start + 1;
        for p in 0..block.paths() {
            let base = p * copies;
            let mut first = d.const_v[j];
            for r in 0..n {
                first += block.x(r, base) * d.gain_v[j][r];
            }
            first *= d.h;
            for (i, &w) in d.widths.iter().enumerate() {
                let lane = base + i + 1;
                for r in 0..n {
                    self.x0[r] = block.x(r, lane) - block.x(r, base);
                }
                if j < d.start + w {
                    self.j1[i] += first;
                    self.cross[i] += d.h * self.x0.iter().zip(&d.cross_v[j]).map(|(a, b)| a * b).sum::<f64>();
                }
                let (wq, wt, weight) = if terminal {
                    (&d.g, &d.g_tilde, 0.5)
                } else {
                    (&d.q_theta[j], &d.q_theta_tilde[j], 0.5 * d.h)
                };
                self.j2[i] += weight * quad(wq, &self.x0);
                if d.has_mean_terms {
                    let at = i * nodes + slot;
                    self.q_sum[at] += quad(wt, &self.x0);
                    for (a, b) in self.x0_sum[at * n..(at + 1) * n].iter_mut().zip(&self.x0) {
                        *a += b;
                    }
                }
            }
        }
    }

    fn finish(&self, kappa: usize) -> Vec<f64> {
        let d = self.data;
        let k = kappa as f64;
        let n = d.n;
        let nodes = d.end - d.start + 1;
        let costs = BatchStatistic::<T>::finish(&self.cost, kappa);
        let mut out = Vec::with_capacity(4 * d.widths.len());
        for i in 0..d.widths.len() {
            let mut j2 = self.j2[i] / k;
            if d.has_mean_terms {
                for slot in 0..nodes {
                    let node = d.start + slot;
                    let at = i * nodes + slot;
                    let mean: Vec<f64> = self.x0_sum[at * n..(at + 1) * n].iter().map(|v| v / k).collect();
                    let (w, weight) = if node == d.end {
                        (&d.g_tilde, 0.5)
                    } else {
                        (&d.q_theta_tilde[node], 0.5 * d.h)
                    };
                    let wq = quad(w, &mean);
                    let corr = if kappa > 1 {
                        (self.q_sum[at] - k * wq) / ((k - 1.0) * k)
                    } else {
                        0.0
                    };
                    j2 += weight * (wq - corr);
                }
            }
            out.extend([costs[i + 1] - costs[0], self.j1[i] / k, self.cross[i] / k, j2]);
        }
        out
    }
}

fn restart<T: Real>(problem: &CoefficientSet<T>, control: &FeedbackControl<T>, node: usize) -> Result<DVector<T>> {
    Ok(mean_trajectory(problem, control, 0, problem.x0())?.swap_remove(node))
}

fn check_probe<T: Real>(problem: &CoefficientSet<T>, node: usize, v: &DVector<T>, widths: &[usize]) -> Result<()> {
    super::PerturbationProbe::new(node, v.clone(), widths.to_vec(), super::ProbeMode::Closed).check(problem)
}

/// Splits `J(u^ε) − J(u)` into the kernel first-order part, the second-order part and the cross term.
///
/// `control = (Θ₁, Θ₂, φ)`; the perturbed path feeds `Θ₁` its own state and `Θ₂` the unperturbed one.
/// The restart point at `node` is the mean state under `control`.
pub fn decompose_variation<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
    node: usize,
    v: &DVector<T>,
    eps_steps: &[usize],
    params: &McParams,
) -> Result<VariationTable> {
    check_probe(problem, node, v, eps_steps)?;
    let weights = CostWeights::new(problem)?;
    check_params(params, &weights)?;
    let terms = first_order_terms(problem, control)?;
    let grid = problem.grid();
    let (n, m) = (problem.n(), problem.m());
    let h = grid.step().as_f64();
    let vf: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    let vd = DVector::from_vec(vf.clone());
    let nodes = 0..=grid.steps();
    let gain_v = nodes
        .clone()
        .map(|k| terms.gain[k].tr_mul(v).iter().map(|x| x.as_f64()).collect())
        .collect();
    let const_v = nodes
        .clone()
        .map(|k| (terms.offset[k].dot(v) + (v.transpose() * &terms.r_agg[k] * v)[(0, 0)] * T::lit(0.5)).as_f64())
        .collect();
    let cross_v = nodes
        .clone()
        .map(|k| (&terms.cross[k] * v).iter().map(|x| x.as_f64()).collect())
        .collect();
    let q_theta: Vec<Vec<f64>> = nodes.clone().map(|k| to_f64_flat(&terms.q_theta[k])).collect();
    let q_theta_tilde: Vec<Vec<f64>> = nodes.map(|k| to_f64_flat(&terms.q_theta_tilde[k])).collect();
    let g_tilde = to_f64_flat(problem.g_tilde());
    let has_mean_terms = q_theta_tilde.iter().flatten().any(|&x| x != 0.0) || g_tilde.iter().any(|&x| x != 0.0);
    let data = VariationData {
        n,
        m,
        h,
        start: node,
        end: grid.steps(),
        widths: eps_steps.to_vec(),
        gain_v,
        const_v,
        cross_v,
        q_theta,
        q_theta_tilde,
        g: to_f64_flat(problem.g()),
        g_tilde,
        has_mean_terms,
    };
    debug_assert_eq!(data.m, vf.len());

    let xi = restart(problem, control, node)?;
    let engine = Engine::new(problem, control, params.seed)?;
    let twins: Vec<Twin<T>> = eps_steps
        .iter()
        .map(|&e| Twin {
            v: v.as_slice().to_vec(),
            from: node,
            to: node + e,
        })
        .collect();
    let table = run_batches(&engine, params, node, data.end, xi.as_slice(), &twins, || {
        VariationStat::new(&data, &weights)
    })?;

    let dpd = terms.diffusion_weight[node].map(|x| x.as_f64());
    let quad_v = (vd.transpose() * dpd * &vd)[(0, 0)];
    let rows = eps_steps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let eps = e as f64 * h;
            let j2_formula = -0.5 * eps * quad_v;
            let b = 4 * i;
            VariationRow {
                eps,
                eps_steps: e,
                direct: table.column(b),
                j1: table.column(b + 1),
                j2_formula,
                j2_direct: table.column(b + 3),
                cross: table.column(b + 2),
                reconstruction_error: table.estimate(|r| r[b] - r[b + 1] - j2_formula - r[b + 2]),
            }
        })
        .collect();
    Ok(VariationTable {
        t: grid.node(node).as_f64(),
        v: vf,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationRow {
    pub eps: f64,
    pub eps_steps: usize,
    /// `E sup_{[t,t+ε]} |X^ε − X|²`.
    pub mean_sup_sq: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationTable {
    pub t: f64,
    pub rows: Vec<DeviationRow>,
    /// Log-log slope of `mean_sup_sq` against `ε`.
    pub slope: f64,
}

struct DeviationStat<'a> {
    widths: &'a [usize],
    start: usize,
    n: usize,
    /// Running supremum per path and width.
    sup: Vec<f64>,
}

impl<T: Real> BatchStatistic<T> for DeviationStat<'_> {
    fn observe(&mut self, j: usize, block: &Block<'_, T>) {
        let tw = self.widths.len();
        if self.sup.is_empty() {
            self.sup = vec![0.0; block.paths() * tw];
        }
        for p in 0..block.paths() {
            let base = p * block.copies;
            for (i, &w) in self.widths.iter().enumerate() {
                if j <= self.start + w {
                    let d: f64 = (0..self.n)
                        .map(|r| {
                            let e = block.x(r, base + i + 1) - block.x(r, base);
                            e * e
                        })
                        .sum();
                    let s = &mut self.sup[p * tw + i];
                    *s = s.max(d);
                }
            }
        }
    }

    fn finish(&self, kappa: usize) -> Vec<f64> {
        let tw = self.widths.len();
        (0..tw)
            .map(|i| self.sup.iter().skip(i).step_by(tw).sum::<f64>() / kappa as f64)
            .collect()
    }
}

/// `E sup |X^ε − X|²` over the perturbation window for each width.
pub fn deviation_estimate<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
    node: usize,
    v: &DVector<T>,
    eps_steps: &[usize],
    params: &McParams,
) -> Result<DeviationTable> {
    check_probe(problem, node, v, eps_steps)?;
    if params.outer < 2 || params.inner == 0 {
        return Err(Error::Config("at least two outer samples of one path each are needed".into()));
    }
    let xi = restart(problem, control, node)?;
    let engine = Engine::new(problem, control, params.seed)?;
    let twins: Vec<Twin<T>> = eps_steps
        .iter()
        .map(|&e| Twin {
            v: v.as_slice().to_vec(),
            from: node,
            to: node + e,
        })
        .collect();
    let end = node + eps_steps.iter().max().copied().unwrap_or(0);
    let n = problem.n();
    let table = run_batches(&engine, params, node, end, xi.as_slice(), &twins, || DeviationStat {
        widths: eps_steps,
        start: node,
        n,
        sup: Vec::new(),
    })?;
    let h = problem.grid().step().as_f64();
    let rows: Vec<DeviationRow> = eps_steps
        .iter()
        .enumerate()
        .map(|(i, &e)| DeviationRow {
            eps: e as f64 * h,
            eps_steps: e,
            mean_sup_sq: table.column(i),
        })
        .collect();
    let lx: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.mean_sup_sq.mean.ln()).collect();
    Ok(DeviationTable {
        t: problem.grid().node(node).as_f64(),
        slope: fit_slope(&lx, &ly),
        rows,
    })
}
