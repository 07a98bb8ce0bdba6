//! Nested Monte Carlo estimate of the cost with conditional-mean penalties.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::engine::{Block, Engine, Twin};
use super::stats::{run_batches, BatchStatistic};
use super::McParams;
use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, FeedbackControl};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub inner_samples: usize,
    pub outer_samples: usize,
}

fn to_f64<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|v| v.as_f64())
}

/// `xᵀ W x` for a column-major square `W`.
#[inline]
pub(crate) fn quad(w: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for c in 0..n {
        let mut col = 0.0;
        for r in 0..n {
            col += w[c * n + r] * x[r];
        }
        acc += col * x[c];
    }
    acc
}

/// Cost weights per node in `f64`, with `z = (x, u)` for the running terms.
pub(crate) struct CostWeights {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    /// `[[Q, Sᵀ], [S, R]]` per node.
    pub running: Vec<Vec<f64>>,
    /// `[[Q̃, S̃ᵀ], [S̃, R̃]]` per node.
    pub mean_running: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    pub mean_terminal: Vec<f64>,
    pub g_vec: Vec<f64>,
    pub has_mean_terms: bool,
    /// Nodes whose running or mean-running weight is not identically zero.
    pub running_active: Vec<bool>,
    pub mean_active: Vec<bool>,
}

fn block<T: Real>(q: &DMatrix<T>, s: &DMatrix<T>, r: &DMatrix<T>) -> Vec<f64> {
    let (n, m) = (q.nrows(), r.nrows());
    let mut w = DMatrix::<f64>::zeros(n + m, n + m);
    w.view_mut((0, 0), (n, n)).copy_from(&to_f64(q));
    w.view_mut((n, 0), (m, n)).copy_from(&to_f64(s));
    w.view_mut((0, n), (n, m)).copy_from(&to_f64(&s.transpose()));
    w.view_mut((n, n), (m, m)).copy_from(&to_f64(r));
    w.as_slice().to_vec()
}

impl CostWeights {
    pub fn new<T: Real>(problem: &CoefficientSet<T>) -> Result<Self> {
        let grid = problem.grid();
        let mut running = Vec::new();
        let mut mean_running = Vec::new();
        for k in 0..=grid.steps() {
            let c = problem.at(grid.node(k))?;
            running.push(block(&c.q, &c.s, &c.r));
            mean_running.push(block(&c.q_tilde, &c.s_tilde, &c.r_tilde));
        }
        let mean_terminal = to_f64(problem.g_tilde()).as_slice().to_vec();
        let nonzero = |w: &Vec<f64>| w.iter().any(|&v| v != 0.0);
        let running_active = running.iter().map(nonzero).collect();
        let mean_active = mean_running.iter().map(nonzero).collect();
        let has_mean_terms = mean_running.iter().flatten().any(|&v| v != 0.0) || mean_terminal.iter().any(|&v| v != 0.0);
        Ok(Self {
            n: problem.n(),
            m: problem.m(),
            h: grid.step().as_f64(),
            running,
            mean_running,
            terminal: to_f64(problem.g()).as_slice().to_vec(),
            mean_terminal,
            g_vec: problem.g_vec().iter().map(|v| v.as_f64()).collect(),
            has_mean_terms,
            running_active,
            mean_active,
        })
    }
}

/// Cost of every copy (base and twins) over `start..=end`, one batch at a time.
pub(crate) struct CostStat<'a> {
    w: &'a CostWeights,
    copies: usize,
    start: usize,
    end: usize,
    path_sum: Vec<f64>,
    z_sum: Vec<f64>,
    q_sum: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> CostStat<'a> {
    pub fn new(w: &'a CostWeights, copies: usize, start: usize, end: usize) -> Self {
        let nodes = end - start + 1;
        let dim = w.n + w.m;
        let mean_len = if w.has_mean_terms { copies * nodes } else { 0 };
        Self {
            w,
            copies,
            start,
            end,
            path_sum: vec![0.0; copies],
            z_sum: vec![0.0; mean_len * dim],
            q_sum: vec![0.0; mean_len],
            z: vec![0.0; dim],
        }
    }
}

impl<T: Real> BatchStatistic<T> for CostStat<'_> {
    fn observe(&mut self, j: usize, block: &Block<'_, T>) {
        let (n, m) = (self.w.n, self.w.m);
        let dim = n + m;
        let terminal = j == self.end;
        let run = !terminal && self.w.running_active[j];
        let mean = self.w.has_mean_terms && (terminal || self.w.mean_active[j]);
        if !terminal && !run && !mean {
            return;
        }
        let nodes = self.end - self.start + 1;
        let slot = j - self.start;
        for lane in 0..block.width {
            let i = lane % self.copies;
            for r in 0..n {
                self.z[r] = block.x(r, lane);
            }
            for r in 0..m {
                self.z[n + r] = block.u(r, lane);
            }
            let x = &self.z[..n];
            if terminal {
                let lin: f64 = x.iter().zip(&self.w.g_vec).map(|(a, b)| a * b).sum();
                self.path_sum[i] += 0.5 * quad(&self.w.terminal, x) + lin;
            } else if run {
                self.path_sum[i] += 0.5 * self.w.h * quad(&self.w.running[j], &self.z);
            }
            if mean {
                let at = i * nodes + slot;
                self.q_sum[at] += if terminal {
                    quad(&self.w.mean_terminal, x)
                } else {
                    quad(&self.w.mean_running[j], &self.z)
                };
                for (a, b) in self.z_sum[at * dim..(at + 1) * dim].iter_mut().zip(&self.z) {
                    *a += b;
                }
            }
        }
    }

    fn finish(&self, kappa: usize) -> Vec<f64> {
        let (n, dim) = (self.w.n, self.w.n + self.w.m);
        let k = kappa as f64;
        let nodes = self.end - self.start + 1;
        (0..self.copies)
            .map(|i| {
                let mut j_val = self.path_sum[i] / k;
                if self.w.has_mean_terms {
                    for slot in 0..nodes {
                        let node = self.start + slot;
                        let at = i * nodes + slot;
                        let zbar: Vec<f64> = self.z_sum[at * dim..(at + 1) * dim].iter().map(|v| v / k).collect();
                        let (wq, weight) = if node == self.end {
                            (quad(&self.w.mean_terminal, &zbar[..n]), 0.5)
                        } else {
                            (quad(&self.w.mean_running[node], &zbar), 0.5 * self.w.h)
                        };
                        let corr = if kappa > 1 {
                            (self.q_sum[at] - k * wq) / ((k - 1.0) * k)
                        } else {
                            0.0
                        };
                        j_val += weight * (wq - corr);
                    }
                }
                j_val
            })
            .collect()
    }
}

pub(crate) fn check_params(params: &McParams, w: &CostWeights) -> Result<()> {
    if params.outer < 2 {
        return Err(Error::Config("at least two outer samples are needed for a standard error".into()));
    }
    if params.inner == 0 || (w.has_mean_terms && params.inner < 2) {
        return Err(Error::Config(
            "conditional-mean terms need at least two inner samples per outer sample".into(),
        ));
    }
    Ok(())
}

/// `J(t, ξ; u)` for the feedback `control`, restarted from `xi` at grid node `node`.
pub fn estimate_cost<T: Real>(
    problem: &CoefficientSet<T>,
    node: usize,
    xi: &DVector<T>,
    control: &FeedbackControl<T>,
    params: &McParams,
) -> Result<CostEstimate> {
    if node > problem.grid().steps() {
        return Err(Error::OutOfRange {
            time: node as f64,
            horizon: problem.grid().steps() as f64,
        });
    }
    if xi.len() != problem.n() {
        return Err(Error::dim("xi", problem.n(), xi.len()));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: "xi".into(),
            node,
        });
    }
    let w = CostWeights::new(problem)?;
    check_params(params, &w)?;
    let engine = Engine::new(problem, control, params.seed)?;
    let end = engine.steps;
    let table = run_batches(&engine, params, node, end, xi.as_slice(), &[] as &[Twin<T>], || {
        CostStat::new(&w, 1, node, end)
    })?;
    let e = table.column(0);
    Ok(CostEstimate {
        mean: e.mean,
        stderr: e.stderr,
        inner_samples: params.inner,
        outer_samples: params.outer,
    })
}
