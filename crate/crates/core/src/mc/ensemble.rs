//! Stored state paths for inspection and export.

use std::path::Path as FsPath;

use nalgebra::DVector;

use super::engine::{Engine, Twin};
use super::{probe_control, PerturbationProbe};
use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, FeedbackControl};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationEnsemble<T: Real> {
    pub times: Vec<T>,
    /// `paths[p][k]` is the state of path `p` at node `k`.
    pub paths: Vec<Vec<DVector<T>>>,
    /// `twins[p][e][k]`, one perturbed path per probe width, on the same noise as `paths[p]`.
    pub twins: Vec<Vec<Vec<DVector<T>>>>,
    pub base_seed: u64,
    pub scheme: &'static str,
}

impl<T: Real> SimulationEnsemble<T> {
    /// Sample mean and variance of each state component at each node.
    pub fn summary(&self) -> (Vec<DVector<T>>, Vec<DVector<T>>) {
        let count = T::lit(self.paths.len() as f64);
        let nodes = self.times.len();
        let mut means = Vec::with_capacity(nodes);
        let mut vars = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let mean = self.paths.iter().fold(DVector::zeros(self.paths[0][k].len()), |a, p| a + &p[k]) / count;
            let var = self
                .paths
                .iter()
                .fold(DVector::zeros(mean.len()), |a, p| a + (&p[k] - &mean).map(|v| v * v))
                / (count - T::one()).max(T::one());
            means.push(mean);
            vars.push(var);
        }
        (means, vars)
    }

    /// Writes `node, time, mean_i…, var_i…` with one row per node.
    pub fn write_summary_csv(&self, path: &FsPath) -> Result<()> {
        let (means, vars) = self.summary();
        let n = means.first().map_or(0, |m| m.len());
        let mut header = vec!["node".to_string(), "time".to_string()];
        header.extend((0..n).map(|i| format!("mean_{i}")));
        header.extend((0..n).map(|i| format!("var_{i}")));
        let rows = (0..self.times.len()).map(|k| {
            let mut row = vec![k.to_string(), crate::export::fmt(self.times[k].as_f64())];
            row.extend(means[k].iter().chain(vars[k].iter()).map(|v| crate::export::fmt(v.as_f64())));
            row
        });
        crate::export::write_rows(path, &header, rows)
    }
}

/// Simulates `n_paths` paths from `x0` at time 0.
///
/// With a probe, each path also carries one twin per width that receives the spike `v` on
/// `[t, t+ε]` and shares every Brownian increment with its base path.
pub fn simulate<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
    x0: &DVector<T>,
    base_seed: u64,
    n_paths: usize,
    probe: Option<&PerturbationProbe<T>>,
) -> Result<SimulationEnsemble<T>> {
    if n_paths < 2 {
        return Err(Error::Config("an ensemble needs at least two paths".into()));
    }
    if x0.len() != problem.n() {
        return Err(Error::dim("x0", problem.n(), x0.len()));
    }
    let (control, twins) = match probe {
        Some(p) => {
            p.check(problem)?;
            let tw = p
                .eps_steps
                .iter()
                .map(|&e| Twin {
                    v: p.v.as_slice().to_vec(),
                    from: p.node,
                    to: p.node + e,
                })
                .collect();
            (probe_control(problem, control, p.mode)?, tw)
        }
        None => (control.clone(), Vec::new()),
    };
    let engine = Engine::new(problem, &control, base_seed)?;
    let n = problem.n();
    let steps = engine.steps;
    let mut paths = Vec::with_capacity(n_paths);
    let mut twin_paths = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut base = Vec::with_capacity(steps + 1);
        let mut tws = vec![Vec::with_capacity(steps + 1); twins.len()];
        engine.run_block(p as u64, 1, 0, steps, x0.as_slice(), &twins, |_, b| {
            let state = |lane: usize| DVector::from_fn(n, |r, _| b.xs[r * b.width + lane]);
            base.push(state(0));
            for (i, t) in tws.iter_mut().enumerate() {
                t.push(state(i + 1));
            }
        })?;
        paths.push(base);
        twin_paths.push(tws);
    }
    Ok(SimulationEnsemble {
        times: problem.grid().nodes(),
        paths,
        twins: twin_paths,
        base_seed,
        scheme: "euler-maruyama",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::ProbeMode;
    use crate::problem::{Path, ProblemSpec};
    use nalgebra::{dmatrix, dvector, DMatrix};

    #[test]
    fn deterministic_flow_matches_exponential() {
        let a = dmatrix![-0.5, 1.0; -1.0, -0.5];
        let mut spec = ProblemSpec::new(2, 1, 1.0, 1000);
        spec.a = a.clone().into();
        let p = spec.validate().unwrap();
        let x0 = dvector![1.0, 0.5];
        let ens = simulate(&p, &FeedbackControl::zero(&p), &x0, 3, 2, None).unwrap();
        for (k, t) in ens.times.iter().enumerate().step_by(100) {
            let exact = (&a * *t).exp() * &x0;
            assert!((&ens.paths[0][k] - exact).amax() < 2e-3);
        }
    }

    #[test]
    fn zero_spike_twin_is_identical() {
        let mut spec = ProblemSpec::new(1, 1, 1.0, 40);
        spec.a = dmatrix![0.2].into();
        spec.b = dmatrix![1.0].into();
        spec.c = dmatrix![0.3].into();
        spec.d = dmatrix![0.5].into();
        spec.sigma = dvector![0.1].into();
        let p = spec.validate().unwrap();
        let ctl = FeedbackControl::new(
            Path::constant(1.0, dmatrix![-0.4]),
            Path::constant(1.0, DMatrix::zeros(1, 1)),
            Path::constant(1.0, dvector![0.2]),
        );
        let probe = PerturbationProbe::new(8, dvector![0.0], vec![2, 4], ProbeMode::Closed);
        let ens = simulate(&p, &ctl, &dvector![1.0], 9, 4, Some(&probe)).unwrap();
        for (base, tw) in ens.paths.iter().zip(&ens.twins) {
            assert_eq!(&tw[0], base);
            assert_eq!(&tw[1], base);
        }
    }
}
