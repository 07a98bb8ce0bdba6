//! Batched path statistics: each outer sample averages `inner` paths.

use rayon::prelude::*;
use serde::Serialize;

use super::engine::{Block, Engine, Twin};
use super::McParams;
use crate::error::Result;
use crate::scalar::Real;

/// Mean with its standard error over outer samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Accumulates one batch of paths, simulated as a single block.
pub(crate) trait BatchStatistic<T: Real> {
    fn observe(&mut self, j: usize, block: &Block<'_, T>);
    /// Per-batch values after `kappa` paths.
    fn finish(&self, kappa: usize) -> Vec<f64>;
}

/// One row of per-batch values per outer sample, in batch order.
#[derive(Clone, Debug)]
pub(crate) struct BatchTable {
    pub rows: Vec<Vec<f64>>,
}

impl BatchTable {
    pub fn estimate<F: Fn(&[f64]) -> f64>(&self, f: F) -> Estimate {
        let vals: Vec<f64> = self.rows.iter().map(|r| f(r)).collect();
        mean_stderr(&vals)
    }

    pub fn column(&self, i: usize) -> Estimate {
        self.estimate(|r| r[i])
    }
}

pub(crate) fn mean_stderr(vals: &[f64]) -> Estimate {
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0).max(1.0);
    Estimate {
        mean,
        stderr: (var / k).sqrt(),
    }
}

/// Runs `outer × inner` paths; batches run in parallel and are collected in order.
pub(crate) fn run_batches<T, S, F>(
    engine: &Engine<T>,
    params: &McParams,
    start: usize,
    end: usize,
    xi: &[T],
    twins: &[Twin<T>],
    make: F,
) -> Result<BatchTable>
where
    T: Real,
    S: BatchStatistic<T>,
    F: Fn() -> S + Sync,
{
    let inner = params.inner;
    let rows = (0..params.outer)
        .into_par_iter()
        .map(|b| {
            let mut stat = make();
            let first = (b * inner) as u64;
            engine.run_block(first, inner, start, end, xi, twins, |j, block| stat.observe(j, block))?;
            Ok(stat.finish(inner))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchTable { rows })
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_line() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((fit_slope(&x, &y) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let e = mean_stderr(&[2.0; 5]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
    }
}

#[cfg(test)]
mod bench {
    use super::*;
    use crate::mc::cost::{CostStat, CostWeights};
    use crate::problem::{FeedbackControl, ProblemSpec};
    use nalgebra::{dmatrix, dvector};

    struct Noop(f64);
    impl BatchStatistic<f64> for Noop {
        fn observe(&mut self, _j: usize, b: &Block<'_, f64>) {
            self.0 += b.x(0, 0);
        }
        fn finish(&self, _k: usize) -> Vec<f64> {
            vec![self.0]
        }
    }

    #[test]
    #[ignore]
    fn timing() {
        let mut p = ProblemSpec::new(1, 1, 1.0, 200);
        p.a = dmatrix![0.05].into();
        p.b = dmatrix![0.1].into();
        p.d = dmatrix![0.3].into();
        p.g = dmatrix![2.0];
        p.g_tilde = dmatrix![-2.0];
        p.g_vec = dvector![-1.0];
        let p = p.validate().unwrap();
        let e = Engine::new(&p, &FeedbackControl::zero(&p), 1).unwrap();
        let params = McParams { outer: 64, inner: 256, seed: 1 };
        let tw: Vec<Twin<f64>> = (0..6).map(|i| Twin { v: vec![1.0], from: 0, to: 2 + i }).collect();
        let t = std::time::Instant::now();
        run_batches(&e, &params, 0, 200, &[1.0], &tw, || Noop(0.0)).unwrap();
        println!("noop {:?}", t.elapsed());
        let t = std::time::Instant::now();
        run_batches(&e, &params, 0, 200, &[1.0], &[], || Noop(0.0)).unwrap();
        println!("noop no twins {:?}", t.elapsed());

        let w = CostWeights::new(&p).unwrap();
        let t = std::time::Instant::now();
        run_batches(&e, &params, 0, 200, &[1.0], &tw, || CostStat::new(&w, 7, 0, 200)).unwrap();
        println!("cost {:?}", t.elapsed());
        let t = std::time::Instant::now();
        let mut rng = e.rng(0);
        let mut s = 0.0;
        for _ in 0..64 * 256 * 200 {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            s += z;
        }
        println!("rng {:?} {s}", t.elapsed());
    }
}
