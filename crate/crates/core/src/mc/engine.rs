//! Euler–Maruyama stepping of a base path and its perturbed twins on shared noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, FeedbackControl};
use crate::scalar::Real;

/// A twin sees the extra control `v` on nodes `from..to`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Twin<T> {
    pub v: Vec<T>,
    pub from: usize,
    pub to: usize,
}

struct NodeData<T> {
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    d: Vec<T>,
    b_vec: Vec<T>,
    sigma: Vec<T>,
    k1: Vec<T>,
    k2: Vec<T>,
    phi: Vec<T>,
}

fn flat<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    m.as_slice().to_vec()
}

/// Coefficients and feedback frozen at every grid node.
pub(crate) struct Engine<T: Real> {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    h: T,
    sqrt_h: T,
    seed: u64,
    nodes: Vec<NodeData<T>>,
}

impl<T: Real> Engine<T> {
    pub fn new(problem: &CoefficientSet<T>, control: &FeedbackControl<T>, seed: u64) -> Result<Self> {
        control.check_shape(problem.n(), problem.m())?;
        let grid = problem.grid();
        let nodes = (0..=grid.steps())
            .map(|k| {
                let s = grid.node(k);
                let c = problem.at(s)?;
                let (k1, k2, phi) = control.at(s)?;
                Ok(NodeData {
                    a: flat(&c.a),
                    b: flat(&c.b),
                    c: flat(&c.c),
                    d: flat(&c.d),
                    b_vec: c.b_vec.as_slice().to_vec(),
                    sigma: c.sigma.as_slice().to_vec(),
                    k1: flat(&k1),
                    k2: flat(&k2),
                    phi: phi.as_slice().to_vec(),
                })
            })
            .collect::<Result<_>>()?;
        let h = grid.step();
        Ok(Self {
            n: problem.n(),
            m: problem.m(),
            steps: grid.steps(),
            h,
            sqrt_h: h.sqrt(),
            seed,
            nodes,
        })
    }

    /// Stream of path `index`: independent of every other path and of the thread running it.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Runs paths `first..first + paths` from `xi` at node `start` to node `end` as one block.
    ///
    /// `visit(j, block)` sees every node `j` in `start..=end`. Each path draws from its own
    /// stream, so the result for a path does not depend on which block it ran in.
    pub fn run_block<F>(
        &self,
        first: u64,
        paths: usize,
        start: usize,
        end: usize,
        xi: &[T],
        twins: &[Twin<T>],
        mut visit: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &Block<'_, T>),
    {
        let (n, m) = (self.n, self.m);
        let copies = twins.len() + 1;
        let width = paths * copies;
        let mut xs = vec![T::zero(); width * n];
        for r in 0..n {
            xs[r * width..(r + 1) * width].fill(xi[r]);
        }
        let mut us = vec![T::zero(); width * m];
        let mut dr = vec![T::zero(); width * n];
        let mut df = vec![T::zero(); width * n];
        let mut dw = vec![T::zero(); width];
        let mut rngs: Vec<_> = (0..paths as u64).map(|p| self.rng(first + p)).collect();
        for j in start..=end {
            let nd = &self.nodes[j];
            for r in 0..m {
                let row = &mut us[r * width..(r + 1) * width];
                for p in 0..paths {
                    let mut shared = nd.phi[r];
                    for c in 0..n {
                        shared += nd.k2[c * m + r] * xs[c * width + p * copies];
                    }
                    row[p * copies..(p + 1) * copies].fill(shared);
                }
                for c in 0..n {
                    let k1 = nd.k1[c * m + r];
                    for (o, &x) in row.iter_mut().zip(&xs[c * width..(c + 1) * width]) {
                        *o += k1 * x;
                    }
                }
                for (i, tw) in twins.iter().enumerate() {
                    if j >= tw.from && j < tw.to {
                        for p in 0..paths {
                            row[p * copies + i + 1] += tw.v[r];
                        }
                    }
                }
            }
            let block = Block {
                xs: &xs,
                us: &us,
                width,
                copies,
            };
            visit(j, &block);
            if j == end {
                break;
            }
            for (p, rng) in rngs.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                dw[p * copies..(p + 1) * copies].fill(self.sqrt_h * T::lit(z));
            }
            for r in 0..n {
                let drr = &mut dr[r * width..(r + 1) * width];
                let dfr = &mut df[r * width..(r + 1) * width];
                drr.fill(nd.b_vec[r]);
                dfr.fill(nd.sigma[r]);
                for c in 0..n {
                    let (a, cc) = (nd.a[c * n + r], nd.c[c * n + r]);
                    for ((p, q), &x) in drr.iter_mut().zip(dfr.iter_mut()).zip(&xs[c * width..(c + 1) * width]) {
                        *p += a * x;
                        *q += cc * x;
                    }
                }
                for c in 0..m {
                    let (b, d) = (nd.b[c * n + r], nd.d[c * n + r]);
                    for ((p, q), &u) in drr.iter_mut().zip(dfr.iter_mut()).zip(&us[c * width..(c + 1) * width]) {
                        *p += b * u;
                        *q += d * u;
                    }
                }
            }
            let mut finite = true;
            for ((xr, drr), dfr) in xs.chunks_mut(width).zip(dr.chunks(width)).zip(df.chunks(width)) {
                for (((x, &p), &q), &w) in xr.iter_mut().zip(drr).zip(dfr).zip(&dw) {
                    *x += p * self.h + q * w;
                    finite &= x.as_f64().is_finite();
                }
            }
            if !finite {
                let lane = xs.iter().position(|x| !x.as_f64().is_finite()).unwrap_or(0) % width;
                return Err(Error::Explosion {
                    path: first + (lane / copies) as u64,
                    node: j + 1,
                });
            }
        }
        Ok(())
    }
}

/// States and controls of a block of paths at one node.
///
/// Lane `p * copies + i` is copy `i` (0 = base) of path `p`; component `r` of lane `l` sits at `r * width + l`.
pub(crate) struct Block<'a, T> {
    pub xs: &'a [T],
    pub us: &'a [T],
    pub width: usize,
    pub copies: usize,
}

impl<T: Real> Block<'_, T> {
    pub fn paths(&self) -> usize {
        self.width / self.copies
    }

    #[inline]
    pub fn x(&self, r: usize, lane: usize) -> f64 {
        self.xs[r * self.width + lane].as_f64()
    }

    #[inline]
    pub fn u(&self, r: usize, lane: usize) -> f64 {
        self.us[r * self.width + lane].as_f64()
    }
}
