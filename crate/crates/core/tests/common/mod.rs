#![allow(dead_code)]

use nalgebra::{dmatrix, dvector, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilq::{Problem64, ProblemSpec};

/// One-asset mean-variance portfolio.
pub fn mean_variance(steps: usize) -> Problem64 {
    let mut p = ProblemSpec::new(1, 1, 1.0, steps);
    p.a = dmatrix![0.05].into();
    p.b = dmatrix![0.1].into();
    p.d = dmatrix![0.3].into();
    p.g = dmatrix![2.0];
    p.g_tilde = dmatrix![-2.0];
    p.g_vec = dvector![-1.0];
    p.x0 = dvector![1.0];
    p.validate().unwrap()
}

fn random(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0) * scale)
}

/// Time-consistent instances with `Q = R = G = I`, stable `A` and random `B, C, D`, `n = m = 2`.
pub fn classical_suite(steps: usize) -> Vec<Problem64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..4)
        .map(|_| {
            let mut p = ProblemSpec::new(2, 2, 1.0, steps);
            p.a = (random(&mut rng, 2, 2, 0.5) - DMatrix::identity(2, 2) * 1.2).into();
            p.b = random(&mut rng, 2, 2, 1.0).into();
            p.c = random(&mut rng, 2, 2, 0.3).into();
            p.d = random(&mut rng, 2, 2, 0.3).into();
            p.q = DMatrix::identity(2, 2).into();
            p.r = DMatrix::identity(2, 2).into();
            p.g = DMatrix::identity(2, 2);
            p.x0 = dvector![1.0, -0.5];
            p.validate().unwrap()
        })
        .collect()
}

/// Two-dimensional instance made time-inconsistent by `G̃ = diag(1, 0)`.
pub fn inconsistent(steps: usize) -> Problem64 {
    let mut p = ProblemSpec::new(2, 1, 1.0, steps);
    p.a = dmatrix![0.1, 0.4; -0.3, 0.0].into();
    p.b = dmatrix![1.0; 0.5].into();
    p.c = dmatrix![0.2, 0.0; 0.0, 0.1].into();
    p.d = dmatrix![0.3; 0.1].into();
    p.q = DMatrix::identity(2, 2).into();
    p.r = dmatrix![1.0].into();
    p.g = DMatrix::identity(2, 2);
    p.g_tilde = dmatrix![1.0, 0.0; 0.0, 0.0];
    p.x0 = dvector![1.0, 0.5];
    p.validate().unwrap()
}

/// Scalar instance with unit control volatility.
pub fn unit_diffusion(steps: usize) -> Problem64 {
    let mut p = ProblemSpec::new(1, 1, 1.0, steps);
    p.a = dmatrix![0.2].into();
    p.b = dmatrix![0.5].into();
    p.c = dmatrix![0.1].into();
    p.d = dmatrix![1.0].into();
    p.q = dmatrix![1.0].into();
    p.r = dmatrix![1.0].into();
    p.g = dmatrix![1.5];
    p.g_tilde = dmatrix![-0.5];
    p.x0 = dvector![1.0];
    p.validate().unwrap()
}

/// Scalar time-consistent regulator with `C = D = 0`.
pub struct ScalarRegulator {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub g: f64,
    pub horizon: f64,
}

impl ScalarRegulator {
    pub fn problem(&self, steps: usize) -> Problem64 {
        let mut p = ProblemSpec::new(1, 1, self.horizon, steps);
        p.a = dmatrix![self.a].into();
        p.b = dmatrix![self.b].into();
        p.q = dmatrix![self.q].into();
        p.r = dmatrix![self.r].into();
        p.g = dmatrix![self.g];
        p.x0 = dvector![1.0];
        p.validate().unwrap()
    }

    /// Solution of `Ṗ + 2aP + q − (b²/r)P² = 0`, `P(T) = g`.
    pub fn riccati(&self, s: f64) -> f64 {
        let k = self.b * self.b / self.r;
        let disc = (self.a * self.a + k * self.q).sqrt();
        let (lp, lm) = ((self.a + disc) / k, (self.a - disc) / k);
        let c = (self.g - lp) / (self.g - lm);
        let e = c * (-2.0 * disc * (self.horizon - s)).exp();
        (lp - lm * e) / (1.0 - e)
    }
}
