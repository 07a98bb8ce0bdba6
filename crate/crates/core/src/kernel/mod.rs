//! Backward kernel systems in the deterministic reduction (martingale parts vanish).

mod adjoint;
mod generic;
mod integrator;
mod systems;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use adjoint::{decoupling_residual, mean_trajectory, AdjointPair, DecouplingResidual};
pub use generic::{solve_generic_kernel, GenericBackwardSpec};
pub(crate) use integrator::check_blow_up;
pub use integrator::{integrate_backward, integrate_backward_with, integrate_forward, rk4_step, OdeState, BLOW_UP_LIMIT};
pub use systems::{mixed_drift, open_drift, rep_drift, strategy_drift, FeedbackSolve};

use crate::error::{Error, Result};
use crate::problem::{CoefficientSet, FeedbackControl, Interpolate, Location, MatrixPath, Path, TimeGrid, VectorPath};
use crate::scalar::Real;
use crate::strategy::{check_strategy_grid, StrategyPair};

/// Largest per-step symmetrization accepted in the closed-loop strategy system.
pub const SYMMETRY_DRIFT_LIMIT: f64 = 1e-6;

/// `(P1, P2, P3, P4)` at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelState<T: Real> {
    pub p1: DMatrix<T>,
    pub p2: DMatrix<T>,
    pub p3: DVector<T>,
    pub p4: DVector<T>,
}

impl<T: Real> KernelState<T> {
    pub fn new(p1: DMatrix<T>, p2: DMatrix<T>, p3: DVector<T>, p4: DVector<T>) -> Self {
        Self { p1, p2, p3, p4 }
    }

    /// Terminal value `(−G, −G̃, 0, −g)`.
    pub fn terminal(problem: &CoefficientSet<T>) -> Self {
        Self::new(
            -problem.g(),
            -problem.g_tilde(),
            DVector::zeros(problem.n()),
            -problem.g_vec(),
        )
    }

    /// Replaces P1, P2 by their symmetric parts; returns the largest removed Frobenius norm.
    pub fn symmetrize(&mut self) -> T {
        let half = T::lit(0.5);
        let mut worst = T::zero();
        for p in [&mut self.p1, &mut self.p2] {
            let skew = (&*p - p.transpose()) * half;
            worst = worst.max(skew.norm());
            *p = (&*p + p.transpose()) * half;
        }
        worst
    }
}

impl<T: Real> OdeState<T> for KernelState<T> {
    fn add_scaled(&self, a: T, o: &Self) -> Self {
        Self {
            p1: &self.p1 + &o.p1 * a,
            p2: &self.p2 + &o.p2 * a,
            p3: &self.p3 + &o.p3 * a,
            p4: &self.p4 + &o.p4 * a,
        }
    }

    fn max_norm(&self) -> T {
        self.p1
            .max_norm()
            .max(self.p2.max_norm())
            .max(self.p3.max_norm())
            .max(self.p4.max_norm())
    }
}

impl<T: Real> Interpolate<T> for KernelState<T> {
    fn lerp(&self, o: &Self, w: T) -> Self {
        Self {
            p1: self.p1.lerp(&o.p1, w),
            p2: self.p2.lerp(&o.p2, w),
            p3: self.p3.lerp(&o.p3, w),
            p4: self.p4.lerp(&o.p4, w),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    Open,
    ClosedRep,
    ClosedStrategy,
    Mixed,
    Generic,
}

/// Node values of a solved kernel system.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSolution<T: Real> {
    pub variant: KernelVariant,
    pub grid: TimeGrid<T>,
    pub states: Vec<KernelState<T>>,
    /// Largest per-step symmetrization applied (closed-loop strategy only).
    pub symmetry_correction: T,
}

impl<T: Real> KernelSolution<T> {
    pub fn state(&self, k: usize) -> &KernelState<T> {
        &self.states[k]
    }

    pub fn p1(&self, k: usize) -> &DMatrix<T> {
        &self.states[k].p1
    }

    pub fn p2(&self, k: usize) -> &DMatrix<T> {
        &self.states[k].p2
    }

    pub fn p3(&self, k: usize) -> &DVector<T> {
        &self.states[k].p3
    }

    pub fn p4(&self, k: usize) -> &DVector<T> {
        &self.states[k].p4
    }

    /// Martingale integrand of the P3 equation; zero for deterministic data.
    pub fn l3(&self, k: usize) -> DVector<T> {
        DVector::zeros(self.states[k].p3.len())
    }

    /// Martingale integrand of the P4 equation; zero for deterministic data.
    pub fn l4(&self, k: usize) -> DVector<T> {
        DVector::zeros(self.states[k].p4.len())
    }

    /// Piecewise-linear value at `s`.
    pub fn sample(&self, s: T) -> Result<KernelState<T>> {
        Ok(match self.grid.locate(s)? {
            Location::Node(k) => self.states[k].clone(),
            Location::Between(k, w) => self.states[k].lerp(&self.states[k + 1], w),
        })
    }

    pub fn p1_path(&self) -> MatrixPath<T> {
        Path::Sampled {
            grid: self.grid,
            values: self.states.iter().map(|s| s.p1.clone()).collect(),
        }
    }

    pub fn p2_path(&self) -> MatrixPath<T> {
        Path::Sampled {
            grid: self.grid,
            values: self.states.iter().map(|s| s.p2.clone()).collect(),
        }
    }

    pub fn p3_path(&self) -> VectorPath<T> {
        Path::Sampled {
            grid: self.grid,
            values: self.states.iter().map(|s| s.p3.clone()).collect(),
        }
    }

    pub fn p4_path(&self) -> VectorPath<T> {
        Path::Sampled {
            grid: self.grid,
            values: self.states.iter().map(|s| s.p4.clone()).collect(),
        }
    }

    /// Largest node-wise max-entry difference over all four components.
    pub fn max_difference(&self, other: &Self) -> T {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| {
                let d = KernelState::new(&a.p1 - &b.p1, &a.p2 - &b.p2, &a.p3 - &b.p3, &a.p4 - &b.p4);
                d.max_norm()
            })
            .fold(T::zero(), |acc, x| acc.max(x))
    }
}

fn open_with<T: Real>(problem: &CoefficientSet<T>, u: &VectorPath<T>) -> Result<Vec<KernelState<T>>> {
    integrate_backward(problem.grid(), KernelState::terminal(problem), |s, y| {
        Ok(open_drift(&problem.at(s)?, &u.sample(s)?, y))
    })
}

fn check_control_len<T: Real>(u: &VectorPath<T>, m: usize) -> Result<()> {
    for v in u.samples() {
        if v.len() != m {
            return Err(Error::dim("u", m, v.len()));
        }
    }
    Ok(())
}

/// Open-loop kernel for a deterministic control path.
pub fn solve_open_kernel<T: Real>(problem: &CoefficientSet<T>, u: &VectorPath<T>) -> Result<KernelSolution<T>> {
    check_control_len(u, problem.m())?;
    Ok(KernelSolution {
        variant: KernelVariant::Open,
        grid: *problem.grid(),
        states: open_with(problem, u)?,
        symmetry_correction: T::zero(),
    })
}

/// Closed-loop-representation kernel with the strategy frozen.
pub fn solve_rep_kernel<T: Real>(problem: &CoefficientSet<T>, strategy: &StrategyPair<T>) -> Result<KernelSolution<T>> {
    strategy.check_shape(problem.n(), problem.m())?;
    check_strategy_grid(strategy, problem)?;
    let states = integrate_backward(problem.grid(), KernelState::terminal(problem), |s, y| {
        let (theta, phi) = strategy.at(s)?;
        Ok(rep_drift(&problem.at(s)?, &theta, &phi, y))
    })?;
    Ok(KernelSolution {
        variant: KernelVariant::ClosedRep,
        grid: *problem.grid(),
        states,
        symmetry_correction: T::zero(),
    })
}

pub(crate) fn symmetrize_step<T: Real>(k: usize, y: &mut KernelState<T>, worst: &mut T) -> Result<()> {
    let c = y.symmetrize();
    if c > T::lit(SYMMETRY_DRIFT_LIMIT) {
        return Err(Error::SymmetryDrift {
            node: k,
            correction: c.as_f64(),
        });
    }
    *worst = worst.max(c);
    Ok(())
}

/// Closed-loop-strategy kernel with the strategy frozen; P1, P2 are re-symmetrized every step.
pub fn solve_strategy_kernel<T: Real>(
    problem: &CoefficientSet<T>,
    strategy: &StrategyPair<T>,
) -> Result<KernelSolution<T>> {
    strategy.check_shape(problem.n(), problem.m())?;
    check_strategy_grid(strategy, problem)?;
    let mut worst = T::zero();
    let states = integrate_backward_with(
        problem.grid(),
        KernelState::terminal(problem),
        |s, y| {
            let (theta, phi) = strategy.at(s)?;
            Ok(strategy_drift(&problem.at(s)?, &theta, &phi, y))
        },
        |k, y| symmetrize_step(k, y, &mut worst),
    )?;
    Ok(KernelSolution {
        variant: KernelVariant::ClosedStrategy,
        grid: *problem.grid(),
        states,
        symmetry_correction: worst,
    })
}

/// Kernel for a general feedback where `Θ₁` sees the perturbed state and `Θ₂` the unperturbed one.
pub fn solve_mixed_kernel<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
) -> Result<KernelSolution<T>> {
    control.check_shape(problem.n(), problem.m())?;
    let states = integrate_backward(problem.grid(), KernelState::terminal(problem), |s, y| {
        let (t1, t2, phi) = control.at(s)?;
        Ok(mixed_drift(&problem.at(s)?, &t1, &t2, &phi, y))
    })?;
    Ok(KernelSolution {
        variant: KernelVariant::Mixed,
        grid: *problem.grid(),
        states,
        symmetry_correction: T::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Entry, ProblemSpec};
    use crate::strategy::StrategyKind;
    use nalgebra::{dmatrix, dvector};

    fn base_spec() -> ProblemSpec<f64> {
        let mut spec = ProblemSpec::new(2, 1, 1.0, 100);
        spec.a = dmatrix![0.1, 0.4; -0.3, -0.2].into();
        spec.b = dmatrix![0.5; 1.0].into();
        spec.c = dmatrix![0.2, 0.0; 0.1, 0.3].into();
        spec.d = dmatrix![0.3; -0.2].into();
        spec.b_vec = dvector![0.1, -0.2].into();
        spec.sigma = dvector![0.3, 0.1].into();
        spec.q = dmatrix![1.0, 0.2; 0.2, 0.5].into();
        spec.s = dmatrix![0.1, -0.1].into();
        spec.r = dmatrix![1.0].into();
        spec.q_tilde = dmatrix![0.3, 0.0; 0.0, 0.1].into();
        spec.s_tilde = dmatrix![0.05, 0.02].into();
        spec.r_tilde = dmatrix![0.2].into();
        spec.g = dmatrix![1.0, 0.1; 0.1, 2.0];
        spec.g_tilde = dmatrix![-0.5, 0.0; 0.0, 0.3];
        spec.g_vec = dvector![0.4, -0.1];
        spec
    }

    fn u_path(problem: &CoefficientSet<f64>, scale: f64) -> VectorPath<f64> {
        Path::from_fn(*problem.grid(), |t| dvector![scale * (2.0 * t).sin()])
    }

    #[test]
    fn zero_dynamics_keep_terminal() {
        let mut spec = ProblemSpec::new(1, 1, 1.0, 10);
        spec.g = dmatrix![1.0];
        let p = spec.validate().unwrap();
        let k = solve_open_kernel(&p, &Path::constant(1.0, dvector![0.0])).unwrap();
        assert!(k.states.iter().all(|s| s.p1 == dmatrix![-1.0]));
    }

    #[test]
    fn pure_running_cost() {
        let mut spec = ProblemSpec::new(2, 1, 2.0, 20);
        spec.q = DMatrix::<f64>::identity(2, 2).into();
        let p = spec.validate().unwrap();
        let k = solve_open_kernel(&p, &Path::constant(2.0, dvector![0.0])).unwrap();
        for (i, s) in k.states.iter().enumerate() {
            let expect = -DMatrix::identity(2, 2) * (2.0 - p.grid().node(i));
            assert!((&s.p1 - expect).amax() <= 1e-12);
        }
    }

    #[test]
    fn terminal_is_exact() {
        let p = base_spec().validate().unwrap();
        let k = solve_open_kernel(&p, &u_path(&p, 1.0)).unwrap();
        let last = k.state(100);
        assert_eq!(last.p1, -p.g());
        assert_eq!(last.p2, -p.g_tilde());
        assert_eq!(last.p3, DVector::zeros(2));
        assert_eq!(last.p4, -p.g_vec());
    }

    #[test]
    fn first_two_components_ignore_control() {
        let p = base_spec().validate().unwrap();
        let a = solve_open_kernel(&p, &u_path(&p, 1.0)).unwrap();
        let b = solve_open_kernel(&p, &u_path(&p, -3.0)).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.p1, y.p1);
            assert_eq!(x.p2, y.p2);
        }
    }

    #[test]
    fn affine_components_are_linear_in_data() {
        let mut spec = base_spec();
        spec.sigma = Entry::Zero;
        let p = spec.validate().unwrap();
        let mut doubled = spec.clone();
        doubled.b_vec = dvector![0.2, -0.4].into();
        doubled.g_vec = dvector![0.8, -0.2];
        let p2 = doubled.validate().unwrap();
        let a = solve_open_kernel(&p, &u_path(&p, 1.0)).unwrap();
        let b = solve_open_kernel(&p2, &u_path(&p2, 2.0)).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((&x.p3 * 2.0 - &y.p3).amax() <= 1e-12);
            assert!((&x.p4 * 2.0 - &y.p4).amax() <= 1e-12);
        }
    }

    #[test]
    fn frozen_zero_gain_reproduces_open_system() {
        let p = base_spec().validate().unwrap();
        let u = u_path(&p, 0.7);
        let open = solve_open_kernel(&p, &u).unwrap();
        let zero = Path::constant(1.0, DMatrix::zeros(1, 2));
        let rep = solve_rep_kernel(&p, &StrategyPair::new(zero.clone(), u.clone(), StrategyKind::OpenRep)).unwrap();
        let strat =
            solve_strategy_kernel(&p, &StrategyPair::new(zero.clone(), u.clone(), StrategyKind::ClosedStrategy)).unwrap();
        assert!(open.max_difference(&rep) <= 1e-12);
        assert!(open.max_difference(&strat) <= 1e-12);
    }

    #[test]
    fn mixed_system_reduces_to_both_closed_systems() {
        let p = base_spec().validate().unwrap();
        let theta = Path::from_fn(*p.grid(), |t| dmatrix![-0.3 + 0.1 * t, 0.2]);
        let phi = u_path(&p, 0.4);
        let zero = Path::constant(1.0, DMatrix::zeros(1, 2));
        let rep = solve_rep_kernel(&p, &StrategyPair::new(theta.clone(), phi.clone(), StrategyKind::OpenRep)).unwrap();
        let mixed_rep = solve_mixed_kernel(&p, &FeedbackControl::new(zero.clone(), theta.clone(), phi.clone())).unwrap();
        assert!(rep.max_difference(&mixed_rep) <= 1e-12);
        let strat =
            solve_strategy_kernel(&p, &StrategyPair::new(theta.clone(), phi.clone(), StrategyKind::ClosedStrategy))
                .unwrap();
        let mixed_strat = solve_mixed_kernel(&p, &FeedbackControl::new(theta, zero, phi)).unwrap();
        assert!(strat.max_difference(&mixed_strat) <= 1e-10);
    }

    #[test]
    fn strategy_kernel_stays_symmetric() {
        let p = base_spec().validate().unwrap();
        let theta = Path::from_fn(*p.grid(), |t| dmatrix![-0.3 + 0.1 * t, 0.2]);
        let k = solve_strategy_kernel(
            &p,
            &StrategyPair::new(theta, u_path(&p, 0.4), StrategyKind::ClosedStrategy),
        )
        .unwrap();
        assert!(k.symmetry_correction <= 1e-12 * 10.0);
        for s in &k.states {
            assert_eq!(s.p1, s.p1.transpose());
        }
    }

    #[test]
    fn rep_static_terminal() {
        let mut spec = ProblemSpec::new(2, 1, 1.0, 10);
        spec.g_tilde = -DMatrix::<f64>::identity(2, 2);
        let p = spec.validate().unwrap();
        let k = solve_rep_kernel(&p, &StrategyPair::zero(&p, StrategyKind::OpenRep)).unwrap();
        assert!(k.states.iter().all(|s| s.p2 == DMatrix::identity(2, 2)));
    }

    #[test]
    fn scalar_rep_matches_exponential() {
        // dP1/ds = -(2a + b θ) P1 + q with constant θ; P1(T) = -g.
        let (a, b, q, g, th): (f64, f64, f64, f64, f64) = (0.3, 0.8, 1.2, 0.5, -0.4);
        let mut spec = ProblemSpec::new(1, 1, 1.0, 200);
        spec.a = dmatrix![a].into();
        spec.b = dmatrix![b].into();
        spec.q = dmatrix![q].into();
        spec.g = dmatrix![g];
        let p = spec.validate().unwrap();
        let strat = StrategyPair::new(
            Path::constant(1.0, dmatrix![th]),
            Path::constant(1.0, dvector![0.0]),
            StrategyKind::OpenRep,
        );
        let k = solve_rep_kernel(&p, &strat).unwrap();
        let lam = 2.0 * a + b * th;
        for (i, st) in k.states.iter().enumerate() {
            let tau = 1.0 - p.grid().node(i);
            let exact = q / lam + (-g - q / lam) * (lam * tau).exp();
            assert!((st.p1[(0, 0)] - exact).abs() <= 1e-10);
        }
    }

    #[test]
    fn sampling_between_nodes() {
        let p = base_spec().validate().unwrap();
        let k = solve_open_kernel(&p, &u_path(&p, 1.0)).unwrap();
        let mid = 0.5 * (p.grid().node(3) + p.grid().node(4));
        let s = k.sample(mid).unwrap();
        let expect = (k.p1(3) + k.p1(4)) * 0.5;
        assert!((s.p1 - expect).amax() <= 1e-14);
        assert!(k.sample(1.5).is_err());
    }
}
