//! Fixed-step classical Runge–Kutta sweeps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::TimeGrid;
use crate::scalar::{max_abs, Real};

/// Norm beyond which a backward sweep is declared to have blown up.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Vector-space operations needed by the integrator.
pub trait OdeState<T: Real>: Clone {
    /// `self + a * other`.
    fn add_scaled(&self, a: T, other: &Self) -> Self;
    /// Largest absolute entry; NaN when any entry is not finite.
    fn max_norm(&self) -> T;
}

impl<T: Real> OdeState<T> for T {
    fn add_scaled(&self, a: T, other: &Self) -> Self {
        *self + a * *other
    }

    fn max_norm(&self) -> T {
        self.abs()
    }
}

impl<T: Real> OdeState<T> for DMatrix<T> {
    fn add_scaled(&self, a: T, other: &Self) -> Self {
        self + other * a
    }

    fn max_norm(&self) -> T {
        if self.iter().any(|x| !x.is_finite()) {
            return T::lit(f64::NAN);
        }
        max_abs(self)
    }
}

impl<T: Real> OdeState<T> for DVector<T> {
    fn add_scaled(&self, a: T, other: &Self) -> Self {
        self + other * a
    }

    fn max_norm(&self) -> T {
        if self.iter().any(|x| !x.is_finite()) {
            return T::lit(f64::NAN);
        }
        max_abs(self)
    }
}

/// One RK4 step from `t0` to `t1` (either direction). Stage times are `t0`, the midpoint, `t1`.
pub fn rk4_step<T, S, F>(t0: T, t1: T, y: &S, f: &mut F) -> Result<S>
where
    T: Real,
    S: OdeState<T>,
    F: FnMut(T, &S) -> Result<S>,
{
    let dt = t1 - t0;
    let half = dt * T::lit(0.5);
    let tm = (t0 + t1) * T::lit(0.5);
    let k1 = f(t0, y)?;
    let k2 = f(tm, &y.add_scaled(half, &k1))?;
    let k3 = f(tm, &y.add_scaled(half, &k2))?;
    let k4 = f(t1, &y.add_scaled(dt, &k3))?;
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let incr = k1.add_scaled(two, &k2).add_scaled(two, &k3).add_scaled(T::one(), &k4);
    Ok(y.add_scaled(sixth, &incr))
}

pub(crate) fn check_blow_up<T: Real, S: OdeState<T>>(y: &S, node: usize, time: T) -> Result<()> {
    let norm = y.max_norm();
    if !norm.is_finite() || norm > T::lit(BLOW_UP_LIMIT) {
        return Err(Error::BlowUp {
            node,
            time: time.as_f64(),
            norm: norm.as_f64(),
        });
    }
    Ok(())
}

/// Sweeps `dy/ds = f(s, y)` from `y(T) = terminal` down to `t_0`; returns node values in time order.
///
/// `post` runs after every step with the node index and may adjust the new value.
pub fn integrate_backward_with<T, S, F, P>(grid: &TimeGrid<T>, terminal: S, mut f: F, mut post: P) -> Result<Vec<S>>
where
    T: Real,
    S: OdeState<T>,
    F: FnMut(T, &S) -> Result<S>,
    P: FnMut(usize, &mut S) -> Result<()>,
{
    let n = grid.steps();
    check_blow_up(&terminal, n, grid.horizon())?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(terminal);
    for k in (0..n).rev() {
        let prev = out.last().unwrap();
        let mut y = rk4_step(grid.node(k + 1), grid.node(k), prev, &mut f)?;
        post(k, &mut y)?;
        check_blow_up(&y, k, grid.node(k))?;
        out.push(y);
    }
    out.reverse();
    Ok(out)
}

pub fn integrate_backward<T, S, F>(grid: &TimeGrid<T>, terminal: S, f: F) -> Result<Vec<S>>
where
    T: Real,
    S: OdeState<T>,
    F: FnMut(T, &S) -> Result<S>,
{
    integrate_backward_with(grid, terminal, f, |_, _| Ok(()))
}

/// Forward RK4 sweep from node `start` to the end of the grid; element `j` is the value at node `start + j`.
pub fn integrate_forward<T, S, F>(grid: &TimeGrid<T>, start: usize, initial: S, mut f: F) -> Result<Vec<S>>
where
    T: Real,
    S: OdeState<T>,
    F: FnMut(T, &S) -> Result<S>,
{
    let mut out = Vec::with_capacity(grid.steps() + 1 - start);
    out.push(initial);
    for k in start..grid.steps() {
        let y = rk4_step(grid.node(k), grid.node(k + 1), out.last().unwrap(), &mut f)?;
        check_blow_up(&y, k + 1, grid.node(k + 1))?;
        out.push(y);
    }
    Ok(out)
}
