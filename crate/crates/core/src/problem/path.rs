//! Uniform time grids and grid-sampled paths with piecewise-linear lookup.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > T::zero()) {
            return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::Grid(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> T {
        self.horizon / T::lit(self.steps as f64)
    }

    /// Node time `t_k`; `t_N` is the horizon exactly.
    pub fn node(&self, k: usize) -> T {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * T::lit(k as f64) / T::lit(self.steps as f64)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Grid with every step split into `factor` equal parts.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * factor.max(1),
        }
    }

    /// Index of the node at `s`, if `s` is a node up to rounding.
    pub fn index_of(&self, s: T) -> Option<usize> {
        match self.locate(s).ok()? {
            Location::Node(k) => Some(k),
            Location::Between(..) => None,
        }
    }

    pub fn locate(&self, s: T) -> Result<Location<T>> {
        if !(s >= T::zero() && s <= self.horizon) {
            return Err(Error::OutOfRange {
                time: s.as_f64(),
                horizon: self.horizon.as_f64(),
            });
        }
        let pos = s / self.horizon * T::lit(self.steps as f64);
        let nearest = pos.round();
        if (pos - nearest).abs() <= T::lit(1e-6) {
            let k = nearest.to_usize().unwrap_or(0).min(self.steps);
            return Ok(Location::Node(k));
        }
        let k = pos.floor().to_usize().unwrap_or(0).min(self.steps - 1);
        let w = (s - self.node(k)) / self.step();
        Ok(Location::Between(k, w))
    }
}

/// Position of a time inside a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location<T> {
    Node(usize),
    /// Between nodes `k` and `k + 1`, with weight `w` on the right node.
    Between(usize, T),
}

/// Values that can be linearly interpolated.
pub trait Interpolate<T>: Clone {
    fn lerp(&self, other: &Self, w: T) -> Self;
}

impl<T: Real> Interpolate<T> for T {
    fn lerp(&self, other: &Self, w: T) -> Self {
        *self + (*other - *self) * w
    }
}

impl<T: Real> Interpolate<T> for DMatrix<T> {
    fn lerp(&self, other: &Self, w: T) -> Self {
        self + (other - self) * w
    }
}

impl<T: Real> Interpolate<T> for DVector<T> {
    fn lerp(&self, other: &Self, w: T) -> Self {
        self + (other - self) * w
    }
}

/// A time-indexed quantity: either constant or sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Path<T, S> {
    Constant { horizon: T, value: S },
    Sampled { grid: TimeGrid<T>, values: Vec<S> },
}

pub type MatrixPath<T> = Path<T, DMatrix<T>>;
pub type VectorPath<T> = Path<T, DVector<T>>;
pub type ScalarPath<T> = Path<T, T>;

impl<T: Real, S: Interpolate<T>> Path<T, S> {
    pub fn constant(horizon: T, value: S) -> Self {
        Path::Constant { horizon, value }
    }

    pub fn sampled(grid: TimeGrid<T>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "path has {} samples for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Path::Sampled { grid, values })
    }

    pub fn from_fn(grid: TimeGrid<T>, mut f: impl FnMut(T) -> S) -> Self {
        let values = grid.nodes().into_iter().map(&mut f).collect();
        Path::Sampled { grid, values }
    }

    pub fn horizon(&self) -> T {
        match self {
            Path::Constant { horizon, .. } => *horizon,
            Path::Sampled { grid, .. } => grid.horizon(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Path::Constant { .. })
    }

    /// Piecewise-linear value at `s`, exact at grid nodes, never extrapolating.
    pub fn sample(&self, s: T) -> Result<S> {
        match self {
            Path::Constant { horizon, value } => {
                if s >= T::zero() && s <= *horizon {
                    Ok(value.clone())
                } else {
                    Err(Error::OutOfRange {
                        time: s.as_f64(),
                        horizon: horizon.as_f64(),
                    })
                }
            }
            Path::Sampled { grid, values } => Ok(match grid.locate(s)? {
                Location::Node(k) => values[k].clone(),
                Location::Between(k, w) => values[k].lerp(&values[k + 1], w),
            }),
        }
    }

    /// Samples at every node of `grid`.
    pub fn on_grid(&self, grid: &TimeGrid<T>) -> Result<Vec<S>> {
        grid.nodes().into_iter().map(|s| self.sample(s)).collect()
    }

    /// Applies `f` to each stored sample.
    pub fn map<U: Interpolate<T>>(&self, mut f: impl FnMut(&S) -> U) -> Path<T, U> {
        match self {
            Path::Constant { horizon, value } => Path::Constant {
                horizon: *horizon,
                value: f(value),
            },
            Path::Sampled { grid, values } => Path::Sampled {
                grid: *grid,
                values: values.iter().map(f).collect(),
            },
        }
    }

    pub fn samples(&self) -> std::slice::Iter<'_, S> {
        match self {
            Path::Constant { value, .. } => std::slice::from_ref(value).iter(),
            Path::Sampled { values, .. } => values.iter(),
        }
    }

    pub fn grid(&self) -> Option<&TimeGrid<T>> {
        match self {
            Path::Constant { .. } => None,
            Path::Sampled { grid, .. } => Some(grid),
        }
    }
}

/// Componentwise sum of two paths sharing a horizon.
pub fn add_paths<T: Real, S>(lhs: &Path<T, S>, rhs: &Path<T, S>, grid: &TimeGrid<T>) -> Result<Path<T, S>>
where
    S: Interpolate<T> + for<'a> std::ops::Add<&'a S, Output = S>,
{
    match (lhs, rhs) {
        (Path::Constant { horizon, value: a }, Path::Constant { value: b, .. }) => Ok(Path::Constant {
            horizon: *horizon,
            value: a.clone() + b,
        }),
        _ => {
            let a = lhs.on_grid(grid)?;
            let b = rhs.on_grid(grid)?;
            let values = a.into_iter().zip(b.iter()).map(|(x, y)| x + y).collect();
            Path::sampled(*grid, values)
        }
    }
}
