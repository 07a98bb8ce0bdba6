//! Pseudo-inverse, semidefiniteness margin and range-inclusion tests.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};

/// Default relative singular-value cutoff.
pub const DEFAULT_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PinvResult<T: Real> {
    pub pinv: DMatrix<T>,
    pub rank: usize,
    pub cutoff: T,
}

impl<T: Real> PinvResult<T> {
    /// Number of columns minus rank.
    pub fn nullity(&self) -> usize {
        self.pinv.nrows() - self.rank
    }
}

/// Moore–Penrose pseudo-inverse with cutoff `rtol * sigma_max`.
///
/// The decomposition runs in double precision whatever `T` is.
pub fn pinv<T: Real>(m: &DMatrix<T>, rtol: T) -> Result<PinvResult<T>> {
    let (p, q) = m.shape();
    if !all_finite(m) {
        return Err(Error::Decomposition("non-finite entry in pseudo-inverse input".into()));
    }
    if p == 0 || q == 0 {
        return Ok(PinvResult {
            pinv: DMatrix::zeros(q, p),
            rank: 0,
            cutoff: T::zero(),
        });
    }
    let f = faer::Mat::<f64>::from_fn(p, q, |i, j| m[(i, j)].as_f64());
    let svd = f
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("singular value decomposition failed: {e:?}")))?;
    let (u, v, sv) = (svd.U(), svd.V(), svd.S().column_vector());
    let k = p.min(q);
    let smax = (0..k).fold(0.0f64, |a, i| a.max(sv[i]));
    let cutoff = rtol.as_f64() * smax;
    let mut pinv = DMatrix::zeros(q, p);
    let mut rank = 0;
    for i in 0..k {
        let s = sv[i];
        if s > cutoff && s > 0.0 {
            rank += 1;
            for r in 0..q {
                let vr = v[(r, i)] / s;
                for c in 0..p {
                    pinv[(r, c)] += T::lit(vr * u[(c, i)]);
                }
            }
        }
    }
    let cutoff = T::lit(cutoff);
    Ok(PinvResult { pinv, rank, cutoff })
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn psd_margin<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if !m.is_square() {
        return Err(Error::Shape(format!("psd_margin needs a square matrix, got {:?}", m.shape())));
    }
    if !all_finite(m) {
        return Err(Error::Decomposition("non-finite entry in eigenvalue input".into()));
    }
    if m.nrows() == 0 {
        return Ok(T::zero());
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().fold(T::max_value().unwrap(), |a, &x| a.min(x)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeCheck<T> {
    pub contained: bool,
    pub slack: T,
}

/// Relative residual of projecting the columns of `w` onto the range of `m`.
pub fn range_inclusion<T: Real>(w: &DMatrix<T>, m: &DMatrix<T>, rtol: T, tol: T) -> Result<RangeCheck<T>> {
    let mp = pinv(m, rtol)?;
    range_inclusion_with(w, m, &mp, tol)
}

/// As [`range_inclusion`] with a precomputed pseudo-inverse of `m`.
pub fn range_inclusion_with<T: Real>(
    w: &DMatrix<T>,
    m: &DMatrix<T>,
    mp: &PinvResult<T>,
    tol: T,
) -> Result<RangeCheck<T>> {
    if w.nrows() != m.nrows() {
        return Err(Error::Shape(format!(
            "range test: W has {} rows, M has {}",
            w.nrows(),
            m.nrows()
        )));
    }
    let proj = m * (&mp.pinv * w);
    let slack = (w - proj).norm() / (T::one() + w.norm());
    Ok(RangeCheck {
        contained: slack <= tol,
        slack,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineSolution<T: Real> {
    pub x: DMatrix<T>,
    /// `‖M x − rhs‖_F`.
    pub residual: T,
    pub rank: usize,
    pub nullity: usize,
}

/// Minimum-norm solution `M† rhs`; the residual is reported, never raised.
pub fn solve_affine<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>, rtol: T) -> Result<AffineSolution<T>> {
    if m.nrows() != rhs.nrows() {
        return Err(Error::Shape(format!(
            "solve: M has {} rows, rhs has {}",
            m.nrows(),
            rhs.nrows()
        )));
    }
    let mp = pinv(m, rtol)?;
    let x = &mp.pinv * rhs;
    let residual = (m * &x - rhs).norm();
    Ok(AffineSolution {
        x,
        residual,
        rank: mp.rank,
        nullity: mp.nullity(),
    })
}

/// Vector form of [`solve_affine`].
pub fn solve_affine_vec<T: Real>(m: &DMatrix<T>, rhs: &DVector<T>, rtol: T) -> Result<(DVector<T>, T)> {
    let sol = solve_affine(m, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), rtol)?;
    Ok((sol.x.column(0).into_owned(), sol.residual))
}

/// Residuals of the four Moore–Penrose identities, in order.
pub fn penrose_residuals<T: Real>(m: &DMatrix<T>, p: &DMatrix<T>) -> [T; 4] {
    let mp = m * p;
    let pm = p * m;
    [
        (&mp * m - m).norm(),
        (&pm * p - p).norm(),
        (mp.transpose() - &mp).norm(),
        (pm.transpose() - &pm).norm(),
    ]
}
