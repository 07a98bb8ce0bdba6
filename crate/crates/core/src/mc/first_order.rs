//! Algebraic limits of the perturbation quotient, used to predict Monte Carlo output.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernel::solve_mixed_kernel;
use crate::linalg::pinv;
use crate::problem::{CoefficientSet, FeedbackControl};
use crate::scalar::Real;

/// Per-node coefficients of the first- and second-order variation of the cost.
#[derive(Clone, Debug)]
pub struct FirstOrderTerms<T: Real> {
    /// `𝒮 + ℛ(Θ₁+Θ₂) − [Bᵀ(𝒫₁+𝒫₂) + Dᵀ𝒫₁(C + D(Θ₁+Θ₂))]`.
    pub gain: Vec<DMatrix<T>>,
    /// `ℛφ − Bᵀ(𝒫₃+𝒫₄) − Dᵀ𝒫₁(Dφ + σ)`.
    pub offset: Vec<DVector<T>>,
    /// `ℛ − DᵀP̄₁D`, with `P̄₁` the second-order kernel of `Θ₁`.
    pub curvature: Vec<DMatrix<T>>,
    /// `DᵀP̄₁D`.
    pub diffusion_weight: Vec<DMatrix<T>>,
    pub r_agg: Vec<DMatrix<T>>,
    /// `𝒮ᵀ + Θ₁ᵀℛ`.
    pub cross: Vec<DMatrix<T>>,
    /// `Q + SᵀΘ₁ + Θ₁ᵀS + Θ₁ᵀRΘ₁`.
    pub q_theta: Vec<DMatrix<T>>,
    /// `Q̃ + S̃ᵀΘ₁ + Θ₁ᵀS̃ + Θ₁ᵀR̃Θ₁`.
    pub q_theta_tilde: Vec<DMatrix<T>>,
}

impl<T: Real> FirstOrderTerms<T> {
    /// `ℋ(t) = gain·ξ + offset` at node `k`.
    pub fn stationarity(&self, k: usize, xi: &DVector<T>) -> DVector<T> {
        &self.gain[k] * xi + &self.offset[k]
    }

    /// Limit of the quotient as `ε → 0`: `⟨ℋ, v⟩ + ½ vᵀ(ℛ − DᵀP̄₁D)v`.
    pub fn limit(&self, k: usize, xi: &DVector<T>, v: &DVector<T>) -> T {
        self.stationarity(k, xi).dot(v) + (v.transpose() * &self.curvature[k] * v)[(0, 0)] * T::lit(0.5)
    }

    /// Minimizer `−(ℛ − DᵀP̄₁D)†ℋ` of the limit over `v`.
    pub fn steepest(&self, k: usize, xi: &DVector<T>, rtol: T) -> Result<DVector<T>> {
        Ok(-(pinv(&self.curvature[k], rtol)?.pinv * self.stationarity(k, xi)))
    }
}

pub fn first_order_terms<T: Real>(
    problem: &CoefficientSet<T>,
    control: &FeedbackControl<T>,
) -> Result<FirstOrderTerms<T>> {
    let kernel = solve_mixed_kernel(problem, control)?;
    let bar = FeedbackControl::new(
        control.theta1.clone(),
        control.theta2.map(|m| DMatrix::zeros(m.nrows(), m.ncols())),
        control.phi.clone(),
    );
    let bar_kernel = solve_mixed_kernel(problem, &bar)?;
    let grid = problem.grid();
    let mut out = FirstOrderTerms {
        gain: Vec::new(),
        offset: Vec::new(),
        curvature: Vec::new(),
        diffusion_weight: Vec::new(),
        r_agg: Vec::new(),
        cross: Vec::new(),
        q_theta: Vec::new(),
        q_theta_tilde: Vec::new(),
    };
    for k in 0..=grid.steps() {
        let s = grid.node(k);
        let c = problem.at(s)?;
        let (t1, t2, phi) = control.at(s)?;
        let st = kernel.state(k);
        let th = &t1 + &t2;
        let bt = c.b.transpose();
        let dt = c.d.transpose();
        let dtp1 = &dt * &st.p1;
        out.gain
            .push(&c.s_agg + &c.r_agg * &th - (&bt * (&st.p1 + &st.p2) + &dtp1 * (&c.c + &c.d * &th)));
        out.offset
            .push(&c.r_agg * &phi - &bt * (&st.p3 + &st.p4) - &dtp1 * (&c.d * &phi + &c.sigma));
        let dpd = &dt * bar_kernel.p1(k) * &c.d;
        out.curvature.push(&c.r_agg - &dpd);
        out.diffusion_weight.push(dpd);
        out.cross.push(c.s_agg.transpose() + t1.transpose() * &c.r_agg);
        let t1t = t1.transpose();
        out.q_theta
            .push(&c.q + c.s.transpose() * &t1 + &t1t * &c.s + &t1t * &c.r * &t1);
        out.q_theta_tilde
            .push(&c.q_tilde + c.s_tilde.transpose() * &t1 + &t1t * &c.s_tilde + &t1t * &c.r_tilde * &t1);
        out.r_agg.push(c.r_agg.clone());
    }
    Ok(out)
}
