//! Right-hand sides `d(P1, P2, P3, P4)/ds` of the backward kernel systems.

use nalgebra::{DMatrix, DVector};

use super::KernelState;
use crate::error::Result;
use crate::linalg::{pinv, PinvResult};
use crate::problem::Snapshot;
use crate::scalar::Real;

/// Kernel system driven by a deterministic open-loop control `u`.
pub fn open_drift<T: Real>(c: &Snapshot<T>, u: &DVector<T>, y: &KernelState<T>) -> KernelState<T> {
    let at = c.a.transpose();
    let ct = c.c.transpose();
    let ctp1 = &ct * &y.p1;
    let p1 = &y.p1 * &c.a + &at * &y.p1 + &ctp1 * &c.c - &c.q;
    let p2 = &y.p2 * &c.a + &at * &y.p2 - &c.q_tilde;
    let p3 = &at * &y.p3 + &y.p2 * &c.b_vec + (&y.p2 * &c.b - c.s_tilde.transpose()) * u;
    let p4 = &at * &y.p4
        + &ctp1 * &c.sigma
        + &y.p1 * &c.b_vec
        + (&ctp1 * &c.d + &y.p1 * &c.b - c.s.transpose()) * u;
    KernelState::new(-p1, -p2, -p3, -p4)
}

/// Kernel system of a closed-loop representation with gain `theta` acting on the unperturbed state.
pub fn rep_drift<T: Real>(
    c: &Snapshot<T>,
    theta: &DMatrix<T>,
    phi: &DVector<T>,
    y: &KernelState<T>,
) -> KernelState<T> {
    let at = c.a.transpose();
    let ct = c.c.transpose();
    let ctp1 = &ct * &y.p1;
    let st = c.s.transpose();
    let p1 = &y.p1 * &c.a + &at * &y.p1 + &ctp1 * &c.c + (&y.p1 * &c.b + &ctp1 * &c.d - &st) * theta - &c.q;
    let p2b_st = &y.p2 * &c.b - c.s_tilde.transpose();
    let p2 = &y.p2 * &c.a + &at * &y.p2 - &c.q_tilde + &p2b_st * theta;
    let p3 = &at * &y.p3 + &p2b_st * phi + &y.p2 * &c.b_vec;
    let p4 = &at * &y.p4 + &ctp1 * &c.sigma + (&ctp1 * &c.d + &y.p1 * &c.b - &st) * phi + &y.p1 * &c.b_vec;
    KernelState::new(-p1, -p2, -p3, -p4)
}

/// Kernel system of a closed-loop strategy with gain `theta` acting on the perturbed state.
pub fn strategy_drift<T: Real>(
    c: &Snapshot<T>,
    theta: &DMatrix<T>,
    phi: &DVector<T>,
    y: &KernelState<T>,
) -> KernelState<T> {
    let a_th = &c.a + &c.b * theta;
    let c_th = &c.c + &c.d * theta;
    let a_tht = a_th.transpose();
    let tht = theta.transpose();
    let run = &c.q + &tht * &c.s + &tht * &c.r * theta + c.s.transpose() * theta;
    let run_t = &c.q_tilde + &tht * &c.s_tilde + &tht * &c.r_tilde * theta + c.s_tilde.transpose() * theta;
    let p1 = &y.p1 * &a_th + &a_tht * &y.p1 + c_th.transpose() * &y.p1 * &c_th - run;
    let p2 = &y.p2 * &a_th + &a_tht * &y.p2 - run_t;
    let p3 = &a_tht * &y.p3 + &y.p2 * &c.b_vec + (&y.p2 * &c.b - c.s_tilde.transpose() - &tht * &c.r_tilde) * phi;
    let p4 = &a_tht * &y.p4 + c_th.transpose() * (&y.p1 * (&c.d * phi + &c.sigma)) + &y.p1 * (&c.b * phi + &c.b_vec)
        - (c.s.transpose() + &tht * &c.r) * phi;
    KernelState::new(-p1, -p2, -p3, -p4)
}

/// Kernel system for `u = (Θ₁+Θ₂)X + φ` where only `Θ₁` sees a perturbed state.
pub fn mixed_drift<T: Real>(
    c: &Snapshot<T>,
    theta1: &DMatrix<T>,
    theta2: &DMatrix<T>,
    phi: &DVector<T>,
    y: &KernelState<T>,
) -> KernelState<T> {
    let theta = theta1 + theta2;
    let a_full = &c.a + &c.b * &theta;
    let c_full = &c.c + &c.d * &theta;
    let a1t = (&c.a + &c.b * theta1).transpose();
    let c1t = (&c.c + &c.d * theta1).transpose();
    let t1t = theta1.transpose();
    let run = &c.q + &t1t * &c.s + &t1t * &c.r * &theta + c.s.transpose() * &theta;
    let run_t = &c.q_tilde + &t1t * &c.s_tilde + &t1t * &c.r_tilde * &theta + c.s_tilde.transpose() * &theta;
    let drift_u = &c.b * phi + &c.b_vec;
    let p1 = &y.p1 * &a_full + &c1t * &y.p1 * &c_full + &a1t * &y.p1 - run;
    let p2 = &y.p2 * &a_full + &a1t * &y.p2 - run_t;
    let p3 = &a1t * &y.p3 + &y.p2 * &drift_u - (c.s_tilde.transpose() + &t1t * &c.r_tilde) * phi;
    let p4 = &a1t * &y.p4 + &c1t * (&y.p1 * (&c.d * phi + &c.sigma)) + &y.p1 * &drift_u
        - (c.s.transpose() + &t1t * &c.r) * phi;
    KernelState::new(-p1, -p2, -p3, -p4)
}

/// Minimum-norm feedback read off a kernel state.
#[derive(Clone, Debug)]
pub struct FeedbackSolve<T: Real> {
    /// `ℛ − DᵀP₁D`.
    pub weight: DMatrix<T>,
    pub weight_pinv: PinvResult<T>,
    /// `Bᵀ(P₁+P₂) + DᵀP₁C − 𝒮`.
    pub gain_rhs: DMatrix<T>,
    /// `Bᵀ(P₃+P₄) + DᵀP₁σ`.
    pub affine_rhs: DVector<T>,
    pub theta: DMatrix<T>,
    pub phi: DVector<T>,
}

impl<T: Real> FeedbackSolve<T> {
    pub fn new(c: &Snapshot<T>, y: &KernelState<T>, rtol: T) -> Result<Self> {
        let bt = c.b.transpose();
        let dtp1 = c.d.transpose() * &y.p1;
        let weight = &c.r_agg - &dtp1 * &c.d;
        let gain_rhs = &bt * (&y.p1 + &y.p2) + &dtp1 * &c.c - &c.s_agg;
        let affine_rhs = &bt * (&y.p3 + &y.p4) + &dtp1 * &c.sigma;
        let weight_pinv = pinv(&weight, rtol)?;
        let theta = &weight_pinv.pinv * &gain_rhs;
        let phi = &weight_pinv.pinv * &affine_rhs;
        Ok(Self {
            weight,
            weight_pinv,
            gain_rhs,
            affine_rhs,
            theta,
            phi,
        })
    }

    /// Residuals `‖WΘ − rhs‖` and `‖Wφ − rhs‖` for a given pair.
    pub fn residuals(&self, theta: &DMatrix<T>, phi: &DVector<T>) -> (T, T) {
        (
            (&self.weight * theta - &self.gain_rhs).norm(),
            (&self.weight * phi - &self.affine_rhs).norm(),
        )
    }
}
