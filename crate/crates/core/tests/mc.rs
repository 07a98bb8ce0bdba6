mod common;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use common::{inconsistent, unit_diffusion, ScalarRegulator};
use tilq::mc::{decompose_variation, estimate_cost, perturbation_quotient, McParams, PerturbationProbe, ProbeMode};
use tilq::problem::{Path, ProblemSpec};
use tilq::{synthesize_strategy, FeedbackControl, Problem64, Tolerances};

fn small(seed: u64) -> McParams {
    McParams { outer: 512, inner: 32, seed }
}

const REG: ScalarRegulator = ScalarRegulator { a: 0.3, b: 1.0, q: 1.0, r: 1.0, g: 1.0, horizon: 1.0 };

fn exact_feedback(p: &Problem64) -> FeedbackControl<f64> {
    let grid = p.grid().refine(4);
    let theta = Path::from_fn(grid, |s| dmatrix![-REG.b * REG.riccati(s) / REG.r]);
    FeedbackControl::new(theta, Path::constant(REG.horizon, dmatrix![0.0]), Path::constant(REG.horizon, dvector![0.0]))
}

fn deterministic_cost(steps: usize) -> f64 {
    let p = REG.problem(steps);
    let est = estimate_cost(&p, 0, p.x0(), &exact_feedback(&p), &McParams { outer: 2, inner: 1, seed: 0 }).unwrap();
    assert_eq!(est.stderr, 0.0);
    est.mean
}

#[test]
fn noise_free_cost_converges_to_riccati_value() {
    let exact = 0.5 * REG.riccati(0.0);
    let (j1, j2, j4) = (deterministic_cost(400), deterministic_cost(800), deterministic_cost(1600));
    let (e1, e2, e4) = (j1 - exact, j2 - exact, j4 - exact);
    let order = ((e1 / e2).ln() / 2f64.ln() + (e2 / e4).ln() / 2f64.ln()) / 2.0;
    assert!((order - 1.0).abs() < 0.1, "observed order {order:.3}");
    let extrapolated = 2.0 * j4 - j2;
    assert!((extrapolated - exact).abs() < 1e-6, "{extrapolated} vs {exact}");
}

#[test]
fn variance_penalty_is_nonnegative() {
    let mut s = ProblemSpec::new(1, 1, 1.0, 100);
    s.a = dmatrix![0.2].into();
    s.c = dmatrix![0.4].into();
    s.sigma = dvector![0.3].into();
    s.g = dmatrix![1.0];
    s.g_tilde = dmatrix![-1.0];
    s.x0 = dvector![1.0];
    let p = s.validate().unwrap();
    let zero = FeedbackControl::open_loop(Path::constant(1.0, dvector![0.0]), 1);
    let est = estimate_cost(&p, 0, p.x0(), &zero, &small(3)).unwrap();
    assert!(est.mean >= -2.0 * est.stderr, "{} ± {}", est.mean, est.stderr);
    assert!(est.mean > 0.0);
}

#[test]
fn standard_error_shrinks_with_outer_samples() {
    let p = unit_diffusion(50);
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let control = syn.strategy.control();
    let few = estimate_cost(&p, 0, p.x0(), &control, &McParams { outer: 256, inner: 16, seed: 9 }).unwrap();
    let many = estimate_cost(&p, 0, p.x0(), &control, &McParams { outer: 4096, inner: 16, seed: 9 }).unwrap();
    let ratio = few.stderr / many.stderr;
    assert!(ratio > 4.0 / 1.5 && ratio < 4.0 * 1.5, "stderr ratio {ratio:.3}");
    assert!((few.mean - many.mean).abs() < 3.0 * few.stderr);
}

#[test]
fn seeds_fix_the_estimate() {
    let p = inconsistent(50);
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let control = syn.strategy.control();
    let a = estimate_cost(&p, 0, p.x0(), &control, &small(17)).unwrap();
    let b = estimate_cost(&p, 0, p.x0(), &control, &small(17)).unwrap();
    let c = estimate_cost(&p, 0, p.x0(), &control, &small(18)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.mean, c.mean);
}

#[test]
fn zero_direction_gives_zero_quotient() {
    let p = inconsistent(100);
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let probe = PerturbationProbe::new(10, DVector::zeros(1), vec![2, 4], ProbeMode::Closed);
    let table = perturbation_quotient(&p, &syn.strategy, &[probe], &small(1), 0.5).unwrap();
    for r in &table.rows {
        assert_eq!(r.quotient, 0.0);
        assert!(r.pass);
    }
}

#[test]
fn probe_outside_the_grid_is_rejected() {
    let p = inconsistent(20);
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let probe = PerturbationProbe::new(18, dvector![1.0], vec![4], ProbeMode::Closed);
    assert!(perturbation_quotient(&p, &syn.strategy, &[probe], &small(1), 0.5).is_err());
}

#[test]
fn second_order_part_vanishes_without_control_diffusion() {
    let mut s = ProblemSpec::new(1, 1, 1.0, 200);
    s.a = dmatrix![0.2].into();
    s.b = dmatrix![0.5].into();
    s.c = dmatrix![0.3].into();
    s.q = dmatrix![1.0].into();
    s.r = dmatrix![1.0].into();
    s.g = dmatrix![1.5];
    s.g_tilde = dmatrix![-0.5];
    s.x0 = dvector![1.0];
    let p = s.validate().unwrap();
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let widths = [2, 4, 8, 16];
    let table = decompose_variation(&p, &syn.strategy.control(), 0, &dvector![1.0], &widths, &small(4)).unwrap();
    for r in &table.rows {
        assert_eq!(r.j2_formula, 0.0);
        let scaled = (r.j2_direct.mean / r.eps).abs();
        assert!(scaled <= 2.0 * r.j2_direct.stderr / r.eps + 2.0 * r.eps, "eps {}: {scaled:.3e}", r.eps);
    }
}

#[test]
fn variation_reconstruction_is_higher_order() {
    let p = unit_diffusion(200);
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let table = decompose_variation(&p, &syn.strategy.control(), 0, &dvector![1.0], &[2, 4, 8, 16], &small(6)).unwrap();
    for r in &table.rows {
        let rel = r.reconstruction_error.mean.abs() / r.eps;
        assert!(rel <= 3.0 * r.reconstruction_error.stderr / r.eps + 1.0 * r.eps, "eps {}: {rel:.3e}", r.eps);
    }
}

#[test]
fn gain_perturbation_changes_cost() {
    let p = unit_diffusion(50);
    let syn = synthesize_strategy(&p, &Tolerances::default()).unwrap();
    let moved = syn.strategy.with_gain_offset(&DMatrix::from_element(1, 1, 0.5));
    let params = small(2);
    let base = estimate_cost(&p, 0, p.x0(), &syn.strategy.control(), &params).unwrap();
    let worse = estimate_cost(&p, 0, p.x0(), &moved.control(), &params).unwrap();
    assert!(worse.mean > base.mean);
}
