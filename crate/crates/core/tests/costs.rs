use monofollow::costs::{closed_form_null_cost, estimate_cost_functional, mode_null_cost, CostSpec, McConfig};
use monofollow::dynamics::{NoAction, TimeGrid};
use monofollow::presets::{bench1d, bench2d};
use monofollow::spectral_model::build_diagonal_model;
use proptest::prelude::*;

#[test]
fn bench1d_null_cost_is_six_tenths() {
    let p = bench1d();
    let exact = closed_form_null_cost(&p.model, &p.cost, &[1.0]).unwrap();
    assert!((exact - 0.6).abs() < 1e-15, "{exact}");
}

#[test]
fn rank_one_null_cost_by_simulation() {
    let p = bench2d();
    let x0 = [0.8, -0.4];
    let exact = closed_form_null_cost(&p.model, &p.cost, &x0).unwrap();
    let grid = TimeGrid::with_step(24.0, 1e-2).unwrap();
    let est = estimate_cost_functional(&p.model, &p.cost, &x0, &NoAction, &grid, &McConfig::new(4_000, 21)).unwrap();
    assert!((est.mean - exact).abs() < 4.0 * est.std_error + 1e-3, "{} vs {exact} (se {})", est.mean, est.std_error);
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let p = bench2d();
    let c = CostSpec::diagonal_quadratic(vec![1.0]).unwrap();
    assert!(closed_form_null_cost(&p.model, &c, &[0.0, 0.0]).is_err());
    assert!(closed_form_null_cost(&p.model, &p.cost, &[0.0]).is_err());
}

fn diagonal_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..5).prop_flat_map(|n| {
        (
            prop::collection::vec(-4.0..-0.1f64, n),
            prop::collection::vec(0.0..2.0f64, n),
            prop::collection::vec(0.0..3.0f64, n),
            prop::collection::vec(-3.0..3.0f64, n),
            0.05..2.0f64,
        )
    })
}

proptest! {
    #[test]
    fn diagonal_null_cost_is_a_sum_over_modes((l, s, w, x, rho) in diagonal_case()) {
        let n = l.len();
        let mut q = vec![0.0; n];
        q[0] = 1.0;
        let m = build_diagonal_model(&l, &s, &q, 0, rho).unwrap();
        let c = CostSpec::diagonal_quadratic(w.clone()).unwrap();
        let total = closed_form_null_cost(&m, &c, &x).unwrap();
        let parts: f64 = (0..n).map(|k| mode_null_cost(&m, &c, k, x[k])).sum();
        prop_assert!(total >= 0.0);
        prop_assert!((total - parts).abs() <= 1e-12 * total.abs().max(1.0));
        // linear in the weights
        let c2 = CostSpec::diagonal_quadratic(w.iter().map(|v| 2.5 * v).collect()).unwrap();
        let scaled = closed_form_null_cost(&m, &c2, &x).unwrap();
        prop_assert!((scaled - 2.5 * total).abs() <= 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn null_cost_is_even_in_the_start((l, s, w, x, rho) in diagonal_case()) {
        let n = l.len();
        let mut q = vec![0.0; n];
        q[0] = 1.0;
        let m = build_diagonal_model(&l, &s, &q, 0, rho).unwrap();
        let c = CostSpec::diagonal_quadratic(w).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = closed_form_null_cost(&m, &c, &x).unwrap();
        let b = closed_form_null_cost(&m, &c, &neg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn cost_is_convex_along_segments(x in prop::collection::vec(-3.0..3.0f64, 2), y in prop::collection::vec(-3.0..3.0f64, 2), t in 0.0..1.0f64) {
        let c = bench2d().cost;
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = c.eval_cost(&z).unwrap();
        let rhs = t * c.eval_cost(&x).unwrap() + (1.0 - t) * c.eval_cost(&y).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }
}
