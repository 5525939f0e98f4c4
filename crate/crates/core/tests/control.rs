use monofollow::control_solver::{estimate_V, optimize_threshold, reflected_policy, ReflectionPolicy};
use monofollow::costs::{closed_form_null_cost, McConfig};
use monofollow::dynamics::TimeGrid;
use monofollow::presets::{bench1d, bench2d};
use proptest::prelude::*;

#[test]
fn reflection_at_minus_infinity_matches_the_null_cost() {
    let p = bench1d();
    let grid = TimeGrid::with_step(24.0, 1e-2).unwrap();
    let v = estimate_V(&p.model, &p.cost, &[1.0], &reflected_policy(f64::NEG_INFINITY, &p.model), &grid, &McConfig::new(4_000, 5)).unwrap();
    assert!((v.estimate - 0.6).abs() < 4.0 * v.std_error + 2e-3, "{} ({})", v.estimate, v.std_error);
}

#[test]
fn acting_near_the_boundary_beats_doing_nothing() {
    let p = bench1d();
    let grid = TimeGrid::with_step(24.0, 1e-2).unwrap();
    let mc = McConfig::new(2_000, 9);
    let sweep = optimize_threshold(&p.model, &p.cost, &[-3.5], &[f64::NEG_INFINITY, -2.7], &grid, &mc).unwrap();
    assert_eq!(sweep.best_index, 1);
    let gap = sweep.curve[0].estimate - sweep.curve[1].estimate;
    assert!(gap > 3.0 * sweep.curve[0].diff_std_error, "{sweep:?}");
}

#[test]
fn sweeps_repeat_exactly() {
    let p = bench1d();
    let grid = TimeGrid::with_step(5.0, 2e-2).unwrap();
    let mc = McConfig::new(300, 17);
    let a = optimize_threshold(&p.model, &p.cost, &[1.0], &[-3.0, -2.5, -2.0], &grid, &mc).unwrap();
    let b = optimize_threshold(&p.model, &p.cost, &[1.0], &[-3.0, -2.5, -2.0], &grid, &mc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_cost_upper_bounds_the_rank_one_value() {
    let p = bench2d();
    let x0 = [1.0, 0.0];
    let grid = TimeGrid::with_step(24.0, 2e-2).unwrap();
    let v = estimate_V(&p.model, &p.cost, &x0, &reflected_policy(-5.0, &p.model), &grid, &McConfig::new(2_000, 3)).unwrap();
    let null = closed_form_null_cost(&p.model, &p.cost, &x0).unwrap();
    assert!(v.estimate <= null + 4.0 * v.std_error);
}

proptest! {
    #[test]
    fn push_lands_on_the_boundary(b in -4.0..2.0f64, x in prop::collection::vec(-6.0..6.0f64, 2), w in 0.1..2.0f64) {
        let m = bench2d().model;
        let policy = ReflectionPolicy::on_coordinate(b, &m, vec![1.0, w]).unwrap();
        let dnu = policy.push(&x);
        prop_assert!(dnu >= 0.0);
        let n = m.direction();
        let post: Vec<f64> = x.iter().zip(&n).map(|(a, d)| a + dnu * d).collect();
        let y = post[0] + w * post[1];
        if dnu > 0.0 {
            prop_assert!((y - b).abs() < 1e-9);
        } else {
            prop_assert!(y >= b);
        }
    }
}
