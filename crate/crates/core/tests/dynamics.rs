use monofollow::costs::McConfig;
use monofollow::dynamics::{simulate_batch, simulate_path, TimeGrid};
use monofollow::presets::bench2d;
use monofollow::spectral_model::build_diagonal_model;
use monofollow::Error;
use proptest::prelude::*;

#[test]
fn batch_moments_match_the_exact_transition() {
    let p = bench2d();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let paths = simulate_batch(&p.model, &[1.0, -0.5], &grid, &McConfig::new(20_000, 2)).unwrap();
    for k in 0..2 {
        let l = p.model.eigenvalues()[k];
        let s = p.model.noise()[k];
        let x0 = [1.0, -0.5][k];
        let mean = (l).exp() * x0;
        let var = s * s * (1.0 - (2.0 * l).exp()) / (2.0 * l.abs());
        let xs: Vec<f64> = paths.iter().map(|q| q.values[4][k]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let se = (var / xs.len() as f64).sqrt();
        assert!((m - mean).abs() < 4.0 * se, "mode {k}: mean {m} vs {mean}");
        assert!((v / var - 1.0).abs() < 0.05, "mode {k}: var {v} vs {var}");
    }
}

#[test]
fn paths_are_reproducible_and_distinct() {
    let p = bench2d();
    let grid = TimeGrid::with_step(1.0, 0.1).unwrap();
    let a = simulate_path(&p.model, &p.x0, &grid, 5, 3).unwrap();
    let b = simulate_path(&p.model, &p.x0, &grid, 5, 3).unwrap();
    let c = simulate_path(&p.model, &p.x0, &grid, 5, 4).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
    assert_eq!(a.to_csv().lines().next(), Some("time,mode_1,mode_2"));
}

#[test]
fn models_are_validated() {
    assert!(matches!(build_diagonal_model(&[0.0], &[1.0], &[1.0], 0, 0.5), Err(Error::NonDissipative { .. })));
    assert!(matches!(build_diagonal_model(&[-1.0], &[1.0], &[0.0], 0, 0.5), Err(Error::ZeroPriceOnDirection { .. })));
    assert!(matches!(build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.0), Err(Error::InvalidDiscount(_))));
    assert!(build_diagonal_model(&[-1.0], &[1.0], &[1.0], 1, 0.5).is_err());
}

proptest! {
    #[test]
    fn noiseless_paths_decay_exactly(l in -3.0..-0.1f64, x0 in -5.0..5.0f64, n in 1usize..50) {
        let m = build_diagonal_model(&[l], &[0.0], &[1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(2.0, n).unwrap();
        let path = simulate_path(&m, &[x0], &grid, 1, 0).unwrap();
        let end = path.values[n][0];
        prop_assert!((end - x0 * (2.0 * l).exp()).abs() <= 1e-12 * x0.abs().max(1.0));
    }

    #[test]
    fn time_grids_never_exceed_the_step(h in 1e-3..1.0f64, t in 0.1..30.0f64) {
        let g = TimeGrid::with_step(t, h).unwrap();
        prop_assert!(g.step() <= h * (1.0 + 1e-12));
        prop_assert!((g.time(g.n_steps()) - t).abs() == 0.0);
    }
}
