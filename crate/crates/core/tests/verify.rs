use monofollow::presets::{bench1d, bench2d, preset, PRESET_NAMES};
use monofollow::verify::{config_hash, refinement_study, run_suite, FittedOrder, Status, VerifyConfig, SUITES};

fn quick() -> VerifyConfig {
    VerifyConfig { n_paths: 2_000, ..VerifyConfig::default() }
}

#[test]
fn trivial_suite_passes_on_every_preset() {
    for name in PRESET_NAMES {
        let p = preset(name).unwrap();
        let r = run_suite(&p.model, &p.cost, "trivial", &quick()).unwrap();
        assert!(r.overall_pass(), "{name}\n{}", r.to_table());
        assert!(!r.records.is_empty());
    }
}

#[test]
fn reports_parse_and_name_every_check() {
    let p = bench1d();
    let r = run_suite(&p.model, &p.cost, "phi", &quick()).unwrap();
    let doc: toml::Table = r.to_toml().parse().unwrap();
    let checks = doc["check"].as_array().unwrap();
    assert_eq!(checks.len(), r.records.len());
    assert!(r.to_toml().lines().all(|l| !l.contains("elapsed")), "timings stay in the sidecar");
    assert!(r.timing_sidecar().contains("phi"));
}

#[test]
fn small_budgets_skip_instead_of_failing() {
    let p = bench1d();
    let cfg = VerifyConfig { n_paths: 50, ..VerifyConfig::default() };
    assert!(run_suite(&p.model, &p.cost, "null-cost", &cfg).is_err(), "nothing fits the budget");
    // the Dynkin check fits in 600 paths, the dynamic-programming anchor does not
    let cfg = VerifyConfig { n_paths: 600, ..VerifyConfig::default() };
    let r = run_suite(&p.model, &p.cost, "dynkin-dpp", &cfg).unwrap();
    let skipped: Vec<_> = r.records.iter().filter(|c| c.status == Status::Skipped).collect();
    assert!(!skipped.is_empty());
    assert!(skipped.iter().all(|c| c.note.starts_with("budget")));
    assert!(r.records.iter().any(|c| c.id.starts_with("dynkin.") && c.status != Status::Skipped));
}

#[test]
fn unknown_suites_and_aliases() {
    let p = bench1d();
    assert!(run_suite(&p.model, &p.cost, "bogus", &quick()).is_err());
    assert!(SUITES.contains(&"all"));
    let a = run_suite(&p.model, &p.cost, "thm44", &quick()).unwrap();
    let b = run_suite(&p.model, &p.cost, "marginal-value", &quick()).unwrap();
    assert_eq!(a.to_toml(), b.to_toml());
}

#[test]
fn config_hash_tracks_inputs() {
    let p = bench2d();
    let h = |cfg: &VerifyConfig, suite: &str| config_hash(&p.model, &p.cost, suite, cfg).unwrap();
    let base = quick();
    assert_eq!(h(&base, "phi"), h(&base, "phi"));
    assert_ne!(h(&base, "phi"), h(&VerifyConfig { seed: 8, ..quick() }, "phi"));
    assert_ne!(h(&base, "phi"), h(&base, "residuals"));
}

#[test]
fn residual_suite_on_bench1d() {
    let p = bench1d();
    let r = run_suite(&p.model, &p.cost, "residuals", &quick()).unwrap();
    assert_eq!(r.record("residuals.obstacle").unwrap().status, Status::Pass);
    assert_eq!(r.record("residuals.continuation").unwrap().status, Status::Pass);
}

#[test]
fn smooth_fit_refinement_is_first_order() {
    let p = bench1d();
    let t = refinement_study(&p.model, &p.cost, "smooth_fit", &[4e-2, 2e-2, 1e-2], &quick()).unwrap();
    assert_eq!(t.levels.len(), 3);
    match t.order {
        FittedOrder::Fitted(o) => assert!(o > 0.8, "{o}"),
        other => panic!("{other:?}"),
    }
    assert!(t.to_csv().lines().count() >= 4);
    assert!(refinement_study(&p.model, &p.cost, "smooth_fit", &[4e-2, 2e-2], &quick()).is_err());
}
