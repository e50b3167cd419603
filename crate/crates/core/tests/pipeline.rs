//! End-to-end runs through the public API.

use std::path::Path;

use hkflow::energy::{energy_of, EnergyConfig, EnergyFamily, EnergySpec, Potential};
use hkflow::jko::{dissipation_diagnostics, jko_step, jko_step_oracle, run_scheme, SchemeConfig};
use hkflow::measures::{DomainBox, GridDensity, Params};
use hkflow::verification::{fd_reference_solve, standard_battery, weak_form_residual};

fn setup(cells: usize) -> (DomainBox, EnergySpec, Params, GridDensity) {
    let d = DomainBox::unit_interval();
    let spec = EnergySpec::new(EnergyFamily::LogEntropy { c1: 1.0 }, Potential::Affine { a: vec![1.0], b: 0.0 }, &d).unwrap();
    let u0 = GridDensity::from_fn(&d, &[cells], |x| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).cos()).unwrap();
    (d, spec, Params::new(1.0, 1.0).unwrap(), u0)
}

#[test]
fn scheme_run_dissipates_energy() {
    let (d, spec, prm, u0) = setup(16);
    let mut cfg = SchemeConfig { tau: 0.02, horizon: 0.06, ..SchemeConfig::default() };
    cfg.solver.eps_end = 1e-3;
    let traj = run_scheme(&u0, &spec, &prm, &cfg).unwrap();
    assert!(traj.failure.is_none());
    assert_eq!(traj.records.len(), 4);
    let rep = dissipation_diagnostics(&traj, &spec, &prm, &d, 1e-7);
    assert!(rep.energy_monotone && rep.dissipation_ok, "{rep:?}");
    for r in &traj.records[1..] {
        assert!(r.step_hk2 > 0.0);
        assert!((r.metric_derivative - r.step_hk2.sqrt() / 0.02).abs() < 1e-9 * (1.0 + r.metric_derivative));
    }
}

#[test]
fn scheme_tracks_the_reference_solution() {
    let (_, spec, prm, u0) = setup(24);
    let reference = fd_reference_solve(&u0, &spec, &prm, 0.04, 0.25).unwrap();
    let mut cfg = SchemeConfig { tau: 0.01, horizon: 0.04, ..SchemeConfig::default() };
    cfg.solver.eps_end = 1e-3;
    let traj = run_scheme(&u0, &spec, &prm, &cfg).unwrap();
    let rel = traj.final_density().l1_distance(reference.final_density()) / reference.final_density().total_mass();
    assert!(rel < 0.02, "relative L1 gap {rel}");
    for psi in standard_battery(&DomainBox::unit_interval(), 0.04).unwrap() {
        assert!(weak_form_residual(&traj, &psi, &spec, &prm, &u0).unwrap() < 5e-2);
    }
}

#[test]
fn two_cell_step_agrees_with_the_derivative_free_oracle() {
    let d = DomainBox::unit_interval();
    let spec = EnergySpec::new(EnergyFamily::LogEntropy { c1: 1.0 }, Potential::Affine { a: vec![0.5], b: 0.0 }, &d).unwrap();
    let prm = Params::new(1.0, 4.0).unwrap();
    let prev = GridDensity::from_fn(&d, &[2], |x| if x[0] < 0.5 { 1.5 } else { 0.6 }).unwrap();
    let mut cfg = SchemeConfig { tau: 0.05, ..SchemeConfig::default() };
    cfg.solver.eps_end = 1e-5;
    let step = jko_step(&prev, &spec, &prm, &cfg).unwrap();
    let (oracle, oracle_hk2) = jko_step_oracle(&prev, &spec, &prm, 0.05).unwrap();
    let value = |u: &GridDensity, hk2: f64| energy_of(u, &spec) + hk2 / (2.0 * 0.05);
    assert!((value(&step.next, step.step_hk2) - value(&oracle, oracle_hk2)).abs() < 1e-3);
}

#[test]
fn energy_config_parses_both_families() {
    let d = DomainBox::unit_interval();
    let cfgs = [
        r#"{ "F": { "family": "log_entropy", "c1": 1.0 } }"#,
        r#"{ "F": { "family": "power_law", "c1": 1.0, "c2": 1.0, "p": 2.0, "q": 0.5 }, "V": { "kind": "affine", "a": [2.0], "b": 1.0 } }"#,
    ];
    for text in cfgs {
        let cfg: EnergyConfig = serde_json::from_str(text).unwrap();
        let spec = cfg.build(&d, Path::new(".")).unwrap();
        assert!(spec.bounds.sup_abs.is_finite());
    }
    let bad: EnergyConfig = serde_json::from_str(r#"{ "F": { "family": "log_entropy", "c1": 1.0 }, "V": { "kind": "sampled", "path": "missing.csv" } }"#).unwrap();
    assert!(bad.build(&d, Path::new("/nonexistent")).is_err());
}

#[test]
fn sampled_potential_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    std::fs::write(&path, "x,V\n0.0,0.0\n0.5,1.0\n1.0,0.0\n").unwrap();
    let cfg: EnergyConfig = serde_json::from_str(r#"{ "F": { "family": "log_entropy", "c1": 1.0 }, "V": { "kind": "sampled", "path": "v.csv" } }"#).unwrap();
    let spec = cfg.build(&DomainBox::unit_interval(), dir.path()).unwrap();
    assert!((spec.potential.value(&[0.25]) - 0.5).abs() < 1e-12);
    assert!((spec.potential.gradient(&[0.75])[0] + 2.0).abs() < 1e-12);
}

#[test]
fn scheme_config_round_trips_through_json() {
    let cfg = SchemeConfig { tau: 0.005, horizon: 0.2, debias: false, ..SchemeConfig::default() };
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"T\":0.2"));
    let back: SchemeConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let partial: SchemeConfig = serde_json::from_str(r#"{ "tau": 0.02 }"#).unwrap();
    assert_eq!(partial.horizon, SchemeConfig::default().horizon);
}
