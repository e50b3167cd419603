use std::path::{Path, PathBuf};

use hkflow::cone::{cone_distance, geodesic, geodesic_right_derivatives, ConePoint};
use hkflow::hk::{solve_hk, SolverConfig};
use hkflow::jko::{dissipation_diagnostics, run_scheme, SchemeConfig, Trajectory};
use hkflow::measures::{perturb, DiscreteMeasure, DomainBox, Params, PerturbationField};
use hkflow::par::Execution;
use hkflow::subdiff::superdiff_element;
use hkflow::verification::{fd_reference_solve, slope_lower_bound_check, standard_battery, weak_form_terms};
use hkflow::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{Run, RunConfig};
use crate::io::{csv_text, line_plot, num, read_measure, write_atomic, Series};
use crate::{ConeArgs, HkDistArgs, RunArgs};

type Result<T> = std::result::Result<T, Failure>;

/// Error surfaced by a subcommand, with its exit-code class.
#[derive(Debug)]
pub struct Failure {
    pub message: String,
    pub solver: bool,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { message: e.to_string(), solver: e.is_solver_failure() }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn step_failure(f: &hkflow::jko::StepFailure, out: &Path) -> Failure {
    Failure { message: format!("step {}: {} (partial output in {})", f.step, f.message, out.display()), solver: f.solver_failure }
}

fn output_dir(args: &RunArgs, run: &Run) -> Result<PathBuf> {
    args.out
        .clone()
        .or_else(|| run.config.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output` in the config".into()).into())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn hk_dist(a: &HkDistArgs) -> Result<()> {
    let params = Params::new(a.lambda, a.sigma)?;
    let (mu1, mu2) = (read_measure(&a.first)?, read_measure(&a.second)?);
    let cfg = SolverConfig { eps_end: a.eps_end, eps_start: a.eps_end.max(1.0), ..SolverConfig::default() };
    let sol = solve_hk(&mu1, &mu2, &params, &cfg)?;
    let report = json!({
        "hk2": sol.hk2,
        "hk": sol.hk2.max(0.0).sqrt(),
        "iterations": sol.iterations,
        "plan_mass": sol.plan.total_mass(),
    });
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    if let Some(p) = &a.plan {
        let rows = sol.plan.entries.iter().map(|e| vec![e.i.to_string(), e.j.to_string(), num(e.mass)]);
        write_atomic(p, &csv_text(&["i", "j", "mass"], rows)?)?;
    }
    Ok(())
}

fn diagnostics_csv(traj: &Trajectory) -> hkflow::Result<Vec<u8>> {
    let header = ["n", "t", "energy", "mass", "step_hk2", "metric_derivative"];
    let rows = traj.records.iter().map(|r| vec![r.n.to_string(), num(r.t), num(r.energy), num(r.mass), num(r.step_hk2), num(r.metric_derivative)]);
    csv_text(&header, rows)
}

/// Solver-side bookkeeping per step.
fn steps_csv(traj: &Trajectory) -> hkflow::Result<Vec<u8>> {
    let header = ["n", "certificate_gap", "zero_cells", "iterations"];
    let rows = traj.records.iter().map(|r| vec![r.n.to_string(), num(r.certificate_gap), r.zero_cells.to_string(), r.iterations.to_string()]);
    csv_text(&header, rows)
}

fn densities_csv(traj: &Trajectory) -> hkflow::Result<Vec<u8>> {
    let first = &traj.densities[0];
    let d = first.dim();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..d).map(|a| format!("x{a}")));
    header.push("u".into());
    let mut rows = Vec::new();
    for (t, u) in traj.times.iter().zip(&traj.densities) {
        for k in 0..u.num_cells() {
            let mut row = vec![num(*t)];
            row.extend(u.center(k).into_iter().map(num));
            row.push(num(u.values[k]));
            rows.push(row);
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(&header, rows)
}

fn profile(traj: &Trajectory, idx: usize) -> Vec<(f64, f64)> {
    let u = &traj.densities[idx];
    (0..u.num_cells()).map(|k| (u.center(k)[0], u.values[k])).collect()
}

pub fn jko_run(args: &RunArgs) -> Result<()> {
    let run = RunConfig::load(&args.config)?;
    let out = output_dir(args, &run)?;
    let cfg = &run.config;
    let traj = run_scheme(&run.u0, &run.spec, &cfg.params, &cfg.scheme)?;
    write_atomic(&out.join("diagnostics.csv"), &diagnostics_csv(&traj)?)?;
    write_atomic(&out.join("steps.csv"), &steps_csv(&traj)?)?;
    write_atomic(&out.join("densities.csv"), &densities_csv(&traj)?)?;
    let energy: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.energy)).collect();
    write_atomic(&out.join("energy.svg"), line_plot("energy", "t", "E", &[Series { label: "scheme", points: energy }]).as_bytes())?;
    if run.u0.dim() == 1 {
        let last = traj.densities.len() - 1;
        let series = [Series { label: "initial", points: profile(&traj, 0) }, Series { label: "final", points: profile(&traj, last) }];
        write_atomic(&out.join("density.svg"), line_plot("density", "x", "u", &series).as_bytes())?;
    }
    let report = dissipation_diagnostics(&traj, &run.spec, &cfg.params, &cfg.domain, cfg.scheme.prox_tol);
    write_json(&out.join("summary.json"), &json!({ "steps": traj.records.len() - 1, "dissipation": report, "failure": traj.failure }))?;
    if let Some(f) = &traj.failure {
        return Err(step_failure(f, &out));
    }
    println!("{} steps written to {}", traj.records.len() - 1, out.display());
    Ok(())
}

pub fn verify(args: &RunArgs) -> Result<()> {
    let run = RunConfig::load(&args.config)?;
    let out = output_dir(args, &run)?;
    let cfg = &run.config;
    let ver = &cfg.verification;
    let horizon = cfg.scheme.horizon;
    let reference = fd_reference_solve(&run.u0, &run.spec, &cfg.params, horizon, ver.dt_safety)?;
    let battery = standard_battery(&cfg.domain, ver.psi_horizon.unwrap_or(horizon))?;
    let ref_final = reference.final_density();

    let mut residual_rows = Vec::new();
    let mut error_rows = Vec::new();
    let mut profiles = vec![Series { label: "reference", points: (0..ref_final.num_cells()).map(|k| (ref_final.center(k)[0], ref_final.values[k])).collect() }];
    let mut labels = Vec::new();
    let mut finals = Vec::new();
    let runs = hkflow::par::map(ver.taus.len(), Execution::default(), |i| {
        let scheme = SchemeConfig { tau: ver.taus[i], record_every: 1, ..cfg.scheme.clone() };
        run_scheme(&run.u0, &run.spec, &cfg.params, &scheme)
    });
    for (&tau, traj) in ver.taus.iter().zip(runs) {
        let traj = traj?;
        if let Some(f) = &traj.failure {
            return Err(step_failure(f, &out));
        }
        let end = traj.final_density();
        let l1 = end.l1_distance(ref_final);
        error_rows.push(vec![num(tau), num(l1), num(l1 / ref_final.total_mass().max(f64::MIN_POSITIVE))]);
        for psi in &battery {
            let terms = weak_form_terms(&traj, psi, &run.spec, &cfg.params, &run.u0)?;
            residual_rows.push(vec![psi.id.clone(), num(tau), num(terms.residual()), num(terms.relative())]);
        }
        labels.push(format!("tau = {tau}"));
        finals.push((0..end.num_cells()).map(|k| (end.center(k)[0], end.values[k])).collect::<Vec<_>>());
    }
    for (label, points) in labels.iter().zip(finals) {
        profiles.push(Series { label, points });
    }
    write_atomic(&out.join("residuals.csv"), &csv_text(&["psi_id", "tau", "residual", "relative"], residual_rows)?)?;
    write_atomic(&out.join("errors.csv"), &csv_text(&["tau", "l1_error", "relative_l1_error"], error_rows)?)?;
    write_atomic(&out.join("final_density.svg"), line_plot("final density", "x", "u", &profiles).as_bytes())?;
    let slope = slope_lower_bound_check(&cfg.params, &cfg.domain)?;
    write_json(&out.join("summary.json"), &json!({ "reference_steps": reference.records.len() - 1, "slope_bound": slope }))?;
    println!("verification written to {}", out.display());
    Ok(())
}

fn random_cloud(rng: &mut ChaCha8Rng, domain: &DomainBox, n: usize) -> hkflow::Result<DiscreteMeasure> {
    let d = domain.dim();
    let mut pts = Vec::with_capacity(n * d);
    for _ in 0..n {
        for a in 0..d {
            pts.push(rng.gen_range(domain.lo[a]..domain.hi[a]));
        }
    }
    let w = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
    DiscreteMeasure::new(d, pts, w)
}

pub fn subdiff_check(args: &RunArgs) -> Result<()> {
    let run = RunConfig::load(&args.config)?;
    let out = output_dir(args, &run)?;
    let cfg = &run.config;
    let domain = &cfg.domain;
    let params = cfg.params;
    let solver = cfg.scheme.solver.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut worst = f64::INFINITY;
    for case in 0..cfg.verification.cases {
        let nu0 = random_cloud(&mut rng, domain, 5)?;
        let mu = random_cloud(&mut rng, domain, 5)?;
        let (amp, r0, r1) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        let freq = rng.gen_range(0.5..3.0);
        let (lo, hi) = (domain.lo.clone(), domain.hi.clone());
        // Vanishes on the boundary so small steps keep points inside the domain.
        let field = PerturbationField::new(
            domain.dim(),
            move |x, o| {
                for (a, v) in o.iter_mut().enumerate() {
                    let len = hi[a] - lo[a];
                    *v = amp * (x[a] - lo[a]) * (hi[a] - x[a]) / len * (freq * x[a]).sin();
                }
            },
            move |x| r0 + r1 * x[0],
        );
        let base = solve_hk(&nu0, &mu, &params, &solver)?;
        let element = superdiff_element(&base, &field, &params);
        for h in [1e-2, -1e-2, 1e-3, -1e-3, 1e-4, -1e-4] {
            let moved = perturb(&nu0, &field, h, domain)?;
            let hk2 = solve_hk(&moved, &mu, &params, &solver)?.hk2;
            let slack = (-0.5 * hk2 + 0.5 * base.hk2 - element * h) / h.abs();
            let scaled = slack / (1.0 + base.hk2);
            worst = worst.min(scaled);
            rows.push(vec![case.to_string(), num(h), num(base.hk2), num(element), num(slack), num(scaled)]);
        }
    }
    write_atomic(&out.join("subdiff.csv"), &csv_text(&["case", "h", "hk2", "element", "slack", "scaled_slack"], rows)?)?;
    write_json(&out.join("summary.json"), &json!({ "cases": cfg.verification.cases, "min_scaled_slack": worst, "tolerance": -1e-3 }))?;
    println!("min scaled slack {worst:e} over {} cases", cfg.verification.cases);
    Ok(())
}

fn parse_point(s: &str) -> Result<ConePoint> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidParameter(format!("'{t}' is not a number in '{s}'"))))
        .collect::<hkflow::Result<_>>()?;
    if vals.len() < 2 {
        return Err(Error::InvalidParameter(format!("cone point '{s}' needs r and at least one coordinate")).into());
    }
    Ok(ConePoint::new(vals[1..].to_vec(), vals[0])?)
}

pub fn cone(a: &ConeArgs) -> Result<()> {
    let params = Params::new(a.lambda, a.sigma)?;
    let (p, q) = (parse_point(&a.p)?, parse_point(&a.q)?);
    if p.x.len() != q.x.len() {
        return Err(Error::InvalidParameter("cone points have different dimensions".into()).into());
    }
    let dist = cone_distance(&p, &q, &params);
    let mut report = json!({ "distance": dist });
    match geodesic(&p, &q, &params) {
        Ok(g) => {
            let n = a.samples.max(2);
            let samples: Vec<_> = (0..n)
                .map(|i| {
                    let t = i as f64 / (n - 1) as f64;
                    let c = g.eval(t);
                    json!({ "t": t, "r": c.r, "x": c.x })
                })
                .collect();
            report["geodesic"] = json!(samples);
            match geodesic_right_derivatives(&p, &q, &params) {
                Ok((dtheta, dr)) => report["right_derivatives"] = json!({ "theta": dtheta, "r": dr }),
                Err(e) => report["right_derivatives"] = json!(e.to_string()),
            }
        }
        Err(e) => report["geodesic"] = json!(e.to_string()),
    }
    match &a.out {
        Some(path) => Ok(write_json(path, &report)?),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            Ok(())
        }
    }
}
