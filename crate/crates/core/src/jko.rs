//! Minimizing-movement scheme `u^n = argmin E(u) + (1/2 tau) HK^2(u, u^{n-1})`
//! on cell-centred grids.
//!
//! Each step solves the entropic problem jointly in the plan and the density:
//! the density enters only through a per-cell penalty on the first marginal,
//! `min_s 2 tau w (F(s) + V s) + lambda KL(p | w s)`, whose conjugate is
//! available cell by cell, so the same dual engine as the distance solver
//! applies. The reference measure is `Lebesgue x u^{n-1} / m`, fixed during
//! the step. The linear part of the entropic bias is removed using the
//! gradient of the regularized self-distance of `u^{n-1}`, which makes the
//! reported step cost a Bregman divergence that vanishes at `u^{n-1}`.

use serde::{Deserialize, Serialize};

use crate::cone::{euclid, transport_cost};
use crate::energy::{energy_of, lower_bound_constants, EnergyFamily, EnergySpec};
use crate::error::{Error, Result};
use crate::hk::{assemble, entropy_term, hk_tiny_oracle, HKSolution, PlanEntry, SolverConfig, TransportPlan};
use crate::measures::{DiscreteMeasure, DomainBox, GridDensity, Params};
use crate::scaling::{DualProblem, DualSolution, Kernel, KlPenalty, Penalty};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub tau: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub solver: SolverConfig,
    /// Slack allowed in the step certificate `E(next) + cost / 2 tau <= E(prev)`.
    pub prox_tol: f64,
    /// Iteration budget per regularization level of the coupled step solve.
    pub outer_max_iters: usize,
    /// Keep every `record_every`-th density (the last one is always kept).
    pub record_every: usize,
    /// Subtract the linearized entropic bias.
    pub debias: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            tau: 0.01,
            horizon: 0.1,
            solver: SolverConfig { eps_end: 1e-4, ..SolverConfig::default() },
            prox_tol: 1e-7,
            outer_max_iters: 50_000,
            record_every: 1,
            debias: true,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        if !(self.prox_tol >= 0.0) || self.outer_max_iters == 0 || self.record_every == 0 {
            return Err(Error::InvalidParameter("prox_tol >= 0, outer_max_iters >= 1 and record_every >= 1 are required".into()));
        }
        Ok(())
    }

    /// Number of full steps in `[0, T]`.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.tau + 1e-9).floor() as usize
    }

    fn step_solver(&self) -> SolverConfig {
        SolverConfig { max_iters: self.outer_max_iters, ..self.solver.clone() }
    }
}

/// Result of one minimizing-movement step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: GridDensity,
    /// Debiased entropic transport cost between `next` and `prev`.
    pub step_hk2: f64,
    /// `E(next) + step_hk2 / (2 tau) - E(prev)`; nonpositive up to tolerance.
    pub certificate_gap: f64,
    /// Cells where the density is exactly zero.
    pub zero_cells: usize,
    pub iterations: usize,
    /// Plan of the step as a distance solution from `next` to `prev`.
    pub solution: HKSolution,
}

/// Per-cell composite penalty on the first marginal.
struct CellPenalty {
    family: EnergyFamily,
    lambda: f64,
    /// `lambda / (2 tau)`.
    kappa: f64,
    two_tau: f64,
    w: f64,
    /// Potential minus the bias correction, per cell.
    shifted_v: Vec<f64>,
}

impl CellPenalty {
    /// Density maximizing `lambda s (y - 1) - 2 tau (F(s) + v s)` for `y = e^{-f/lambda}`.
    fn density(&self, k: usize, y: f64) -> f64 {
        let t = -self.kappa * (1.0 - y) - self.shifted_v[k];
        self.family.f_prime_inverse(t).unwrap_or(f64::NAN)
    }
}

impl Penalty for CellPenalty {
    fn demand(&self, k: usize, f: f64) -> (f64, f64) {
        let y = (-f / self.lambda).exp();
        let s = self.density(k, y);
        if s <= 0.0 {
            return (0.0, 0.0);
        }
        let ds = -self.kappa * y / (self.lambda * self.family.f_second(s));
        let p = self.w * s * y;
        (p, self.w * y * (ds - s / self.lambda))
    }

    fn conjugate(&self, k: usize, f: f64) -> f64 {
        let y = (-f / self.lambda).exp();
        let s = self.density(k, y);
        self.w * (self.lambda * s * (y - 1.0) - self.two_tau * (self.family.f(s) + self.shifted_v[k] * s))
    }

    fn update(&self, k: usize, log_kernel: f64, eps: f64) -> f64 {
        // Decreasing in f: log p(f) - f / eps - log_kernel.
        let slope = 1.0 / self.lambda + 1.0 / eps;
        let h = |f: f64| {
            let y = (-f / self.lambda).exp();
            let s = self.density(k, y);
            if !(s > 0.0) {
                return (f64::NEG_INFINITY, -slope);
            }
            let dlog_s = -self.kappa * y / (self.lambda * self.family.f_second(s) * s);
            ((self.w * s).ln() - f * slope - log_kernel, dlog_s - slope)
        };
        let s0 = self.density(k, 1.0);
        let guess = if s0 > 0.0 { ((self.w * s0).ln() - log_kernel) / slope } else { 0.0 };
        decreasing_root(h, guess, eps)
    }
}

/// Root of a decreasing function given `(value, slope)`; bracket expansion then
/// safeguarded Newton.
fn decreasing_root(h: impl Fn(f64) -> (f64, f64), x0: f64, step0: f64) -> f64 {
    let (v0, _) = h(x0);
    if v0 == 0.0 || v0.is_nan() {
        return x0;
    }
    let mut step = step0.max(1e-12);
    let (mut lo, mut hi);
    if v0 > 0.0 {
        lo = x0;
        hi = x0 + step;
        let mut guard = 0;
        while h(hi).0 > 0.0 && guard < 200 {
            lo = hi;
            step *= 2.0;
            hi += step;
            guard += 1;
        }
    } else {
        hi = x0;
        lo = x0 - step;
        let mut guard = 0;
        while h(lo).0 < 0.0 && guard < 200 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            guard += 1;
        }
    }
    let mut x = if h(lo).0.is_finite() { lo } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let (v, d) = h(x);
        if v == 0.0 {
            return x;
        }
        if v > 0.0 || v.is_nan() {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
        let newton = x - v / d;
        let next = if v.is_finite() && d < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// Rows or columns of one entropic problem on the grid.
struct GridProblem {
    kernel: Kernel,
    rows: Vec<usize>,
    cols: Vec<usize>,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
}

impl GridProblem {
    fn new(points: &DiscreteMeasure, rows: Vec<usize>, cols: Vec<usize>, w: f64, col_mass: &[f64], params: &Params, cfg: &SolverConfig) -> Self {
        let kernel = Kernel::new(points, &rows, points, &cols, params, cfg.execution);
        let total: f64 = cols.iter().map(|&j| col_mass[j]).sum();
        let log_alpha = vec![w.ln(); rows.len()];
        let log_beta = cols.iter().map(|&j| (col_mass[j] / total).ln()).collect();
        GridProblem { kernel, rows, cols, log_alpha, log_beta }
    }

    fn solve<P1: Penalty, P2: Penalty>(
        self,
        first: &P1,
        second: &P2,
        cfg: &SolverConfig,
        f0: Vec<f64>,
        g0: Vec<f64>,
    ) -> Result<(Self, DualSolution)> {
        let GridProblem { kernel, rows, cols, log_alpha, log_beta } = self;
        let mut problem = DualProblem { kernel, log_alpha, log_beta, first, second };
        let sol = problem.solve(cfg, f0, g0)?;
        let DualProblem { kernel, log_alpha, log_beta, .. } = problem;
        Ok((GridProblem { kernel, rows, cols, log_alpha, log_beta }, sol))
    }

    fn plan(&mut self, f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
        self.kernel.set_eps(eps);
        let sa: Vec<f64> = f.iter().zip(&self.log_alpha).map(|(f, a)| a + f / eps).collect();
        let sb: Vec<f64> = g.iter().zip(&self.log_beta).map(|(g, b)| b + g / eps).collect();
        self.kernel.plan(&sa, &sb)
    }

    /// Regularized objective of a Gibbs plan, up to a constant shared by all
    /// problems with the same reference:
    /// `lambda KL(g1|nu) + lambda KL(g2|mu) + sum f g1 + sum g g2 - eps |g|`.
    #[allow(clippy::too_many_arguments)]
    fn value(&self, plan: &[f64], f: &[f64], g: &[f64], row_target: &[f64], col_target: &[f64], lambda: f64, eps: f64) -> f64 {
        let (n, m) = (self.rows.len(), self.cols.len());
        let mut total = 0.0;
        let mut col_sum = vec![0.0; m];
        for a in 0..n {
            let mut row = 0.0;
            for b in 0..m {
                row += plan[a * m + b];
                col_sum[b] += plan[a * m + b];
            }
            total += lambda * entropy_term(row, row_target[a]) + f[a] * row - eps * row;
        }
        for b in 0..m {
            total += lambda * entropy_term(col_sum[b], col_target[b]) + g[b] * col_sum[b];
        }
        total
    }
}

fn validate_inputs(prev: &GridDensity, spec: &EnergySpec, params: &Params) -> Result<()> {
    params.validate()?;
    prev.validate()?;
    if prev.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidMeasure("densities must be finite and nonnegative".into()));
    }
    let e = energy_of(prev, spec);
    if !e.is_finite() {
        return Err(Error::InvalidMeasure("initial energy is not finite".into()));
    }
    Ok(())
}

/// One step of the scheme from `prev`.
pub fn jko_step(prev: &GridDensity, spec: &EnergySpec, params: &Params, cfg: &SchemeConfig) -> Result<StepOutcome> {
    cfg.validate()?;
    validate_inputs(prev, spec, params)?;
    let lambda = params.entropy_weight();
    let kappa = lambda / (2.0 * cfg.tau);
    let w = prev.cell_volume();
    let n_cells = prev.num_cells();
    let centers = prev.to_measure();
    let masses = centers.weights().to_vec();
    let potential: Vec<f64> = (0..n_cells).map(|k| spec.potential.value(&prev.center(k))).collect();
    let active: Vec<usize> = (0..n_cells).filter(|&k| masses[k] > 0.0).collect();
    let e_prev = energy_of(prev, spec);
    let eps = cfg.solver.eps_end;

    if active.is_empty() {
        // Only creation from nothing: per-cell minimization with the exact null-measure cost.
        let values = potential.iter().map(|&v| spec.family.cell_prox(0.0, kappa, v)).collect::<Result<Vec<_>>>()?;
        let next = prev.with_values(values)?;
        let step_hk2 = lambda * next.total_mass();
        let solution = assemble(TransportPlan::empty(n_cells, n_cells), &next.to_measure(), &centers, params, 0, 0.0);
        return Ok(finish(next, step_hk2, e_prev, spec, cfg, 0, solution));
    }

    // Regularized self-distance of prev: its first-marginal gradient is the bias.
    let self_cfg = cfg.solver.clone();
    let own = GridProblem::new(&centers, active.clone(), active.clone(), w, &masses, params, &self_cfg);
    let target: Vec<f64> = active.iter().map(|&k| masses[k]).collect();
    let kl_prev = KlPenalty { lambda, target: target.clone() };
    let m = active.len();
    let (mut own, own_sol) = own.solve(&kl_prev, &kl_prev, &self_cfg, vec![0.0; m], vec![0.0; m])?;
    let mut bias = vec![0.0; n_cells];
    if cfg.debias {
        for (a, &k) in active.iter().enumerate() {
            bias[k] = lambda * (1.0 - (-own_sol.f[a] / lambda).exp());
        }
    }
    let own_plan = own.plan(&own_sol.f, &own_sol.g, eps);
    let own_value = own.value(&own_plan, &own_sol.f, &own_sol.g, &target, &target, lambda, eps);

    // Coupled step problem over all cells.
    let all: Vec<usize> = (0..n_cells).collect();
    let step_cfg = cfg.step_solver();
    let step = GridProblem::new(&centers, all.clone(), active.clone(), w, &masses, params, &step_cfg);
    let cells = CellPenalty {
        family: spec.family,
        lambda,
        kappa,
        two_tau: 2.0 * cfg.tau,
        w,
        shifted_v: (0..n_cells).map(|k| potential[k] - bias[k] / (2.0 * cfg.tau)).collect(),
    };
    let mut f0 = vec![0.0; n_cells];
    for (a, &k) in active.iter().enumerate() {
        f0[k] = own_sol.f[a];
    }
    let (mut step, sol) = step.solve(&cells, &kl_prev, &step_cfg, f0, own_sol.g.clone())?;
    let plan = step.plan(&sol.f, &sol.g, eps);

    // Exact density for the computed plan.
    let mut values = vec![0.0; n_cells];
    for k in 0..n_cells {
        let row: f64 = plan[k * m..(k + 1) * m].iter().sum();
        values[k] = spec.family.cell_prox(row / w, kappa, cells.shifted_v[k])?;
    }
    let next = prev.with_values(values)?;
    let next_masses: Vec<f64> = next.values.iter().map(|v| v * w).collect();
    let step_value = step.value(&plan, &sol.f, &sol.g, &next_masses, &target, lambda, eps);
    let linear: f64 = (0..n_cells).map(|k| bias[k] * (next_masses[k] - masses[k])).sum();
    let step_hk2 = step_value - own_value - linear;

    let mut entries = Vec::new();
    for k in 0..n_cells {
        for (b, &j) in active.iter().enumerate() {
            let mass = plan[k * m + b];
            if mass > 0.0 {
                entries.push(PlanEntry { i: k, j, mass });
            }
        }
    }
    let mut tplan = TransportPlan::empty(n_cells, n_cells);
    tplan.entries = entries;
    tplan.f = sol.f.clone();
    for (b, &j) in active.iter().enumerate() {
        tplan.g[j] = sol.g[b];
    }
    tplan.eps = eps;
    let solution = assemble(tplan, &next.to_measure(), &centers, params, sol.iterations, sol.residual);
    Ok(finish(next, step_hk2, e_prev, spec, cfg, own_sol.iterations + sol.iterations, solution))
}

fn finish(next: GridDensity, step_hk2: f64, e_prev: f64, spec: &EnergySpec, cfg: &SchemeConfig, iterations: usize, solution: HKSolution) -> StepOutcome {
    let certificate_gap = energy_of(&next, spec) + step_hk2 / (2.0 * cfg.tau) - e_prev;
    let zero_cells = next.values.iter().filter(|v| **v == 0.0).count();
    StepOutcome { next, step_hk2, certificate_gap, zero_cells, iterations, solution }
}

/// Derivative-free reference step for at most four cells: compass search over
/// the cell values with the distance from the small-support oracle.
pub fn jko_step_oracle(prev: &GridDensity, spec: &EnergySpec, params: &Params, tau: f64) -> Result<(GridDensity, f64)> {
    validate_inputs(prev, spec, params)?;
    if prev.num_cells() > 4 {
        return Err(Error::InvalidMeasure("step oracle accepts at most 4 cells".into()));
    }
    let w = prev.cell_volume();
    let mu = prev.to_measure();
    let objective = |s: &[f64]| -> Result<(f64, f64)> {
        let nu = mu.with_weights(s.iter().map(|v| v * w).collect())?;
        let hk2 = hk_tiny_oracle(&nu, &mu, params)?;
        let cand = prev.with_values(s.to_vec())?;
        Ok((energy_of(&cand, spec) + hk2 / (2.0 * tau), hk2))
    };
    let mut x = prev.values.clone();
    let (mut best, mut best_hk2) = objective(&x)?;
    let mut step = 0.25 * x.iter().cloned().fold(0.0, f64::max).max(1e-3);
    while step > 1e-9 {
        let mut improved = false;
        for k in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step).max(0.0);
                if y[k] == x[k] {
                    continue;
                }
                let (val, hk2) = objective(&y)?;
                if val < best {
                    best = val;
                    best_hk2 = hk2;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((prev.with_values(x)?, best_hk2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub energy: f64,
    pub mass: f64,
    pub step_hk2: f64,
    /// `sqrt(step_hk2) / tau`.
    pub metric_derivative: f64,
    pub certificate_gap: f64,
    pub zero_cells: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step: usize,
    pub message: String,
    pub solver_failure: bool,
}

/// Discrete solution: recorded densities and per-step diagnostics. Record 0 is the initial state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub tau: f64,
    pub times: Vec<f64>,
    pub densities: Vec<GridDensity>,
    pub records: Vec<StepRecord>,
    pub failure: Option<StepFailure>,
}

impl Trajectory {
    /// Piecewise-constant interpolant: the recorded state in force at time `t`.
    pub fn state_at(&self, t: f64) -> &GridDensity {
        let k = self.times.partition_point(|&s| s < t - 1e-12 * self.tau);
        &self.densities[k.min(self.densities.len() - 1)]
    }

    pub fn final_density(&self) -> &GridDensity {
        self.densities.last().expect("trajectory holds the initial state")
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }
}

/// Runs `floor(T / tau)` steps; a failing step ends the run with the partial trajectory.
pub fn run_scheme(u0: &GridDensity, spec: &EnergySpec, params: &Params, cfg: &SchemeConfig) -> Result<Trajectory> {
    cfg.validate()?;
    validate_inputs(u0, spec, params)?;
    let steps = cfg.num_steps();
    let mut traj = Trajectory {
        tau: cfg.tau,
        times: vec![0.0],
        densities: vec![u0.clone()],
        records: vec![StepRecord {
            n: 0,
            t: 0.0,
            energy: energy_of(u0, spec),
            mass: u0.total_mass(),
            step_hk2: 0.0,
            metric_derivative: 0.0,
            certificate_gap: 0.0,
            zero_cells: u0.values.iter().filter(|v| **v == 0.0).count(),
            iterations: 0,
        }],
        failure: None,
    };
    let mut current = u0.clone();
    for n in 1..=steps {
        let out = match jko_step(&current, spec, params, cfg) {
            Ok(out) => out,
            Err(e) => {
                traj.failure = Some(StepFailure { step: n, solver_failure: e.is_solver_failure(), message: e.to_string() });
                break;
            }
        };
        let t = n as f64 * cfg.tau;
        traj.records.push(StepRecord {
            n,
            t,
            energy: energy_of(&out.next, spec),
            mass: out.next.total_mass(),
            step_hk2: out.step_hk2,
            metric_derivative: out.step_hk2.max(0.0).sqrt() / cfg.tau,
            certificate_gap: out.certificate_gap,
            zero_cells: out.zero_cells,
            iterations: out.iterations,
        });
        current = out.next;
        if n % cfg.record_every == 0 || n == steps {
            traj.times.push(t);
            traj.densities.push(current.clone());
        }
    }
    Ok(traj)
}

/// Energy-dissipation bookkeeping of a discrete trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    /// `sum_n HK^2(u^n, u^{n-1})`.
    pub sum_step_hk2: f64,
    /// `2 tau (E(u^0) + A + B HK(u^N, 0)^2)`.
    pub dissipation_bound: f64,
    pub dissipation_ok: bool,
    pub sup_mass: f64,
    /// `sum_n tau |u'|_n^2`.
    pub metric_derivative_sum: f64,
    pub energy_drop: f64,
    /// `E(u^0) - E(u^N) >= (1/2) sum tau |u'|^2 - tol`.
    pub energy_inequality_ok: bool,
    pub energy_monotone: bool,
    pub max_energy_increase: f64,
    pub max_certificate_gap: f64,
}

pub fn dissipation_diagnostics(traj: &Trajectory, spec: &EnergySpec, params: &Params, domain: &DomainBox, tol: f64) -> DissipationReport {
    let consts = lower_bound_constants(spec, params, domain);
    let tau = traj.tau;
    let first = &traj.records[0];
    let last = traj.records.last().expect("initial record");
    let steps = &traj.records[1..];
    let sum_step_hk2: f64 = steps.iter().map(|r| r.step_hk2).sum();
    let hk2_to_null = params.entropy_weight() * last.mass;
    let dissipation_bound = 2.0 * tau * (first.energy + consts.a + consts.b * hk2_to_null);
    let metric_derivative_sum: f64 = steps.iter().map(|r| tau * r.metric_derivative * r.metric_derivative).sum();
    let energy_drop = first.energy - last.energy;
    let max_energy_increase = traj.records.windows(2).map(|w| w[1].energy - w[0].energy).fold(f64::NEG_INFINITY, f64::max);
    DissipationReport {
        sum_step_hk2,
        dissipation_bound,
        dissipation_ok: sum_step_hk2 <= dissipation_bound + tol,
        sup_mass: traj.records.iter().map(|r| r.mass).fold(0.0, f64::max),
        metric_derivative_sum,
        energy_drop,
        energy_inequality_ok: energy_drop >= 0.5 * metric_derivative_sum - tol,
        energy_monotone: steps.is_empty() || max_energy_increase <= tol,
        max_energy_increase: if steps.is_empty() { 0.0 } else { max_energy_increase },
        max_certificate_gap: steps.iter().map(|r| r.certificate_gap).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Mass of the plan's cost part: `sum gamma c`, exposed for diagnostics.
pub fn plan_cost(sol: &HKSolution) -> f64 {
    sol.plan
        .entries
        .iter()
        .map(|e| e.mass * transport_cost(euclid(sol.source.point(e.i), sol.target.point(e.j)), &sol.params))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Potential;

    fn unit_grid(n: usize, f: impl Fn(f64) -> f64) -> GridDensity {
        GridDensity::from_fn(&DomainBox::unit_interval(), &[n], |x| f(x[0])).unwrap()
    }

    fn log_spec(potential: Potential) -> EnergySpec {
        EnergySpec::new(EnergyFamily::LogEntropy { c1: 1.0 }, potential, &DomainBox::unit_interval()).unwrap()
    }

    #[test]
    fn decreasing_root_finds_roots() {
        let r = decreasing_root(|x| (2.0 - x.exp(), -x.exp()), 0.0, 1e-3);
        assert!((r - 2f64.ln()).abs() < 1e-14);
        let r = decreasing_root(|x| (-x - 5.0, -1.0), 10.0, 1e-3);
        assert!((r + 5.0).abs() < 1e-12);
    }

    #[test]
    fn cell_penalty_update_matches_demand() {
        let pen = CellPenalty {
            family: EnergyFamily::LogEntropy { c1: 1.0 },
            lambda: 4.0,
            kappa: 200.0,
            two_tau: 0.02,
            w: 0.1,
            shifted_v: vec![0.3],
        };
        let (eps, lk) = (1e-3, -2.0);
        let f = pen.update(0, lk, eps);
        let (p, _) = pen.demand(0, f);
        assert!((p.ln() - (f / eps + lk)).abs() < 1e-10);
        // Demand derivative against a central difference.
        let hstep = 1e-6;
        let fd = (pen.demand(0, f + hstep).0 - pen.demand(0, f - hstep).0) / (2.0 * hstep);
        assert!((fd - pen.demand(0, f).1).abs() < 1e-6 * fd.abs());
        // Conjugate derivative equals minus the demand.
        let fd = (pen.conjugate(0, f + hstep) - pen.conjugate(0, f - hstep)) / (2.0 * hstep);
        assert!((fd + p).abs() < 1e-6 * p);
    }

    #[test]
    fn null_initial_state() {
        let prm = Params::new(1.0, 1.0).unwrap();
        let spec = log_spec(Potential::Affine { a: vec![1.0], b: 0.0 });
        let cfg = SchemeConfig { tau: 0.01, ..SchemeConfig::default() };
        let u0 = unit_grid(8, |_| 0.0);
        let out = jko_step(&u0, &spec, &prm, &cfg).unwrap();
        let kappa = prm.entropy_weight() / (2.0 * cfg.tau);
        for k in 0..8 {
            let v = u0.center(k)[0];
            assert_eq!(out.next.values[k], spec.family.cell_prox(0.0, kappa, v).unwrap());
            assert!(out.next.values[k] < 1e-80);
        }
        assert!(out.certificate_gap <= 0.0);
    }

    #[test]
    fn zero_steps_when_horizon_below_tau() {
        let prm = Params::new(1.0, 1.0).unwrap();
        let spec = log_spec(Potential::Zero);
        let cfg = SchemeConfig { tau: 0.1, horizon: 0.05, ..SchemeConfig::default() };
        let traj = run_scheme(&unit_grid(8, |_| 1.0), &spec, &prm, &cfg).unwrap();
        assert_eq!(traj.densities.len(), 1);
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn tiny_step_stays_put() {
        let prm = Params::new(1.0, 1.0).unwrap();
        let spec = log_spec(Potential::Affine { a: vec![1.0], b: 0.0 });
        let cfg = SchemeConfig { tau: 1e-6, ..SchemeConfig::default() };
        let u0 = unit_grid(16, |x| 1.0 + 0.5 * (3.0 * x).sin());
        let out = jko_step(&u0, &spec, &prm, &cfg).unwrap();
        assert!(out.next.l1_distance(&u0) < 1e-3);
    }
}
