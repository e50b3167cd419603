//! Hellinger-Kantorovich distance between point clouds through the
//! logarithmic entropy-transport problem
//!
//! `min_g  (4/sigma) sum_i KL(g_i | mu_i) + <c, g>`
//!
//! solved with entropic regularization, log-domain scaling updates and
//! epsilon-scaling. The reported value is the unregularized objective at the
//! computed plan, which upper-bounds the true squared distance.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cone::{euclid, transport_cost, ConePoint};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Params};
use crate::par::Execution;
use crate::scaling::{DualProblem, Kernel, KlPenalty};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Unregularized objective evaluated at the entropic plan.
    #[default]
    PlanObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_factor: f64,
    /// Iteration budget per regularization level.
    pub max_iters: usize,
    pub dual_tol: f64,
    pub value_mode: ValueMode,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_start: 1.0,
            eps_end: 1e-4,
            eps_factor: 0.5,
            max_iters: 200_000,
            dual_tol: 1e-9,
            value_mode: ValueMode::PlanObjective,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_end > 0.0
            && self.eps_start >= self.eps_end
            && self.eps_factor > 0.0
            && self.eps_factor < 1.0
            && self.dual_tol > 0.0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("inconsistent solver config {self:?}")))
        }
    }

    pub(crate) fn level_tol(&self, eps: f64, last: bool) -> f64 {
        if last {
            self.dual_tol
        } else {
            self.dual_tol.max(1e-6 * eps)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub n1: usize,
    pub n2: usize,
    pub entries: Vec<PlanEntry>,
    /// Potentials of the source points; NaN where a point carries no plan mass by construction.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub eps: f64,
}

impl TransportPlan {
    pub fn empty(n1: usize, n2: usize) -> Self {
        TransportPlan { n1, n2, entries: Vec::new(), f: vec![f64::NAN; n1], g: vec![f64::NAN; n2], eps: 0.0 }
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n1];
        for e in &self.entries {
            out[e.i] += e.mass;
        }
        out
    }

    pub fn second_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n2];
        for e in &self.entries {
            out[e.j] += e.mass;
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HKSolution {
    pub hk2: f64,
    pub plan: TransportPlan,
    /// `d gamma_1 / d mu_1` per source point (0 where the source weight vanishes).
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// `d nu_0 / d gamma_0`; only meaningful where the first marginal is positive.
    pub rho0: Vec<f64>,
    pub rho_star: Vec<f64>,
    pub singular0: DiscreteMeasure,
    pub singular_star: DiscreteMeasure,
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub params: Params,
    pub iterations: usize,
    pub dual_residual: f64,
}

/// `a f(p / a) = p log(p / a) - p + a` with `f(0) = 1`; infinite if `a = 0 < p`.
pub(crate) fn entropy_term(p: f64, a: f64) -> f64 {
    if p <= 0.0 {
        a
    } else if a <= 0.0 {
        f64::INFINITY
    } else {
        p * (p / a).ln() - p + a
    }
}

/// Unregularized entropy-transport objective of `plan` between `mu1` and `mu2`.
pub fn let_objective(plan: &TransportPlan, mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, params: &Params) -> f64 {
    let lambda = params.entropy_weight();
    let g1 = plan.first_marginal();
    let g2 = plan.second_marginal();
    let mut total = 0.0;
    for (p, a) in g1.iter().zip(mu1.weights()) {
        total += lambda * entropy_term(*p, *a);
    }
    for (q, b) in g2.iter().zip(mu2.weights()) {
        total += lambda * entropy_term(*q, *b);
    }
    for e in &plan.entries {
        if e.mass > 0.0 {
            total += e.mass * transport_cost(euclid(mu1.point(e.i), mu2.point(e.j)), params);
        }
    }
    total
}

/// `base = rho * marginal + singular`, per point of a shared support.
pub fn lebesgue_decompose(base: &DiscreteMeasure, marginal: &[f64]) -> (Vec<f64>, DiscreteMeasure) {
    let mut rho = vec![0.0; base.len()];
    let mut singular = vec![0.0; base.len()];
    for i in 0..base.len() {
        if marginal[i] > 0.0 {
            rho[i] = base.weight(i) / marginal[i];
        } else {
            singular[i] = base.weight(i);
        }
    }
    let singular = base.with_weights(singular).expect("weights copied from a valid measure");
    (rho, singular)
}

fn active(m: &DiscreteMeasure) -> Vec<usize> {
    (0..m.len()).filter(|&i| m.weight(i) > 0.0).collect()
}

/// Squared HK distance between two point clouds.
pub fn solve_hk(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, params: &Params, cfg: &SolverConfig) -> Result<HKSolution> {
    params.validate()?;
    cfg.validate()?;
    if !mu1.is_empty() && !mu2.is_empty() && mu1.dim() != mu2.dim() {
        return Err(Error::InvalidMeasure("measures live in different dimensions".into()));
    }
    let lambda = params.entropy_weight();
    let (mut rows, mut cols) = (active(mu1), active(mu2));
    let cutoff = params.cutoff();
    let reach = |x: &[f64], others: &DiscreteMeasure, idx: &[usize]| idx.iter().any(|&j| euclid(x, others.point(j)) < cutoff);
    let rows_kept: Vec<usize> = rows.iter().copied().filter(|&i| reach(mu1.point(i), mu2, &cols)).collect();
    let cols_kept: Vec<usize> = cols.iter().copied().filter(|&j| reach(mu2.point(j), mu1, &rows)).collect();
    rows = rows_kept;
    cols = cols_kept;

    let mut plan = TransportPlan::empty(mu1.len(), mu2.len());
    let mut iterations = 0;
    let mut residual = 0.0;
    if !rows.is_empty() && !cols.is_empty() {
        let kernel = Kernel::new(mu1, &rows, mu2, &cols, params, cfg.execution);
        let a: Vec<f64> = rows.iter().map(|&i| mu1.weight(i)).collect();
        let b: Vec<f64> = cols.iter().map(|&j| mu2.weight(j)).collect();
        // Reference measure mu1 x mu2 / sqrt(m1 m2) keeps the regularized problem 1-homogeneous.
        let log_s = 0.25 * (mu1.total_mass().ln() + mu2.total_mass().ln());
        let log_alpha: Vec<f64> = a.iter().map(|w| w.ln() - log_s).collect();
        let log_beta: Vec<f64> = b.iter().map(|w| w.ln() - log_s).collect();
        let (n, m) = (rows.len(), cols.len());
        let penalty1 = KlPenalty { lambda, target: a };
        let penalty2 = KlPenalty { lambda, target: b };
        let mut problem = DualProblem { kernel, log_alpha, log_beta, first: &penalty1, second: &penalty2 };
        let sol = problem.solve(cfg, vec![0.0; n], vec![0.0; m])?;
        let (f, g) = (sol.f, sol.g);
        iterations = sol.iterations;
        residual = sol.residual;
        let (kernel, log_alpha, log_beta) = (problem.kernel, problem.log_alpha, problem.log_beta);
        let eps = cfg.eps_end;
        for (ka, &i) in rows.iter().enumerate() {
            plan.f[i] = f[ka];
            for (kb, &j) in cols.iter().enumerate() {
                let c = kernel.cost[ka * m + kb];
                if c.is_finite() {
                    let mass = (log_alpha[ka] + log_beta[kb] + (f[ka] + g[kb] - c) / eps).exp();
                    if mass > 0.0 {
                        plan.entries.push(PlanEntry { i, j, mass });
                    }
                }
            }
        }
        for (kb, &j) in cols.iter().enumerate() {
            plan.g[j] = g[kb];
        }
        plan.eps = eps;
    }
    Ok(assemble(plan, mu1, mu2, params, iterations, residual))
}

pub(crate) fn assemble(
    plan: TransportPlan,
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    params: &Params,
    iterations: usize,
    dual_residual: f64,
) -> HKSolution {
    let g1 = plan.first_marginal();
    let g2 = plan.second_marginal();
    let ratio = |p: &[f64], m: &DiscreteMeasure| -> Vec<f64> {
        p.iter().zip(m.weights()).map(|(p, w)| if *w > 0.0 { p / w } else { 0.0 }).collect()
    };
    let (rho0, singular0) = lebesgue_decompose(mu1, &g1);
    let (rho_star, singular_star) = lebesgue_decompose(mu2, &g2);
    HKSolution {
        hk2: let_objective(&plan, mu1, mu2, params),
        sigma1: ratio(&g1, mu1),
        sigma2: ratio(&g2, mu2),
        rho0,
        rho_star,
        singular0,
        singular_star,
        plan,
        source: mu1.clone(),
        target: mu2.clone(),
        params: *params,
        iterations,
        dual_residual,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConePair {
    pub first: ConePoint,
    pub second: ConePoint,
    pub mass: f64,
}

/// Plan on the cone, a finite list of weighted point pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConePlan {
    pub pairs: Vec<ConePair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

/// Lift `([x_i, sqrt(rho0_i)], [y_j, sqrt(rho_star_j)])_# gamma`.
pub fn lift_to_cone(sol: &HKSolution) -> ConePlan {
    let pairs = sol
        .plan
        .entries
        .iter()
        .map(|e| ConePair {
            first: ConePoint { x: sol.source.point(e.i).to_vec(), r: sol.rho0[e.i].sqrt() },
            second: ConePoint { x: sol.target.point(e.j).to_vec(), r: sol.rho_star[e.j].sqrt() },
            mass: e.mass,
        })
        .collect();
    ConePlan { pairs }
}

/// `x_# (r^2 beta)` on the chosen side, merging coincident base points.
pub fn homogeneous_marginal(beta: &ConePlan, side: Side) -> DiscreteMeasure {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut points: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut dim = 1;
    for pair in &beta.pairs {
        let p = match side {
            Side::First => &pair.first,
            Side::Second => &pair.second,
        };
        dim = p.x.len();
        let w = if p.is_vertex() { 0.0 } else { p.r * p.r * pair.mass };
        let key: Vec<u64> = p.x.iter().map(|c| c.to_bits()).collect();
        let k = *index.entry(key).or_insert_with(|| {
            points.extend_from_slice(&p.x);
            weights.push(0.0);
            weights.len() - 1
        });
        weights[k] += w;
    }
    DiscreteMeasure::new(dim, points, weights).unwrap_or_else(|_| DiscreteMeasure::empty(dim))
}

/// Independent value of the entropy-transport problem on supports of at most
/// four points each: exact coordinate minimization over plan entries from
/// several starting plans, keeping the best value.
pub fn hk_tiny_oracle(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, params: &Params) -> Result<f64> {
    if mu1.len() > 4 || mu2.len() > 4 {
        return Err(Error::InvalidMeasure("tiny oracle accepts at most 4 points per side".into()));
    }
    let (n, m) = (mu1.len(), mu2.len());
    let lambda = params.entropy_weight();
    let mut cells = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let c = transport_cost(euclid(mu1.point(i), mu2.point(j)), params);
            if c.is_finite() && mu1.weight(i) > 0.0 && mu2.weight(j) > 0.0 {
                // Stationarity in the entry: (R + x)(C + x) = a b exp(-c / lambda).
                cells.push((i, j, mu1.weight(i) * mu2.weight(j) * (-c / lambda).exp()));
            }
        }
    }
    let value = |x: &[f64]| {
        let plan = TransportPlan {
            n1: n,
            n2: m,
            entries: cells.iter().zip(x).map(|(&(i, j, _), &mass)| PlanEntry { i, j, mass }).collect(),
            f: vec![],
            g: vec![],
            eps: 0.0,
        };
        let_objective(&plan, mu1, mu2, params)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = value(&vec![0.0; cells.len()]);
    for start in 0..6 {
        let mut x: Vec<f64> = cells
            .iter()
            .map(|&(i, j, _)| match start {
                0 => 0.0,
                1 => (mu1.weight(i) * mu2.weight(j)).sqrt(),
                _ => rng.gen::<f64>() * mu1.weight(i).max(mu2.weight(j)),
            })
            .collect();
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; m];
        for (k, &(i, j, _)) in cells.iter().enumerate() {
            rows[i] += x[k];
            cols[j] += x[k];
        }
        for _sweep in 0..200_000 {
            let mut change: f64 = 0.0;
            for (k, &(i, j, target)) in cells.iter().enumerate() {
                let r = rows[i] - x[k];
                let c = cols[j] - x[k];
                let disc = (r - c) * (r - c) + 4.0 * target;
                let new = (0.5 * (disc.sqrt() - (r + c))).max(0.0);
                change = change.max((new - x[k]).abs());
                rows[i] = r + new;
                cols[j] = c + new;
                x[k] = new;
            }
            if change < 1e-16 {
                break;
            }
        }
        best = best.min(value(&x));
    }
    Ok(best)
}
