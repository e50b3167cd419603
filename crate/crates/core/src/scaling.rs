//! Log-domain dual solver shared by the distance computation and the
//! minimizing-movement step.
//!
//! Primal: `min_g  phi_1(g_1) + phi_2(g_2) + <c, g> + eps KL(g | alpha x beta)`
//! with separable convex marginal penalties. Each regularization level runs a
//! few scaling sweeps (exact block maximization of the dual in one potential),
//! an exact translation step along `(f + t, g - t)`, then damped Newton on the
//! smooth concave dual until the sweep residual drops below tolerance. Plain
//! sweeps remain as the fallback.

use nalgebra::{DMatrix, DVector};

use crate::cone::{euclid, transport_cost};
use crate::error::{Error, Result};
use crate::hk::SolverConfig;
use crate::measures::{DiscreteMeasure, Params};
use crate::par::{self, Execution};

/// Separable marginal penalty seen through its convex conjugate.
pub(crate) trait Penalty: Sync {
    /// Mass demanded at potential `f` and its derivative in `f`
    /// (`(phi*)'(-f)` and minus its second derivative).
    fn demand(&self, k: usize, f: f64) -> (f64, f64);
    /// `phi*(-f)`.
    fn conjugate(&self, k: usize, f: f64) -> f64;
    /// Potential solving `demand(f) = exp(f / eps + log_kernel)`.
    fn update(&self, k: usize, log_kernel: f64, eps: f64) -> f64;
}

/// `lambda KL(p | a)`.
pub(crate) struct KlPenalty {
    pub lambda: f64,
    pub target: Vec<f64>,
}

impl Penalty for KlPenalty {
    fn demand(&self, k: usize, f: f64) -> (f64, f64) {
        let p = self.target[k] * (-f / self.lambda).exp();
        (p, -p / self.lambda)
    }

    fn conjugate(&self, k: usize, f: f64) -> f64 {
        self.lambda * self.target[k] * ((-f / self.lambda).exp() - 1.0)
    }

    fn update(&self, k: usize, log_kernel: f64, eps: f64) -> f64 {
        let l = self.lambda;
        (self.target[k].ln() - log_kernel) * l * eps / (l + eps)
    }
}

/// Dense cost matrix between active rows and columns, plus copies divided by
/// the current regularization strength in both layouts.
pub(crate) struct Kernel {
    pub n: usize,
    pub m: usize,
    pub cost: Vec<f64>,
    scaled: Vec<f64>,
    scaled_t: Vec<f64>,
    pub exec: Execution,
}

impl Kernel {
    pub fn new(x: &DiscreteMeasure, rows: &[usize], y: &DiscreteMeasure, cols: &[usize], params: &Params, exec: Execution) -> Self {
        let (n, m) = (rows.len(), cols.len());
        let mut cost = vec![0.0; n * m];
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                cost[a * m + b] = transport_cost(euclid(x.point(i), y.point(j)), params);
            }
        }
        Kernel { n, m, cost, scaled: vec![0.0; n * m], scaled_t: vec![0.0; n * m], exec }
    }

    pub fn set_eps(&mut self, eps: f64) {
        let (n, m) = (self.n, self.m);
        for a in 0..n {
            for b in 0..m {
                let c = self.cost[a * m + b] / eps;
                self.scaled[a * m + b] = c;
                self.scaled_t[b * n + a] = c;
            }
        }
    }

    /// `out[a] = log sum_b exp(shift[b] - c_ab / eps)`.
    pub fn row_lse(&self, shift: &[f64], out: &mut [f64]) {
        let m = self.m;
        let scaled = &self.scaled;
        par::fill(out, self.exec, |a| lse(&scaled[a * m..(a + 1) * m], shift));
    }

    /// `out[b] = log sum_a exp(shift[a] - c_ab / eps)`.
    pub fn col_lse(&self, shift: &[f64], out: &mut [f64]) {
        let n = self.n;
        let scaled = &self.scaled_t;
        par::fill(out, self.exec, |b| lse(&scaled[b * n..(b + 1) * n], shift));
    }

    /// Dense plan `exp(shift_a + shift_b - c / eps)`, row-major.
    pub fn plan(&self, shift_a: &[f64], shift_b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let scaled = &self.scaled;
        let rows: Vec<Vec<f64>> = par::map(self.n, self.exec, |a| {
            (0..m).map(|b| (shift_a[a] + shift_b[b] - scaled[a * m + b]).exp()).collect()
        });
        rows.concat()
    }
}

fn lse(scaled_cost: &[f64], shift: &[f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (c, s) in scaled_cost.iter().zip(shift) {
        let t = s - c;
        if t > mx {
            mx = t;
        }
    }
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let mut sum = 0.0;
    for (c, s) in scaled_cost.iter().zip(shift) {
        sum += (s - c - mx).exp();
    }
    mx + sum.ln()
}

/// Geometric sequence of regularization strengths ending exactly at `eps_end`.
pub(crate) fn eps_schedule(eps_start: f64, eps_end: f64, factor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = eps_start.max(eps_end);
    while e > eps_end * (1.0 + 1e-12) {
        out.push(e);
        e *= factor;
    }
    out.push(eps_end);
    out
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest system solved densely by the Newton phase.
const NEWTON_MAX_DIM: usize = 1500;
const WARM_SWEEPS: usize = 10;

pub(crate) struct DualSolution {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) struct DualProblem<'a, P1: Penalty, P2: Penalty> {
    pub kernel: Kernel,
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub first: &'a P1,
    pub second: &'a P2,
}

struct Work {
    shift_a: Vec<f64>,
    shift_b: Vec<f64>,
    lse_a: Vec<f64>,
    lse_b: Vec<f64>,
}

impl<P1: Penalty, P2: Penalty> DualProblem<'_, P1, P2> {
    /// Runs the regularization schedule from the initial potentials `f`, `g`.
    pub fn solve(&mut self, cfg: &SolverConfig, mut f: Vec<f64>, mut g: Vec<f64>) -> Result<DualSolution> {
        let (n, m) = (self.kernel.n, self.kernel.m);
        let mut w = Work { shift_a: vec![0.0; n], shift_b: vec![0.0; m], lse_a: vec![0.0; n], lse_b: vec![0.0; m] };
        let schedule = eps_schedule(cfg.eps_start, cfg.eps_end, cfg.eps_factor);
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        for (level, &eps) in schedule.iter().enumerate() {
            let last = level + 1 == schedule.len();
            let tol = cfg.level_tol(eps, last);
            self.kernel.set_eps(eps);
            let mut used = 0;
            for _ in 0..WARM_SWEEPS.min(cfg.max_iters) {
                residual = self.sweep(&mut f, &mut g, eps, &mut w);
                used += 1;
                if residual <= tol {
                    break;
                }
            }
            if residual > tol && n + m <= NEWTON_MAX_DIM {
                for _ in 0..200 {
                    if used >= cfg.max_iters || !self.newton_step(&mut f, &mut g, eps, &mut w) {
                        break;
                    }
                    residual = self.sweep(&mut f, &mut g, eps, &mut w);
                    used += 1;
                    if residual <= tol {
                        break;
                    }
                }
            }
            while residual > tol && used < cfg.max_iters {
                residual = self.sweep(&mut f, &mut g, eps, &mut w);
                used += 1;
            }
            iterations += used;
            if last && !(residual <= tol) {
                return Err(Error::NotConverged { eps, residual, iterations });
            }
        }
        Ok(DualSolution { f, g, iterations, residual })
    }

    /// One block update of each potential followed by the translation step;
    /// returns the sup-norm change.
    fn sweep(&self, f: &mut [f64], g: &mut [f64], eps: f64, w: &mut Work) -> f64 {
        let f_old = f.to_vec();
        let g_old = g.to_vec();
        for b in 0..self.kernel.m {
            w.shift_b[b] = self.log_beta[b] + g[b] / eps;
        }
        self.kernel.row_lse(&w.shift_b, &mut w.lse_a);
        for a in 0..self.kernel.n {
            f[a] = self.first.update(a, self.log_alpha[a] + w.lse_a[a], eps);
        }
        for a in 0..self.kernel.n {
            w.shift_a[a] = self.log_alpha[a] + f[a] / eps;
        }
        self.kernel.col_lse(&w.shift_a, &mut w.lse_b);
        for b in 0..self.kernel.m {
            g[b] = self.second.update(b, self.log_beta[b] + w.lse_b[b], eps);
        }
        let t = self.translation(f, g);
        if t.is_finite() {
            f.iter_mut().for_each(|v| *v += t);
            g.iter_mut().for_each(|v| *v -= t);
        }
        sup_diff(f, &f_old) + sup_diff(g, &g_old)
    }

    /// Root of `sum_a p_a(f_a + t) = sum_b q_b(g_b - t)`, decreasing in `t`.
    fn translation(&self, f: &[f64], g: &[f64]) -> f64 {
        let balance = |t: f64| {
            let mut val = 0.0;
            let mut der = 0.0;
            for (a, fa) in f.iter().enumerate() {
                let (p, dp) = self.first.demand(a, fa + t);
                val += p;
                der += dp;
            }
            for (b, gb) in g.iter().enumerate() {
                let (q, dq) = self.second.demand(b, gb - t);
                val -= q;
                der += dq;
            }
            (val, der)
        };
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut t = 0.0;
        for _ in 0..100 {
            let (v, d) = balance(t);
            if !v.is_finite() {
                return 0.0;
            }
            if v > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            if v.abs() <= 1e-15 * (1.0 + balance_scale(f, g, self, t)) {
                return t;
            }
            let mut next = if d < 0.0 { t - v / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else if lo.is_finite() {
                    lo + 1.0 + (lo.abs())
                } else {
                    hi - 1.0 - hi.abs()
                };
            }
            if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) {
                return next;
            }
            t = next;
        }
        t
    }

    fn dual_value(&self, f: &[f64], g: &[f64], eps: f64, w: &mut Work) -> f64 {
        let mut val = 0.0;
        for (a, fa) in f.iter().enumerate() {
            val -= self.first.conjugate(a, *fa);
        }
        for (b, gb) in g.iter().enumerate() {
            val -= self.second.conjugate(b, *gb);
        }
        for b in 0..self.kernel.m {
            w.shift_b[b] = self.log_beta[b] + g[b] / eps;
        }
        self.kernel.row_lse(&w.shift_b, &mut w.lse_a);
        let mass: f64 = (0..self.kernel.n).map(|a| (self.log_alpha[a] + f[a] / eps + w.lse_a[a]).exp()).sum();
        val - eps * mass
    }

    /// Damped Newton step on the dual; false when no progress is possible.
    fn newton_step(&self, f: &mut [f64], g: &mut [f64], eps: f64, w: &mut Work) -> bool {
        let (n, m) = (self.kernel.n, self.kernel.m);
        for a in 0..n {
            w.shift_a[a] = self.log_alpha[a] + f[a] / eps;
        }
        for b in 0..m {
            w.shift_b[b] = self.log_beta[b] + g[b] / eps;
        }
        let plan = self.kernel.plan(&w.shift_a, &w.shift_b);
        let dim = n + m;
        let mut mat = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut row_mass = vec![0.0; n];
        let mut col_mass = vec![0.0; m];
        for a in 0..n {
            for b in 0..m {
                let p = plan[a * m + b];
                row_mass[a] += p;
                col_mass[b] += p;
                mat[(a, n + b)] = p;
                mat[(n + b, a)] = p;
            }
        }
        for a in 0..n {
            let (p, dp) = self.first.demand(a, f[a]);
            mat[(a, a)] = row_mass[a] - eps * dp;
            rhs[a] = eps * (p - row_mass[a]);
        }
        for b in 0..m {
            let (q, dq) = self.second.demand(b, g[b]);
            mat[(n + b, n + b)] = col_mass[b] - eps * dq;
            rhs[n + b] = eps * (q - col_mass[b]);
        }
        if rhs.iter().any(|v| !v.is_finite()) || mat.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let ridge = 1e-14 * (0..dim).map(|k| mat[(k, k)]).fold(0.0, f64::max);
        for k in 0..dim {
            mat[(k, k)] += ridge;
        }
        let Some(chol) = mat.cholesky() else { return false };
        let step = chol.solve(&rhs);
        let slope: f64 = step.iter().zip(rhs.iter()).map(|(s, r)| s * r).sum::<f64>() / eps;
        let base = self.dual_value(f, g, eps, w);
        let mut alpha = 1.0;
        let f0 = f.to_vec();
        let g0 = g.to_vec();
        let mut trial_f = f0.clone();
        let mut trial_g = g0.clone();
        for _ in 0..40 {
            for a in 0..n {
                trial_f[a] = f0[a] + alpha * step[a];
            }
            for b in 0..m {
                trial_g[b] = g0[b] + alpha * step[n + b];
            }
            let val = self.dual_value(&trial_f, &trial_g, eps, w);
            if val.is_finite() && val >= base + 1e-4 * alpha * slope {
                f.copy_from_slice(&trial_f);
                g.copy_from_slice(&trial_g);
                return true;
            }
            if val.is_finite() && (val - base).abs() <= 1e-13 * base.abs().max(1.0) {
                // Rounding floor: accept and let the sweep residual decide.
                f.copy_from_slice(&trial_f);
                g.copy_from_slice(&trial_g);
                return alpha == 1.0;
            }
            alpha *= 0.5;
        }
        false
    }
}

fn balance_scale<P1: Penalty, P2: Penalty>(f: &[f64], g: &[f64], pb: &DualProblem<'_, P1, P2>, t: f64) -> f64 {
    let a: f64 = f.iter().enumerate().map(|(k, v)| pb.first.demand(k, v + t).0).sum();
    let b: f64 = g.iter().enumerate().map(|(k, v)| pb.second.demand(k, v - t).0).sum();
    a + b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_ends_at_target() {
        let s = eps_schedule(1.0, 1e-4, 0.5);
        assert_eq!(s[0], 1.0);
        assert_eq!(*s.last().unwrap(), 1e-4);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(eps_schedule(1e-3, 1e-2, 0.5), vec![1e-2]);
    }

    #[test]
    fn lse_matches_naive_and_skips_infinite_costs() {
        let c = [0.5, f64::INFINITY, 1.0];
        let s = [0.1, 3.0, -0.2];
        let naive = ((0.1f64 - 0.5).exp() + (-0.2f64 - 1.0).exp()).ln();
        assert!((lse(&c, &s) - naive).abs() < 1e-15);
        assert_eq!(lse(&[f64::INFINITY], &[0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn kl_update_is_a_fixed_point_of_demand() {
        let pen = KlPenalty { lambda: 2.0, target: vec![0.7] };
        let (eps, lk) = (0.01, -0.3);
        let f = pen.update(0, lk, eps);
        let (p, _) = pen.demand(0, f);
        assert!((p.ln() - (f / eps + lk)).abs() < 1e-12);
    }
}
