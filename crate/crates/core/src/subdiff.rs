//! First variation of `-(1/2) HK^2(., mu)` along perturbations
//! `h -> (I + h v)_# (1 + h R)^2 nu0`, evaluated from an optimal plan.

use std::fmt;
use std::sync::Arc;

use crate::cone::{euclid, s_map};
use crate::error::{Error, Result};
use crate::hk::{homogeneous_marginal, lift_to_cone, ConePlan, HKSolution, Side};
use crate::measures::{DiscreteMeasure, DomainBox, Params, PerturbationField};

/// `(4/sigma) sum gamma [ -rho0 R + sqrt(rho0 rho*) (R cos l + k <S, v>) ]`
/// with `l = k |x - y|`, `k = sqrt(sigma / 4 lambda)`, evaluated on the plan.
pub fn frak_f(sol: &HKSolution, field: &PerturbationField, params: &Params) -> f64 {
    let k = params.angle_scale();
    let mut total = 0.0;
    for e in &sol.plan.entries {
        let x = sol.source.point(e.i);
        let y = sol.target.point(e.j);
        let (r0, rs) = (sol.rho0[e.i], sol.rho_star[e.j]);
        total += e.mass * pair_term(x, y, r0, (r0 * rs).sqrt(), field, params, k);
    }
    params.entropy_weight() * total
}

/// Same quantity on a cone plan: `r0^2` and `r0 r1` replace `rho0` and `sqrt(rho0 rho*)`.
pub fn frak_f_cone(beta: &ConePlan, field: &PerturbationField, params: &Params) -> f64 {
    let k = params.angle_scale();
    let mut total = 0.0;
    for pair in &beta.pairs {
        let (r0, r1) = (pair.first.r, pair.second.r);
        total += pair.mass * pair_term(&pair.first.x, &pair.second.x, r0 * r0, r0 * r1, field, params, k);
    }
    params.entropy_weight() * total
}

fn pair_term(x: &[f64], y: &[f64], own: f64, cross: f64, field: &PerturbationField, params: &Params, k: f64) -> f64 {
    let r = field.rate(x);
    let v = field.velocity(x);
    let angle = (k * euclid(x, y)).min(std::f64::consts::PI);
    let s = s_map(x, y, params);
    let push: f64 = s.iter().zip(&v).map(|(a, b)| a * b).sum();
    -own * r + cross * (r * angle.cos() + k * push)
}

/// `frak_f - (4/sigma) int R d nu0_perp`: an element of the Frechet
/// subdifferential of `h -> -(1/2) HK^2(nu_h, mu)` at `h = 0`.
pub fn superdiff_element(sol: &HKSolution, field: &PerturbationField, params: &Params) -> f64 {
    let singular: f64 = (0..sol.singular0.len()).map(|i| sol.singular0.weight(i) * field.rate(sol.singular0.point(i))).sum();
    frak_f(sol, field, params) - params.entropy_weight() * singular
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Smooth test function with a certified bound on `|phi| + |grad phi| + |hess phi|`.
#[derive(Clone)]
pub struct TestFunction {
    dim: usize,
    phi: Arc<ScalarFn>,
    grad: Arc<VectorFn>,
    pub hess_bound: f64,
    pub c_phi: f64,
    pub compact_interior: bool,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("dim", &self.dim)
            .field("hess_bound", &self.hess_bound)
            .field("c_phi", &self.c_phi)
            .field("compact_interior", &self.compact_interior)
            .finish_non_exhaustive()
    }
}

impl TestFunction {
    /// Samples `|phi| + |grad phi|` on a lattice over `domain` (plus 5% slack)
    /// and adds the supplied Hessian bound.
    pub fn new(
        domain: &DomainBox,
        phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hess_bound: f64,
        compact_interior: bool,
    ) -> Result<Self> {
        if !(hess_bound >= 0.0 && hess_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("Hessian bound must be finite and nonnegative, got {hess_bound}")));
        }
        let d = domain.dim();
        let per_axis = ((1u64 << 14) as f64).powf(1.0 / d as f64).floor().clamp(3.0, 1025.0) as usize;
        let total = per_axis.pow(d as u32);
        let mut sup: f64 = 0.0;
        let mut x = vec![0.0; d];
        for k in 0..total {
            let mut r = k;
            for a in 0..d {
                x[a] = domain.lo[a] + (domain.hi[a] - domain.lo[a]) * (r % per_axis) as f64 / (per_axis - 1) as f64;
                r /= per_axis;
            }
            let g = grad(&x).iter().map(|c| c * c).sum::<f64>().sqrt();
            sup = sup.max(phi(&x).abs() + g);
        }
        if !sup.is_finite() {
            return Err(Error::InvalidParameter("test function is not finite on the domain".into()));
        }
        Ok(TestFunction { dim: d, phi: Arc::new(phi), grad: Arc::new(grad), hess_bound, c_phi: 1.05 * sup + hess_bound, compact_interior })
    }

    pub fn zero(domain: &DomainBox) -> Self {
        let d = domain.dim();
        TestFunction { dim: d, phi: Arc::new(|_| 0.0), grad: Arc::new(move |_| vec![0.0; d]), hess_bound: 0.0, c_phi: 0.0, compact_interior: true }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.phi)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    /// The direction `v = (4 lambda / sigma) grad phi`, `R = 2 phi`.
    pub fn as_field(&self, params: &Params) -> PerturbationField {
        let scale = 4.0 * params.lambda / params.sigma;
        let (phi, grad) = (self.phi.clone(), self.grad.clone());
        PerturbationField::new(
            self.dim,
            move |x, out| {
                for (o, g) in out.iter_mut().zip(grad(x)) {
                    *o = scale * g;
                }
            },
            move |x| 2.0 * phi(x),
        )
    }
}

fn integrate(m: &DiscreteMeasure, phi: &TestFunction) -> f64 {
    m.integrate(|x| phi.value(x))
}

/// Left side and bound of the estimate
/// `|(4/sigma)(int phi dmu - int phi dnu0) - (F_phi - (8/sigma) int phi d(nu0 - h alpha0))|
///   <= C_phi (6 + 16 lambda / sigma) HK^2(nu0, mu)`,
/// with `F_phi` evaluated on the cone lift of `sol` (a solution from `nu0` to `mu`).
pub fn connection_gap(sol: &HKSolution, phi: &TestFunction, mu: &DiscreteMeasure, nu0: &DiscreteMeasure, params: &Params) -> (f64, f64) {
    let lift = lift_to_cone(sol);
    let f_phi = frak_f_cone(&lift, &phi.as_field(params), params);
    let h_alpha = homogeneous_marginal(&lift, Side::First);
    let defect = integrate(nu0, phi) - integrate(&h_alpha, phi);
    let w = params.entropy_weight();
    let lhs = (w * (integrate(mu, phi) - integrate(nu0, phi)) - (f_phi - 2.0 * w * defect)).abs();
    let bound = phi.c_phi * (6.0 + 16.0 * params.lambda / params.sigma) * sol.hk2;
    (lhs, bound)
}

/// `F_phi - (8/sigma) int phi d nu0_perp` through the plan and the decomposition;
/// equals `superdiff_element` for the field of `phi`.
pub fn connection_element(sol: &HKSolution, phi: &TestFunction, params: &Params) -> f64 {
    let lift = lift_to_cone(sol);
    let f_phi = frak_f_cone(&lift, &phi.as_field(params), params);
    f_phi - 2.0 * params.entropy_weight() * integrate(&sol.singular0, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hk::{solve_hk, SolverConfig};

    fn prm() -> Params {
        Params::new(1.0, 4.0).unwrap()
    }

    fn sample_field() -> PerturbationField {
        PerturbationField::new(1, |x, out| out[0] = (2.0 * x[0]).sin(), |x| 1.0 - x[0] * x[0])
    }

    #[test]
    fn diagonal_plan_gives_zero() {
        let nu = DiscreteMeasure::dirac(&[0.3], 2.0).unwrap();
        let sol = solve_hk(&nu, &nu, &prm(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.hk2, 0.0);
        assert!(frak_f(&sol, &sample_field(), &prm()).abs() < 1e-12);
        assert!(superdiff_element(&sol, &sample_field(), &prm()).abs() < 1e-12);
    }

    #[test]
    fn null_target_leaves_only_the_singular_part() {
        let nu = DiscreteMeasure::new(1, vec![0.1, 0.6], vec![1.0, 0.5]).unwrap();
        let sol = solve_hk(&nu, &DiscreteMeasure::empty(1), &prm(), &SolverConfig::default()).unwrap();
        let field = sample_field();
        let expect = -prm().entropy_weight() * (1.0 * field.rate(&[0.1]) + 0.5 * field.rate(&[0.6]));
        assert!((superdiff_element(&sol, &field, &prm()) - expect).abs() < 1e-14);
    }

    #[test]
    fn plan_and_cone_forms_agree() {
        let nu = DiscreteMeasure::new(1, vec![0.0, 0.4, 1.3], vec![1.0, 0.5, 0.8]).unwrap();
        let mu = DiscreteMeasure::new(1, vec![0.2, 0.9], vec![0.7, 1.1]).unwrap();
        let sol = solve_hk(&nu, &mu, &prm(), &SolverConfig::default()).unwrap();
        let field = sample_field();
        let a = frak_f(&sol, &field, &prm());
        let b = frak_f_cone(&lift_to_cone(&sol), &field, &prm());
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn zero_test_function_has_no_gap() {
        let d = DomainBox::new(vec![-1.0], vec![3.0]).unwrap();
        let nu = DiscreteMeasure::new(1, vec![0.0, 0.4], vec![1.0, 0.5]).unwrap();
        let mu = DiscreteMeasure::dirac(&[1.0], 0.3).unwrap();
        let sol = solve_hk(&nu, &mu, &prm(), &SolverConfig::default()).unwrap();
        let (lhs, bound) = connection_gap(&sol, &TestFunction::zero(&d), &mu, &nu, &prm());
        assert_eq!(lhs, 0.0);
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn test_function_constant_is_certified() {
        let d = DomainBox::unit_interval();
        let phi = TestFunction::new(&d, |x| x[0] * x[0], |x| vec![2.0 * x[0]], 2.0, false).unwrap();
        // sup |phi| + |phi'| = 3 at x = 1.
        assert!(phi.c_phi >= 5.0);
        assert!(phi.c_phi <= 1.05 * 3.0 + 2.0 + 1e-12);
    }
}
