//! Independent checks of the scheme: an explicit finite-difference solver for
//! the PDE, the space-time weak-form residual and the slope lower bound at the
//! null measure.

use serde::{Deserialize, Serialize};

use crate::energy::{energy_of, EnergyFamily, EnergySpec, Potential};
use crate::error::{Error, Result};
use crate::jko::{StepRecord, Trajectory};
use crate::measures::{DomainBox, GridDensity, Params};

/// Explicit conservative solver on a 1-D grid with SSP-RK2 time stepping.
///
/// Face flux `J = lambda (D L_F(u) + u_face D V)` vanishes on boundary faces;
/// the cell update is `div J - sigma (L^_F(u) + V u)`. The step is
/// `dt_safety * min(dx^2 / (lambda max u F''(u) + 1), 1 / (sigma max |rate|))`.
pub fn fd_reference_solve(u0: &GridDensity, spec: &EnergySpec, params: &Params, horizon: f64, dt_safety: f64) -> Result<Trajectory> {
    params.validate()?;
    u0.validate()?;
    if u0.dim() != 1 {
        return Err(Error::InvalidParameter("the reference solver is one-dimensional".into()));
    }
    if !(dt_safety > 0.0 && dt_safety <= 1.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("need 0 < dt_safety <= 1 and T >= 0, got {dt_safety}, {horizon}")));
    }
    if u0.values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidMeasure("initial density must be nonnegative".into()));
    }
    let n = u0.num_cells();
    let dx = u0.spacing[0];
    let pot: Vec<f64> = (0..n).map(|k| spec.potential.value(&u0.center(k))).collect();
    let rhs = |u: &[f64], out: &mut [f64]| {
        let fam = &spec.family;
        let mut flux_left = 0.0;
        for k in 0..n {
            let flux_right = if k + 1 < n {
                let face = 0.5 * (u[k] + u[k + 1]);
                params.lambda * ((fam.l_f(u[k + 1]) - fam.l_f(u[k])) + face * (pot[k + 1] - pot[k])) / dx
            } else {
                0.0
            };
            out[k] = (flux_right - flux_left) / dx - params.sigma * (fam.l_hat_f(u[k]) + pot[k] * u[k]);
            flux_left = flux_right;
        }
    };
    let stable_dt = |u: &[f64]| {
        let mut diff: f64 = 0.0;
        let mut rate: f64 = 0.0;
        for (k, &s) in u.iter().enumerate() {
            diff = diff.max(spec.family.diffusivity(s));
            if s > 0.0 {
                let fp = spec.family.f_prime(s).unwrap_or(0.0);
                rate = rate.max((fp + pot[k] + s * spec.family.f_second(s)).abs());
            }
        }
        let diffusive = dx * dx / (params.lambda * diff + 1.0);
        let reactive = if rate > 0.0 { 1.0 / (params.sigma * rate) } else { f64::INFINITY };
        dt_safety * diffusive.min(reactive)
    };

    let mut traj = Trajectory { tau: 0.0, times: vec![0.0], densities: vec![u0.clone()], records: vec![record(0, 0.0, u0, spec)], failure: None };
    let mut u = u0.values.clone();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut t = 0.0;
    let mut step = 0;
    let mut max_dt: f64 = 0.0;
    while t < horizon * (1.0 - 1e-14) {
        let dt = stable_dt(&u).min(horizon - t);
        max_dt = max_dt.max(dt);
        rhs(&u, &mut k1);
        for k in 0..n {
            stage[k] = u[k] + dt * k1[k];
        }
        check_sign(&mut stage, t + dt)?;
        rhs(&stage, &mut k2);
        for k in 0..n {
            u[k] = 0.5 * (u[k] + stage[k] + dt * k2[k]);
        }
        t += dt;
        step += 1;
        check_sign(&mut u, t)?;
        let snapshot = u0.with_values(u.clone())?;
        traj.records.push(record(step, t, &snapshot, spec));
        traj.times.push(t);
        traj.densities.push(snapshot);
    }
    traj.tau = max_dt;
    Ok(traj)
}

fn check_sign(u: &mut [f64], time: f64) -> Result<()> {
    let min_value = u.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_value < -1e-12 {
        return Err(Error::Cfl { time, min_value });
    }
    u.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(())
}

fn record(n: usize, t: f64, u: &GridDensity, spec: &EnergySpec) -> StepRecord {
    StepRecord {
        n,
        t,
        energy: energy_of(u, spec),
        mass: u.total_mass(),
        step_hk2: 0.0,
        metric_derivative: 0.0,
        certificate_gap: 0.0,
        zero_cells: u.values.iter().filter(|v| **v == 0.0).count(),
        iterations: 0,
    }
}

/// `theta(t) = (a0 + a1 t + a2 t^2)(1 - t/T)^3` on `[0, T)`, zero afterwards (C^2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFactor {
    pub coeffs: [f64; 3],
    pub horizon: f64,
}

impl TimeFactor {
    pub fn value(&self, t: f64) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        let [a0, a1, a2] = self.coeffs;
        let c = 1.0 - t / self.horizon;
        (a0 + a1 * t + a2 * t * t) * c * c * c
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        let [a0, a1, a2] = self.coeffs;
        let c = 1.0 - t / self.horizon;
        (a1 + 2.0 * a2 * t) * c * c * c - 3.0 * (a0 + a1 * t + a2 * t * t) * c * c / self.horizon
    }
}

/// Spatial factor with closed-form gradient and Laplacian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceFactor {
    Constant { value: f64 },
    /// `cos(k pi (x_0 - lo_0) / L_0)` along the first axis.
    Cosine { k: f64, lo: f64, length: f64 },
    /// `(1 - |x - c|^2 / r^2)^3` inside the ball, zero outside (C^2).
    Bump { center: Vec<f64>, radius: f64 },
}

impl SpaceFactor {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SpaceFactor::Constant { value } => *value,
            SpaceFactor::Cosine { k, lo, length } => (k * std::f64::consts::PI * (x[0] - lo) / length).cos(),
            SpaceFactor::Bump { center, radius } => {
                let q = dist2(x, center) / (radius * radius);
                if q >= 1.0 { 0.0 } else { (1.0 - q).powi(3) }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            SpaceFactor::Constant { .. } => {}
            SpaceFactor::Cosine { k, lo, length } => {
                let w = k * std::f64::consts::PI / length;
                g[0] = -w * (w * (x[0] - lo)).sin();
            }
            SpaceFactor::Bump { center, radius } => {
                let r2 = radius * radius;
                let q = dist2(x, center) / r2;
                if q < 1.0 {
                    let c = -6.0 * (1.0 - q).powi(2) / r2;
                    for a in 0..x.len() {
                        g[a] = c * (x[a] - center[a]);
                    }
                }
            }
        }
        g
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match self {
            SpaceFactor::Constant { .. } => 0.0,
            SpaceFactor::Cosine { k, lo, length } => {
                let w = k * std::f64::consts::PI / length;
                -w * w * (w * (x[0] - lo)).cos()
            }
            SpaceFactor::Bump { center, radius } => {
                let r2 = radius * radius;
                let d2 = dist2(x, center);
                let q = d2 / r2;
                if q >= 1.0 {
                    return 0.0;
                }
                let d = x.len() as f64;
                -6.0 * d * (1.0 - q).powi(2) / r2 + 24.0 * (1.0 - q) * d2 / (r2 * r2)
            }
        }
    }

    /// Radius of the set where the factor may be nonzero, if bounded.
    fn support(&self) -> Option<(&[f64], f64)> {
        match self {
            SpaceFactor::Bump { center, radius } => Some((center, *radius)),
            _ => None,
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestClass {
    /// Compactly supported inside the domain: probes the equation only.
    Interior,
    /// Nonzero up to the boundary: also probes the no-flux condition.
    Full,
}

/// Space-time test function `psi(t, x) = theta(t) chi(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionST {
    pub id: String,
    pub time: TimeFactor,
    pub space: SpaceFactor,
    pub class: TestClass,
}

impl TestFunctionST {
    /// Checks the class against the domain: interior members must vanish within `margin` of the boundary.
    pub fn new(id: impl Into<String>, time: TimeFactor, space: SpaceFactor, class: TestClass, domain: &DomainBox, margin: f64) -> Result<Self> {
        if class == TestClass::Interior {
            match space.support() {
                Some((c, r)) if domain.boundary_distance(c) >= r + margin => {}
                _ => return Err(Error::InvalidParameter("interior test functions need a bump kept off the boundary".into())),
            }
        }
        if !(time.horizon > 0.0) {
            return Err(Error::InvalidParameter("test function horizon must be positive".into()));
        }
        Ok(TestFunctionST { id: id.into(), time, space, class })
    }

    pub fn horizon(&self) -> f64 {
        self.time.horizon
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.time.value(t) * self.space.value(x)
    }

    pub fn dt(&self, t: f64, x: &[f64]) -> f64 {
        self.time.derivative(t) * self.space.value(x)
    }

    pub fn grad(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let th = self.time.value(t);
        self.space.gradient(x).into_iter().map(|g| th * g).collect()
    }

    pub fn laplacian(&self, t: f64, x: &[f64]) -> f64 {
        self.time.value(t) * self.space.laplacian(x)
    }
}

/// Six-member battery on a box: three full-class and three interior-class functions.
pub fn standard_battery(domain: &DomainBox, horizon: f64) -> Result<Vec<TestFunctionST>> {
    let d = domain.dim();
    let (lo, len) = (domain.lo[0], domain.hi[0] - domain.lo[0]);
    let mid: Vec<f64> = (0..d).map(|a| 0.5 * (domain.lo[a] + domain.hi[a])).collect();
    let at = |frac: f64| -> Vec<f64> {
        let mut c = mid.clone();
        c[0] = lo + frac * len;
        c
    };
    let half_width = (0..d).map(|a| domain.hi[a] - domain.lo[a]).fold(f64::INFINITY, f64::min);
    let t = |a0: f64, a1: f64, a2: f64| TimeFactor { coeffs: [a0, a1, a2], horizon };
    let margin = 0.05 * half_width;
    Ok(vec![
        TestFunctionST::new("full_const", t(1.0, 0.0, 0.0), SpaceFactor::Constant { value: 1.0 }, TestClass::Full, domain, 0.0)?,
        TestFunctionST::new("full_cos1", t(1.0, 2.0 / horizon, 0.0), SpaceFactor::Cosine { k: 1.0, lo, length: len }, TestClass::Full, domain, 0.0)?,
        TestFunctionST::new("full_cos2", t(0.5, 0.0, 3.0 / (horizon * horizon)), SpaceFactor::Cosine { k: 2.0, lo, length: len }, TestClass::Full, domain, 0.0)?,
        TestFunctionST::new("interior_mid", t(1.0, 0.0, 0.0), SpaceFactor::Bump { center: mid.clone(), radius: 0.3 * half_width }, TestClass::Interior, domain, margin)?,
        TestFunctionST::new("interior_left", t(1.0, 1.0 / horizon, 0.0), SpaceFactor::Bump { center: at(0.3), radius: 0.2 * half_width }, TestClass::Interior, domain, margin)?,
        TestFunctionST::new("interior_right", t(0.5, 0.0, 2.0 / (horizon * horizon)), SpaceFactor::Bump { center: at(0.65), radius: 0.25 * half_width }, TestClass::Interior, domain, margin)?,
    ])
}

const GAUSS3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// `| I - int int u d_t psi - int u(0) psi(0) |` with
/// `I = int int lambda (grad L_F(u) + u grad V) . grad psi + sigma (L^_F(u) + V u) psi`,
/// for the piecewise-constant-in-time interpolant of `traj` (state `k` on `(t_{k-1}, t_k]`).
/// Spatial fluxes live on cell faces; time integrals are exact for `d_t psi` and
/// three-point Gauss for the rest.
pub fn weak_form_residual(traj: &Trajectory, psi: &TestFunctionST, spec: &EnergySpec, params: &Params, u0: &GridDensity) -> Result<f64> {
    Ok(weak_form_terms(traj, psi, spec, params, u0)?.residual())
}

/// The three integrals entering the weak form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormTerms {
    /// `int int lambda (grad L_F + u grad V) . grad psi + sigma (L^_F + V u) psi`
    pub flux: f64,
    /// `int int u d_t psi`
    pub transport: f64,
    /// `int u(0) psi(0)`
    pub initial: f64,
    /// `int int (|psi| + |d_t psi| + |grad psi|) + int |psi(0)|` on the same quadrature.
    pub psi_norm: f64,
}

impl WeakFormTerms {
    pub fn residual(&self) -> f64 {
        (self.flux - self.transport - self.initial).abs()
    }

    /// `residual / psi_norm`, comparable across test functions; zero for `psi = 0`.
    pub fn relative(&self) -> f64 {
        if self.psi_norm > 0.0 { self.residual() / self.psi_norm } else { 0.0 }
    }
}

pub fn weak_form_terms(traj: &Trajectory, psi: &TestFunctionST, spec: &EnergySpec, params: &Params, u0: &GridDensity) -> Result<WeakFormTerms> {
    let end = *traj.times.last().expect("trajectory holds the initial state");
    if end < psi.horizon() * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!("trajectory ends at {end} before the test horizon {}", psi.horizon())));
    }
    if !traj.densities[0].same_grid(u0) {
        return Err(Error::InvalidMeasure("initial density is on a different grid".into()));
    }
    let w = u0.cell_volume();
    let centers: Vec<Vec<f64>> = (0..u0.num_cells()).map(|k| u0.center(k)).collect();
    let pot: Vec<f64> = centers.iter().map(|x| spec.potential.value(x)).collect();
    let faces = face_list(u0);

    let mut initial = 0.0;
    let mut psi_norm = 0.0;
    for (k, x) in centers.iter().enumerate() {
        let p0 = psi.value(0.0, x);
        initial += w * u0.values[k] * p0;
        psi_norm += w * p0.abs();
    }
    let mut transport_in_time = 0.0;
    let mut flux_part = 0.0;
    for k in 1..traj.times.len() {
        let (a, b) = (traj.times[k - 1], traj.times[k]);
        if a >= psi.horizon() {
            break;
        }
        let u = &traj.densities[k].values;
        for (c, x) in centers.iter().enumerate() {
            transport_in_time += w * u[c] * (psi.value(b, x) - psi.value(a, x));
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(z, wz) in &GAUSS3 {
            let t = mid + half * z;
            let mut spatial = 0.0;
            for face in &faces {
                let (l, r) = (face.left, face.right);
                let h = u0.spacing[face.axis];
                let grad_l = (spec.family.l_f(u[r]) - spec.family.l_f(u[l])) / h;
                let drift = 0.5 * (u[l] + u[r]) * (pot[r] - pot[l]) / h;
                let dpsi = psi.grad(t, &face.point)[face.axis];
                spatial += params.lambda * (grad_l + drift) * dpsi;
            }
            let mut size = 0.0;
            for (c, x) in centers.iter().enumerate() {
                let p = psi.value(t, x);
                spatial += params.sigma * (spec.family.l_hat_f(u[c]) + pot[c] * u[c]) * p;
                let g = psi.grad(t, x).iter().map(|v| v * v).sum::<f64>().sqrt();
                size += p.abs() + psi.dt(t, x).abs() + g;
            }
            flux_part += wz * half * w * spatial;
            psi_norm += wz * half * w * size;
        }
    }
    Ok(WeakFormTerms { flux: flux_part, transport: transport_in_time, initial, psi_norm })
}

struct Face {
    axis: usize,
    left: usize,
    right: usize,
    point: Vec<f64>,
}

fn face_list(u: &GridDensity) -> Vec<Face> {
    let mut out = Vec::new();
    for k in 0..u.num_cells() {
        let idx = u.multi_index(k);
        for axis in 0..u.dim() {
            if idx[axis] + 1 < u.dims[axis] {
                let mut nb = idx.clone();
                nb[axis] += 1;
                let mut point = u.center(k);
                point[axis] += 0.5 * u.spacing[axis];
                out.push(Face { axis, left: k, right: u.linear_index(&nb), point });
            }
        }
    }
    out
}

/// Ratios `-E(eta_N) / HK(eta_N, 0)` for `eta_N = N^{-1} Lebesgue` with
/// `F(s) = s^2 - sqrt(s)`, `V = 0`, and the limit value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeBound {
    pub estimate: f64,
    pub bound: f64,
    pub by_n: Vec<(f64, f64)>,
}

pub fn slope_lower_bound_check(params: &Params, domain: &DomainBox) -> Result<SlopeBound> {
    params.validate()?;
    let family = EnergyFamily::PowerLaw { c1: 1.0, c2: 1.0, p: 2.0, q: 0.5 };
    let spec = EnergySpec::new(family, Potential::Zero, domain)?;
    let vol = domain.volume();
    let dims = vec![4; domain.dim()];
    let mut by_n = Vec::new();
    for e in 1..=6 {
        let n = 10f64.powi(e);
        let eta = GridDensity::from_fn(domain, &dims, |_| 1.0 / n)?;
        let hk = (params.entropy_weight() * vol / n).sqrt();
        by_n.push((n, -energy_of(&eta, &spec) / hk));
    }
    let estimate = by_n.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(SlopeBound { estimate, bound: 0.5 * (params.sigma * vol).sqrt(), by_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Potential;

    fn spec(family: EnergyFamily) -> EnergySpec {
        EnergySpec::new(family, Potential::Zero, &DomainBox::unit_interval()).unwrap()
    }

    #[test]
    fn time_and_space_factors_have_consistent_derivatives() {
        let tf = TimeFactor { coeffs: [1.0, -2.0, 3.0], horizon: 0.7 };
        let h = 1e-6;
        for &t in &[0.0, 0.2, 0.5, 0.69] {
            let fd = (tf.value(t + h) - tf.value(t - h)) / (2.0 * h);
            assert!((fd - tf.derivative(t)).abs() < 1e-6);
        }
        assert_eq!(tf.value(0.8), 0.0);
        let factors = [
            SpaceFactor::Cosine { k: 2.0, lo: 0.0, length: 1.0 },
            SpaceFactor::Bump { center: vec![0.5, 0.4], radius: 0.3 },
        ];
        for sf in &factors {
            let x = vec![0.43, 0.37];
            let g = sf.gradient(&x);
            let mut lap = 0.0;
            for a in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += 1e-4;
                xm[a] -= 1e-4;
                assert!(((sf.value(&xp) - sf.value(&xm)) / 2e-4 - g[a]).abs() < 1e-6);
                lap += (sf.value(&xp) - 2.0 * sf.value(&x) + sf.value(&xm)) / 1e-8;
            }
            assert!((lap - sf.laplacian(&x)).abs() < 1e-4 * (1.0 + lap.abs()), "{sf:?}");
        }
    }

    #[test]
    fn interior_class_is_checked() {
        let d = DomainBox::unit_interval();
        let tf = TimeFactor { coeffs: [1.0, 0.0, 0.0], horizon: 0.1 };
        let near_edge = SpaceFactor::Bump { center: vec![0.1], radius: 0.2 };
        assert!(TestFunctionST::new("x", tf, near_edge, TestClass::Interior, &d, 0.0).is_err());
        assert_eq!(standard_battery(&d, 0.1).unwrap().len(), 6);
    }

    #[test]
    fn slope_bound_examples() {
        let prm = Params::new(1.0, 4.0).unwrap();
        let res = slope_lower_bound_check(&prm, &DomainBox::unit_interval()).unwrap();
        assert_eq!(res.bound, 1.0);
        // (N^{-1/2} - N^{-2}) / (N^{-1/2}) for sigma = 4, |Omega| = 1.
        for &(n, est) in &res.by_n {
            assert!((est - (1.0 - n.powf(-1.5))).abs() < 1e-12);
        }
        assert!(res.by_n.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(res.by_n[0].1 < res.bound);
    }

    #[test]
    fn zero_state_is_fixed() {
        let u0 = GridDensity::from_fn(&DomainBox::unit_interval(), &[32], |_| 0.0).unwrap();
        let prm = Params::new(1.0, 1.0).unwrap();
        let traj = fd_reference_solve(&u0, &spec(EnergyFamily::LogEntropy { c1: 1.0 }), &prm, 0.05, 0.25).unwrap();
        assert!(traj.final_density().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heat_mode_oracle() {
        let d = DomainBox::unit_interval();
        let u0 = GridDensity::from_fn(&d, &[128], |x| 1.0 + 0.1 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        let prm = Params::new(1.0, 1e-12).unwrap();
        let traj = fd_reference_solve(&u0, &spec(EnergyFamily::LogEntropy { c1: 1.0 }), &prm, 0.1, 0.25).unwrap();
        let decay = (-std::f64::consts::PI.powi(2) * 0.1).exp();
        let end = traj.final_density();
        let err = (0..128)
            .map(|k| (end.values[k] - 1.0 - 0.1 * decay * (std::f64::consts::PI * end.center(k)[0]).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "L-inf error {err}");
    }

    #[test]
    fn uniform_state_follows_the_reaction_ode() {
        let d = DomainBox::unit_interval();
        let family = EnergyFamily::LogEntropy { c1: 1.0 };
        let sp = EnergySpec::new(family, Potential::Affine { a: vec![0.0], b: 0.3 }, &d).unwrap();
        let prm = Params::new(1e-12, 2.0).unwrap();
        let u0 = GridDensity::from_fn(&d, &[32], |_| 0.7).unwrap();
        let traj = fd_reference_solve(&u0, &sp, &prm, 0.2, 0.25).unwrap();
        // Classical RK4 on u' = -sigma (ln u + 1 + 0.3) u with a fine step.
        let rate = |u: f64| -2.0 * (u.ln() + 1.3) * u;
        let (mut u, steps) = (0.7f64, 20_000);
        let h = 0.2 / steps as f64;
        for _ in 0..steps {
            let k1 = rate(u);
            let k2 = rate(u + 0.5 * h * k1);
            let k3 = rate(u + 0.5 * h * k2);
            let k4 = rate(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        for v in &traj.final_density().values {
            assert!((v - u).abs() <= 1e-6, "{v} vs {u}");
        }
    }

    #[test]
    fn mass_balance_and_energy_decay() {
        let d = DomainBox::unit_interval();
        let family = EnergyFamily::PowerLaw { c1: 0.5, c2: 1.0, p: 2.0, q: 0.5 };
        let sp = EnergySpec::new(family, Potential::Affine { a: vec![1.0], b: 0.0 }, &d).unwrap();
        let prm = Params::new(1.0, 1.0).unwrap();
        let u0 = GridDensity::from_fn(&d, &[48], |x| 1.0 + 0.5 * (3.0 * x[0]).sin()).unwrap();
        let traj = fd_reference_solve(&u0, &sp, &prm, 0.05, 0.25).unwrap();
        let w = u0.cell_volume();
        let source = |u: &GridDensity| -> f64 {
            (0..u.num_cells()).map(|k| w * prm.sigma * (family.l_hat_f(u.values[k]) + u.center(k)[0] * u.values[k])).sum()
        };
        for k in 1..traj.times.len() {
            let dt = traj.times[k] - traj.times[k - 1];
            let (a, b) = (&traj.densities[k - 1], &traj.densities[k]);
            let predicted = -0.5 * dt * (source(a) + source(b));
            let actual = b.total_mass() - a.total_mass();
            assert!((actual - predicted).abs() <= 10.0 * dt * dt * (1.0 + source(a).abs()), "step {k}");
            assert!(traj.records[k].energy <= traj.records[k - 1].energy + 1e-10);
        }
    }

    #[test]
    fn zero_test_function_has_zero_residual() {
        let d = DomainBox::unit_interval();
        let sp = spec(EnergyFamily::LogEntropy { c1: 1.0 });
        let prm = Params::new(1.0, 1.0).unwrap();
        let u0 = GridDensity::from_fn(&d, &[16], |x| 1.0 + x[0]).unwrap();
        let traj = fd_reference_solve(&u0, &sp, &prm, 0.05, 0.25).unwrap();
        let tf = TimeFactor { coeffs: [0.0; 3], horizon: 0.05 };
        let psi = TestFunctionST::new("zero", tf, SpaceFactor::Constant { value: 1.0 }, TestClass::Full, &d, 0.0).unwrap();
        assert_eq!(weak_form_residual(&traj, &psi, &sp, &prm, &u0).unwrap(), 0.0);
    }

    #[test]
    fn reference_solution_nearly_satisfies_weak_form() {
        let d = DomainBox::unit_interval();
        let sp = EnergySpec::new(EnergyFamily::LogEntropy { c1: 1.0 }, Potential::Affine { a: vec![1.0], b: 0.0 }, &d).unwrap();
        let prm = Params::new(1.0, 1.0).unwrap();
        let u0 = GridDensity::from_fn(&d, &[64], |x| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        let traj = fd_reference_solve(&u0, &sp, &prm, 0.1, 0.25).unwrap();
        for psi in standard_battery(&d, 0.1).unwrap() {
            let r = weak_form_residual(&traj, &psi, &sp, &prm, &u0).unwrap();
            assert!(r < 1e-4, "{} {r}", psi.id);
        }
    }

    #[test]
    fn residual_is_linear_in_psi_scale() {
        let d = DomainBox::unit_interval();
        let sp = spec(EnergyFamily::LogEntropy { c1: 1.0 });
        let prm = Params::new(1.0, 1.0).unwrap();
        let u0 = GridDensity::from_fn(&d, &[16], |x| 1.0 + x[0]).unwrap();
        let traj = fd_reference_solve(&u0, &sp, &prm, 0.05, 1.0).unwrap();
        let mk = |c: f64| {
            TestFunctionST::new("s", TimeFactor { coeffs: [c, 0.0, 0.0], horizon: 0.04 }, SpaceFactor::Cosine { k: 1.0, lo: 0.0, length: 1.0 }, TestClass::Full, &d, 0.0)
                .unwrap()
        };
        let r1 = weak_form_residual(&traj, &mk(1.0), &sp, &prm, &u0).unwrap();
        let r3 = weak_form_residual(&traj, &mk(-3.0), &sp, &prm, &u0).unwrap();
        assert!((r3 - 3.0 * r1).abs() <= 1e-12 * (1.0 + r3));
    }
}
