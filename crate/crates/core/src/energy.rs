//! Internal energies `F`, potentials `V` and the total energy
//! `E(u) = int F(u) dx + int V u dx` on grid densities.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DomainBox, GridDensity, Params, PerturbationField};

/// Strictly convex, superlinear internal energy density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnergyFamily {
    /// `c1 s log s`.
    LogEntropy { c1: f64 },
    /// `-c1 s^q + c2 s^p`.
    PowerLaw { c1: f64, c2: f64, p: f64, q: f64 },
}

impl EnergyFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EnergyFamily::LogEntropy { c1 } => c1 > 0.0 && c1.is_finite(),
            EnergyFamily::PowerLaw { c1, c2, p, q } => {
                c1 >= 0.0 && c2 > 0.0 && p > 1.0 && q > 0.0 && q < 1.0 && [c1, c2, p].iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("energy family out of range: {self:?}")))
        }
    }

    pub fn f(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match *self {
            EnergyFamily::LogEntropy { c1 } => c1 * s * s.ln(),
            EnergyFamily::PowerLaw { c1, c2, p, q } => -c1 * s.powf(q) + c2 * s.powf(p),
        }
    }

    /// `F'(s)` for `s > 0`.
    pub fn f_prime(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::DerivativeAtZero(s));
        }
        Ok(self.f_prime_pos(s))
    }

    fn f_prime_pos(&self, s: f64) -> f64 {
        match *self {
            EnergyFamily::LogEntropy { c1 } => c1 * (s.ln() + 1.0),
            EnergyFamily::PowerLaw { c1, c2, p, q } => -c1 * q * s.powf(q - 1.0) + c2 * p * s.powf(p - 1.0),
        }
    }

    /// `F''(s)` for `s > 0`.
    pub fn f_second(&self, s: f64) -> f64 {
        match *self {
            EnergyFamily::LogEntropy { c1 } => c1 / s,
            EnergyFamily::PowerLaw { c1, c2, p, q } => {
                c1 * q * (1.0 - q) * s.powf(q - 2.0) + c2 * p * (p - 1.0) * s.powf(p - 2.0)
            }
        }
    }

    /// `s F''(s)`, the diffusivity of the associated nonlinear diffusion.
    pub fn diffusivity(&self, s: f64) -> f64 {
        match *self {
            EnergyFamily::LogEntropy { c1 } => c1,
            EnergyFamily::PowerLaw { c1, c2, p, q } => {
                if s <= 0.0 {
                    if c1 > 0.0 { f64::INFINITY } else { 0.0 }
                } else {
                    c1 * q * (1.0 - q) * s.powf(q - 1.0) + c2 * p * (p - 1.0) * s.powf(p - 1.0)
                }
            }
        }
    }

    /// Pressure `s F'(s) - F(s)`, with value `-F(0) = 0` at zero.
    pub fn l_f(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match *self {
            EnergyFamily::LogEntropy { c1 } => c1 * s,
            EnergyFamily::PowerLaw { c1, c2, p, q } => c1 * (1.0 - q) * s.powf(q) + c2 * (p - 1.0) * s.powf(p),
        }
    }

    /// `s F'(s)`, zero at zero.
    pub fn l_hat_f(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        s * self.f_prime_pos(s)
    }

    /// Infimum of `F'` over `s > 0`.
    pub fn f_prime_floor(&self) -> f64 {
        match *self {
            EnergyFamily::PowerLaw { c1, .. } if c1 == 0.0 => 0.0,
            _ => f64::NEG_INFINITY,
        }
    }

    /// The `s >= 0` minimizing `F(s) - t s`: the inverse of `F'`, or 0 when
    /// `t` is at or below the floor of `F'`.
    pub fn f_prime_inverse(&self, t: f64) -> Result<f64> {
        match *self {
            EnergyFamily::LogEntropy { c1 } => Ok((t / c1 - 1.0).exp()),
            EnergyFamily::PowerLaw { c1, c2, p, .. } if c1 == 0.0 => {
                Ok(if t <= 0.0 { 0.0 } else { (t / (c2 * p)).powf(1.0 / (p - 1.0)) })
            }
            EnergyFamily::PowerLaw { .. } => {
                let h = |x: f64| {
                    let s = x.exp();
                    let fp = self.f_prime_pos(s);
                    (fp - t, s * self.f_second(s), fp.abs() + t.abs())
                };
                monotone_log_root(h, 0.0).ok_or(Error::ProxFailed { g: 0.0, kappa: 0.0, v: -t })
            }
        }
    }

    /// Inverse of the strictly increasing pressure on `[0, inf)`.
    pub fn l_f_inverse(&self, l: f64) -> Result<f64> {
        if !(l >= 0.0) {
            return Err(Error::InvalidParameter(format!("pressure values are nonnegative, got {l}")));
        }
        if l == 0.0 {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while self.l_f(hi) < l {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::InvalidParameter(format!("pressure {l} out of range")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.l_f(mid) < l {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// A constant `C` with `F(s) >= -C s - C` for all `s >= 0`.
    pub fn linear_bound_constant(&self) -> f64 {
        match *self {
            EnergyFamily::LogEntropy { c1 } => c1 / std::f64::consts::E,
            EnergyFamily::PowerLaw { c1, .. } => c1,
        }
    }

    /// Minimizer over `s >= 0` of `kappa (g log(g/s) - g + s) + F(s) + v s`.
    pub fn cell_prox(&self, g: f64, kappa: f64, v: f64) -> Result<f64> {
        let fail = || Error::ProxFailed { g, kappa, v };
        if !(g >= 0.0 && kappa > 0.0 && v.is_finite() && g.is_finite()) {
            return Err(Error::InvalidParameter(format!("cell prox needs g >= 0, kappa > 0, got g = {g}, kappa = {kappa}, v = {v}")));
        }
        if g == 0.0 {
            return self.f_prime_inverse(-kappa - v).map_err(|_| fail());
        }
        // Optimality in x = log s: kappa (1 - g e^{-x}) + F'(e^x) + v = 0, increasing in x.
        let h = |x: f64| {
            let s = x.exp();
            let fp = self.f_prime_pos(s);
            let pin = kappa * g / s;
            (kappa - pin + fp + v, pin + s * self.f_second(s), kappa + pin + fp.abs() + v.abs())
        };
        monotone_log_root(h, g.ln()).ok_or_else(fail)
    }
}

/// Root `e^x` of an increasing function of `x` returning `(value, slope, scale)`;
/// bracketing then safeguarded Newton, at most 100 refinement steps.
fn monotone_log_root(h: impl Fn(f64) -> (f64, f64, f64), x0: f64) -> Option<f64> {
    const X_MIN: f64 = -745.0;
    const X_MAX: f64 = 700.0;
    let x0 = x0.clamp(X_MIN, X_MAX);
    let (v0, _, _) = h(x0);
    if v0 == 0.0 {
        return Some(x0.exp());
    }
    let (mut lo, mut hi);
    let mut step = 1.0;
    if v0 < 0.0 {
        lo = x0;
        hi = x0 + step;
        while h(hi).0 < 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
            if hi >= X_MAX {
                hi = X_MAX;
                if h(hi).0 < 0.0 {
                    return None;
                }
                break;
            }
        }
    } else {
        hi = x0;
        lo = x0 - step;
        while h(lo).0 > 0.0 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            if lo <= X_MIN {
                // The root sits below the smallest positive double: report zero.
                return if h(X_MIN).0 >= 0.0 { Some(0.0) } else { refine(&h, X_MIN, hi) };
            }
        }
    }
    refine(&h, lo, hi)
}

fn refine(h: &impl Fn(f64) -> (f64, f64, f64), mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (v, d, scale) = h(x);
        if !v.is_finite() {
            return None;
        }
        if v.abs() <= 1e-13 * scale || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Some(x.exp());
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - v / d;
        x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    None
}

type PotentialFn = dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync;

/// External potential `V` with its gradient.
#[derive(Clone)]
pub enum Potential {
    Zero,
    /// `a . x + b`.
    Affine { a: Vec<f64>, b: f64 },
    /// Piecewise-linear interpolation of samples on a line (1-D only).
    Sampled(SampledPotential),
    /// Closure returning value and gradient.
    Function(Arc<PotentialFn>),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::Affine { a, b } => write!(f, "Affine {{ a: {a:?}, b: {b} }}"),
            Potential::Sampled(s) => write!(f, "Sampled({} knots)", s.xs.len()),
            Potential::Function(_) => write!(f, "Function"),
        }
    }
}

impl Potential {
    pub fn function(f: impl Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static) -> Self {
        Potential::Function(Arc::new(f))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Affine { a, b } => a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + b,
            Potential::Sampled(s) => s.value(x[0]),
            Potential::Function(f) => f(x).0,
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Potential::Zero => vec![0.0; x.len()],
            Potential::Affine { a, .. } => a.clone(),
            Potential::Sampled(s) => vec![s.slope(x[0])],
            Potential::Function(f) => f(x).1,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Potential::Affine { a, .. } if a.len() != dim => {
                Err(Error::InvalidParameter(format!("affine potential has {} coefficients for dimension {dim}", a.len())))
            }
            Potential::Sampled(_) if dim != 1 => Err(Error::InvalidParameter("sampled potentials are one-dimensional".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledPotential {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl SampledPotential {
    pub fn new(xs: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != vs.len() {
            return Err(Error::InvalidParameter("sampled potential needs at least two (x, V) rows".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || vs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sampled potential abscissae must increase strictly and values be finite".into()));
        }
        Ok(SampledPotential { xs, vs })
    }

    /// Reads a two-column CSV `x,V` with a header row.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for rec in rdr.deserialize() {
            let (x, v): (f64, f64) = rec?;
            xs.push(x);
            vs.push(v);
        }
        Self::new(xs, vs)
    }

    fn segment(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&t| t <= x);
        k.clamp(1, self.xs.len() - 1) - 1
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.vs[0];
        }
        if x >= self.xs[n - 1] {
            return self.vs[n - 1];
        }
        let k = self.segment(x);
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.vs[k] + t * (self.vs[k + 1] - self.vs[k])
    }

    pub fn slope(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let k = self.segment(x);
        (self.vs[k + 1] - self.vs[k]) / (self.xs[k + 1] - self.xs[k])
    }
}

/// Sampled bounds of the potential over the domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialBounds {
    pub inf: f64,
    pub sup_abs: f64,
    pub sup_grad: f64,
    pub lipschitz: f64,
}

#[derive(Clone, Debug)]
pub struct EnergySpec {
    pub family: EnergyFamily,
    pub potential: Potential,
    pub bounds: PotentialBounds,
}

impl EnergySpec {
    /// Validates the family and certifies potential bounds by sampling the domain.
    pub fn new(family: EnergyFamily, potential: Potential, domain: &DomainBox) -> Result<Self> {
        family.validate()?;
        potential.check_dim(domain.dim())?;
        let bounds = sample_bounds(&potential, domain);
        if !(bounds.inf.is_finite() && bounds.sup_abs.is_finite() && bounds.lipschitz.is_finite()) {
            return Err(Error::InvalidParameter("potential is not finite on the domain".into()));
        }
        Ok(EnergySpec { family, potential, bounds })
    }

    pub fn f(&self, s: f64) -> f64 {
        self.family.f(s)
    }

    pub fn f_prime(&self, s: f64) -> Result<f64> {
        self.family.f_prime(s)
    }

    pub fn l_f(&self, s: f64) -> f64 {
        self.family.l_f(s)
    }

    pub fn l_hat_f(&self, s: f64) -> f64 {
        self.family.l_hat_f(s)
    }
}

fn sample_bounds(potential: &Potential, domain: &DomainBox) -> PotentialBounds {
    let d = domain.dim();
    let per_axis = ((1u64 << 16) as f64).powf(1.0 / d as f64).floor().clamp(3.0, 257.0) as usize;
    let dims = vec![per_axis; d];
    let total = per_axis.pow(d as u32);
    let mut out = PotentialBounds { inf: f64::INFINITY, ..Default::default() };
    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    let point = |idx: &[usize]| -> Vec<f64> {
        (0..d).map(|a| domain.lo[a] + (domain.hi[a] - domain.lo[a]) * idx[a] as f64 / (per_axis - 1) as f64).collect()
    };
    for k in 0..total {
        let mut r = k;
        for a in 0..d {
            idx[a] = r % dims[a];
            r /= dims[a];
        }
        let x = point(&idx);
        let v = potential.value(&x);
        let grad = potential.gradient(&x).iter().map(|g| g * g).sum::<f64>().sqrt();
        out.inf = out.inf.min(v);
        out.sup_abs = out.sup_abs.max(v.abs());
        out.sup_grad = out.sup_grad.max(grad);
        values.push(v);
    }
    // Difference quotients along each axis complement the pointwise gradients.
    let mut lip = out.sup_grad;
    let mut stride = 1;
    for a in 0..d {
        let h = (domain.hi[a] - domain.lo[a]) / (per_axis - 1) as f64;
        for k in 0..total {
            if (k / stride) % per_axis + 1 < per_axis {
                lip = lip.max((values[k + stride] - values[k]).abs() / h);
            }
        }
        stride *= per_axis;
    }
    out.lipschitz = lip;
    out
}

/// Serialized energy description: `{"F": {...}, "V": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    #[serde(rename = "F")]
    pub f: EnergyFamily,
    #[serde(rename = "V", default)]
    pub v: PotentialConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    #[default]
    Zero,
    Affine { a: Vec<f64>, b: f64 },
    Sampled { path: PathBuf },
}

impl EnergyConfig {
    /// Builds the spec; relative sample paths resolve against `base_dir`.
    pub fn build(&self, domain: &DomainBox, base_dir: &Path) -> Result<EnergySpec> {
        let potential = match &self.v {
            PotentialConfig::Zero => Potential::Zero,
            PotentialConfig::Affine { a, b } => Potential::Affine { a: a.clone(), b: *b },
            PotentialConfig::Sampled { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                if !full.exists() {
                    return Err(Error::Config(format!("potential samples {} not found", full.display())));
                }
                Potential::Sampled(SampledPotential::from_csv(&full)?)
            }
        };
        EnergySpec::new(self.f, potential, domain)
    }
}

/// Midpoint-rule value of `int F(u) + V u`.
pub fn energy_of(u: &GridDensity, spec: &EnergySpec) -> f64 {
    let w = u.cell_volume();
    let mut total = 0.0;
    for (k, &s) in u.values.iter().enumerate() {
        let v = spec.potential.value(&u.center(k));
        total += spec.family.f(s) + v * s;
    }
    total * w
}

/// Minimizer over `s >= 0` of `kappa (g log(g/s) - g + s) + F(s) + v_x s`.
pub fn jko_cell_prox(g: f64, kappa: f64, v_x: f64, spec: &EnergySpec) -> Result<f64> {
    spec.family.cell_prox(g, kappa, v_x)
}

/// Derivative at `h = 0` of the energy along `h -> (I + h v)_# (1 + h R)^2 u0`:
/// `int [-L_F(u0) div v + 2 L^_F(u0) R + (<grad V, v> + 2 V R) u0] dx`.
pub fn df_directional(u0: &GridDensity, field: &PerturbationField, spec: &EnergySpec) -> Result<f64> {
    if field.dim() != u0.dim() {
        return Err(Error::InvalidMeasure("field and grid dimensions differ".into()));
    }
    let d = u0.dim();
    let steps: Vec<f64> = u0.spacing.iter().map(|h| 1e-3 * h).collect();
    let mut total = 0.0;
    let mut moving_on_boundary = false;
    for (k, &s) in u0.values.iter().enumerate() {
        let x = u0.center(k);
        let v = field.velocity(&x);
        let r = field.rate(&x);
        let jac = field.jacobian(&x, &steps);
        let div: f64 = (0..d).map(|a| jac[a * d + a]).sum();
        let grad_v = spec.potential.gradient(&x);
        let pot = spec.potential.value(&x);
        let transport: f64 = grad_v.iter().zip(&v).map(|(g, v)| g * v).sum();
        if !field.interior_support() && on_boundary_layer(u0, k) && v.iter().any(|c| *c != 0.0) {
            moving_on_boundary = true;
        }
        total += -spec.family.l_f(s) * div + 2.0 * spec.family.l_hat_f(s) * r + (transport + 2.0 * pot * r) * s;
    }
    if moving_on_boundary {
        return Err(Error::InvalidParameter("velocity must vanish near the boundary for the internal-energy derivative".into()));
    }
    Ok(total * u0.cell_volume())
}

fn on_boundary_layer(u: &GridDensity, k: usize) -> bool {
    u.multi_index(k).iter().zip(&u.dims).any(|(&i, &n)| i == 0 || i + 1 == n)
}

/// Constants of the lower bound `E(mu) >= -A - B HK(mu, 0)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConstants {
    pub c_f: f64,
    pub a: f64,
    pub b: f64,
}

/// `A = C_F |Omega|`, `B = (sigma/4)(C_F + max(0, -inf V))`, using
/// `mu(Omega) = (sigma/4) HK(mu, 0)^2`.
pub fn lower_bound_constants(spec: &EnergySpec, params: &Params, domain: &DomainBox) -> LowerBoundConstants {
    let c_f = spec.family.linear_bound_constant();
    let neg_v = (-spec.bounds.inf).max(0.0);
    LowerBoundConstants { c_f, a: c_f * domain.volume(), b: 0.25 * params.sigma * (c_f + neg_v) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    const LOG1: EnergyFamily = EnergyFamily::LogEntropy { c1: 1.0 };
    const SQUARE: EnergyFamily = EnergyFamily::PowerLaw { c1: 0.0, c2: 1.0, p: 2.0, q: 0.5 };
    const MIXED: EnergyFamily = EnergyFamily::PowerLaw { c1: 1.0, c2: 1.0, p: 2.0, q: 0.5 };

    fn spec(family: EnergyFamily, potential: Potential) -> EnergySpec {
        EnergySpec::new(family, potential, &DomainBox::unit_interval()).unwrap()
    }

    /// Minimizer of a convex scalar function by golden section on `[lo, hi]`.
    fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..300 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (f(hi) > 0.0) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn family_values() {
        assert_eq!(LOG1.f(1.0), 0.0);
        assert_eq!(SQUARE.f(3.0), 9.0);
        assert!((EnergyFamily::LogEntropy { c1: 2.0 }.f(E) - 2.0 * E).abs() < 1e-14);
        assert_eq!(LOG1.f(0.0), 0.0);
        assert!(matches!(LOG1.f_prime(0.0), Err(Error::DerivativeAtZero(_))));
    }

    #[test]
    fn pressures() {
        assert!((LOG1.l_f(2.0) - 2.0).abs() < 1e-15);
        assert!((LOG1.l_hat_f(1.0) - 1.0).abs() < 1e-15);
        assert!((SQUARE.l_f(3.0) - 9.0).abs() < 1e-12);
        assert_eq!(MIXED.l_f(0.0), 0.0);
        assert_eq!(MIXED.l_hat_f(0.0), 0.0);
        for fam in [LOG1, SQUARE, MIXED] {
            let grid: Vec<f64> = (1..400).map(|k| 1e-3 * 1.03f64.powi(k)).collect();
            assert!(grid.windows(2).all(|w| fam.l_f(w[1]) > fam.l_f(w[0])));
            for &s in &grid {
                let back = fam.l_f_inverse(fam.l_f(s)).unwrap();
                assert!((back - s).abs() <= 1e-10 * s.max(1.0), "{fam:?} {s} {back}");
            }
        }
    }

    #[test]
    fn superlinear_growth_and_linear_lower_bound() {
        for fam in [LOG1, SQUARE, MIXED, EnergyFamily::LogEntropy { c1: 0.3 }] {
            let ratios: Vec<f64> = (1..=12).map(|k| fam.f(10f64.powi(8 * k)) / 10f64.powi(8 * k)).collect();
            assert!(ratios.windows(2).all(|w| w[1] > w[0]));
            assert!(*ratios.last().unwrap() > 50.0);
            let c = fam.linear_bound_constant();
            for k in 0..2000 {
                let s = k as f64 * 5e-3;
                assert!(fam.f(s) >= -c * s - c - 1e-14);
            }
        }
    }

    #[test]
    fn derivative_inverse_round_trips() {
        for fam in [LOG1, SQUARE, MIXED] {
            for &s in &[1e-6, 0.01, 0.3, 1.0, 7.0] {
                let t = fam.f_prime(s).unwrap();
                let back = fam.f_prime_inverse(t).unwrap();
                assert!((back - s).abs() <= 1e-10 * s, "{fam:?} {s} {back}");
            }
        }
        assert_eq!(SQUARE.f_prime_inverse(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn energy_examples() {
        let d = DomainBox::unit_interval();
        let zero = GridDensity::from_fn(&d, &[50], |_| 0.0).unwrap();
        let one = GridDensity::from_fn(&d, &[50], |_| 1.0).unwrap();
        assert_eq!(energy_of(&zero, &spec(LOG1, Potential::Zero)), 0.0);
        assert_eq!(energy_of(&one, &spec(LOG1, Potential::Zero)), 0.0);
        let lin = spec(LOG1, Potential::Affine { a: vec![1.0], b: 0.0 });
        assert!((energy_of(&one, &lin) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn prox_examples() {
        // g = 0: s minimizes kappa s + s log s, i.e. s = exp(-kappa - 1).
        let s = LOG1.cell_prox(0.0, 1.0, 0.0).unwrap();
        let oracle = golden(|s| s + LOG1.f(s), 0.0, 1.0);
        assert!((s - oracle).abs() < 1e-8);
        // 1 - 1/s + log s + 1 = 0.
        let s = LOG1.cell_prox(1.0, 1.0, 0.0).unwrap();
        let oracle = bisect(|s| 2.0 - 1.0 / s + s.ln(), 1e-3, 10.0);
        assert!((s - oracle).abs() <= 1e-10 * oracle);
        let s = LOG1.cell_prox(0.7, 1e6, 0.0).unwrap();
        assert!((s - 0.7).abs() < 1e-3);
    }

    #[test]
    fn prox_satisfies_first_order_condition() {
        for fam in [LOG1, SQUARE, MIXED] {
            for &(g, kappa, v) in &[(0.3, 2.0, 0.5), (2.0, 0.1, -1.0), (1e-4, 50.0, 3.0), (5.0, 1e3, 0.0)] {
                let s = fam.cell_prox(g, kappa, v).unwrap();
                let foc = kappa * (1.0 - g / s) + fam.f_prime(s).unwrap() + v;
                let scale = kappa * (1.0 + g / s) + fam.f_prime(s).unwrap().abs() + v.abs();
                assert!(foc.abs() <= 1e-12 * scale, "{fam:?} {g} {kappa} {v}: {foc}");
            }
        }
    }

    #[test]
    fn zero_mass_prox_for_power_law() {
        // kappa + F'(s) + v > 0 for all s: the minimizer is s = 0.
        assert_eq!(SQUARE.cell_prox(0.0, 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn sampled_potential_interpolates() {
        let p = SampledPotential::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.value(0.25), 0.5);
        assert_eq!(p.slope(0.25), 2.0);
        assert_eq!(p.slope(0.75), -2.0);
        assert_eq!(p.value(2.0), 0.0);
        assert!(SampledPotential::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn potential_bounds_are_sampled() {
        let s = spec(LOG1, Potential::Affine { a: vec![2.0], b: -1.0 });
        assert_eq!(s.bounds.inf, -1.0);
        assert_eq!(s.bounds.sup_abs, 1.0);
        assert!((s.bounds.lipschitz - 2.0).abs() < 1e-12);
    }

    #[test]
    fn directional_derivative_trivial_cases() {
        let d = DomainBox::unit_interval();
        let u = GridDensity::from_fn(&d, &[200], |x| 1.0 + 0.5 * x[0]).unwrap();
        let s = spec(LOG1, Potential::Zero);
        assert_eq!(df_directional(&u, &PerturbationField::zero(1), &s).unwrap(), 0.0);
        // u = 1: -int div v = 0 for interior v, leaving 2 int R.
        let one = GridDensity::from_fn(&d, &[200], |_| 1.0).unwrap();
        let bump = |x: f64| if x > 0.2 && x < 0.8 { ((x - 0.2) * (0.8 - x)).powi(3) } else { 0.0 };
        let field = PerturbationField::new(1, move |x, out| out[0] = bump(x[0]), |x| x[0]).with_interior_margin(0.2);
        let val = df_directional(&one, &field, &s).unwrap();
        assert!((val - 1.0).abs() < 1e-10, "{val}");
    }

    #[test]
    fn lower_bound_constants_examples() {
        let prm = Params::new(1.0, 4.0).unwrap();
        let s = spec(LOG1, Potential::Affine { a: vec![-1.0], b: 0.0 });
        let c = lower_bound_constants(&s, &prm, &DomainBox::unit_interval());
        assert!((c.a - 1.0 / E).abs() < 1e-15);
        assert!((c.b - (1.0 / E + 1.0)).abs() < 1e-15);
    }
}
