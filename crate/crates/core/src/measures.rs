//! Finite nonnegative measures as weighted point clouds and cell-centered
//! grid densities, plus the perturbation `nu_h = (I + h v)_# (1 + h R)^2 nu_0`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transport weight `lambda` and reaction weight `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub lambda: f64,
    pub sigma: f64,
}

impl Params {
    pub fn new(lambda: f64, sigma: f64) -> Result<Self> {
        let p = Params { lambda, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.angle_scale().is_finite() {
            return Err(Error::InvalidParameter("sqrt(sigma / (4 lambda)) is not finite".into()));
        }
        Ok(())
    }

    /// Factor turning base distances into cone angles: `sqrt(sigma / (4 lambda))`.
    pub fn angle_scale(&self) -> f64 {
        (self.sigma / (4.0 * self.lambda)).sqrt()
    }

    /// Distance beyond which transport is forbidden: `pi sqrt(lambda / sigma)`.
    pub fn cutoff(&self) -> f64 {
        PI * (self.lambda / self.sigma).sqrt()
    }

    /// Weight `4 / sigma` of the marginal entropies.
    pub fn entropy_weight(&self) -> f64 {
        4.0 / self.sigma
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidParameter("domain bounds must have equal, nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidParameter("domain requires finite lo < hi on every axis".into()));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn unit_interval() -> Self {
        DomainBox { lo: vec![0.0], hi: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&a, &b))| xi >= a - SLACK && xi <= b + SLACK)
    }

    /// Distance from `x` to the boundary (negative outside).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&xi, (&a, &b))| (xi - a).min(b - xi))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Weighted point cloud in `R^d`; points are stored flat, `dim` coordinates each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not match {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidMeasure(format!("weights must be finite and nonnegative, got {w}")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("point coordinates must be finite".into()));
        }
        Ok(DiscreteMeasure { dim, points, weights })
    }

    pub fn from_points(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map_or(1, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("points have mixed dimensions".into()));
        }
        Self::new(dim, points.concat(), weights)
    }

    /// The null measure.
    pub fn empty(dim: usize) -> Self {
        DiscreteMeasure { dim: dim.max(1), points: Vec::new(), weights: Vec::new() }
    }

    pub fn dirac(x: &[f64], mass: f64) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), vec![mass])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(self.dim, self.points.clone(), self.weights.iter().map(|w| a * w).collect())
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.points.clone(), weights)
    }

    /// Union of supports with weights added (no merging of coincident points).
    pub fn concat(&self, other: &DiscreteMeasure) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::InvalidMeasure("dimension mismatch".into()));
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::new(self.dim, points, weights)
    }

    pub fn check_in(&self, domain: &DomainBox) -> Result<()> {
        if domain.dim() != self.dim {
            return Err(Error::InvalidMeasure("measure and domain dimensions differ".into()));
        }
        for i in 0..self.len() {
            if !domain.contains(self.point(i)) {
                return Err(Error::InvalidMeasure(format!("point {:?} lies outside the domain", self.point(i))));
            }
        }
        Ok(())
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| f(self.point(i)) * self.weights[i]).sum()
    }
}

/// Sum of weights.
pub fn total_mass(m: &DiscreteMeasure) -> f64 {
    m.total_mass()
}

/// Cell-centered density on a regular grid. Cell `k` has multi-index with the
/// first axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let g = GridDensity { origin, spacing, dims, values };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.origin.len();
        if d == 0 || self.spacing.len() != d || self.dims.len() != d {
            return Err(Error::InvalidMeasure("grid origin, spacing and dims must share a positive length".into()));
        }
        if self.spacing.iter().any(|h| !(*h > 0.0 && h.is_finite())) || self.dims.contains(&0) {
            return Err(Error::InvalidMeasure("grid spacing must be positive and dims nonzero".into()));
        }
        if self.values.len() != self.dims.iter().product::<usize>() {
            return Err(Error::InvalidMeasure("value count does not match grid dims".into()));
        }
        if let Some(u) = self.values.iter().find(|u| !(**u >= 0.0 && u.is_finite())) {
            return Err(Error::InvalidMeasure(format!("densities must be finite and nonnegative, got {u}")));
        }
        Ok(())
    }

    /// Grid of `dims` cells covering `domain`, with values sampled at centers.
    pub fn from_fn(domain: &DomainBox, dims: &[usize], f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if dims.len() != domain.dim() {
            return Err(Error::InvalidMeasure("grid dims must match the domain dimension".into()));
        }
        let spacing: Vec<f64> = (0..dims.len()).map(|k| (domain.hi[k] - domain.lo[k]) / dims[k] as f64).collect();
        let mut g = GridDensity {
            origin: domain.lo.clone(),
            spacing,
            dims: dims.to_vec(),
            values: vec![0.0; dims.iter().product()],
        };
        for k in 0..g.values.len() {
            g.values[k] = f(&g.center(k));
        }
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn num_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn domain(&self) -> DomainBox {
        DomainBox {
            lo: self.origin.clone(),
            hi: (0..self.dim()).map(|k| self.origin[k] + self.spacing[k] * self.dims[k] as f64).collect(),
        }
    }

    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for &n in &self.dims {
            idx.push(k % n);
            k /= n;
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut k = 0;
        for a in (0..self.dim()).rev() {
            k = k * self.dims[a] + idx[a];
        }
        k
    }

    pub fn center(&self, k: usize) -> Vec<f64> {
        self.multi_index(k)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.origin[a] + (i as f64 + 0.5) * self.spacing[a])
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_cells()).flat_map(|k| self.center(k)).collect()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.origin.clone(), self.spacing.clone(), self.dims.clone(), values)
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.origin == other.origin && self.spacing == other.spacing && self.dims == other.dims
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Point masses `u * cell_volume` at cell centers.
    pub fn to_measure(&self) -> DiscreteMeasure {
        let vol = self.cell_volume();
        DiscreteMeasure {
            dim: self.dim(),
            points: self.centers(),
            weights: self.values.iter().map(|u| u * vol).collect(),
        }
    }

    /// `sum |u - w| dx`.
    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.cell_volume()
    }

    /// Tensor-product cubic convolution (Keys, a = -1/2) with edge clamping.
    /// Reproduces quadratics in the interior and cell values at centers.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = vec![0isize; d];
        let mut wts = vec![[0.0f64; 4]; d];
        for a in 0..d {
            let xi = (x[a] - self.origin[a]) / self.spacing[a] - 0.5;
            let i0 = xi.floor();
            let t = xi - i0;
            base[a] = i0 as isize - 1;
            wts[a] = keys_weights(t);
        }
        let mut total = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..4usize.pow(d as u32) {
            let mut c = corner;
            let mut w = 1.0;
            for a in 0..d {
                let o = c % 4;
                c /= 4;
                w *= wts[a][o];
                let i = (base[a] + o as isize).clamp(0, self.dims[a] as isize - 1);
                idx[a] = i as usize;
            }
            if w != 0.0 {
                total += w * self.values[self.linear_index(&idx)];
            }
        }
        total
    }

    /// Cloud-in-cell deposit of `m` onto this grid layout; mass is conserved
    /// for points inside the domain.
    pub fn deposit(&self, m: &DiscreteMeasure) -> Result<GridDensity> {
        if m.dim() != self.dim() {
            return Err(Error::InvalidMeasure("deposit dimension mismatch".into()));
        }
        let d = self.dim();
        let vol = self.cell_volume();
        let mut values = vec![0.0; self.num_cells()];
        let mut idx = vec![0usize; d];
        for j in 0..m.len() {
            let x = m.point(j);
            let mut base = vec![0isize; d];
            let mut frac = vec![0.0; d];
            for a in 0..d {
                let xi = (x[a] - self.origin[a]) / self.spacing[a] - 0.5;
                let i0 = xi.floor();
                base[a] = i0 as isize;
                frac[a] = xi - i0;
            }
            for corner in 0..(1usize << d) {
                let mut w = m.weight(j) / vol;
                for a in 0..d {
                    let hi = (corner >> a) & 1 == 1;
                    w *= if hi { frac[a] } else { 1.0 - frac[a] };
                    let i = (base[a] + hi as isize).clamp(0, self.dims[a] as isize - 1);
                    idx[a] = i as usize;
                }
                values[self.linear_index(&idx)] += w;
            }
        }
        self.with_values(values)
    }
}

fn keys_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

type VelocityFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type RateFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Direction `(v, R)`: a bounded velocity field and a bounded growth rate.
#[derive(Clone)]
pub struct PerturbationField {
    dim: usize,
    v: Arc<VelocityFn>,
    r: Arc<RateFn>,
    interior_margin: Option<f64>,
}

impl fmt::Debug for PerturbationField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationField")
            .field("dim", &self.dim)
            .field("interior_margin", &self.interior_margin)
            .finish_non_exhaustive()
    }
}

impl PerturbationField {
    pub fn new(
        dim: usize,
        v: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        r: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PerturbationField { dim, v: Arc::new(v), r: Arc::new(r), interior_margin: None }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_, out| out.fill(0.0), |_| 0.0)
    }

    /// Pure growth with rate `r(x)`.
    pub fn rate_only(dim: usize, r: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(dim, |_, out| out.fill(0.0), r)
    }

    /// Declares that `v` vanishes within `margin` of the boundary.
    pub fn with_interior_margin(mut self, margin: f64) -> Self {
        self.interior_margin = Some(margin);
        self
    }

    pub fn interior_support(&self) -> bool {
        self.interior_margin.is_some()
    }

    pub fn interior_margin(&self) -> Option<f64> {
        self.interior_margin
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn velocity_into(&self, x: &[f64], out: &mut [f64]) {
        (self.v)(x, out)
    }

    pub fn velocity(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.v)(x, &mut out);
        out
    }

    pub fn rate(&self, x: &[f64]) -> f64 {
        (self.r)(x)
    }

    /// `(a v1 + b v2, a R1 + b R2)`; the interior flag survives if both have it.
    pub fn combine(a: f64, f1: &PerturbationField, b: f64, f2: &PerturbationField) -> Self {
        let (v1, v2, r1, r2) = (f1.v.clone(), f2.v.clone(), f1.r.clone(), f2.r.clone());
        let dim = f1.dim;
        let margin = match (f1.interior_margin, f2.interior_margin) {
            (Some(m1), Some(m2)) => Some(m1.min(m2)),
            _ => None,
        };
        PerturbationField {
            dim,
            v: Arc::new(move |x, out| {
                let mut tmp = vec![0.0; out.len()];
                v1(x, out);
                v2(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o = a * *o + b * t;
                }
            }),
            r: Arc::new(move |x| a * r1(x) + b * r2(x)),
            interior_margin: margin,
        }
    }

    /// Jacobian `Dv(x)` by central differences with step `steps[k]` on axis `k`,
    /// row-major `[i][k] = d v_i / d x_k`.
    pub fn jacobian(&self, x: &[f64], steps: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut jac = vec![0.0; d * d];
        let mut xp = x.to_vec();
        let mut vp = vec![0.0; d];
        let mut vm = vec![0.0; d];
        for k in 0..d {
            xp[k] = x[k] + steps[k];
            (self.v)(&xp, &mut vp);
            xp[k] = x[k] - steps[k];
            (self.v)(&xp, &mut vm);
            xp[k] = x[k];
            for i in 0..d {
                jac[i * d + k] = (vp[i] - vm[i]) / (2.0 * steps[k]);
            }
        }
        jac
    }
}

/// `(I + h v)_# (1 + h R)^2 nu0`, rejecting `h` outside the admissible set.
pub fn perturb(nu0: &DiscreteMeasure, field: &PerturbationField, h: f64, domain: &DomainBox) -> Result<DiscreteMeasure> {
    if field.dim() != nu0.dim() {
        return Err(Error::InvalidMeasure("field and measure dimensions differ".into()));
    }
    let d = nu0.dim();
    let mut points = Vec::with_capacity(nu0.points_flat().len());
    let mut weights = Vec::with_capacity(nu0.len());
    let mut v = vec![0.0; d];
    for j in 0..nu0.len() {
        let x = nu0.point(j);
        let growth = 1.0 + h * field.rate(x);
        if !(growth > 0.0) {
            return Err(Error::InadmissibleStep { h, reason: format!("1 + hR = {growth} at {x:?}") });
        }
        field.velocity_into(x, &mut v);
        let y: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + h * vi).collect();
        if !domain.contains(&y) {
            return Err(Error::InadmissibleStep { h, reason: format!("point {x:?} is pushed to {y:?}, outside the domain") });
        }
        points.extend_from_slice(&y);
        weights.push(growth * growth * nu0.weight(j));
    }
    DiscreteMeasure::new(d, points, weights)
}

/// Density `u_h` with `det(I + h Dv(x)) u_h(x + h v(x)) = (1 + h R(x))^2 u0(x)`,
/// evaluated at each cell center `y` through the preimage `x = y - h v(x)`.
pub fn density_after_pushforward(u0: &GridDensity, field: &PerturbationField, h: f64) -> Result<GridDensity> {
    if field.dim() != u0.dim() {
        return Err(Error::InvalidMeasure("field and grid dimensions differ".into()));
    }
    if h == 0.0 {
        return Ok(u0.clone());
    }
    let d = u0.dim();
    let mut values = vec![0.0; u0.num_cells()];
    let mut v = vec![0.0; d];
    for (k, out) in values.iter_mut().enumerate() {
        let y = u0.center(k);
        let x = preimage(field, &y, h, &mut v).ok_or_else(|| Error::InadmissibleStep {
            h,
            reason: format!("x + h v(x) = {y:?} has no convergent preimage"),
        })?;
        let mut jac = field.jacobian(&x, &u0.spacing);
        for i in 0..d {
            for a in 0..d {
                jac[i * d + a] *= h;
            }
            jac[i * d + i] += 1.0;
        }
        let det = determinant(&mut jac, d);
        if !(det > 0.0) {
            return Err(Error::SingularJacobian { cell: k, det });
        }
        let growth = 1.0 + h * field.rate(&x);
        *out = (growth * growth * u0.interpolate(&x).max(0.0)) / det;
    }
    u0.with_values(values)
}

fn preimage(field: &PerturbationField, y: &[f64], h: f64, v: &mut [f64]) -> Option<Vec<f64>> {
    let mut x = y.to_vec();
    for _ in 0..200 {
        field.velocity_into(&x, v);
        let mut change: f64 = 0.0;
        for a in 0..x.len() {
            let next = y[a] - h * v[a];
            change = change.max((next - x[a]).abs());
            x[a] = next;
        }
        if change <= 1e-15 * (1.0 + y.iter().map(|c| c.abs()).fold(0.0, f64::max)) {
            return Some(x);
        }
    }
    None
}

/// Determinant by Gaussian elimination with partial pivoting (destroys `a`).
pub(crate) fn determinant(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap_or(c);
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            det = -det;
        }
        let piv = a[c * n + c];
        det *= piv;
        for r in c + 1..n {
            let f = a[r * n + c] / piv;
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
        }
    }
    det
}
