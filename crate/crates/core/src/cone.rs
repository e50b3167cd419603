//! The metric cone over the base space: distance, constant-speed geodesics
//! built by linear interpolation in the complex plane, and the map `S`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::Params;

/// Radii below this are identified with the vertex.
pub const VERTEX_RADIUS: f64 = 1e-15;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConePoint {
    pub x: Vec<f64>,
    pub r: f64,
}

impl ConePoint {
    pub fn new(x: Vec<f64>, r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("cone radius must be nonnegative, got {r}")));
        }
        Ok(ConePoint { x, r })
    }

    pub fn vertex(dim: usize) -> Self {
        ConePoint { x: vec![0.0; dim], r: 0.0 }
    }

    pub fn is_vertex(&self) -> bool {
        self.r < VERTEX_RADIUS
    }
}

impl PartialEq for ConePoint {
    fn eq(&self, other: &Self) -> bool {
        match (self.is_vertex(), other.is_vertex()) {
            (true, true) => true,
            (false, false) => self.r == other.r && self.x == other.x,
            _ => false,
        }
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `sin(z) / z` with a series near zero.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// Cone distance `sqrt((4/sigma)(r1^2 + r2^2 - 2 r1 r2 cos(min(angle, pi))))`.
pub fn cone_distance(p: &ConePoint, q: &ConePoint, params: &Params) -> f64 {
    let angle = (params.angle_scale() * euclid(&p.x, &q.x)).min(std::f64::consts::PI);
    let sq = p.r * p.r + q.r * q.r - 2.0 * p.r * q.r * angle.cos();
    (params.entropy_weight() * sq.max(0.0)).sqrt()
}

/// Transport cost `-(8/sigma) log cos(angle_scale * d)`, infinite past the cutoff.
pub fn transport_cost(d: f64, params: &Params) -> f64 {
    if d >= params.cutoff() {
        return f64::INFINITY;
    }
    let c = (params.angle_scale() * d).cos();
    if c <= 0.0 {
        return f64::INFINITY;
    }
    -(8.0 / params.sigma) * c.ln()
}

/// `sin(angle_scale |x2 - x1|) / |x2 - x1| * (x2 - x1)`, zero on the diagonal.
pub fn s_map(x1: &[f64], x2: &[f64], params: &Params) -> Vec<f64> {
    let d = euclid(x1, x2);
    if d == 0.0 {
        return vec![0.0; x1.len()];
    }
    let k = params.angle_scale();
    let factor = k * sinc(k * d);
    x1.iter().zip(x2).map(|(a, b)| factor * (b - a)).collect()
}

#[derive(Clone, Debug)]
pub struct ConeGeodesic {
    pub p: ConePoint,
    pub q: ConePoint,
    pub params: Params,
    z1: Complex64,
    z2: Complex64,
    angle: f64,
    degenerate: bool,
}

/// Geodesic from `p` to `q`; requires the base angle to be at most pi.
pub fn geodesic(p: &ConePoint, q: &ConePoint, params: &Params) -> Result<ConeGeodesic> {
    let angle = params.angle_scale() * euclid(&p.x, &q.x);
    if angle > std::f64::consts::PI * (1.0 + 1e-12) && !p.is_vertex() && !q.is_vertex() {
        return Err(Error::Geodesic(format!("base angle {angle} exceeds pi")));
    }
    let scale = 2.0 / params.sigma.sqrt();
    let degenerate = angle == 0.0 || p.is_vertex() || q.is_vertex();
    Ok(ConeGeodesic {
        p: p.clone(),
        q: q.clone(),
        params: *params,
        z1: Complex64::new(scale * p.r, 0.0),
        z2: Complex64::from_polar(scale * q.r, angle),
        angle,
        degenerate,
    })
}

impl ConeGeodesic {
    /// Radial coordinate along the path.
    pub fn radius(&self, t: f64) -> f64 {
        if self.degenerate {
            return self.p.r + t * (self.q.r - self.p.r);
        }
        0.5 * self.params.sigma.sqrt() * (self.z1 + (self.z2 - self.z1) * t).norm()
    }

    /// Fraction of the base segment travelled.
    pub fn theta(&self, t: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let z = self.z1 + (self.z2 - self.z1) * t;
        z.im.atan2(z.re) / self.angle
    }

    pub fn eval(&self, t: f64) -> ConePoint {
        if t == 0.0 {
            return self.p.clone();
        }
        if t == 1.0 {
            return self.q.clone();
        }
        let r = self.radius(t);
        let x = if self.degenerate {
            if self.p.is_vertex() { self.q.x.clone() } else { self.p.x.clone() }
        } else {
            let th = self.theta(t);
            self.p.x.iter().zip(&self.q.x).map(|(a, b)| a + th * (b - a)).collect()
        };
        ConePoint { x, r }
    }

    pub fn length(&self) -> f64 {
        cone_distance(&self.p, &self.q, &self.params)
    }
}

/// Right derivatives at `t = 0` of the angle fraction and the radius.
pub fn geodesic_right_derivatives(p: &ConePoint, q: &ConePoint, params: &Params) -> Result<(f64, f64)> {
    let d = euclid(&p.x, &q.x);
    if d == 0.0 || q.is_vertex() {
        return Ok((0.0, q.r - p.r));
    }
    if p.is_vertex() {
        return Err(Error::UndefinedDerivative);
    }
    let angle = params.angle_scale() * d;
    if angle > std::f64::consts::PI * (1.0 + 1e-12) {
        return Err(Error::Geodesic(format!("base angle {angle} exceeds pi")));
    }
    Ok((q.r / p.r * sinc(angle), q.r * angle.cos() - p.r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pt(x: f64, r: f64) -> ConePoint {
        ConePoint::new(vec![x], r).unwrap()
    }

    #[test]
    fn distance_examples() {
        let prm = Params::new(1.0, 4.0).unwrap();
        assert_eq!(cone_distance(&pt(0.3, 2.0), &pt(0.3, 2.0), &prm), 0.0);
        assert!((cone_distance(&pt(0.3, 1.0), &ConePoint::vertex(1), &prm) - 1.0).abs() < 1e-15);
        assert!((cone_distance(&pt(0.0, 1.0), &pt(4.0, 1.0), &prm) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cost_examples() {
        let prm = Params::new(1.0, 1.0).unwrap();
        assert_eq!(transport_cost(0.0, &prm), 0.0);
        assert!((transport_cost(2.0 * PI / 3.0, &prm) - 8.0 * 2f64.ln()).abs() < 1e-12);
        assert!(transport_cost(PI, &prm).is_infinite());
    }

    #[test]
    fn s_map_examples() {
        let prm = Params::new(1.0, 4.0).unwrap();
        assert_eq!(s_map(&[0.2, 0.1], &[0.2, 0.1], &prm), vec![0.0, 0.0]);
        let s = s_map(&[0.0, 0.0], &[FRAC_PI_2, 0.0], &prm);
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] == 0.0);
        // Small separation: S is angle_scale times the displacement to first order.
        let s = s_map(&[0.5], &[0.5 + 1e-7], &prm);
        assert!((s[0] / ((0.5 + 1e-7) - 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geodesic_examples() {
        let prm = Params::new(1.0, 4.0).unwrap();
        let g = geodesic(&pt(0.4, 1.0), &pt(0.4, 3.0), &prm).unwrap();
        let m = g.eval(0.5);
        assert_eq!(m.x, vec![0.4]);
        assert!((m.r - 2.0).abs() < 1e-15);

        let g = geodesic(&pt(0.0, 1.0), &pt(FRAC_PI_2, 1.0), &prm).unwrap();
        assert_eq!(g.eval(0.0), pt(0.0, 1.0));
        assert_eq!(g.eval(1.0), pt(FRAC_PI_2, 1.0));
        // z(1/2) = (1 + i) / 2 computed independently.
        let z = (Complex64::new(1.0, 0.0) + Complex64::new(0.0, 1.0)) * 0.5;
        assert!((g.radius(0.5) - z.norm()).abs() < 1e-15);
        assert!((g.theta(0.5) - 0.5).abs() < 1e-15);

        assert!(geodesic(&pt(0.0, 1.0), &pt(3.5, 1.0), &prm).is_err());
    }

    #[test]
    fn vertex_geodesic_sits_over_the_massive_endpoint() {
        let prm = Params::new(1.0, 1.0).unwrap();
        let g = geodesic(&ConePoint::vertex(1), &pt(0.7, 2.0), &prm).unwrap();
        let m = g.eval(0.25);
        assert_eq!(m.x, vec![0.7]);
        assert!((m.r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn right_derivative_examples() {
        let prm = Params::new(1.0, 4.0).unwrap();
        let (th, r) = geodesic_right_derivatives(&pt(0.2, 1.0), &pt(0.2, 3.0), &prm).unwrap();
        assert_eq!(th, 0.0);
        assert_eq!(r, 2.0);
        let (th, r) = geodesic_right_derivatives(&pt(0.0, 1.0), &pt(FRAC_PI_2, 1.0), &prm).unwrap();
        assert!((th - 2.0 / PI).abs() < 1e-15);
        assert!((r + 1.0).abs() < 1e-15);
        assert!(matches!(
            geodesic_right_derivatives(&ConePoint::vertex(1), &pt(0.5, 1.0), &prm),
            Err(Error::UndefinedDerivative)
        ));
    }

    #[test]
    fn sinc_series_is_continuous() {
        let z = 0.99999e-4f64;
        assert!((sinc(z) - z.sin() / z).abs() < 1e-15);
    }
}
