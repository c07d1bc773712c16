//! Geometry kernel for the Poincaré upper half-space model of H^d.
//!
//! Points are `(x, z)` with `x` the horizontal Euclidean coordinates and
//! `z > 0` the height. Geodesics are vertical segments or circular arcs
//! centered on `z = 0`; vertical Euclidean hyperplanes are hyperbolic
//! hyperplanes, horizontal ones are horospheres. Everything here is a pure
//! function on immutable values.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Tolerance for incidence decisions (point on plane, equal coordinates).
pub const INCIDENCE_TOL: f64 = 1e-12;
/// Tolerance for metric assertions (distances, round trips).
pub const METRIC_TOL: f64 = 1e-9;

/// A point of H^d in half-space coordinates. `x` has d-1 entries; `z > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub x: Vec<f64>,
    pub z: f64,
}

impl HPoint {
    pub fn new(x: Vec<f64>, z: f64) -> Result<Self> {
        let p = HPoint { x, z };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.z.is_finite() || self.z <= 0.0 {
            return Err(Error::Domain(format!("height must be finite and > 0, got {}", self.z)));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite horizontal coordinate".into()));
        }
        Ok(())
    }

    /// Ambient dimension d (horizontal coordinates plus height).
    pub fn dim(&self) -> usize {
        self.x.len() + 1
    }

    pub fn approx_eq(&self, other: &HPoint, tol: f64) -> bool {
        self.x.len() == other.x.len()
            && (self.z - other.z).abs() <= tol
            && self.x.iter().zip(&other.x).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// The vertical hyperplane `x_i = c`, a geodesic hyperplane of H^d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalHyperplane {
    pub axis: usize,
    pub offset: f64,
}

/// The horosphere `z = c` with `c > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horosphere {
    pub height: f64,
}

/// Geodesic segment between two distinct points.
#[derive(Debug, Clone)]
pub struct Geodesic {
    pub p: HPoint,
    pub q: HPoint,
    pub kind: GeodesicKind,
}

#[derive(Debug, Clone)]
pub enum GeodesicKind {
    /// Equal horizontal coordinates: a vertical Euclidean segment.
    Vertical,
    /// Circular arc from a Euclidean circle orthogonal to `z = 0`, living in
    /// the vertical plane through both endpoints. `dir` is the unit
    /// horizontal direction from p to q, `span` the horizontal separation,
    /// `foot` the circle center's position along `dir` measured from `x(p)`,
    /// and `radius` the Euclidean circle radius.
    Arc { dir: Vec<f64>, span: f64, foot: f64, radius: f64 },
}

fn horizontal_delta(p: &HPoint, q: &HPoint) -> (Vec<f64>, f64) {
    let delta: Vec<f64> = q.x.iter().zip(&p.x).map(|(a, b)| a - b).collect();
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    (delta, norm)
}

/// Hyperbolic distance `2 arsinh(sqrt((|dx|^2 + dz^2) / (4 z_p z_q)))`.
/// Reduces to `|ln(z_p / z_q)|` for vertically aligned points.
pub fn hyp_distance(p: &HPoint, q: &HPoint) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    if p.x.len() != q.x.len() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    Ok(hyp_distance_unchecked(p, q))
}

/// Distance without input validation, for hot loops over known-good points.
#[inline]
pub fn hyp_distance_unchecked(p: &HPoint, q: &HPoint) -> f64 {
    let mut eucl_sq = (p.z - q.z) * (p.z - q.z);
    for (a, b) in p.x.iter().zip(&q.x) {
        eucl_sq += (a - b) * (a - b);
    }
    // f64::asinh is log1p-based for small arguments, which keeps tiny
    // portal-to-crossing distances accurate.
    2.0 * (eucl_sq / (4.0 * p.z * q.z)).sqrt().asinh()
}

/// Geodesic through two distinct points.
pub fn geodesic(p: &HPoint, q: &HPoint) -> Result<Geodesic> {
    p.validate()?;
    q.validate()?;
    let (delta, norm) = horizontal_delta(p, q);
    if norm < INCIDENCE_TOL {
        if (p.z - q.z).abs() < INCIDENCE_TOL {
            return Err(Error::DegenerateGeodesic);
        }
        return Ok(Geodesic { p: p.clone(), q: q.clone(), kind: GeodesicKind::Vertical });
    }
    let dir: Vec<f64> = delta.iter().map(|v| v / norm).collect();
    // Circle center (foot, 0) in the (dir, z) plane: equidistant from both
    // endpoints written as (0, z_p) and (norm, z_q).
    let foot = (norm * norm + q.z * q.z - p.z * p.z) / (2.0 * norm);
    let radius = (foot * foot + p.z * p.z).sqrt();
    Ok(Geodesic {
        p: p.clone(),
        q: q.clone(),
        kind: GeodesicKind::Arc { dir, span: norm, foot, radius },
    })
}

impl Geodesic {
    /// Arc angles of the two endpoints (arc geodesics only), in (0, pi).
    fn arc_angles(&self) -> Option<(f64, f64)> {
        match &self.kind {
            GeodesicKind::Vertical => None,
            GeodesicKind::Arc { span, foot, radius, .. } => {
                let tp = f64::atan2(self.p.z / radius, -foot / radius);
                let tq = f64::atan2(self.q.z / radius, (span - foot) / radius);
                Some((tp, tq))
            }
        }
    }

    /// Point at plane coordinate `s` along the horizontal direction
    /// (arc geodesics only); `s = 0` is p, `s = span` is q.
    fn arc_point_at(&self, s: f64) -> Option<HPoint> {
        match &self.kind {
            GeodesicKind::Vertical => None,
            GeodesicKind::Arc { dir, foot, radius, .. } => {
                let h = radius * radius - (s - foot) * (s - foot);
                let z = h.max(0.0).sqrt();
                let x: Vec<f64> =
                    self.p.x.iter().zip(dir).map(|(x0, d)| x0 + s * d).collect();
                Some(HPoint { x, z })
            }
        }
    }

    pub fn length(&self) -> f64 {
        hyp_distance_unchecked(&self.p, &self.q)
    }

    /// Point at hyperbolic arc length `t` from p toward q.
    pub fn point_at_arclength(&self, t: f64) -> HPoint {
        match &self.kind {
            GeodesicKind::Vertical => {
                let sign = if self.q.z >= self.p.z { 1.0 } else { -1.0 };
                HPoint { x: self.p.x.clone(), z: self.p.z * (sign * t).exp() }
            }
            GeodesicKind::Arc { dir, foot, radius, .. } => {
                // Arc length from angle a to b is |ln(tan(b/2) / tan(a/2))|.
                let (tp, tq) = self.arc_angles().unwrap();
                let sign = if tq >= tp { 1.0 } else { -1.0 };
                let theta = 2.0 * ((tp / 2.0).tan() * (sign * t).exp()).atan();
                let s = foot + radius * theta.cos();
                let z = radius * theta.sin();
                let x: Vec<f64> =
                    self.p.x.iter().zip(dir).map(|(x0, d)| x0 + s * d).collect();
                HPoint { x, z }
            }
        }
    }
}

/// Sided crossing of a geodesic segment with a vertical hyperplane.
///
/// Returns the crossing point only when the endpoints lie on strictly
/// different sides of `h`; an arc that intersects the plane while both
/// endpoints sit on the same side yields `None`. Endpoints on the plane
/// (within `INCIDENCE_TOL`) are ambiguous and error out.
pub fn crossing(seg: &Geodesic, h: &VerticalHyperplane) -> Result<Option<HPoint>> {
    if h.axis >= seg.p.x.len() {
        return Err(Error::Domain(format!("axis {} out of range", h.axis)));
    }
    let sp = seg.p.x[h.axis] - h.offset;
    let sq = seg.q.x[h.axis] - h.offset;
    if sp.abs() < INCIDENCE_TOL || sq.abs() < INCIDENCE_TOL {
        return Err(Error::AmbiguousCrossing);
    }
    if sp.signum() == sq.signum() {
        return Ok(None);
    }
    match &seg.kind {
        GeodesicKind::Vertical => Ok(None), // equal x on both endpoints, cannot straddle
        GeodesicKind::Arc { dir, .. } => {
            let di = dir[h.axis];
            if di.abs() < INCIDENCE_TOL {
                return Ok(None);
            }
            let s = -sp / di;
            Ok(seg.arc_point_at(s))
        }
    }
}

/// All intersections of the segment with the horosphere `z = c`, ordered
/// along the segment from p to q. A geodesic meets a horosphere at most
/// twice.
pub fn horosphere_intersections(seg: &Geodesic, s: &Horosphere) -> Vec<HPoint> {
    let c = s.height;
    match &seg.kind {
        GeodesicKind::Vertical => {
            let (lo, hi) = (seg.p.z.min(seg.q.z), seg.p.z.max(seg.q.z));
            if c >= lo && c <= hi {
                vec![HPoint { x: seg.p.x.clone(), z: c }]
            } else {
                Vec::new()
            }
        }
        GeodesicKind::Arc { foot, radius, .. } => {
            if c > *radius {
                return Vec::new();
            }
            let (tp, tq) = seg.arc_angles().unwrap();
            let (tlo, thi) = (tp.min(tq), tp.max(tq));
            let t1 = (c / radius).asin(); // in (0, pi/2]
            let mut hits: Vec<f64> = Vec::new();
            for theta in [t1, std::f64::consts::PI - t1] {
                if theta >= tlo - INCIDENCE_TOL && theta <= thi + INCIDENCE_TOL {
                    hits.push(theta);
                }
            }
            hits.dedup_by(|a, b| (*a - *b).abs() < INCIDENCE_TOL);
            // Order along the segment: angle runs monotonically from tp to tq.
            hits.sort_by(|a, b| {
                let ka = (a - tp).abs();
                let kb = (b - tp).abs();
                ka.partial_cmp(&kb).unwrap()
            });
            hits.into_iter()
                .map(|theta| {
                    let s_plane = foot + radius * theta.cos();
                    let mut p = seg.arc_point_at(s_plane).unwrap();
                    p.z = c; // exact height by construction
                    p
                })
                .collect()
        }
    }
}

/// Distance from a point to a vertical hyperplane: `arsinh(|x_i - c| / z)`.
pub fn dist_to_vertical(p: &HPoint, h: &VerticalHyperplane) -> Result<f64> {
    p.validate()?;
    if h.axis >= p.x.len() {
        return Err(Error::Domain(format!("axis {} out of range", h.axis)));
    }
    Ok(((p.x[h.axis] - h.offset).abs() / p.z).asinh())
}

fn embed(p: &HPoint) -> Vec<f64> {
    let mut y = p.x.clone();
    y.push(p.z);
    y
}

/// Sphere inversion centered at (0,..,0,-1) with radius sqrt(2). It is an
/// involution exchanging the upper half-space and the unit ball, taking the
/// half-space model to the Poincaré ball model with (0,..,0,1) at the center.
fn invert(y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let mut v = y.to_vec();
    v[d - 1] += 1.0; // y - c
    let norm_sq: f64 = v.iter().map(|t| t * t).sum();
    let mut out: Vec<f64> = v.iter().map(|t| 2.0 * t / norm_sq).collect();
    out[d - 1] -= 1.0; // + c
    out
}

/// Half-space point to the Cayley-Klein ball model. (0,..,0,1) maps to the
/// ball center and the z-axis to a fixed diameter, so hyperbolic hyperplanes
/// become Euclidean hyperplane slices of the ball.
pub fn to_klein(p: &HPoint) -> Result<Vec<f64>> {
    p.validate()?;
    let ball = invert(&embed(p));
    let norm_sq: f64 = ball.iter().map(|t| t * t).sum();
    Ok(ball.iter().map(|t| 2.0 * t / (1.0 + norm_sq)).collect())
}

/// Klein ball point back to half-space coordinates. Requires `|q| < 1`.
pub fn from_klein(q: &[f64]) -> Result<HPoint> {
    let norm_sq: f64 = q.iter().map(|t| t * t).sum();
    if !norm_sq.is_finite() || norm_sq >= 1.0 {
        return Err(Error::Domain(format!("Klein point must satisfy |q| < 1, got |q|^2 = {norm_sq}")));
    }
    let denom = 1.0 + (1.0 - norm_sq).sqrt();
    let ball: Vec<f64> = q.iter().map(|t| t / denom).collect();
    let y = invert(&ball);
    let d = y.len();
    let z = y[d - 1];
    if z <= 0.0 {
        return Err(Error::Internal("inversion left the upper half-space".into()));
    }
    Ok(HPoint { x: y[..d - 1].to_vec(), z })
}

/// Hyperbolic distance between two Klein-model points.
pub fn klein_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu: f64 = u.iter().map(|t| t * t).sum();
    let nv: f64 = v.iter().map(|t| t * t).sum();
    if nu >= 1.0 || nv >= 1.0 {
        return Err(Error::Domain("Klein points must lie in the open unit ball".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let arg = (1.0 - dot) / ((1.0 - nu) * (1.0 - nv)).sqrt();
    Ok(arg.max(1.0).acosh())
}

/// Hyperbolic midpoint of the segment pq. Returns p when the endpoints
/// coincide.
pub fn geodesic_midpoint(p: &HPoint, q: &HPoint) -> Result<HPoint> {
    match geodesic(p, q) {
        Err(Error::DegenerateGeodesic) => Ok(p.clone()),
        Err(e) => Err(e),
        Ok(geo) => match &geo.kind {
            GeodesicKind::Vertical => {
                Ok(HPoint { x: p.x.clone(), z: (p.z * q.z).sqrt() })
            }
            GeodesicKind::Arc { dir, foot, radius, .. } => {
                // Arc length is ln tan(theta/2) up to sign, so the midpoint
                // angle is the geometric mean of the endpoint half-tangents.
                let (tp, tq) = geo.arc_angles().unwrap();
                let theta = 2.0 * ((tp / 2.0).tan() * (tq / 2.0).tan()).sqrt().atan();
                let s = foot + radius * theta.cos();
                let z = radius * theta.sin();
                let x: Vec<f64> = p.x.iter().zip(dir).map(|(x0, d)| x0 + s * d).collect();
                Ok(HPoint { x, z })
            }
        },
    }
}

/// Total hyperbolic length of a polygonal (geodesic) tour over the given
/// points, adding the closing edge when `closed` is set.
pub fn tour_length(points: &[HPoint], closed: bool) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Domain(format!("tour needs at least 2 points, got {}", points.len())));
    }
    for p in points {
        p.validate()?;
    }
    let mut total = 0.0;
    for w in points.windows(2) {
        total += hyp_distance_unchecked(&w[0], &w[1]);
    }
    if closed {
        total += hyp_distance_unchecked(points.last().unwrap(), &points[0]);
    }
    Ok(total)
}
