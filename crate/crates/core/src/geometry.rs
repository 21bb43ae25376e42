//! Axisymmetric substrate generating curves.
//!
//! A substrate is a planar curve `c ↦ X̂(c) = (r̂(c), ẑ(c))` parameterized by
//! arclength `c ∈ [c_min, c_max]`, with `c` increasing from the inner contact
//! region outward. Analytic kinds (lines, circular arcs, filleted polylines)
//! are evaluated in closed form; sinusoids and sampled tables are
//! reparameterized by true arclength through Newton inversion of a cumulative
//! arclength table, so the unit-speed convention holds to round-off for every
//! kind.

use crate::quadrature::gauss5;
use crate::vector::PlaneVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Tolerance used when deciding whether an arclength lies inside the range.
const RANGE_TOL: f64 = 1e-12;
/// Below this arclength separation, chords and means are evaluated by
/// quadrature over the interval instead of by subtraction.
const SHORT_INTERVAL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("arclength {c} is below the substrate start c_min = {c_min}")]
    BelowRange { c: f64, c_min: f64 },
    #[error("arclength {c} is beyond the substrate end c_max = {c_max}")]
    AboveRange { c: f64, c_max: f64 },
    #[error("tangent requested at an unfilleted polyline corner (c = {c}); give the polyline a fillet radius")]
    Corner { c: f64 },
    #[error("a sampled substrate needs at least two points, got {0}")]
    TooFewSamples(usize),
    #[error("consecutive substrate samples {0} and {1} coincide")]
    DuplicateSample(usize, usize),
    #[error("substrate leaves the half-plane r >= 0 (r = {r} at c = {c})")]
    NegativeRadius { c: f64, r: f64 },
    #[error("invalid substrate: {0}")]
    Invalid(String),
}

/// Serializable description of a substrate, also used in run manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubstrateKind {
    /// `X̂(c) = (c, height)` for `c ∈ [0, length]`.
    FlatLine {
        length: f64,
        #[serde(default)]
        height: f64,
    },
    /// `X̂(c) = center + R (cos ψ, sin ψ)` with `ψ = start_angle ∓ c/R`.
    CircularArc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        clockwise: bool,
        length: f64,
    },
    /// Graph `z = amplitude · sin(wavenumber · r) + offset`, `r ∈ [0, r_max]`.
    Sinusoid {
        amplitude: f64,
        wavenumber: f64,
        offset: f64,
        r_max: f64,
    },
    /// Straight segments joined by tangent circular fillets.
    PolylineWithFillets {
        vertices: Vec<[f64; 2]>,
        fillet_radius: f64,
    },
    /// Cubic interpolation of a point table, reparameterized by arclength.
    Sampled { points: Vec<[f64; 2]> },
}

/// Unit tangent, unit normal (tangent turned counter-clockwise) and the
/// inclination angle of the tangent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubstrateFrame {
    pub tangent: PlaneVector,
    pub normal: PlaneVector,
    pub angle: f64,
}

#[derive(Clone, Debug)]
enum Shape {
    Line {
        p0: PlaneVector,
        dir: PlaneVector,
    },
    Arc {
        center: PlaneVector,
        radius: f64,
        psi0: f64,
        /// +1 counter-clockwise, -1 clockwise.
        sense: f64,
    },
    Param(ParamCurve),
}

impl Shape {
    fn point(&self, s: f64) -> PlaneVector {
        match self {
            Shape::Line { p0, dir } => *p0 + *dir * s,
            Shape::Arc { center, radius, psi0, sense } => {
                *center + PlaneVector::from_angle(psi0 + sense * s / radius) * *radius
            }
            Shape::Param(p) => p.point_at(s),
        }
    }

    fn tangent(&self, s: f64) -> PlaneVector {
        match self {
            Shape::Line { dir, .. } => *dir,
            Shape::Arc { radius, psi0, sense, .. } => {
                PlaneVector::from_angle(psi0 + sense * s / radius).rot90() * *sense
            }
            Shape::Param(p) => p.tangent_at(s),
        }
    }

    /// Counter-clockwise signed curvature.
    fn curvature_ccw(&self, s: f64) -> f64 {
        match self {
            Shape::Line { .. } => 0.0,
            Shape::Arc { radius, sense, .. } => sense / radius,
            Shape::Param(p) => p.curvature_at(s),
        }
    }

    /// `∫_0^s x̂ dc` in local arclength.
    fn moment_x(&self, s: f64) -> f64 {
        match self {
            Shape::Line { p0, dir } => p0.r * s + 0.5 * dir.r * s * s,
            Shape::Arc { center, radius, psi0, sense } => {
                let psi = psi0 + sense * s / radius;
                center.r * s + sense * radius * radius * (psi.sin() - psi0.sin())
            }
            Shape::Param(p) => p.moment_x_at(s),
        }
    }

    /// `∫_0^s r̂ ẑ ∂_c r̂ dc` in local arclength.
    fn moment_rzr(&self, s: f64) -> f64 {
        match self {
            Shape::Line { p0, dir } => {
                let (a, b, e, f) = (p0.r, dir.r, p0.z, dir.z);
                b * (a * e * s + 0.5 * (a * f + b * e) * s * s + b * f * s * s * s / 3.0)
            }
            Shape::Arc { center, radius, psi0, sense } => {
                let (cx, cz, big_r) = (center.r, center.z, *radius);
                let prim = |psi: f64| {
                    let (sn, cs) = psi.sin_cos();
                    -cx * cz * cs
                        + cx * big_r * (0.5 * psi - 0.25 * (2.0 * psi).sin())
                        + 0.5 * cz * big_r * sn * sn
                        + big_r * big_r * sn * sn * sn / 3.0
                };
                let psi = psi0 + sense * s / big_r;
                -big_r * (prim(psi) - prim(*psi0))
            }
            Shape::Param(p) => p.moment_rzr_at(s),
        }
    }
}

/// Parametric map `u ↦ (r(u), z(u))` that is not arclength-parameterized.
#[derive(Clone, Debug)]
enum ParamMap {
    Sine { amplitude: f64, wavenumber: f64, offset: f64 },
    Spline(CubicSpline2),
}

impl ParamMap {
    fn pos(&self, u: f64) -> PlaneVector {
        match self {
            ParamMap::Sine { amplitude, wavenumber, offset } => {
                PlaneVector::new(u, amplitude * (wavenumber * u).sin() + offset)
            }
            ParamMap::Spline(s) => s.eval(u).0,
        }
    }

    fn d1(&self, u: f64) -> PlaneVector {
        match self {
            ParamMap::Sine { amplitude, wavenumber, .. } => {
                PlaneVector::new(1.0, amplitude * wavenumber * (wavenumber * u).cos())
            }
            ParamMap::Spline(s) => s.eval(u).1,
        }
    }

    fn d2(&self, u: f64) -> PlaneVector {
        match self {
            ParamMap::Sine { amplitude, wavenumber, .. } => PlaneVector::new(
                0.0,
                -amplitude * wavenumber * wavenumber * (wavenumber * u).sin(),
            ),
            ParamMap::Spline(s) => s.eval(u).2,
        }
    }
}

/// Arclength reparameterization of a [`ParamMap`] through a cumulative table
/// over panels `[knots[k], knots[k+1]]`.
#[derive(Clone, Debug)]
struct ParamCurve {
    map: ParamMap,
    knots: Vec<f64>,
    s_cum: Vec<f64>,
    mx_cum: Vec<f64>,
    rzr_cum: Vec<f64>,
}

impl ParamCurve {
    fn new(map: ParamMap, knots: Vec<f64>) -> Self {
        let n = knots.len();
        let mut s_cum = vec![0.0; n];
        let mut mx_cum = vec![0.0; n];
        let mut rzr_cum = vec![0.0; n];
        for k in 1..n {
            let (a, b) = (knots[k - 1], knots[k]);
            s_cum[k] = s_cum[k - 1] + gauss5(a, b, |u| map.d1(u).norm());
            mx_cum[k] = mx_cum[k - 1] + gauss5(a, b, |u| map.pos(u).r * map.d1(u).norm());
            rzr_cum[k] = rzr_cum[k - 1]
                + gauss5(a, b, |u| {
                    let p = map.pos(u);
                    p.r * p.z * map.d1(u).r
                });
        }
        Self { map, knots, s_cum, mx_cum, rzr_cum }
    }

    fn length(&self) -> f64 {
        *self.s_cum.last().unwrap()
    }

    fn panel_of(&self, s: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.s_cum.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(k) => k.min(last),
            Err(0) => 0,
            Err(k) => (k - 1).min(last),
        }
    }

    /// Parameter value at arclength `s` together with its panel.
    fn param_of(&self, s: f64) -> (usize, f64) {
        let k = self.panel_of(s);
        let (u0, u1) = (self.knots[k], self.knots[k + 1]);
        let (s0, s1) = (self.s_cum[k], self.s_cum[k + 1]);
        let mut u = u0 + (s - s0) / (s1 - s0) * (u1 - u0);
        let scale = 1.0f64.max(s.abs());
        for _ in 0..50 {
            let f = s0 + gauss5(u0, u, |v| self.map.d1(v).norm()) - s;
            let fp = self.map.d1(u).norm();
            let du = f / fp;
            u -= du;
            if f.abs() <= 1e-15 * scale || du.abs() <= 1e-16 * (1.0 + u.abs()) {
                break;
            }
        }
        (k, u)
    }

    fn point_at(&self, s: f64) -> PlaneVector {
        let (_, u) = self.param_of(s);
        self.map.pos(u)
    }

    fn tangent_at(&self, s: f64) -> PlaneVector {
        let (_, u) = self.param_of(s);
        self.map.d1(u).normalized()
    }

    fn curvature_at(&self, s: f64) -> f64 {
        let (_, u) = self.param_of(s);
        let d1 = self.map.d1(u);
        let d2 = self.map.d2(u);
        d1.cross(d2) / d1.norm().powi(3)
    }

    fn moment_x_at(&self, s: f64) -> f64 {
        let (k, u) = self.param_of(s);
        self.mx_cum[k] + gauss5(self.knots[k], u, |v| self.map.pos(v).r * self.map.d1(v).norm())
    }

    fn moment_rzr_at(&self, s: f64) -> f64 {
        let (k, u) = self.param_of(s);
        self.rzr_cum[k]
            + gauss5(self.knots[k], u, |v| {
                let p = self.map.pos(v);
                p.r * p.z * self.map.d1(v).r
            })
    }
}

/// Natural cubic spline through `(u_k, P_k)` for both coordinates.
#[derive(Clone, Debug)]
struct CubicSpline2 {
    u: Vec<f64>,
    p: Vec<PlaneVector>,
    /// Second derivatives at the knots.
    m: Vec<PlaneVector>,
}

impl CubicSpline2 {
    fn new(u: Vec<f64>, p: Vec<PlaneVector>) -> Self {
        let n = u.len();
        let mut m = vec![PlaneVector::ZERO; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut sup = vec![0.0; k];
            let mut rhs = vec![PlaneVector::ZERO; k];
            for i in 1..n - 1 {
                let h0 = u[i] - u[i - 1];
                let h1 = u[i + 1] - u[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = ((p[i + 1] - p[i]) / h1 - (p[i] - p[i - 1]) / h0) * 6.0;
            }
            // The system is symmetric: the sub-diagonal equals the super-diagonal.
            for i in 1..k {
                let w = sup[i - 1] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                let prev = rhs[i - 1];
                rhs[i] -= prev * w;
            }
            let mut sol = vec![PlaneVector::ZERO; k];
            sol[k - 1] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                sol[i] = (rhs[i] - sol[i + 1] * sup[i]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Self { u, p, m }
    }

    fn eval(&self, x: f64) -> (PlaneVector, PlaneVector, PlaneVector) {
        let n = self.u.len();
        let i = match self.u.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        };
        let h = self.u[i + 1] - self.u[i];
        let a = (self.u[i + 1] - x) / h;
        let b = (x - self.u[i]) / h;
        let (p0, p1, m0, m1) = (self.p[i], self.p[i + 1], self.m[i], self.m[i + 1]);
        let pos = p0 * a + p1 * b + (m0 * (a * a * a - a) + m1 * (b * b * b - b)) * (h * h / 6.0);
        let d1 = (p1 - p0) / h + (m1 * (3.0 * b * b - 1.0) - m0 * (3.0 * a * a - 1.0)) * (h / 6.0);
        let d2 = m0 * a + m1 * b;
        (pos, d1, d2)
    }
}

#[derive(Clone, Debug)]
struct Piece {
    c0: f64,
    shape: Shape,
    mx0: f64,
    rzr0: f64,
}

/// A substrate generating curve with arclength parameterization.
///
/// Immutable after construction and safe to share read-only across threads.
#[derive(Clone, Debug)]
pub struct SubstrateCurve {
    kind: SubstrateKind,
    pieces: Vec<Piece>,
    c_min: f64,
    c_max: f64,
    /// Arclengths of unfilleted polyline corners.
    corners: Vec<f64>,
}

impl SubstrateCurve {
    /// Flat substrate `X̂(c) = (c, 0)`.
    pub fn flat(length: f64) -> Result<Self, GeometryError> {
        Self::from_kind(&SubstrateKind::FlatLine { length, height: 0.0 })
    }

    /// Circular arc starting at angle `start_angle` (radians, measured from e₁
    /// about `center`).
    pub fn circular_arc(
        center: PlaneVector,
        radius: f64,
        start_angle: f64,
        clockwise: bool,
        length: f64,
    ) -> Result<Self, GeometryError> {
        Self::from_kind(&SubstrateKind::CircularArc {
            center: [center.r, center.z],
            radius,
            start_angle,
            clockwise,
            length,
        })
    }

    /// Upper quarter of the circle `r² + z² = R²`, apex at `c = 0`.
    pub fn hemisphere(radius: f64) -> Result<Self, GeometryError> {
        Self::circular_arc(PlaneVector::ZERO, radius, PI / 2.0, true, radius * PI / 2.0)
    }

    /// Lower quarter of the circle `r² + (z - R)² = R²`, bottom at `c = 0`.
    pub fn bowl(radius: f64) -> Result<Self, GeometryError> {
        Self::circular_arc(PlaneVector::new(0.0, radius), radius, -PI / 2.0, false, radius * PI / 2.0)
    }

    pub fn from_kind(kind: &SubstrateKind) -> Result<Self, GeometryError> {
        let (pieces, corners) = match kind {
            SubstrateKind::FlatLine { length, height } => {
                check_positive("length", *length)?;
                (
                    vec![(
                        *length,
                        Shape::Line { p0: PlaneVector::new(0.0, *height), dir: PlaneVector::E1 },
                    )],
                    vec![],
                )
            }
            SubstrateKind::CircularArc { center, radius, start_angle, clockwise, length } => {
                check_positive("radius", *radius)?;
                check_positive("length", *length)?;
                let sense = if *clockwise { -1.0 } else { 1.0 };
                (
                    vec![(
                        *length,
                        Shape::Arc {
                            center: PlaneVector::new(center[0], center[1]),
                            radius: *radius,
                            psi0: *start_angle,
                            sense,
                        },
                    )],
                    vec![],
                )
            }
            SubstrateKind::Sinusoid { amplitude, wavenumber, offset, r_max } => {
                check_positive("r_max", *r_max)?;
                if !(amplitude.is_finite() && wavenumber.is_finite() && offset.is_finite()) {
                    return Err(GeometryError::Invalid("non-finite sinusoid parameters".into()));
                }
                let slope = (amplitude * wavenumber).abs().max(1.0);
                let panels = ((r_max * slope / 0.02).ceil() as usize).max(8);
                let knots = (0..=panels).map(|k| r_max * k as f64 / panels as f64).collect();
                let curve = ParamCurve::new(
                    ParamMap::Sine { amplitude: *amplitude, wavenumber: *wavenumber, offset: *offset },
                    knots,
                );
                (vec![(curve.length(), Shape::Param(curve))], vec![])
            }
            SubstrateKind::PolylineWithFillets { vertices, fillet_radius } => {
                polyline_pieces(vertices, *fillet_radius)?
            }
            SubstrateKind::Sampled { points } => (sampled_pieces(points)?, vec![]),
        };

        let mut built = Vec::with_capacity(pieces.len());
        let mut c0 = 0.0;
        let (mut mx0, mut rzr0) = (0.0, 0.0);
        for (len, shape) in pieces {
            let mx_len = shape.moment_x(len);
            let rzr_len = shape.moment_rzr(len);
            built.push(Piece { c0, shape, mx0, rzr0 });
            c0 += len;
            mx0 += mx_len;
            rzr0 += rzr_len;
        }
        let curve = Self { kind: kind.clone(), pieces: built, c_min: 0.0, c_max: c0, corners };
        curve.check_half_plane()?;
        Ok(curve)
    }

    fn check_half_plane(&self) -> Result<(), GeometryError> {
        let samples = 2048;
        for k in 0..=samples {
            let c = self.c_min + (self.c_max - self.c_min) * k as f64 / samples as f64;
            let r = self.point_ext(c).r;
            if !r.is_finite() {
                return Err(GeometryError::Invalid(format!("non-finite point at c = {c}")));
            }
            if r < -1e-10 {
                return Err(GeometryError::NegativeRadius { c, r });
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &SubstrateKind {
        &self.kind
    }

    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    /// Arclength where the substrate meets the rotation axis, if it does so at
    /// its start.
    pub fn axis_arclength(&self) -> Option<f64> {
        (self.point_ext(self.c_min).r.abs() < 1e-10).then_some(self.c_min)
    }

    pub fn contains(&self, c: f64) -> bool {
        c >= self.c_min - RANGE_TOL && c <= self.c_max + RANGE_TOL
    }

    fn check_range(&self, c: f64) -> Result<(), GeometryError> {
        if c < self.c_min - RANGE_TOL || c.is_nan() {
            Err(GeometryError::BelowRange { c, c_min: self.c_min })
        } else if c > self.c_max + RANGE_TOL {
            Err(GeometryError::AboveRange { c, c_max: self.c_max })
        } else {
            Ok(())
        }
    }

    /// Piece boundaries strictly inside `(lo, hi)`, in increasing order.
    pub(crate) fn breaks_between(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().map(|p| p.c0).filter(move |&c| c > lo && c < hi)
    }

    fn piece(&self, c: f64) -> &Piece {
        let idx = self.pieces.partition_point(|p| p.c0 <= c);
        &self.pieces[idx.saturating_sub(1)]
    }

    /// `X̂(c)`, checked against the arclength range.
    pub fn eval(&self, c: f64) -> Result<PlaneVector, GeometryError> {
        self.check_range(c)?;
        Ok(self.point_ext(c))
    }

    /// `X̂(c)` with the end pieces continued beyond the range. Used while a
    /// Newton iterate wanders slightly past an end.
    pub fn point_ext(&self, c: f64) -> PlaneVector {
        let p = self.piece(c);
        p.shape.point(c - p.c0)
    }

    /// Unit tangent with the same continuation rule as [`Self::point_ext`].
    pub fn tangent_ext(&self, c: f64) -> PlaneVector {
        let p = self.piece(c);
        p.shape.tangent(c - p.c0)
    }

    pub fn frame(&self, c: f64) -> Result<SubstrateFrame, GeometryError> {
        self.check_range(c)?;
        if let Some(&corner) = self.corners.iter().find(|&&k| (k - c).abs() <= 1e-12) {
            return Err(GeometryError::Corner { c: corner });
        }
        let tangent = self.tangent_ext(c);
        Ok(SubstrateFrame { tangent, normal: tangent.rot90(), angle: tangent.angle() })
    }

    /// Signed curvature, positive where the curve bends clockwise as `c`
    /// increases (convex bumps such as the hemisphere apex).
    pub fn curvature(&self, c: f64) -> Result<f64, GeometryError> {
        self.check_range(c)?;
        let p = self.piece(c);
        Ok(-p.shape.curvature_ccw(c - p.c0))
    }

    fn mx_ext(&self, c: f64) -> f64 {
        let p = self.piece(c);
        p.mx0 + p.shape.moment_x(c - p.c0)
    }

    fn rzr_ext(&self, c: f64) -> f64 {
        let p = self.piece(c);
        p.rzr0 + p.shape.moment_rzr(c - p.c0)
    }

    /// `∫_{c1}^{c2} x̂(c) dc` (signed).
    pub fn moment_x(&self, c1: f64, c2: f64) -> Result<f64, GeometryError> {
        self.check_range(c1)?;
        self.check_range(c2)?;
        Ok(self.moment_x_ext(c1, c2))
    }

    pub fn moment_x_ext(&self, c1: f64, c2: f64) -> f64 {
        if c1 == c2 {
            return 0.0;
        }
        self.mx_ext(c2) - self.mx_ext(c1)
    }

    /// `∫_{c1}^{c2} r̂ ẑ ∂_c r̂ dc` (signed).
    pub fn moment_rzr(&self, c1: f64, c2: f64) -> Result<f64, GeometryError> {
        self.check_range(c1)?;
        self.check_range(c2)?;
        Ok(self.moment_rzr_ext(c1, c2))
    }

    pub fn moment_rzr_ext(&self, c1: f64, c2: f64) -> f64 {
        if c1 == c2 {
            return 0.0;
        }
        self.rzr_ext(c2) - self.rzr_ext(c1)
    }

    /// `(X̂(c2) - X̂(c1)) / (c2 - c1)`, tending smoothly to `τ̂(c1)` as the
    /// interval shrinks. Short intervals are integrated rather than
    /// differenced to avoid cancellation.
    pub fn chord_over_dc(&self, c1: f64, c2: f64) -> PlaneVector {
        let dc = c2 - c1;
        if dc == 0.0 {
            self.tangent_ext(c1)
        } else if dc.abs() <= SHORT_INTERVAL {
            let r = gauss5(c1, c2, |c| self.tangent_ext(c).r);
            let z = gauss5(c1, c2, |c| self.tangent_ext(c).z);
            PlaneVector::new(r, z) / dc
        } else {
            (self.point_ext(c2) - self.point_ext(c1)) / dc
        }
    }

    /// Mean of `x̂` over `[c1, c2]`, equal to `x̂(c1)` in the limit.
    pub fn mean_x(&self, c1: f64, c2: f64) -> f64 {
        let dc = c2 - c1;
        if dc == 0.0 {
            self.point_ext(c1).r
        } else if dc.abs() <= SHORT_INTERVAL {
            gauss5(c1, c2, |c| self.point_ext(c).r) / dc
        } else {
            self.moment_x_ext(c1, c2) / dc
        }
    }

    /// Nearest point on the substrate within `[c_lo, c_hi]`. Returns the
    /// arclength and the signed distance along the substrate normal.
    pub fn project(&self, p: PlaneVector, c_lo: f64, c_hi: f64) -> (f64, f64) {
        let (lo, hi) = (c_lo.max(self.c_min), c_hi.min(self.c_max));
        let samples = 64;
        let mut best = (lo, f64::INFINITY);
        for k in 0..=samples {
            let c = lo + (hi - lo) * k as f64 / samples as f64;
            let d = self.point_ext(c).distance(p);
            if d < best.1 {
                best = (c, d);
            }
        }
        let step = (hi - lo) / samples as f64;
        let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
        // Golden-section refinement of the distance on the bracketing cell.
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let dist = |c: f64| self.point_ext(c).distance(p);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (dist(x1), dist(x2));
        for _ in 0..80 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = dist(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = dist(x2);
            }
            if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
                break;
            }
        }
        // Golden section only locates the flat minimum to about sqrt(eps);
        // polish the foot-point condition (X̂(c) - p)·τ̂(c) = 0 with Newton.
        let mut c = 0.5 * (a + b);
        for _ in 0..8 {
            let foot = self.point_ext(c);
            let tangent = self.tangent_ext(c);
            let piece = self.piece(c);
            let kappa = -piece.shape.curvature_ccw(c - piece.c0);
            let g = (foot - p).dot(tangent);
            let dg = 1.0 + kappa * (p - foot).dot(tangent.rot90());
            if dg <= 0.0 {
                break;
            }
            let next = (c - g / dg).clamp(lo, hi);
            let done = (next - c).abs() < 1e-15 * (1.0 + c.abs());
            c = next;
            if done {
                break;
            }
        }
        let foot = self.point_ext(c);
        let normal = self.tangent_ext(c).rot90();
        (c, (p - foot).dot(normal))
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::Invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

type PieceList = (Vec<(f64, Shape)>, Vec<f64>);

fn polyline_pieces(vertices: &[[f64; 2]], fillet: f64) -> Result<PieceList, GeometryError> {
    if vertices.len() < 2 {
        return Err(GeometryError::TooFewSamples(vertices.len()));
    }
    if !(fillet.is_finite() && fillet >= 0.0) {
        return Err(GeometryError::Invalid(format!("fillet radius must be >= 0, got {fillet}")));
    }
    let v: Vec<PlaneVector> = vertices.iter().map(|p| PlaneVector::new(p[0], p[1])).collect();
    for k in 1..v.len() {
        if v[k].distance(v[k - 1]) == 0.0 {
            return Err(GeometryError::DuplicateSample(k - 1, k));
        }
    }
    // Tangent lengths cut from each segment end by the fillets.
    let nseg = v.len() - 1;
    let mut cut_start = vec![0.0; nseg];
    let mut cut_end = vec![0.0; nseg];
    let mut fillets = Vec::new();
    for k in 1..nseg {
        let d1 = (v[k] - v[k - 1]).normalized();
        let d2 = (v[k + 1] - v[k]).normalized();
        let turn = d1.cross(d2).atan2(d1.dot(d2));
        if turn.abs() < 1e-14 {
            fillets.push(None);
            continue;
        }
        let t = fillet * (0.5 * turn.abs()).tan();
        cut_end[k - 1] = t;
        cut_start[k] = t;
        fillets.push(Some((d1, d2, turn, t)));
    }
    let mut pieces = Vec::new();
    let mut corners = Vec::new();
    let mut c = 0.0;
    for k in 0..nseg {
        let len = v[k].distance(v[k + 1]);
        let straight = len - cut_start[k] - cut_end[k];
        if straight < -1e-12 {
            return Err(GeometryError::Invalid(format!(
                "fillet radius {fillet} too large for segment {k} of length {len}"
            )));
        }
        let dir = (v[k + 1] - v[k]) / len;
        if straight > 1e-14 {
            pieces.push((straight, Shape::Line { p0: v[k] + dir * cut_start[k], dir }));
            c += straight;
        }
        if k + 1 < nseg {
            if let Some((d1, _d2, turn, t)) = fillets[k] {
                if fillet > 0.0 {
                    let start = v[k + 1] - d1 * t;
                    let sense = turn.signum();
                    let center = start + d1.rot90() * (fillet * sense);
                    let psi0 = (start - center).angle();
                    let arc_len = fillet * turn.abs();
                    pieces.push((arc_len, Shape::Arc { center, radius: fillet, psi0, sense }));
                    c += arc_len;
                } else {
                    corners.push(c);
                }
            }
        }
    }
    Ok((pieces, corners))
}

fn sampled_pieces(points: &[[f64; 2]]) -> Result<Vec<(f64, Shape)>, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::TooFewSamples(points.len()));
    }
    let p: Vec<PlaneVector> = points.iter().map(|q| PlaneVector::new(q[0], q[1])).collect();
    if p.iter().any(|q| !q.is_finite()) {
        return Err(GeometryError::Invalid("non-finite sample".into()));
    }
    let mut u = vec![0.0; p.len()];
    for k in 1..p.len() {
        let d = p[k].distance(p[k - 1]);
        if d == 0.0 {
            return Err(GeometryError::DuplicateSample(k - 1, k));
        }
        u[k] = u[k - 1] + d;
    }
    let spline = CubicSpline2::new(u.clone(), p);
    // Split each spline segment into a few panels so the table quadrature
    // stays accurate on long segments.
    let mut knots = Vec::with_capacity(4 * u.len());
    for k in 0..u.len() - 1 {
        for j in 0..4 {
            knots.push(u[k] + (u[k + 1] - u[k]) * j as f64 / 4.0);
        }
    }
    knots.push(*u.last().unwrap());
    let curve = ParamCurve::new(ParamMap::Spline(spline), knots);
    Ok(vec![(curve.length(), Shape::Param(curve))])
}

/// Builds an arclength-parameterized substrate from a point table
/// (cumulative-chord parameterization, cubic interpolation, then exact
/// arclength inversion).
pub fn arc_reparameterize(samples: &[PlaneVector]) -> Result<SubstrateCurve, GeometryError> {
    let points: Vec<[f64; 2]> = samples.iter().map(|p| [p.r, p.z]).collect();
    SubstrateCurve::from_kind(&SubstrateKind::Sampled { points })
}
