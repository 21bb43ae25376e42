//! Measurements on simulated films: manifold distance between enclosed
//! regions, convergence tables, contact angles, migration trends and the
//! equilibrium stopping rule.

use crate::anisotropy::wrap_angle;
use crate::geometry::SubstrateCurve;
use crate::mesh::{Contacts, DiscreteCurve};
use crate::solver::{BoundaryMode, FilmState, Simulation, SolverError, StepReport};
use crate::vector::PlaneVector;
use robust::{orient2d, Coord};
use serde::Serialize;
use thiserror::Error;

/// Spacing of the shared substrate sampling grid used to close regions.
/// Two regions closed on the same substrate share these vertices exactly.
pub const CLOSURE_SPACING: f64 = 0.01;

/// Energy step below which a run counts as equilibrated.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("closed region self-intersects: edges {0} and {1} cross")]
    SelfIntersection(usize, usize),
    #[error("polygon needs at least 3 finite vertices")]
    Degenerate,
    #[error("the inner end sits on the axis and has no contact angle")]
    NoInnerContact,
    #[error("states have different topology ({0} vs {1} components)")]
    TopologyMismatch(usize, usize),
    #[error("a convergence sweep needs at least 3 levels, got {0}")]
    TooFewLevels(usize),
    #[error("equilibrium not reached by t = {0}")]
    NotEquilibrated(f64),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Closed polygon in the generating plane, stored counterclockwise without
/// repeating the first vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPolygon {
    vertices: Vec<PlaneVector>,
}

fn signed_area(v: &[PlaneVector]) -> f64 {
    let n = v.len();
    (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>() / 2.0
}

#[inline]
fn coord(p: PlaneVector) -> Coord<f64> {
    Coord { x: p.r, y: p.z }
}

#[inline]
fn orient(a: PlaneVector, b: PlaneVector, c: PlaneVector) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

/// Whether two segments cross at a single point interior to both.
fn proper_crossing(p: PlaneVector, q: PlaneVector, a: PlaneVector, b: PlaneVector) -> bool {
    let (o1, o2) = (orient(p, q, a), orient(p, q, b));
    let (o3, o4) = (orient(a, b, p), orient(a, b, q));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

impl RegionPolygon {
    /// Builds a polygon, dropping consecutive duplicates and normalizing to
    /// counterclockwise order. Collinear overlaps are allowed (zero-area
    /// regions occur when a film lies on its substrate), proper crossings are
    /// not.
    pub fn new(points: Vec<PlaneVector>) -> Result<Self, DiagnosticsError> {
        let mut vertices: Vec<PlaneVector> = Vec::with_capacity(points.len());
        for p in points {
            if !p.is_finite() {
                return Err(DiagnosticsError::Degenerate);
            }
            if vertices.last() != Some(&p) {
                vertices.push(p);
            }
        }
        while vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(DiagnosticsError::Degenerate);
        }
        let n = vertices.len();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                let (a, b) = (vertices[j], vertices[(j + 1) % n]);
                if proper_crossing(p, q, a, b) {
                    return Err(DiagnosticsError::SelfIntersection(i, j));
                }
            }
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[PlaneVector] {
        &self.vertices
    }

    /// Shoelace area, nonnegative by orientation.
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    fn edges(&self) -> impl Iterator<Item = (PlaneVector, PlaneVector)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Crossing-number test; callers keep boundary points out.
    fn contains(&self, m: PlaneVector) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.z > m.z) != (b.z > m.z) {
                let r = a.r + (m.z - a.z) / (b.z - a.z) * (b.r - a.r);
                if m.r < r {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

/// How a piece of one polygon's boundary relates to the other polygon.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Placement {
    Inside,
    Outside,
    SharedSameDirection,
    SharedOpposite,
}

/// Sum of `p × q / 2` over the pieces of `a`'s boundary lying inside `b`.
/// Shared pieces with matching direction count when `keep_shared` is set, so
/// that calling this for `(a, b, true)` and `(b, a, false)` traces the
/// boundary of the intersection exactly once.
fn clipped_boundary_area(a: &RegionPolygon, b: &RegionPolygon, keep_shared: bool) -> f64 {
    let mut total = 0.0;
    let mut cuts: Vec<f64> = Vec::new();
    let mut overlaps: Vec<(f64, f64, bool)> = Vec::new();
    for (p, q) in a.edges() {
        let d = q - p;
        let len2 = d.norm_sq();
        cuts.clear();
        overlaps.clear();
        cuts.extend([0.0, 1.0]);
        for (s, e) in b.edges() {
            let (o1, o2) = (orient(p, q, s), orient(p, q, e));
            if o1 == 0.0 && o2 == 0.0 {
                let ts = (s - p).dot(d) / len2;
                let te = (e - p).dot(d) / len2;
                cuts.extend([ts, te].into_iter().filter(|t| *t > 0.0 && *t < 1.0));
                let (lo, hi) = if ts < te { (ts, te) } else { (te, ts) };
                if hi > 0.0 && lo < 1.0 {
                    overlaps.push((lo, hi, (e - s).dot(d) > 0.0));
                }
                continue;
            }
            if o1 * o2 > 0.0 {
                continue;
            }
            let (o3, o4) = (orient(s, e, p), orient(s, e, q));
            if o3 * o4 > 0.0 || o3 == o4 {
                continue;
            }
            let t = o3 / (o3 - o4);
            if t > 0.0 && t < 1.0 {
                cuts.push(t);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for w in cuts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 <= t0 {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            let placement = match overlaps.iter().find(|(lo, hi, _)| tm > *lo && tm < *hi) {
                Some(&(_, _, true)) => Placement::SharedSameDirection,
                Some(&(_, _, false)) => Placement::SharedOpposite,
                None if b.contains(p + d * tm) => Placement::Inside,
                None => Placement::Outside,
            };
            let keep = match placement {
                Placement::Inside => true,
                Placement::SharedSameDirection => keep_shared,
                Placement::Outside | Placement::SharedOpposite => false,
            };
            if keep {
                let (u, v) = (p + d * t0, p + d * t1);
                total += u.cross(v) / 2.0;
            }
        }
    }
    total
}

/// Area of `a ∩ b` for simple polygons.
pub fn intersection_area(a: &RegionPolygon, b: &RegionPolygon) -> f64 {
    (clipped_boundary_area(a, b, true) + clipped_boundary_area(b, a, false)).max(0.0)
}

/// Symmetric-difference area `|A| + |B| − 2|A ∩ B|`.
pub fn manifold_distance(a: &RegionPolygon, b: &RegionPolygon) -> f64 {
    (a.area() + b.area() - 2.0 * intersection_area(a, b)).max(0.0)
}

/// Substrate points strictly between two arclengths on the shared closure
/// grid, ordered from `from` to `to`.
fn substrate_run(sub: &SubstrateCurve, from: f64, to: f64) -> Vec<PlaneVector> {
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    let first = (lo / CLOSURE_SPACING).floor() as i64 + 1;
    let last = (hi / CLOSURE_SPACING).ceil() as i64 - 1;
    let mut pts: Vec<PlaneVector> =
        (first..=last).map(|k| k as f64 * CLOSURE_SPACING).filter(|c| *c > lo && *c < hi).map(|c| sub.point_ext(c)).collect();
    if from > to {
        pts.reverse();
    }
    pts
}

/// Region enclosed by a film component and the substrate beneath it. In axis
/// mode the substrate is followed to the axis and the region closes along it.
pub fn close_region(state: &FilmState, sub: &SubstrateCurve) -> Result<RegionPolygon, DiagnosticsError> {
    close_nodes(state.curve.nodes(), state.contacts, sub)
}

fn close_nodes(nodes: &[PlaneVector], contacts: Contacts, sub: &SubstrateCurve) -> Result<RegionPolygon, DiagnosticsError> {
    let mut pts = nodes.to_vec();
    let inner = contacts.left.unwrap_or(sub.c_min());
    pts.extend(substrate_run(sub, contacts.right, inner));
    if contacts.left.is_none() {
        pts.push(PlaneVector::new(0.0, sub.point_ext(inner).z));
    }
    RegionPolygon::new(pts)
}

/// Manifold distance summed over components paired in order.
pub fn state_distance(
    a: &[FilmState],
    b: &[FilmState],
    sub: &SubstrateCurve,
) -> Result<f64, DiagnosticsError> {
    if a.len() != b.len() {
        return Err(DiagnosticsError::TopologyMismatch(a.len(), b.len()));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += manifold_distance(&close_region(x, sub)?, &close_region(y, sub)?);
    }
    Ok(total)
}

/// Linear-in-time blend of two states on the same grid: `s = 0` gives `a`.
/// Topology or mode changes between the two fall back to the nearer state.
pub fn blend_states(a: &[FilmState], b: &[FilmState], s: f64) -> Vec<FilmState> {
    let nearer = if s < 0.5 { a } else { b };
    if a.len() != b.len() {
        return nearer.to_vec();
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.n_elements() != y.n_elements() || x.mode() != y.mode() {
                return if s < 0.5 { x.clone() } else { y.clone() };
            }
            let nodes: Vec<PlaneVector> =
                x.curve.nodes().iter().zip(y.curve.nodes()).map(|(p, q)| *p * (1.0 - s) + *q * s).collect();
            let mu = x.mu.iter().zip(&y.mu).map(|(p, q)| p * (1.0 - s) + q * s).collect();
            let contacts = Contacts {
                left: x.contacts.left.zip(y.contacts.left).map(|(p, q)| p * (1.0 - s) + q * s),
                right: x.contacts.right * (1.0 - s) + y.contacts.right * s,
            };
            match DiscreteCurve::new(nodes) {
                Ok(curve) => FilmState { curve, mu, contacts },
                Err(_) => if s < 0.5 { x.clone() } else { y.clone() },
            }
        })
        .collect()
}

/// Advances until `t`, returning the film at exactly `t` by linear
/// interpolation between the bracketing steps.
pub fn state_at(sim: &mut Simulation, t: f64) -> Result<Vec<FilmState>, DiagnosticsError> {
    let eps = 1e-12 * t.abs().max(1.0);
    loop {
        let t0 = sim.time();
        if (t0 - t).abs() <= eps {
            return Ok(sim.components().to_vec());
        }
        let before = sim.components().to_vec();
        sim.advance()?;
        let t1 = sim.time();
        if t1 >= t - eps {
            let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            return Ok(blend_states(&before, sim.components(), s));
        }
    }
}

/// One level of a convergence table.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dt: f64,
    pub error: f64,
    /// `log₂` of the error ratio to the previous row; absent on the first.
    pub order: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Set when some error fails to decrease as `h` halves.
    pub non_monotone: bool,
}

/// Observed order between consecutive errors.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Runs each mesh level to `t_end` and measures the manifold distance to a
/// reference computed with `2·N_max` elements and a quarter of the finest
/// time step. `make` builds a simulation for `(n, dt)`; `dt_rule` maps `h` to
/// the time step.
pub fn convergence_sweep<F, D>(
    levels: &[usize],
    dt_rule: D,
    t_end: f64,
    mut make: F,
) -> Result<ConvergenceTable, DiagnosticsError>
where
    F: FnMut(usize, f64) -> Result<Simulation, SolverError>,
    D: Fn(f64) -> f64,
{
    if levels.len() < 3 {
        return Err(DiagnosticsError::TooFewLevels(levels.len()));
    }
    let n_max = *levels.iter().max().expect("nonempty");
    let dt_min = levels.iter().map(|&n| dt_rule(1.0 / n as f64)).fold(f64::INFINITY, f64::min);
    let mut reference = make(2 * n_max, dt_min / 4.0)?;
    let reference_state = state_at(&mut reference, t_end)?;
    let sub = reference.substrate().clone();
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
    let mut non_monotone = false;
    for &n in levels {
        let h = 1.0 / n as f64;
        let dt = dt_rule(h);
        let mut sim = make(n, dt)?;
        let state = state_at(&mut sim, t_end)?;
        let error = state_distance(&state, &reference_state, &sub)?;
        let order = rows.last().map(|prev| observed_order(prev.error, error));
        if rows.last().is_some_and(|prev| error >= prev.error) {
            non_monotone = true;
        }
        log::info!("convergence level N = {n}: error {error:.3e}, order {order:?}");
        rows.push(ConvergenceRow { h, dt, error, order });
    }
    Ok(ConvergenceTable { rows, non_monotone })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactEnd {
    Inner,
    Outer,
}

/// Intrinsic contact angle in degrees in `[0, 360)`, measured inside the film
/// from the substrate tangent to the boundary element.
pub fn contact_angle(state: &FilmState, sub: &SubstrateCurve, end: ContactEnd) -> Result<f64, DiagnosticsError> {
    let n = state.n_elements();
    let (c, theta_e) = match end {
        ContactEnd::Inner => {
            if state.mode() == BoundaryMode::AxisInner {
                return Err(DiagnosticsError::NoInnerContact);
            }
            (state.contacts.left.expect("two-contact mode"), state.curve.angle(0))
        }
        ContactEnd::Outer => (state.contacts.right, state.curve.angle(n - 1)),
    };
    let theta_sub = sub.tangent_ext(c).angle();
    let relative = match end {
        ContactEnd::Inner => theta_e - theta_sub,
        ContactEnd::Outer => theta_sub - theta_e,
    };
    let deg = wrap_angle(relative).to_degrees();
    Ok(if deg < 0.0 { deg + 360.0 } else { deg })
}

/// Contact-midpoint series and its least-squares trend.
#[derive(Clone, Debug)]
pub struct MigrationSummary {
    pub series: Vec<(f64, f64)>,
    pub slope: f64,
    /// Every increment either follows the sign of `slope` or is below `1e-9`.
    pub monotone: bool,
}

/// Least-squares slope of `y` against `t`; zero for fewer than two points.
pub fn least_squares_slope(series: &[(f64, f64)]) -> f64 {
    let n = series.len() as f64;
    if series.len() < 2 {
        return 0.0;
    }
    let mt = series.iter().map(|p| p.0).sum::<f64>() / n;
    let my = series.iter().map(|p| p.1).sum::<f64>() / n;
    let (num, den) = series
        .iter()
        .fold((0.0, 0.0), |(num, den), &(t, y)| (num + (t - mt) * (y - my), den + (t - mt) * (t - mt)));
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Trend of `(t, (c_l + c_r)/2)` samples.
pub fn migration_tracker(series: Vec<(f64, f64)>) -> MigrationSummary {
    let slope = least_squares_slope(&series);
    let monotone = series.windows(2).all(|w| {
        let d = w[1].1 - w[0].1;
        d.abs() <= 1e-9 || d.signum() == slope.signum()
    });
    MigrationSummary { series, slope, monotone }
}

/// Contact midpoint of a two-contact component.
pub fn contact_midpoint(state: &FilmState) -> Option<f64> {
    state.contacts.left.map(|l| 0.5 * (l + state.contacts.right))
}

/// Outcome of running to the energy stopping rule.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub t: f64,
    pub steps: usize,
    pub energy: f64,
    pub last_change: f64,
}

/// Steps until `|W^{m+1} − W^m| < tol`, giving up past `t_max`. The callback
/// sees every step report.
pub fn run_to_equilibrium(
    sim: &mut Simulation,
    tol: f64,
    t_max: f64,
    mut on_step: impl FnMut(&Simulation, &StepReport),
) -> Result<Equilibrium, DiagnosticsError> {
    let mut energy = sim.energy()?;
    let mut steps = 0;
    while sim.time() < t_max {
        let report = sim.advance()?;
        steps += 1;
        on_step(sim, &report);
        let change = report.energy - energy;
        energy = report.energy;
        if change.abs() < tol && report.events.is_empty() {
            return Ok(Equilibrium { t: report.t, steps, energy, last_change: change });
        }
    }
    Err(DiagnosticsError::NotEquilibrated(sim.time()))
}
