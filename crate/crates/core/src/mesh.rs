//! Discrete film generatrix on the uniform parameter mesh `ρ_j = j/N`, the
//! mass-lumped inner product, and the discrete geometric quantities built
//! from a pair of consecutive curves.

use crate::anisotropy::AnisotropyModel;
use crate::geometry::{GeometryError, SubstrateCurve};
use crate::quadrature::gauss5_composite;
use crate::vector::PlaneVector;
use std::f64::consts::PI;
use thiserror::Error;

/// Allowed distance between a contact node and its substrate point.
pub const ON_SUBSTRATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("a curve needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node {0} is not finite")]
    NonFinite(usize),
    #[error("element {0} has zero length")]
    ZeroLength(usize),
    #[error("node {node} has radius {r} <= 0")]
    NonPositiveRadius { node: usize, r: f64 },
    #[error("field length {got} does not match the mesh ({expected})")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("{end} end is {gap} away from the substrate")]
    OffSubstrate { end: &'static str, gap: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Polygonal generatrix `X^h = (r, z)` with nodes at `ρ_j = j/N`.
///
/// Element lengths and tangent angles are cached at construction and never
/// change, since the curve is immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCurve {
    nodes: Vec<PlaneVector>,
    lengths: Vec<f64>,
    angles: Vec<f64>,
}

impl DiscreteCurve {
    /// Requires finite nodes, positive element lengths, `r > 0` at interior
    /// nodes and `r ≥ 0` at the ends.
    pub fn new(nodes: Vec<PlaneVector>) -> Result<Self, MeshError> {
        let n = nodes.len();
        if n < 2 {
            return Err(MeshError::TooFewNodes(n));
        }
        for (j, p) in nodes.iter().enumerate() {
            if !p.is_finite() {
                return Err(MeshError::NonFinite(j));
            }
            let interior = j > 0 && j + 1 < n;
            if (interior && p.r <= 0.0) || p.r < -1e-12 {
                return Err(MeshError::NonPositiveRadius { node: j, r: p.r });
            }
        }
        let mut lengths = Vec::with_capacity(n - 1);
        let mut angles = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let e = nodes[j + 1] - nodes[j];
            let l = e.norm();
            if l <= 0.0 {
                return Err(MeshError::ZeroLength(j));
            }
            lengths.push(l);
            angles.push(e.angle());
        }
        Ok(Self { nodes, lengths, angles })
    }

    pub fn nodes(&self) -> &[PlaneVector] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<PlaneVector> {
        self.nodes
    }

    /// Number of elements `N`.
    pub fn n_elements(&self) -> usize {
        self.lengths.len()
    }

    /// Uniform parameter step `1/N`.
    pub fn h(&self) -> f64 {
        1.0 / self.n_elements() as f64
    }

    pub fn element_length(&self, j: usize) -> f64 {
        self.lengths[j]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Inclination of element `j`, in `(-π, π]`.
    pub fn angle(&self, j: usize) -> f64 {
        self.angles[j]
    }

    pub fn tangent(&self, j: usize) -> PlaneVector {
        (self.nodes[j + 1] - self.nodes[j]) / self.lengths[j]
    }

    /// Outward normal of element `j` (tangent turned counter-clockwise).
    pub fn normal(&self, j: usize) -> PlaneVector {
        self.tangent(j).rot90()
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn first(&self) -> PlaneVector {
        self.nodes[0]
    }

    pub fn last(&self) -> PlaneVector {
        *self.nodes.last().unwrap()
    }
}

/// Scalar field on the mesh: continuous piecewise linear, or constant per element.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarField {
    Nodal(Vec<f64>),
    PerElement(Vec<f64>),
}

impl ScalarField {
    fn n_elements(&self) -> usize {
        match self {
            ScalarField::Nodal(v) => v.len().saturating_sub(1),
            ScalarField::PerElement(v) => v.len(),
        }
    }

    fn ends(&self, e: usize) -> (f64, f64) {
        match self {
            ScalarField::Nodal(v) => (v[e], v[e + 1]),
            ScalarField::PerElement(v) => (v[e], v[e]),
        }
    }
}

/// Vector field on the mesh: continuous piecewise linear, or linear on each
/// element with independent one-sided end values.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorField {
    Nodal(Vec<PlaneVector>),
    ElementLinear { left: Vec<PlaneVector>, right: Vec<PlaneVector> },
}

impl VectorField {
    pub fn n_elements(&self) -> usize {
        match self {
            VectorField::Nodal(v) => v.len().saturating_sub(1),
            VectorField::ElementLinear { left, .. } => left.len(),
        }
    }

    /// One-sided values at the two ends of element `e`.
    pub fn ends(&self, e: usize) -> (PlaneVector, PlaneVector) {
        match self {
            VectorField::Nodal(v) => (v[e], v[e + 1]),
            VectorField::ElementLinear { left, right } => (left[e], right[e]),
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), MeshError> {
    if expected == got {
        Ok(())
    } else {
        Err(MeshError::ShapeMismatch { expected, got })
    }
}

/// Simpson-rule inner product `Σ_e w_e (h/6)[u_L + 4 u_M + u_R]` of the
/// pointwise product `u = v w`, with `h = 1/N` and per-element weights.
///
/// All fields are linear on each element, so the midpoint value is the mean
/// of the one-sided end values.
pub fn lumped_inner(v: &ScalarField, w: &ScalarField, weights: &[f64]) -> Result<f64, MeshError> {
    let n = weights.len();
    check_len(n, v.n_elements())?;
    check_len(n, w.n_elements())?;
    let h = 1.0 / n as f64;
    let mut sum = 0.0;
    for (e, &we) in weights.iter().enumerate() {
        let (v0, v1) = v.ends(e);
        let (w0, w1) = w.ends(e);
        let mid = 0.25 * (v0 + v1) * (w0 + w1);
        sum += we * h / 6.0 * (v0 * w0 + 4.0 * mid + v1 * w1);
    }
    Ok(sum)
}

/// Vector counterpart of [`lumped_inner`] with the dot product.
pub fn lumped_inner_vec(v: &VectorField, w: &VectorField, weights: &[f64]) -> Result<f64, MeshError> {
    let n = weights.len();
    check_len(n, v.n_elements())?;
    check_len(n, w.n_elements())?;
    let h = 1.0 / n as f64;
    let mut sum = 0.0;
    for (e, &we) in weights.iter().enumerate() {
        let (v0, v1) = v.ends(e);
        let (w0, w1) = w.ends(e);
        let mid = (v0 + v1).dot(w0 + w1) * 0.25;
        sum += we * h / 6.0 * (v0.dot(w0) + 4.0 * mid + v1.dot(w1));
    }
    Ok(sum)
}

/// Time-weighted normal `f = -(1/6)[2 r^m a + 2 r^{m+1} b + r^m b + r^{m+1} a]^⊥`
/// with `a = ∂_ρ X^m`, `b = ∂_ρ X^{m+1}`, evaluated at both ends of each
/// element. It reduces to `r |∂_ρ X| n` when the curves coincide.
pub fn weighted_normal(old: &[PlaneVector], new: &[PlaneVector]) -> Result<VectorField, MeshError> {
    check_len(old.len(), new.len())?;
    let n = old.len().saturating_sub(1);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for e in 0..n {
        let (l, r) = weighted_normal_element(old[e], old[e + 1], new[e], new[e + 1], n as f64);
        left.push(l);
        right.push(r);
    }
    Ok(VectorField::ElementLinear { left, right })
}

/// End values of the weighted normal on one element; `inv_h = N`.
#[inline]
pub(crate) fn weighted_normal_element(
    old0: PlaneVector,
    old1: PlaneVector,
    new0: PlaneVector,
    new1: PlaneVector,
    inv_h: f64,
) -> (PlaneVector, PlaneVector) {
    let a = (old1 - old0) * inv_h;
    let b = (new1 - new0) * inv_h;
    let at = |ro: f64, rn: f64| -((a * (2.0 * ro + rn) + b * (2.0 * rn + ro)) / 6.0).perp();
    (at(old0.r, new0.r), at(old1.r, new1.r))
}

/// `∫ r z dr` along the straight segment from `p` to `q`.
#[inline]
pub fn segment_rzr(p: PlaneVector, q: PlaneVector) -> f64 {
    (q.r - p.r) * (2.0 * p.r * p.z + p.r * q.z + q.r * p.z + 2.0 * q.r * q.z) / 6.0
}

/// Signed volume swept between the substrate arc from `c1` to `c2` and its
/// chord, revolved about the axis: `2π[∫_chord r z dr − ∫_{c1}^{c2} r̂ ẑ ∂_c r̂ dc]`.
pub fn rotated_cap_volume(sub: &SubstrateCurve, c1: f64, c2: f64) -> Result<f64, MeshError> {
    sub.eval(c1)?;
    sub.eval(c2)?;
    Ok(cap_volume_ext(sub, c1, c2))
}

/// Below this arclength gap the cap volume is integrated as one difference
/// of integrands, since it is O(Δc³) while the closed-form moments it would
/// otherwise difference are O(1).
const SHORT_CAP: f64 = 1.0;
/// Longest Gauss panel used for the short-cap integrand.
const CAP_PANEL: f64 = 0.1;

pub(crate) fn cap_volume_ext(sub: &SubstrateCurve, c1: f64, c2: f64) -> f64 {
    let dc = c2 - c1;
    if dc == 0.0 {
        return 0.0;
    }
    if dc.abs() > SHORT_CAP {
        let chord = segment_rzr(sub.point_ext(c1), sub.point_ext(c2));
        return 2.0 * PI * (chord - sub.moment_rzr_ext(c1, c2));
    }
    let p = sub.point_ext(c1);
    let chord = sub.chord_over_dc(c1, c2);
    // Chord point paired with the substrate point at the same arclength. z is
    // measured from `p`: the closed loop does not see the shift, but rounding
    // in the chord end would otherwise be amplified by the height.
    let integrand = |c: f64| {
        let q = p + chord * (c - c1);
        let a = sub.point_ext(c);
        q.r * (q.z - p.z) * chord.r - a.r * (a.z - p.z) * sub.tangent_ext(c).r
    };
    // Panels end at piece boundaries, where the substrate is only C¹.
    let (lo, hi) = if dc > 0.0 { (c1, c2) } else { (c2, c1) };
    let mut edges = vec![lo];
    edges.extend(sub.breaks_between(lo, hi));
    edges.push(hi);
    let total: f64 = edges
        .windows(2)
        .map(|w| gauss5_composite(w[0], w[1], ((w[1] - w[0]) / CAP_PANEL).ceil() as usize, integrand))
        .sum();
    2.0 * PI * total * dc.signum()
}

/// Boundary vector `G = (X̂(c2) − X̂(c1)) ∫_{c1}^{c2} x̂ dc / |X̂(c2) − X̂(c1)|²`,
/// with the limit `x̂(c1) τ̂(c1)` as the interval shrinks.
pub fn boundary_vector_g(sub: &SubstrateCurve, c1: f64, c2: f64) -> PlaneVector {
    let d = sub.chord_over_dc(c1, c2);
    d * (sub.mean_x(c1, c2) / d.norm_sq())
}

/// Contact arclengths of a film. `left` is `None` when the inner end sits on
/// the rotation axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contacts {
    pub left: Option<f64>,
    pub right: f64,
}

/// End values `(δf_0, δf_N)` of the nodal volume correction, chosen so that
/// `2π(X^{m+1} − X^m, δf)^h = H_right − H_left`.
pub fn volume_correction_ends(
    old: &[PlaneVector],
    new: &[PlaneVector],
    h_left: f64,
    h_right: f64,
) -> (PlaneVector, PlaneVector) {
    let n = old.len() - 1;
    let h = 1.0 / n as f64;
    let d = |j: usize| new[j] - old[j];
    // (ΔX, φ_N e)^h = (h/6)(ΔX_{N-1} + 2ΔX_N)·e, and symmetrically at node 0.
    let a_r = d(n - 1) + d(n) * 2.0;
    let a_l = d(0) * 2.0 + d(1);
    let end = |hv: f64, a: PlaneVector| {
        if hv == 0.0 {
            PlaneVector::ZERO
        } else {
            a * (3.0 * hv / (PI * h * a.norm_sq()))
        }
    };
    (-end(h_left, a_l), end(h_right, a_r))
}

/// Nodal volume correction, zero except at the two end nodes.
pub fn volume_correction(
    old: &[PlaneVector],
    new: &[PlaneVector],
    sub: &SubstrateCurve,
    before: Contacts,
    after: Contacts,
) -> Result<VectorField, MeshError> {
    check_len(old.len(), new.len())?;
    if old.len() < 2 {
        return Err(MeshError::TooFewNodes(old.len()));
    }
    let h_left = match (before.left, after.left) {
        (Some(a), Some(b)) => rotated_cap_volume(sub, a, b)?,
        _ => 0.0,
    };
    let h_right = rotated_cap_volume(sub, before.right, after.right)?;
    let (l, r) = volume_correction_ends(old, new, h_left, h_right);
    let mut field = vec![PlaneVector::ZERO; old.len()];
    field[0] = l;
    *field.last_mut().unwrap() = r;
    Ok(VectorField::Nodal(field))
}

fn check_contacts(nodes: &[PlaneVector], sub: &SubstrateCurve, contacts: Contacts) -> Result<f64, MeshError> {
    let last = *nodes.last().unwrap();
    let gap = last.distance(sub.eval(contacts.right)?);
    if gap > ON_SUBSTRATE_TOL {
        return Err(MeshError::OffSubstrate { end: "outer", gap });
    }
    match contacts.left {
        Some(c) => {
            let gap = nodes[0].distance(sub.eval(c)?);
            if gap > ON_SUBSTRATE_TOL {
                return Err(MeshError::OffSubstrate { end: "inner", gap });
            }
            Ok(c)
        }
        None => {
            let c = sub.c_min();
            let gap = nodes[0].r.abs().max(sub.point_ext(c).r.abs());
            if gap > ON_SUBSTRATE_TOL {
                return Err(MeshError::OffSubstrate { end: "axis", gap });
            }
            Ok(c)
        }
    }
}

/// Enclosed volume `2π[Σ_e ∫_e r z dr − ∫_{c_l}^{c_r} r̂ ẑ ∂_c r̂ dc]`.
///
/// In axis mode the region is closed along the axis, which contributes
/// nothing, and the substrate integral starts where the substrate meets it.
pub fn discrete_volume(curve: &DiscreteCurve, sub: &SubstrateCurve, contacts: Contacts) -> Result<f64, MeshError> {
    let c_l = check_contacts(curve.nodes(), sub, contacts)?;
    Ok(volume_ext(curve.nodes(), sub, c_l, contacts.right))
}

#[inline]
pub(crate) fn volume_ext(nodes: &[PlaneVector], sub: &SubstrateCurve, c_l: f64, c_r: f64) -> f64 {
    let film: f64 = nodes.windows(2).map(|w| segment_rzr(w[0], w[1])).sum();
    2.0 * PI * (film - sub.moment_rzr_ext(c_l, c_r))
}

/// Total free energy `2π Σ_e γ(θ_e) r̄_e |e| − 2πσ ∫_{c_l}^{c_r} r̂ dc`.
pub fn discrete_energy(
    curve: &DiscreteCurve,
    sub: &SubstrateCurve,
    model: &AnisotropyModel,
    sigma: f64,
    contacts: Contacts,
) -> Result<f64, MeshError> {
    let c_l = check_contacts(curve.nodes(), sub, contacts)?;
    Ok(energy_ext(curve.nodes(), sub, model, sigma, c_l, contacts.right))
}

pub(crate) fn energy_ext(
    nodes: &[PlaneVector],
    sub: &SubstrateCurve,
    model: &AnisotropyModel,
    sigma: f64,
    c_l: f64,
    c_r: f64,
) -> f64 {
    let film: f64 = nodes
        .windows(2)
        .map(|w| {
            let e = w[1] - w[0];
            0.5 * (w[0].r + w[1].r) * model.gamma(e.angle()).value * e.norm()
        })
        .sum();
    2.0 * PI * (film - sigma * sub.moment_x_ext(c_l, c_r))
}

/// Redistributes a polyline to `n_elements` equal-arclength elements,
/// interpolating a nodal scalar along with it. End points are kept exactly.
pub fn resample_equal_arclength(
    nodes: &[PlaneVector],
    values: &[f64],
    n_elements: usize,
) -> (Vec<PlaneVector>, Vec<f64>) {
    assert_eq!(nodes.len(), values.len());
    let mut cum = vec![0.0];
    for w in nodes.windows(2) {
        cum.push(cum.last().unwrap() + w[0].distance(w[1]));
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n_elements + 1);
    let mut vals = Vec::with_capacity(n_elements + 1);
    let mut seg = 0;
    for k in 0..=n_elements {
        let s = total * k as f64 / n_elements as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(nodes[seg] + (nodes[seg + 1] - nodes[seg]) * t);
        vals.push(values[seg] + (values[seg + 1] - values[seg]) * t);
    }
    out[0] = nodes[0];
    out[n_elements] = *nodes.last().unwrap();
    vals[0] = values[0];
    vals[n_elements] = *values.last().unwrap();
    (out, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anisotropy::{GammaKind, StabilizerSpec};
    use crate::quadrature::gauss5_composite;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(r: f64, z: f64) -> PlaneVector {
        PlaneVector::new(r, z)
    }

    /// `π ∮ r² dz` over a closed polygon (frustum sum). Counter-clockwise
    /// loops give minus the revolved volume.
    fn frustum_loop(poly: &[PlaneVector]) -> f64 {
        let n = poly.len();
        (0..n)
            .map(|k| {
                let (p, q) = (poly[k], poly[(k + 1) % n]);
                PI / 3.0 * (q.z - p.z) * (p.r * p.r + p.r * q.r + q.r * q.r)
            })
            .sum()
    }

    #[test]
    fn curve_caches_and_validation() {
        let c = DiscreteCurve::new(vec![pv(0.0, 1.0), pv(1.0, 1.0), pv(1.0, 0.0)]).unwrap();
        assert_eq!(c.n_elements(), 2);
        assert_eq!(c.lengths(), &[1.0, 1.0]);
        assert!((c.angle(1) + PI / 2.0).abs() < 1e-15);
        assert_eq!(c.normal(0), pv(0.0, 1.0));
        assert!(matches!(DiscreteCurve::new(vec![pv(1.0, 0.0)]), Err(MeshError::TooFewNodes(1))));
        assert!(matches!(
            DiscreteCurve::new(vec![pv(1.0, 0.0), pv(1.0, 0.0)]),
            Err(MeshError::ZeroLength(0))
        ));
        assert!(matches!(
            DiscreteCurve::new(vec![pv(1.0, 0.0), pv(0.0, 1.0), pv(1.0, 2.0)]),
            Err(MeshError::NonPositiveRadius { node: 1, .. })
        ));
    }

    #[test]
    fn lumped_inner_examples() {
        let c = DiscreteCurve::new(vec![pv(1.0, 0.0), pv(2.0, 0.0), pv(2.0, 3.0), pv(4.0, 3.0)]).unwrap();
        let n = c.n_elements();
        // Weights |∂_ρ X| = N·length turn the ρ-measure into arclength.
        let weights: Vec<f64> = c.lengths().iter().map(|l| l * n as f64).collect();
        let one = ScalarField::Nodal(vec![1.0; n + 1]);
        assert!((lumped_inner(&one, &one, &weights).unwrap() - c.total_length()).abs() < 1e-14);
        let mut hat = vec![0.0; n + 1];
        hat[1] = 1.0;
        let hat = ScalarField::Nodal(hat);
        let got = lumped_inner(&hat, &hat, &weights).unwrap();
        assert!((got - (c.element_length(0) + c.element_length(1)) / 3.0).abs() < 1e-14);
        let piece = ScalarField::PerElement(vec![2.0, 5.0, -1.0]);
        let got = lumped_inner(&one, &piece, &[1.0; 3]).unwrap();
        assert!((got - 6.0 / 3.0).abs() < 1e-14);
        assert!(lumped_inner(&one, &piece, &[1.0; 2]).is_err());
    }

    #[test]
    fn weighted_normal_of_identical_curves() {
        let x = vec![pv(0.5, 0.0), pv(1.0, 1.0), pv(2.0, 1.5)];
        let f = weighted_normal(&x, &x).unwrap();
        let c = DiscreteCurve::new(x.clone()).unwrap();
        for e in 0..2 {
            let (l, r) = f.ends(e);
            let scale = c.element_length(e) * 2.0;
            assert!((l - c.normal(e) * (x[e].r * scale)).norm() < 1e-14);
            assert!((r - c.normal(e) * (x[e + 1].r * scale)).norm() < 1e-14);
        }
        let degenerate = vec![pv(1.0, 1.0), pv(1.0, 1.0)];
        let f = weighted_normal(&degenerate, &degenerate).unwrap();
        assert_eq!(f.ends(0), (PlaneVector::ZERO, PlaneVector::ZERO));
    }

    #[test]
    fn flat_boundary_vector() {
        let s = SubstrateCurve::flat(10.0).unwrap();
        let g = boundary_vector_g(&s, 1.0, 2.0);
        assert!((g - pv(1.5, 0.0)).norm() < 1e-14);
        let g = boundary_vector_g(&s, 3.0, 3.0);
        assert!((g - pv(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn boundary_vector_limit_is_continuous() {
        let s = SubstrateCurve::hemisphere(9.0).unwrap();
        let limit = boundary_vector_g(&s, 2.0, 2.0);
        for e in 4..14 {
            let dc = 10f64.powi(-e);
            let g = boundary_vector_g(&s, 2.0, 2.0 + dc);
            assert!((g - limit).norm() < 2.0 * dc + 1e-13, "{dc}: {:?} vs {:?}", g, limit);
        }
    }

    #[test]
    fn flat_cap_volume_vanishes() {
        let s = SubstrateCurve::flat(10.0).unwrap();
        assert!(rotated_cap_volume(&s, 1.0, 7.0).unwrap().abs() < 1e-12);
    }

    /// Revolved volume of the circular segment between chord and arc for a
    /// circle centered on the axis, by polar quadrature about the center.
    fn segment_volume_oracle(radius: f64, center_z: f64, p: PlaneVector, q: PlaneVector) -> f64 {
        let (a, b) = ((p.z - center_z).atan2(p.r), (q.z - center_z).atan2(q.r));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let c = PlaneVector::new(0.0, center_z);
        let chord = q - p;
        let normal = chord.perp().normalized();
        let dist = (p - c).dot(normal).abs();
        let mid = (normal * (p - c).dot(normal)).angle();
        gauss5_composite(lo, hi, 400, |psi| {
            let inner = dist / (psi - mid).cos();
            // ∫ r dA in polar coordinates with r = ρ cos ψ.
            2.0 * PI * psi.cos() * (radius.powi(3) - inner.powi(3)) / 3.0
        })
    }

    #[test]
    fn cap_volume_matches_segment_oracle() {
        let hemi = SubstrateCurve::hemisphere(9.0).unwrap();
        let (c1, c2) = (1.0, 1.5);
        let oracle = segment_volume_oracle(9.0, 0.0, hemi.point_ext(c1), hemi.point_ext(c2));
        let h = rotated_cap_volume(&hemi, c1, c2).unwrap();
        // Convex substrate: the arc lies on the far side of the chord.
        assert!((h + oracle).abs() < 1e-10 * oracle.abs(), "{h} vs {oracle}");
        let bowl = SubstrateCurve::bowl(5.0).unwrap();
        let oracle = segment_volume_oracle(5.0, 5.0, bowl.point_ext(c1), bowl.point_ext(c2));
        let h = rotated_cap_volume(&bowl, c1, c2).unwrap();
        assert!((h - oracle).abs() < 1e-10 * oracle.abs(), "{h} vs {oracle}");
    }

    #[test]
    fn short_cap_volume_is_accurate() {
        let s = SubstrateCurve::hemisphere(9.0).unwrap();
        // Both evaluation paths agree where they meet.
        let (a, b) = (cap_volume_ext(&s, 1.0, 1.0 + 0.0099), cap_volume_ext(&s, 1.0, 1.0 + 0.0101));
        let expected_ratio = (0.0101f64 / 0.0099).powi(3);
        assert!((b / a / expected_ratio - 1.0).abs() < 1e-2);
        for e in 3..8 {
            let dc = 10f64.powi(-e);
            let h = cap_volume_ext(&s, 1.0, 1.0 + dc);
            // Pappus: area R²(φ - sin φ)/2 times centroid radius, cancellation free.
            let (p, q) = (s.point_ext(1.0), s.point_ext(1.0 + dc));
            let half = dc / 9.0 / 2.0;
            let mid = ((p + q) * 0.5).angle();
            let oracle = 4.0 * PI / 3.0 * 9f64.powi(3) * half.sin().powi(3) * mid.cos();
            // Node roundoff leaves an absolute floor linear in Δc; plain differencing sits near 1e-16.
            assert!((h + oracle).abs() < 1e-6 * oracle.abs() + 1e-13 * dc, "{dc}: {h} vs {oracle}");
        }
    }

    #[test]
    fn cap_volume_out_of_range() {
        let s = SubstrateCurve::hemisphere(9.0).unwrap();
        assert!(matches!(
            rotated_cap_volume(&s, 1.0, 100.0),
            Err(MeshError::Geometry(GeometryError::AboveRange { .. }))
        ));
    }

    #[test]
    fn ring_volume_and_energy() {
        let s = SubstrateCurve::flat(10.0).unwrap();
        let c = DiscreteCurve::new(vec![pv(1.0, 0.0), pv(1.0, 1.0), pv(2.0, 1.0), pv(2.0, 0.0)]).unwrap();
        let contacts = Contacts { left: Some(1.0), right: 2.0 };
        let v = discrete_volume(&c, &s, contacts).unwrap();
        assert!((v - 3.0 * PI).abs() < 1e-13);
        let m = AnisotropyModel::new(GammaKind::Isotropic, StabilizerSpec::Constant(0.0)).unwrap();
        let w = discrete_energy(&c, &s, &m, 0.5, contacts).unwrap();
        // Walls 2π·1 + 2π·2, top π(4 − 1), substrate term −σ π(4 − 1).
        assert!((w - (6.0 * PI + 3.0 * PI - 1.5 * PI)).abs() < 1e-13);
        let off = Contacts { left: Some(1.5), right: 2.0 };
        assert!(matches!(discrete_volume(&c, &s, off), Err(MeshError::OffSubstrate { .. })));
    }

    #[test]
    fn volume_matches_frustum_oracle() {
        let s = SubstrateCurve::hemisphere(9.0).unwrap();
        let (c_l, c_r) = (0.8, 2.4);
        let mut nodes = vec![s.point_ext(c_l)];
        for k in 1..20 {
            let c = c_l + (c_r - c_l) * k as f64 / 20.0;
            nodes.push(s.point_ext(c) + s.tangent_ext(c).rot90() * (0.3 * (PI * k as f64 / 20.0).sin()));
        }
        nodes.push(s.point_ext(c_r));
        let c = DiscreteCurve::new(nodes.clone()).unwrap();
        let v = discrete_volume(&c, &s, Contacts { left: Some(c_l), right: c_r }).unwrap();
        // Close with a finely sampled substrate arc; the sagitta error is O(δc²).
        let mut poly = nodes;
        let m = 20000;
        for k in (1..m).rev() {
            poly.push(s.point_ext(c_l + (c_r - c_l) * k as f64 / m as f64));
        }
        let oracle = frustum_loop(&poly);
        assert!((v + oracle).abs() < 1e-7 * v.abs(), "{v} vs {}", -oracle);
    }

    #[test]
    fn cap_volume_defect_is_revolved_triangle() {
        let s = SubstrateCurve::bowl(5.0).unwrap();
        let (a, b, c) = (0.3, 1.1, 2.9);
        let defect = rotated_cap_volume(&s, a, b).unwrap() + rotated_cap_volume(&s, b, c).unwrap()
            - rotated_cap_volume(&s, a, c).unwrap();
        let (p, q, r) = (s.point_ext(a), s.point_ext(b), s.point_ext(c));
        let signed_area = 0.5 * (q - p).cross(r - p);
        let centroid_r = (p.r + q.r + r.r) / 3.0;
        assert!((defect + 2.0 * PI * centroid_r * signed_area).abs() < 1e-12 * (1.0 + defect.abs()));
    }

    fn random_polyline(rng: &mut ChaCha8Rng, n: usize) -> Vec<PlaneVector> {
        (0..=n).map(|_| pv(rng.gen_range(0.1..5.0), rng.gen_range(-3.0..3.0))).collect()
    }

    #[test]
    fn weighted_normal_sweeps_revolved_polygon() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(2..20);
            let x = random_polyline(&mut rng, n);
            let y = random_polyline(&mut rng, n);
            let f = weighted_normal(&x, &y).unwrap();
            let dx: Vec<PlaneVector> = x.iter().zip(&y).map(|(a, b)| *b - *a).collect();
            let lhs = 2.0 * PI * lumped_inner_vec(&VectorField::Nodal(dx), &f, &vec![1.0; n]).unwrap();
            // Loop: along X, across to Y at the far end, back along Y.
            let mut poly = x.clone();
            poly.extend(y.iter().rev());
            let oracle = frustum_loop(&poly);
            let scale = 1.0 + oracle.abs();
            assert!((lhs - oracle).abs() < 1e-10 * scale, "{lhs} vs {oracle}");
        }
    }

    #[test]
    fn volume_correction_restores_cap_volumes() {
        let s = SubstrateCurve::hemisphere(9.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(3..30);
            let before = Contacts { left: Some(rng.gen_range(0.5..1.0)), right: rng.gen_range(3.0..4.0) };
            let after = Contacts {
                left: before.left.map(|c| c + rng.gen_range(-0.1..0.1)),
                right: before.right + rng.gen_range(-0.1..0.1),
            };
            let mut old = random_polyline(&mut rng, n);
            let mut new = random_polyline(&mut rng, n);
            old[0] = s.point_ext(before.left.unwrap());
            old[n] = s.point_ext(before.right);
            new[0] = s.point_ext(after.left.unwrap());
            new[n] = s.point_ext(after.right);
            let df = volume_correction(&old, &new, &s, before, after).unwrap();
            let dx: Vec<PlaneVector> = old.iter().zip(&new).map(|(a, b)| *b - *a).collect();
            let got = 2.0 * PI * lumped_inner_vec(&VectorField::Nodal(dx), &df, &vec![1.0; n]).unwrap();
            let h_l = rotated_cap_volume(&s, before.left.unwrap(), after.left.unwrap()).unwrap();
            let h_r = rotated_cap_volume(&s, before.right, after.right).unwrap();
            assert!((got - (h_r - h_l)).abs() < 1e-12 * (1.0 + h_r.abs() + h_l.abs()));
        }
    }

    #[test]
    fn resampling_keeps_shape_and_ends() {
        let nodes = vec![pv(0.0, 0.0), pv(1.0, 0.0), pv(1.0, 3.0)];
        let (out, vals) = resample_equal_arclength(&nodes, &[0.0, 1.0, 4.0], 8);
        assert_eq!(out.len(), 9);
        assert_eq!(out[0], nodes[0]);
        assert_eq!(out[8], nodes[2]);
        for w in out.windows(2) {
            assert!((w[0].distance(w[1]) - 0.5).abs() < 1e-14);
        }
        assert!((out[2] - pv(1.0, 0.0)).norm() < 1e-14 && (vals[2] - 1.0).abs() < 1e-14);
        assert!((vals[5] - 2.5).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn lumped_inner_is_symmetric_and_bilinear(
            vals in proptest::collection::vec(-5.0f64..5.0, 18),
            a in -3.0f64..3.0,
        ) {
            let n = 5;
            let v = ScalarField::Nodal(vals[0..6].to_vec());
            let w = ScalarField::Nodal(vals[6..12].to_vec());
            let u = ScalarField::Nodal(vals[12..18].to_vec());
            let weights = [1.0, 0.5, 2.0, 1.5, 0.25];
            prop_assert!(weights.len() == n);
            let vw = lumped_inner(&v, &w, &weights).unwrap();
            prop_assert!((vw - lumped_inner(&w, &v, &weights).unwrap()).abs() < 1e-12);
            let comb: Vec<f64> = vals[0..6].iter().zip(&vals[12..18]).map(|(x, y)| a * x + y).collect();
            let lhs = lumped_inner(&ScalarField::Nodal(comb), &w, &weights).unwrap();
            let rhs = a * vw + lumped_inner(&u, &w, &weights).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-11);
            prop_assert!(lumped_inner(&v, &v, &weights).unwrap() >= 0.0);
        }

        #[test]
        fn cap_volume_is_antisymmetric(a in 0.0f64..14.0, b in 0.0f64..14.0) {
            let s = SubstrateCurve::hemisphere(9.0).unwrap();
            let sum = rotated_cap_volume(&s, a, b).unwrap() + rotated_cap_volume(&s, b, a).unwrap();
            prop_assert!(sum.abs() < 1e-11);
        }
    }
}
