//! Initial films and the named experiment setups.

use crate::geometry::{SubstrateCurve, SubstrateKind};
use crate::mesh::{resample_equal_arclength, Contacts, DiscreteCurve};
use crate::solver::{FilmState, SolverError};
use crate::vector::PlaneVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Description of an initial film.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FilmSpec {
    /// Circle of the given radius centered where the substrate meets the
    /// axis, cut off by the substrate. The inner end sits on the axis.
    CapAtAxis { radius: f64 },
    /// Layer of uniform normal thickness over `[c_start, c_end]` with vertical
    /// side walls. Starting at the axis arclength gives an axis-mode film.
    Layer { c_start: f64, c_end: f64, thickness: f64 },
    /// Explicit nodes; the ends must lie on the substrate (or the first on the axis).
    Points { points: Vec<[f64; 2]>, c_left: Option<f64>, c_right: f64 },
}

fn invalid(msg: String) -> SolverError {
    SolverError::Invalid(msg)
}

/// Builds the initial film with `n` elements.
pub fn build_film(sub: &SubstrateCurve, spec: &FilmSpec, n: usize) -> Result<FilmState, SolverError> {
    if n < 2 {
        return Err(invalid(format!("a film needs at least 2 elements, got {n}")));
    }
    match spec {
        FilmSpec::CapAtAxis { radius } => cap_at_axis(sub, *radius, n),
        FilmSpec::Layer { c_start, c_end, thickness } => layer(sub, *c_start, *c_end, *thickness, n),
        FilmSpec::Points { points, c_left, c_right } => {
            let nodes: Vec<PlaneVector> = points.iter().map(|p| PlaneVector::new(p[0], p[1])).collect();
            if nodes.len() != n + 1 {
                let mu = vec![0.0; nodes.len()];
                let (nodes, _) = resample_equal_arclength(&nodes, &mu, n);
                return finish(sub, nodes, *c_left, *c_right);
            }
            finish(sub, nodes, *c_left, *c_right)
        }
    }
}

fn finish(
    sub: &SubstrateCurve,
    mut nodes: Vec<PlaneVector>,
    c_left: Option<f64>,
    c_right: f64,
) -> Result<FilmState, SolverError> {
    match c_left {
        Some(c) => nodes[0] = sub.eval(c)?,
        // The axis end is tied to its neighbor's height.
        None => nodes[0] = PlaneVector::new(0.0, nodes[1].z),
    }
    *nodes.last_mut().unwrap() = sub.eval(c_right)?;
    let curve = DiscreteCurve::new(nodes)?;
    FilmState::new(curve, Contacts { left: c_left, right: c_right }, sub)
}

fn cap_at_axis(sub: &SubstrateCurve, radius: f64, n: usize) -> Result<FilmState, SolverError> {
    let c0 = sub
        .axis_arclength()
        .ok_or_else(|| invalid("a cap at the axis needs a substrate that starts on the axis".into()))?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid(format!("cap radius must be positive, got {radius}")));
    }
    let center = sub.point_ext(c0);
    // First crossing of the circle, found by bisection on the distance.
    let dist = |c: f64| sub.point_ext(c).distance(center) - radius;
    let mut hi = c0;
    let step = radius / 64.0;
    while dist(hi) < 0.0 {
        hi += step;
        if hi > sub.c_max() {
            return Err(invalid("cap radius exceeds the substrate".into()));
        }
    }
    let mut lo = hi - step;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c_r = 0.5 * (lo + hi);
    let foot = sub.point_ext(c_r);
    let phi_end = (foot.r).atan2(foot.z - center.z);
    let nodes: Vec<PlaneVector> = (0..=n)
        .map(|j| {
            let phi = phi_end * j as f64 / n as f64;
            center + PlaneVector::new(phi.sin(), phi.cos()) * radius
        })
        .collect();
    finish(sub, nodes, None, c_r)
}

fn layer(sub: &SubstrateCurve, c_start: f64, c_end: f64, thickness: f64, n: usize) -> Result<FilmState, SolverError> {
    if !(c_end > c_start && thickness > 0.0) {
        return Err(invalid(format!("layer needs c_start < c_end and thickness > 0, got [{c_start}, {c_end}], {thickness}")));
    }
    sub.eval(c_start)?;
    sub.eval(c_end)?;
    let on_axis = sub.axis_arclength().is_some_and(|c| (c - c_start).abs() < 1e-12);
    let offset = |c: f64| sub.point_ext(c) + sub.tangent_ext(c).rot90() * thickness;
    let samples = 4000;
    let top: Vec<PlaneVector> =
        (0..=samples).map(|k| offset(c_start + (c_end - c_start) * k as f64 / samples as f64)).collect();
    let top_length: f64 = top.windows(2).map(|w| w[0].distance(w[1])).sum();
    // Corners stay on nodes, with counts per side proportional to length, so
    // refining `n` nests the meshes.
    let walls = if on_axis { 1.0 } else { 2.0 };
    let n_wall = ((n as f64 * thickness / (top_length + walls * thickness)).round() as usize).max(1);
    let n_top = n
        .checked_sub(n_wall * walls as usize)
        .filter(|&k| k >= 1)
        .ok_or_else(|| invalid(format!("{n} elements cannot resolve a layer of thickness {thickness}")))?;
    let mu = vec![0.0; top.len()];
    let (top_nodes, _) = resample_equal_arclength(&top, &mu, n_top);
    let wall = |from: PlaneVector, to: PlaneVector, skip_first: bool| {
        (usize::from(skip_first)..=n_wall).map(move |k| from + (to - from) * (k as f64 / n_wall as f64))
    };
    let mut nodes: Vec<PlaneVector> = Vec::with_capacity(n + 1);
    if on_axis {
        nodes.extend(top_nodes.iter().copied());
        nodes[0].r = 0.0;
    } else {
        nodes.extend(wall(sub.point_ext(c_start), top_nodes[0], false));
        nodes.extend(top_nodes[1..].iter().copied());
    }
    nodes.extend(wall(*top_nodes.last().expect("nonempty"), sub.point_ext(c_end), true));
    finish(sub, nodes, (!on_axis).then_some(c_start), c_end)
}

/// Named setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Spherical film of radius 1.5 at the apex of the hemisphere `r² + z² = 81`.
    CaseI,
    /// Toroidal film of thickness 0.5 on the same hemisphere.
    #[serde(rename = "case-ii")]
    CaseII,
    /// Spherical film of radius 1.8 at the bottom of the bowl `r² + (z − 5)² = 25`.
    #[serde(rename = "case-iii")]
    CaseIII,
    /// Toroidal film about one period long on `z = 0.2 sin(π r)`.
    SinusoidFine,
    /// Short toroidal film on the slope of `z = 4 sin(r/4)`.
    SinusoidCoarse,
    /// Long film of thickness 0.5 on a sphere of radius 30.
    Pinch,
    /// Long toroidal film whose outer edge sits below a height-1 step with
    /// fillets of radius 0.5.
    Edge,
}

/// Substrate, initial film and default run parameters of a preset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub substrate: SubstrateKind,
    pub film: FilmSpec,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Choices not fixed by the experiment description, kept for manifests.
    pub guesses: Vec<&'static str>,
}

/// Corner points of the edge preset substrate before filleting: a height-1
/// step whose slope revolves into a cone frustum.
pub const EDGE_VERTICES: [[f64; 2]; 4] = [[0.0, 1.0], [30.0, 1.0], [33.0, 0.0], [60.0, 0.0]];

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::CaseI => "case-i",
            Preset::CaseII => "case-ii",
            Preset::CaseIII => "case-iii",
            Preset::SinusoidFine => "sinusoid-fine",
            Preset::SinusoidCoarse => "sinusoid-coarse",
            Preset::Pinch => "pinch",
            Preset::Edge => "edge",
        }
    }

    pub fn scenario(self) -> Scenario {
        let hemisphere = SubstrateKind::CircularArc {
            center: [0.0, 0.0],
            radius: 9.0,
            start_angle: PI / 2.0,
            clockwise: true,
            length: 9.0 * PI / 2.0,
        };
        match self {
            Preset::CaseI => Scenario {
                substrate: hemisphere,
                film: FilmSpec::CapAtAxis { radius: 1.5 },
                n: 128,
                dt: 2f64.powi(-9),
                t_end: 2.0,
                guesses: vec![],
            },
            Preset::CaseII => Scenario {
                substrate: hemisphere,
                film: FilmSpec::Layer { c_start: 1.5, c_end: 4.5, thickness: 0.5 },
                n: 128,
                dt: 2f64.powi(-9),
                t_end: 2.0,
                guesses: vec!["film extent c in [1.5, 4.5]"],
            },
            Preset::CaseIII => Scenario {
                substrate: SubstrateKind::CircularArc {
                    center: [0.0, 5.0],
                    radius: 5.0,
                    start_angle: -PI / 2.0,
                    clockwise: false,
                    length: 5.0 * PI / 2.0,
                },
                film: FilmSpec::CapAtAxis { radius: 1.8 },
                n: 128,
                dt: 2f64.powi(-9),
                t_end: 2.0,
                guesses: vec![],
            },
            Preset::SinusoidFine => Scenario {
                substrate: SubstrateKind::Sinusoid { amplitude: 0.2, wavenumber: PI, offset: 0.0, r_max: 6.0 },
                film: FilmSpec::Layer { c_start: 0.3, c_end: 2.4, thickness: 0.5 },
                n: 128,
                dt: 2f64.powi(-9),
                t_end: 5.0,
                guesses: vec!["film extent c in [0.3, 2.4]", "film thickness 0.5"],
            },
            Preset::SinusoidCoarse => Scenario {
                substrate: SubstrateKind::Sinusoid { amplitude: 4.0, wavenumber: 0.25, offset: 0.0, r_max: 40.0 },
                film: FilmSpec::Layer { c_start: 23.0, c_end: 25.0, thickness: 0.5 },
                n: 128,
                dt: 2f64.powi(-9),
                t_end: 10.0,
                guesses: vec!["film extent c in [23, 25]", "film thickness 0.5"],
            },
            Preset::Pinch => Scenario {
                substrate: SubstrateKind::CircularArc {
                    center: [0.0, 0.0],
                    radius: 30.0,
                    start_angle: PI / 2.0,
                    clockwise: true,
                    length: 30.0 * PI / 2.0,
                },
                film: FilmSpec::Layer { c_start: 0.0, c_end: 22.0, thickness: 0.5 },
                n: 128,
                dt: 2f64.powi(-5),
                t_end: 80.0,
                guesses: vec!["film length 22", "end time 80"],
            },
            Preset::Edge => Scenario {
                substrate: SubstrateKind::PolylineWithFillets { vertices: EDGE_VERTICES.to_vec(), fillet_radius: 0.5 },
                film: FilmSpec::Layer { c_start: 10.0, c_end: 38.0, thickness: 0.5 },
                n: 256,
                dt: 2f64.powi(-6),
                t_end: 35.0,
                guesses: vec![
                    "step vertices (0,1),(30,1),(33,0),(60,0)",
                    "film extent c in [10, 38], outer edge below the step",
                    "film thickness 0.5",
                ],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_i_cap_meets_hemisphere() {
        let s = Preset::CaseI.scenario();
        let sub = SubstrateCurve::from_kind(&s.substrate).unwrap();
        let film = build_film(&sub, &s.film, 64).unwrap();
        let last = film.curve.last();
        assert!((last.norm() - 9.0).abs() < 1e-12);
        assert!((last.distance(PlaneVector::new(0.0, 9.0)) - 1.5).abs() < 1e-9);
        assert!((last.z - (9.0 - 2.25 / 18.0)).abs() < 1e-9);
        assert!(film.contacts.left.is_none());
        let nodes = film.curve.nodes();
        assert_eq!(nodes[0].r, 0.0);
        assert_eq!(nodes[0].z, nodes[1].z);
    }

    #[test]
    fn case_iii_cap_sits_in_bowl() {
        let s = Preset::CaseIII.scenario();
        let sub = SubstrateCurve::from_kind(&s.substrate).unwrap();
        let film = build_film(&sub, &s.film, 64).unwrap();
        assert!((film.curve.last().norm() - 1.8).abs() < 1e-9);
        assert!(film.volume(&sub).unwrap() > 0.0);
    }

    #[test]
    fn every_preset_builds() {
        for p in [
            Preset::CaseI,
            Preset::CaseII,
            Preset::CaseIII,
            Preset::SinusoidFine,
            Preset::SinusoidCoarse,
            Preset::Pinch,
            Preset::Edge,
        ] {
            let s = p.scenario();
            let sub = SubstrateCurve::from_kind(&s.substrate).unwrap();
            let film = build_film(&sub, &s.film, s.n).unwrap();
            assert_eq!(film.n_elements(), s.n);
            assert!(film.volume(&sub).unwrap() > 0.0, "{}", p.name());
        }
    }

    #[test]
    fn preset_names_round_trip() {
        for p in [Preset::CaseI, Preset::CaseII, Preset::CaseIII, Preset::SinusoidFine, Preset::Pinch] {
            let parsed: Preset = serde_json::from_value(serde_json::Value::String(p.name().into())).unwrap();
            assert_eq!(parsed, p);
        }
    }

    #[test]
    fn layer_volume_matches_shell() {
        // A layer on the hemisphere is a spherical shell segment plus cut corners.
        let sub = SubstrateCurve::hemisphere(9.0).unwrap();
        let (a, b, t) = (1.5, 4.5, 0.5);
        let film = build_film(&sub, &FilmSpec::Layer { c_start: a, c_end: b, thickness: t }, 4000).unwrap();
        let shell = 2.0 * PI / 3.0 * (9.5f64.powi(3) - 9f64.powi(3)) * ((a / 9.0).cos() - (b / 9.0).cos());
        let v = film.volume(&sub).unwrap();
        assert!((v - shell).abs() < 1e-4 * shell, "{v} vs {shell}");
    }
}
