//! Fully implicit time stepping of the coupled curve / chemical-potential
//! system. Each step solves the nonlinear finite element equations with
//! Newton's method on a banded finite-difference Jacobian.
//!
//! The chemical potential carried here is the variable of the weak form,
//! which is the negative of the physical chemical potential.

use crate::anisotropy::{AnisotropyModel, EnergyMatrix};
use crate::banded::{BandLu, BandMatrix};
use crate::geometry::{GeometryError, SubstrateCurve};
use crate::mesh::{
    cap_volume_ext, energy_ext, resample_equal_arclength, volume_correction_ends, volume_ext,
    weighted_normal_element, Contacts, DiscreteCurve, MeshError,
};
use crate::vector::PlaneVector;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Unconditionally energy-decaying scheme.
    EnergyStable,
    /// Adds the end-node volume correction so the enclosed volume is conserved exactly.
    StructurePreserving,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::EnergyStable => "energy-stable",
            Variant::StructurePreserving => "structure-preserving",
        }
    }
}

/// Contact-line mobility `η` and the substrate energy difference `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub eta: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Newton stops once the max-norm of the scaled residual is below this,
    /// after one further polishing iteration.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    /// Relative finite-difference step of the Jacobian.
    pub fd_step: f64,
    pub detect_pinch: bool,
    /// Distance to the substrate at which an interior node pinches off.
    pub pinch_distance: f64,
    pub min_split_nodes: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            newton_tol: 1e-8,
            max_newton: 30,
            max_halvings: 6,
            fd_step: 1e-7,
            detect_pinch: true,
            pinch_distance: 1e-3,
            min_split_nodes: 8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("Newton failed at t = {t} after {halvings} step halvings (last residual {residual:e})")]
    NewtonFailure { t: f64, halvings: usize, residual: f64 },
    #[error("splitting at node {node} leaves a part with fewer than {min} nodes")]
    TooFewNodesAfterSplit { node: usize, min: usize },
    #[error("contact left the substrate range: c = {c}")]
    ContactOutOfRange { c: f64 },
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Both ends are contact points on the substrate.
    TwoContacts,
    /// The inner end sits on the rotation axis.
    AxisInner,
}

/// One connected film component.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmState {
    pub curve: DiscreteCurve,
    /// Weak-form chemical potential at the nodes.
    pub mu: Vec<f64>,
    pub contacts: Contacts,
}

impl FilmState {
    /// Checks that the ends sit on the substrate (or on the axis).
    pub fn new(curve: DiscreteCurve, contacts: Contacts, sub: &SubstrateCurve) -> Result<Self, SolverError> {
        let mu = vec![0.0; curve.nodes().len()];
        let state = Self { curve, mu, contacts };
        state.volume(sub)?;
        Ok(state)
    }

    pub fn mode(&self) -> BoundaryMode {
        if self.contacts.left.is_some() {
            BoundaryMode::TwoContacts
        } else {
            BoundaryMode::AxisInner
        }
    }

    pub fn n_elements(&self) -> usize {
        self.curve.n_elements()
    }

    pub fn volume(&self, sub: &SubstrateCurve) -> Result<f64, SolverError> {
        Ok(crate::mesh::discrete_volume(&self.curve, sub, self.contacts)?)
    }

    pub fn energy(&self, sub: &SubstrateCurve, model: &AnisotropyModel, sigma: f64) -> Result<f64, SolverError> {
        Ok(crate::mesh::discrete_energy(&self.curve, sub, model, sigma, self.contacts)?)
    }

    /// Physical chemical potential (sign flipped from the weak-form variable).
    pub fn physical_mu(&self) -> Vec<f64> {
        self.mu.iter().map(|m| -m).collect()
    }

    fn inner_c(&self, sub: &SubstrateCurve) -> f64 {
        self.contacts.left.unwrap_or(sub.c_min())
    }
}

/// Everything needed to evaluate the discrete equations of one step.
struct StepProblem<'a> {
    sub: &'a SubstrateCurve,
    model: &'a AnisotropyModel,
    material: Material,
    variant: Variant,
    dt: f64,
    old: &'a FilmState,
    axis: bool,
    n: usize,
    offsets: Vec<usize>,
    b_old: Vec<EnergyMatrix>,
    /// `r̄^m_e / |e^m|`.
    weight_old: Vec<f64>,
}

impl<'a> StepProblem<'a> {
    fn new(
        sub: &'a SubstrateCurve,
        model: &'a AnisotropyModel,
        material: Material,
        variant: Variant,
        dt: f64,
        old: &'a FilmState,
    ) -> Self {
        let nodes = old.curve.nodes();
        let n = old.curve.n_elements();
        let axis = old.contacts.left.is_none();
        let mut offsets = Vec::with_capacity(n + 2);
        let mut k = 0;
        for i in 0..=n {
            offsets.push(k);
            k += Self::node_size(axis, n, i);
        }
        offsets.push(k);
        let b_old = (0..n).map(|e| model.energy_matrix(old.curve.angle(e))).collect();
        let weight_old = (0..n)
            .map(|e| 0.5 * (nodes[e].r + nodes[e + 1].r) / old.curve.element_length(e))
            .collect();
        Self { sub, model, material, variant, dt, old, axis, n, offsets, b_old, weight_old }
    }

    fn node_size(axis: bool, n: usize, i: usize) -> usize {
        if i == 0 {
            if axis {
                1
            } else {
                2
            }
        } else if i == n {
            2
        } else {
            3
        }
    }

    fn dim(&self) -> usize {
        self.offsets[self.n + 1]
    }

    fn node_of_unknown(&self) -> Vec<usize> {
        let mut owner = vec![0; self.dim()];
        for i in 0..=self.n {
            owner[self.offsets[i]..self.offsets[i + 1]].fill(i);
        }
        owner
    }

    #[allow(clippy::needless_range_loop)] // node 0 and node n are packed differently
    fn pack(&self, state: &FilmState) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        let nodes = state.curve.nodes();
        for i in 0..=self.n {
            let o = self.offsets[i];
            if i == 0 {
                match state.contacts.left {
                    Some(c) => {
                        x[o] = c;
                        x[o + 1] = state.mu[0];
                    }
                    None => x[o] = state.mu[0],
                }
            } else if i == self.n {
                x[o] = state.contacts.right;
                x[o + 1] = state.mu[i];
            } else {
                x[o] = nodes[i].r;
                x[o + 1] = nodes[i].z;
                x[o + 2] = state.mu[i];
            }
        }
        x
    }

    /// Returns nodes, μ, inner contact (if any) and outer contact.
    fn unpack(&self, x: &[f64]) -> (Vec<PlaneVector>, Vec<f64>, Option<f64>, f64) {
        let n = self.n;
        let mut nodes = vec![PlaneVector::ZERO; n + 1];
        let mut mu = vec![0.0; n + 1];
        let mut c_l = None;
        for i in 1..n {
            let o = self.offsets[i];
            nodes[i] = PlaneVector::new(x[o], x[o + 1]);
            mu[i] = x[o + 2];
        }
        if self.axis {
            // r pinned at zero, z tied to the neighbor so the first chord is horizontal.
            mu[0] = x[0];
            nodes[0] = PlaneVector::new(0.0, if n > 1 { nodes[1].z } else { self.old.curve.first().z });
        } else {
            c_l = Some(x[0]);
            mu[0] = x[1];
            nodes[0] = self.sub.point_ext(x[0]);
        }
        let o = self.offsets[n];
        let c_r = x[o];
        mu[n] = x[o + 1];
        nodes[n] = self.sub.point_ext(c_r);
        (nodes, mu, c_l, c_r)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let inv_h = n as f64;
        let h = 1.0 / inv_h;
        let (new, mu, c_l, c_r) = self.unpack(x);
        let old = self.old.curve.nodes();
        let c_l_old = self.old.contacts.left;
        let c_r_old = self.old.contacts.right;

        let (df0, df_n) = match self.variant {
            Variant::EnergyStable => (PlaneVector::ZERO, PlaneVector::ZERO),
            Variant::StructurePreserving => {
                let h_l = match (c_l_old, c_l) {
                    (Some(a), Some(b)) => cap_volume_ext(self.sub, a, b),
                    _ => 0.0,
                };
                let h_r = cap_volume_ext(self.sub, c_r_old, c_r);
                volume_correction_ends(old, &new, h_l, h_r)
            }
        };

        // (a): lumped (ΔX·f_*, φ_i) − Δt (r^m μ_ρ, φ_ρ/|X^m_ρ|), and
        // (b): vector rows of the curvature equation.
        let mut ra = vec![0.0; n + 1];
        let mut rb = vec![PlaneVector::ZERO; n + 1];
        for e in 0..n {
            let (mut fl, mut fr) = weighted_normal_element(old[e], old[e + 1], new[e], new[e + 1], inv_h);
            if e == 0 {
                fl += df0;
            }
            if e + 1 == n {
                fr += df_n;
            }
            let fm = (fl + fr) * 0.5;
            let dl = new[e] - old[e];
            let dr = new[e + 1] - old[e + 1];
            let dm = (dl + dr) * 0.5;
            let gm = dm.dot(fm);
            ra[e] += h / 6.0 * (dl.dot(fl) + 2.0 * gm);
            ra[e + 1] += h / 6.0 * (2.0 * gm + dr.dot(fr));
            let flux = self.dt * self.weight_old[e] * (mu[e + 1] - mu[e]);
            ra[e] += flux;
            ra[e + 1] -= flux;

            let mm = 0.5 * (mu[e] + mu[e + 1]);
            rb[e] += (fl * mu[e] + fm * (2.0 * mm)) * (h / 6.0);
            rb[e + 1] += (fm * (2.0 * mm) + fr * mu[e + 1]) * (h / 6.0);

            let edge = new[e + 1] - new[e];
            let half_energy = 0.5 * self.model.gamma(edge.angle()).value * edge.norm();
            rb[e].r += half_energy;
            rb[e + 1].r += half_energy;
            let stiff = self.b_old[e].apply(edge) * self.weight_old[e];
            rb[e] -= stiff;
            rb[e + 1] += stiff;
        }

        let mut out = vec![0.0; self.dim()];
        let eta_dt = self.material.eta * self.dt;
        let sigma = self.material.sigma;
        for i in 0..=n {
            let o = self.offsets[i];
            if i == 0 {
                if let (Some(c), Some(c_old)) = (c_l, c_l_old) {
                    let d = self.sub.chord_over_dc(c_old, c);
                    let mean = self.sub.mean_x(c_old, c);
                    out[o] = rb[0].dot(d) + mean * (c - c_old) / eta_dt + sigma * mean;
                    out[o + 1] = ra[0] * inv_h;
                } else {
                    out[o] = ra[0] * inv_h;
                }
            } else if i == n {
                let d = self.sub.chord_over_dc(c_r_old, c_r);
                let mean = self.sub.mean_x(c_r_old, c_r);
                out[o] = rb[n].dot(d) + mean * (c_r - c_r_old) / eta_dt - sigma * mean;
                out[o + 1] = ra[n] * inv_h;
            } else {
                let mut z_row = rb[i].z;
                if self.axis && i == 1 {
                    z_row += rb[0].z;
                }
                out[o] = rb[i].r * inv_h;
                out[o + 1] = z_row * inv_h;
                out[o + 2] = ra[i] * inv_h;
            }
        }
        out
    }

    /// Colored central-difference Jacobian. Columns three nodes apart touch
    /// disjoint rows, so nine residual pairs fill the whole band.
    fn jacobian(&self, x: &[f64], fd_step: f64, owner: &[usize]) -> BandMatrix {
        let dim = self.dim();
        let band = 5;
        let mut jac = BandMatrix::zeros(dim, band, band);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for color in 0..3 {
            for slot in 0..3 {
                let mut cols = Vec::new();
                for i in (color..=self.n).step_by(3) {
                    let o = self.offsets[i];
                    if o + slot < self.offsets[i + 1] {
                        let k = o + slot;
                        let step = fd_step * x[k].abs().max(1.0);
                        xp[k] = x[k] + step;
                        xm[k] = x[k] - step;
                        cols.push((k, xp[k] - xm[k]));
                    }
                }
                if cols.is_empty() {
                    continue;
                }
                let rp = self.residual(&xp);
                let rm = self.residual(&xm);
                for &(k, width) in &cols {
                    xp[k] = x[k];
                    xm[k] = x[k];
                    let i = owner[k];
                    let lo = self.offsets[i.saturating_sub(1)];
                    let hi = self.offsets[(i + 2).min(self.n + 1)];
                    for row in lo..hi {
                        jac.set(row, k, (rp[row] - rm[row]) / width);
                    }
                }
            }
        }
        jac
    }

    fn admissible(&self, x: &[f64]) -> bool {
        (1..self.n).all(|i| x[self.offsets[i]] > 0.0) && x.iter().all(|v| v.is_finite())
    }
}

/// Residual contraction a full Newton step must achieve for its Jacobian
/// factorization to be reused on the next iteration.
const JACOBIAN_REUSE_RATIO: f64 = 0.03;

/// Relative Newton increment treated as pure rounding.
const ROUNDING_INCREMENT: f64 = 1e-13;

/// How far above the tolerance a rounding-limited residual may sit.
const ROUNDING_SLACK: f64 = 100.0;

fn max_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Outcome of one Newton solve.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub state: FilmState,
    pub iterations: usize,
    pub residual: f64,
}

/// A factored Newton Jacobian carried from one solve to the next. Successive
/// time steps change the Jacobian little, so a stale factorization usually
/// still contracts; it is discarded as soon as it stops doing so.
#[derive(Clone, Debug, Default)]
pub struct JacobianCache {
    factors: Option<BandLu>,
    key: Option<(usize, BoundaryMode, u64)>,
}

impl JacobianCache {
    pub fn clear(&mut self) {
        self.factors = None;
        self.key = None;
    }
}

/// Solves one time step from `old` with step `dt`.
pub fn newton_step(
    sub: &SubstrateCurve,
    model: &AnisotropyModel,
    material: Material,
    variant: Variant,
    settings: &SolverSettings,
    old: &FilmState,
    dt: f64,
) -> Result<NewtonOutcome, SolverError> {
    newton_step_cached(sub, model, material, variant, settings, old, dt, &mut JacobianCache::default())
}

/// [`newton_step`] starting from, and refreshing, a cached factorization.
#[allow(clippy::too_many_arguments)]
pub fn newton_step_cached(
    sub: &SubstrateCurve,
    model: &AnisotropyModel,
    material: Material,
    variant: Variant,
    settings: &SolverSettings,
    old: &FilmState,
    dt: f64,
    cache: &mut JacobianCache,
) -> Result<NewtonOutcome, SolverError> {
    let problem = StepProblem::new(sub, model, material, variant, dt, old);
    let owner = problem.node_of_unknown();
    let mut x = problem.pack(old);
    let key = Some((x.len(), old.mode(), dt.to_bits()));
    let mut cached: Option<BandLu> = if cache.key == key { cache.factors.take() } else { None };
    cache.clear();
    let mut r = problem.residual(&x);
    let mut norm = max_norm(&r);
    let mut iterations = 0;
    let mut polished = false;
    let mut fresh = false;
    let mut last_used: Option<BandLu> = None;
    let fail = |residual: f64| SolverError::NewtonFailure { t: f64::NAN, halvings: 0, residual };
    loop {
        if norm < settings.newton_tol {
            if polished {
                break;
            }
            polished = true;
        } else if iterations >= settings.max_newton || !norm.is_finite() {
            return Err(fail(norm));
        }
        if log::log_enabled!(log::Level::Trace) {
            let worst = r.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(k, _)| k);
            log::trace!("newton iteration {iterations}: residual {norm:e} at row {worst:?} of {}", r.len());
        }
        let factors = match cached.take() {
            Some(f) => f,
            None => {
                fresh = true;
                problem.jacobian(&x, settings.fd_step, &owner).factor().ok_or_else(|| fail(norm))?
            }
        };
        let mut dx: Vec<f64> = r.iter().map(|v| -v).collect();
        factors.solve(&mut dx);
        let increment = max_norm(&dx);
        log::trace!("newton increment {increment:e} (fresh jacobian: {fresh})");
        // Short elements make rows so steep that one ulp of motion moves the
        // residual past the tolerance; an increment at rounding level ends
        // the iteration when the residual is already close.
        if fresh && increment <= ROUNDING_INCREMENT * max_norm(&x).max(1.0) && norm < ROUNDING_SLACK * settings.newton_tol {
            debug!("newton stopped at rounding level with residual {norm:e}");
            cached = Some(factors);
            break;
        }
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut reuse = false;
        for _ in 0..=8 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + lambda * b).collect();
            if problem.admissible(&trial) {
                let rt = problem.residual(&trial);
                let nt = max_norm(&rt);
                if nt < norm || (polished && nt <= norm) {
                    // A factorization earns reuse only by full steps that contract well.
                    reuse = lambda == 1.0 && nt <= JACOBIAN_REUSE_RATIO * norm;
                    x = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            if !fresh {
                break;
            }
            lambda *= 0.5;
        }
        if reuse {
            cached = Some(factors);
        } else if accepted {
            last_used = Some(factors);
        }
        if accepted {
            fresh = false;
        } else if !fresh {
            // Stale factorization; retry this iterate with a new Jacobian.
            iterations -= 1;
            continue;
        } else if polished {
            // Already converged; the polishing step could not improve it.
            break;
        } else {
            return Err(fail(norm));
        }
    }
    cache.factors = cached.or(last_used);
    cache.key = key;
    let (nodes, mu, c_l, c_r) = problem.unpack(&x);
    if !sub.contains(c_r) {
        return Err(SolverError::ContactOutOfRange { c: c_r });
    }
    let curve = DiscreteCurve::new(nodes)?;
    Ok(NewtonOutcome {
        state: FilmState { curve, mu, contacts: Contacts { left: c_l, right: c_r } },
        iterations,
        residual: norm,
    })
}

/// Events that change the film topology or its boundary treatment.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TopologyEvent {
    /// The inner contact reached the axis; the inner end now sits on it.
    AxisReached { component: usize, t: f64 },
    /// A component touched the substrate at arclength `c` and was split in two.
    Split { component: usize, t: f64, c: f64 },
}

/// Switches a component whose inner contact reached the rotation axis.
pub fn mode_switch(state: &FilmState, sub: &SubstrateCurve) -> Option<FilmState> {
    let c = state.contacts.left?;
    let reached = c <= sub.c_min() || sub.point_ext(c).r < 1e-8;
    if !reached || sub.axis_arclength().is_none() {
        return None;
    }
    let mut nodes = state.curve.nodes().to_vec();
    nodes[0] = PlaneVector::new(0.0, nodes[1].z);
    let curve = DiscreteCurve::new(nodes).ok()?;
    Some(FilmState {
        curve,
        mu: state.mu.clone(),
        contacts: Contacts { left: None, right: state.contacts.right },
    })
}

/// Substrate samples bucketed on a square grid for fast proximity queries.
#[derive(Clone, Debug)]
pub struct SubstrateIndex {
    cell: f64,
    spacing: f64,
    samples: Vec<(f64, PlaneVector)>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SubstrateIndex {
    pub fn new(sub: &SubstrateCurve) -> Self {
        let length = sub.c_max() - sub.c_min();
        let count = ((length / 0.05).ceil() as usize).clamp(64, 200_000);
        let spacing = length / count as f64;
        let cell = 2.0 * spacing;
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let samples: Vec<(f64, PlaneVector)> = (0..=count)
            .map(|k| {
                let c = sub.c_min() + spacing * k as f64;
                (c, sub.point_ext(c))
            })
            .collect();
        for (k, (_, p)) in samples.iter().enumerate() {
            buckets.entry(Self::key(cell, *p)).or_default().push(k);
        }
        Self { cell, spacing, samples, buckets }
    }

    fn key(cell: f64, p: PlaneVector) -> (i64, i64) {
        ((p.r / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Signed distance (positive on the film side) and foot arclength, if
    /// the point is within one grid cell of the substrate.
    pub fn near(&self, sub: &SubstrateCurve, p: PlaneVector) -> Option<(f64, f64)> {
        let (kr, kz) = Self::key(self.cell, p);
        let mut best: Option<(f64, f64)> = None;
        for dr in -1..=1 {
            for dz in -1..=1 {
                if let Some(list) = self.buckets.get(&(kr + dr, kz + dz)) {
                    for &k in list {
                        let (c, q) = self.samples[k];
                        let d = q.distance(p);
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, c));
                        }
                    }
                }
            }
        }
        let (_, c) = best?;
        let (c, signed) = sub.project(p, c - 2.0 * self.spacing, c + 2.0 * self.spacing);
        Some((signed, c))
    }
}

/// Splits a component at its closest interior approach to the substrate if
/// that approach is below the pinch distance.
pub fn detect_and_split(
    state: &FilmState,
    sub: &SubstrateCurve,
    index: &SubstrateIndex,
    settings: &SolverSettings,
) -> Result<Option<(FilmState, FilmState, f64)>, SolverError> {
    let nodes = state.curve.nodes();
    let n = state.n_elements();
    let mut closest: Option<(usize, f64, f64)> = None;
    for (i, p) in nodes.iter().enumerate().take(n).skip(1) {
        if let Some((d, c)) = index.near(sub, *p) {
            if d < settings.pinch_distance && closest.is_none_or(|(_, bd, _)| d < bd) {
                closest = Some((i, d, c));
            }
        }
    }
    let Some((k, _, c)) = closest else {
        return Ok(None);
    };
    let min = settings.min_split_nodes;
    if k + 1 < min || n + 1 - k < min {
        return Err(SolverError::TooFewNodesAfterSplit { node: k, min });
    }
    let foot = sub.eval(c)?;
    let mut left_nodes = nodes[..=k].to_vec();
    left_nodes[k] = foot;
    let mut right_nodes = nodes[k..].to_vec();
    right_nodes[0] = foot;
    let left_contacts = Contacts { left: state.contacts.left, right: c };
    let right_contacts = Contacts { left: Some(c), right: state.contacts.right };
    // Cutting drops the sliver under the touching node and resampling drops
    // the area the chords cut off; both halves are pushed back out so the
    // total matches, with the sliver shared in proportion to the cut volumes.
    let total = state.volume(sub)?;
    let cut_left = crate::mesh::discrete_volume(&DiscreteCurve::new(left_nodes.clone())?, sub, left_contacts)?;
    let cut_right = crate::mesh::discrete_volume(&DiscreteCurve::new(right_nodes.clone())?, sub, right_contacts)?;
    let scale = total / (cut_left + cut_right);
    let (ln, lm) = resample_equal_arclength(&left_nodes, &state.mu[..=k], k);
    let (rn, rm) = resample_equal_arclength(&right_nodes, &state.mu[k..], n - k);
    let left = FilmState { curve: DiscreteCurve::new(ln)?, mu: lm, contacts: left_contacts };
    let right = FilmState { curve: DiscreteCurve::new(rn)?, mu: rm, contacts: right_contacts };
    let left = restore_volume(left, sub, scale * cut_left)?;
    let right = restore_volume(right, sub, scale * cut_right)?;
    Ok(Some((left, right, c)))
}

/// Moves the interior nodes a common distance along their vertex normals
/// until the component encloses `target`. In axis mode the axis node follows
/// its neighbour's height.
fn restore_volume(state: FilmState, sub: &SubstrateCurve, target: f64) -> Result<FilmState, SolverError> {
    let base = state.curve.nodes().to_vec();
    let n = state.n_elements();
    let normals: Vec<PlaneVector> = (1..n)
        .map(|j| {
            let v = state.curve.normal(j - 1) + state.curve.normal(j);
            v / v.norm()
        })
        .collect();
    let axis = state.contacts.left.is_none();
    let shifted = |d: f64| -> Result<FilmState, SolverError> {
        let mut nodes = base.clone();
        for (p, nv) in nodes[1..n].iter_mut().zip(&normals) {
            *p += *nv * d;
        }
        if axis {
            nodes[0].z = nodes[1].z;
        }
        Ok(FilmState { curve: DiscreteCurve::new(nodes)?, mu: state.mu.clone(), contacts: state.contacts })
    };
    let gap = |d: f64| -> Result<f64, SolverError> { Ok(shifted(d)?.volume(sub)? - target) };
    // Secant iteration; the volume is a quadratic in the offset.
    let scale = state.curve.total_length() / n as f64;
    let (mut d0, mut g0) = (0.0, gap(0.0)?);
    let mut d1 = 1e-3 * scale;
    let mut g1 = gap(d1)?;
    for _ in 0..50 {
        if g1.abs() <= 1e-14 * target.abs() || g1 == g0 {
            break;
        }
        let d2 = d1 - g1 * (d1 - d0) / (g1 - g0);
        (d0, g0) = (d1, g1);
        d1 = d2;
        g1 = gap(d1)?;
    }
    if g1.abs() > 1e-9 * target.abs() {
        return Err(SolverError::Invalid(format!("could not restore split volume {target}: off by {g1:e}")));
    }
    shifted(d1)
}

/// Time-stepping parameters of a simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub variant: Variant,
    pub dt: f64,
    pub material: Material,
    pub settings: SolverSettings,
}

/// Per-step summary over all components.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub volume: f64,
    pub newton_iterations: usize,
    pub residual: f64,
    pub halvings: usize,
    pub events: Vec<TopologyEvent>,
}

/// A film, possibly split into several components, evolving on one substrate.
#[derive(Clone, Debug)]
pub struct Simulation {
    sub: SubstrateCurve,
    model: AnisotropyModel,
    control: StepControl,
    index: Option<SubstrateIndex>,
    components: Vec<FilmState>,
    caches: Vec<JacobianCache>,
    step: usize,
    t: f64,
    initial_energy: f64,
    last_energy: f64,
}

impl Simulation {
    pub fn new(
        sub: SubstrateCurve,
        model: AnisotropyModel,
        control: StepControl,
        initial: FilmState,
    ) -> Result<Self, SolverError> {
        if !(control.dt.is_finite() && control.dt > 0.0) {
            return Err(SolverError::Invalid(format!("time step must be positive, got {}", control.dt)));
        }
        if !(control.material.eta.is_finite() && control.material.eta > 0.0) {
            return Err(SolverError::Invalid(format!("mobility must be positive, got {}", control.material.eta)));
        }
        initial.volume(&sub)?;
        let index = control.settings.detect_pinch.then(|| SubstrateIndex::new(&sub));
        let energy = initial.energy(&sub, &model, control.material.sigma)?;
        Ok(Self {
            sub,
            model,
            control,
            index,
            components: vec![initial],
            caches: vec![JacobianCache::default()],
            step: 0,
            t: 0.0,
            initial_energy: energy,
            last_energy: energy,
        })
    }

    pub fn substrate(&self) -> &SubstrateCurve {
        &self.sub
    }

    pub fn model(&self) -> &AnisotropyModel {
        &self.model
    }

    pub fn control(&self) -> &StepControl {
        &self.control
    }

    pub fn components(&self) -> &[FilmState] {
        &self.components
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn energy(&self) -> Result<f64, SolverError> {
        let sigma = self.control.material.sigma;
        self.components.iter().map(|c| c.energy(&self.sub, &self.model, sigma)).sum()
    }

    pub fn volume(&self) -> Result<f64, SolverError> {
        self.components.iter().map(|c| c.volume(&self.sub)).sum()
    }

    /// Advances every component by one configured step. A component whose
    /// Newton solve fails retries with halved sub-steps, recovering the step
    /// size once sub-steps succeed again.
    pub fn advance(&mut self) -> Result<StepReport, SolverError> {
        let dt = self.control.dt;
        let t_next = (self.step + 1) as f64 * dt;
        let mut events = Vec::new();
        let mut iterations = 0;
        let mut residual = 0.0f64;
        let mut halvings_used = 0;
        let mut next = Vec::with_capacity(self.components.len());
        for (ci, (comp, cache)) in self.components.iter().zip(&mut self.caches).enumerate() {
            let mut state = comp.clone();
            let mut remaining = dt;
            let mut sub_dt = dt;
            let mut depth = 0;
            while remaining > 1e-12 * dt {
                let h = sub_dt.min(remaining);
                let c = self.control;
                match newton_step_cached(&self.sub, &self.model, c.material, c.variant, &c.settings, &state, h, cache) {
                    Ok(out) => {
                        iterations += out.iterations;
                        residual = residual.max(out.residual);
                        state = out.state;
                        remaining -= h;
                        if let Some(switched) = mode_switch(&state, &self.sub) {
                            events.push(TopologyEvent::AxisReached { component: ci, t: self.t + dt - remaining });
                            state = switched;
                            cache.clear();
                        }
                        if depth > 0 {
                            depth -= 1;
                            sub_dt = (2.0 * sub_dt).min(dt);
                        }
                    }
                    Err(e) => {
                        depth += 1;
                        halvings_used += 1;
                        debug!("step {} component {ci}: {e}; halving", self.step + 1);
                        if depth > c.settings.max_halvings {
                            let residual = match e {
                                SolverError::NewtonFailure { residual, .. } => residual,
                                _ => f64::NAN,
                            };
                            return Err(SolverError::NewtonFailure { t: self.t, halvings: depth - 1, residual });
                        }
                        sub_dt *= 0.5;
                    }
                }
            }
            next.push(state);
        }
        let mut split = Vec::with_capacity(next.len() + 1);
        let mut caches = Vec::with_capacity(next.len() + 1);
        for (ci, (comp, cache)) in next.into_iter().zip(std::mem::take(&mut self.caches)).enumerate() {
            let parts = match &self.index {
                Some(index) => detect_and_split(&comp, &self.sub, index, &self.control.settings)?,
                None => None,
            };
            match parts {
                Some((a, b, c)) => {
                    events.push(TopologyEvent::Split { component: ci, t: t_next, c });
                    split.push(a);
                    split.push(b);
                    caches.extend([JacobianCache::default(), JacobianCache::default()]);
                }
                None => {
                    split.push(comp);
                    caches.push(cache);
                }
            }
        }
        self.components = split;
        self.caches = caches;
        self.step += 1;
        self.t = t_next;
        let energy = self.energy()?;
        let volume = self.volume()?;
        if energy - self.last_energy > 1e-10 * self.initial_energy.abs() && events.is_empty() {
            warn!("energy increased by {:e} at step {}", energy - self.last_energy, self.step);
        }
        self.last_energy = energy;
        Ok(StepReport {
            step: self.step,
            t: self.t,
            energy,
            volume,
            newton_iterations: iterations,
            residual,
            halvings: halvings_used,
            events,
        })
    }
}

/// Energy and volume straight from node arrays, for quick checks in tests.
pub fn energy_and_volume(
    state: &FilmState,
    sub: &SubstrateCurve,
    model: &AnisotropyModel,
    sigma: f64,
) -> (f64, f64) {
    let nodes = state.curve.nodes();
    let c_l = state.inner_c(sub);
    (
        energy_ext(nodes, sub, model, sigma, c_l, state.contacts.right),
        volume_ext(nodes, sub, c_l, state.contacts.right),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anisotropy::{GammaKind, StabilizerSpec};
    use std::f64::consts::PI;

    fn sigma() -> f64 {
        -(3f64.sqrt()) / 2.0
    }

    fn material() -> Material {
        Material { eta: 100.0, sigma: sigma() }
    }

    /// Quarter-disk-like bump on a flat substrate between `c_l` and `c_r`.
    fn bump_on_flat(n: usize) -> (SubstrateCurve, FilmState) {
        let sub = SubstrateCurve::flat(10.0).unwrap();
        let (c_l, c_r) = (2.0, 4.0);
        let nodes: Vec<PlaneVector> = (0..=n)
            .map(|j| {
                let phi = PI * (1.0 - j as f64 / n as f64);
                PlaneVector::new(3.0 + phi.cos(), phi.sin())
            })
            .collect();
        let state = FilmState::new(DiscreteCurve::new(nodes).unwrap(), Contacts { left: Some(c_l), right: c_r }, &sub)
            .unwrap();
        (sub, state)
    }

    fn cap_on_axis(n: usize) -> (SubstrateCurve, FilmState) {
        let sub = SubstrateCurve::flat(10.0).unwrap();
        let nodes: Vec<PlaneVector> = (0..=n)
            .map(|j| {
                let phi = PI / 2.0 * (1.0 - j as f64 / n as f64);
                PlaneVector::new(phi.cos(), phi.sin())
            })
            .collect();
        let mut nodes = nodes;
        nodes[0] = PlaneVector::new(0.0, nodes[1].z);
        let state =
            FilmState::new(DiscreteCurve::new(nodes).unwrap(), Contacts { left: None, right: 1.0 }, &sub).unwrap();
        (sub, state)
    }

    fn control(variant: Variant, dt: f64) -> StepControl {
        StepControl { variant, dt, material: material(), settings: SolverSettings::default() }
    }

    #[test]
    fn unknown_layout() {
        let (sub, state) = bump_on_flat(8);
        let model = AnisotropyModel::isotropic();
        let p = StepProblem::new(&sub, &model, material(), Variant::EnergyStable, 0.01, &state);
        assert_eq!(p.dim(), 3 * 8 + 1);
        let x = p.pack(&state);
        let (nodes, mu, c_l, c_r) = p.unpack(&x);
        assert_eq!(c_l, Some(2.0));
        assert_eq!(c_r, 4.0);
        assert_eq!(mu, state.mu);
        for (a, b) in nodes.iter().zip(state.curve.nodes()) {
            assert!((*a - *b).norm() < 1e-14);
        }
        let (sub, state) = cap_on_axis(8);
        let p = StepProblem::new(&sub, &model, material(), Variant::EnergyStable, 0.01, &state);
        assert_eq!(p.dim(), 3 * 8);
    }

    #[test]
    fn jacobian_matches_dense_differences() {
        let (sub, state) = bump_on_flat(7);
        let model = AnisotropyModel::fourfold(0.05).unwrap();
        for variant in [Variant::EnergyStable, Variant::StructurePreserving] {
            let p = StepProblem::new(&sub, &model, material(), variant, 0.01, &state);
            let mut x = p.pack(&state);
            // Move away from the old state so every term is active.
            for (k, v) in x.iter_mut().enumerate() {
                *v += 1e-3 * ((k as f64) * 0.7).sin();
            }
            let owner = p.node_of_unknown();
            let jac = p.jacobian(&x, 1e-7, &owner);
            for col in 0..p.dim() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                let step = 1e-7 * x[col].abs().max(1.0);
                xp[col] += step;
                xm[col] -= step;
                let (rp, rm) = (p.residual(&xp), p.residual(&xm));
                for row in 0..p.dim() {
                    let dense = (rp[row] - rm[row]) / (xp[col] - xm[col]);
                    assert!(
                        (jac.get(row, col) - dense).abs() < 1e-9 * (1.0 + dense.abs()),
                        "{variant:?} ({row},{col}): {} vs {dense}",
                        jac.get(row, col)
                    );
                }
            }
        }
    }

    #[test]
    fn zero_step_residual_vanishes_at_rest() {
        // With X^{m+1} = X^m the (a) rows reduce to the flux of μ; at μ = 0 they vanish.
        let (sub, state) = bump_on_flat(6);
        let model = AnisotropyModel::isotropic();
        let p = StepProblem::new(&sub, &model, material(), Variant::EnergyStable, 0.01, &state);
        let r = p.residual(&p.pack(&state));
        for i in 0..=6 {
            let o = p.offsets[i];
            let a_row = p.offsets[i + 1] - 1;
            assert!(r[a_row].abs() < 1e-15, "node {i} (offset {o})");
        }
    }

    #[test]
    fn energy_decays_and_volume_is_kept() {
        for variant in [Variant::EnergyStable, Variant::StructurePreserving] {
            let (sub, state) = bump_on_flat(32);
            let model = AnisotropyModel::fourfold(0.05).unwrap();
            let mut sim = Simulation::new(sub, model, control(variant, 1e-3), state).unwrap();
            let w0 = sim.energy().unwrap();
            let v0 = sim.volume().unwrap();
            let mut w = w0;
            for _ in 0..20 {
                let rep = sim.advance().unwrap();
                assert!(rep.energy - w <= 1e-10 * w0.abs(), "{variant:?}: {} -> {}", w, rep.energy);
                w = rep.energy;
            }
            let drift = (sim.volume().unwrap() - v0).abs() / v0;
            if variant == Variant::StructurePreserving {
                assert!(drift < 1e-10, "drift {drift}");
            }
        }
    }

    #[test]
    fn axis_mode_keeps_first_chord_horizontal() {
        let (sub, state) = cap_on_axis(24);
        let model = AnisotropyModel::isotropic();
        let mut sim = Simulation::new(sub, model, control(Variant::StructurePreserving, 1e-3), state).unwrap();
        let v0 = sim.volume().unwrap();
        for _ in 0..10 {
            sim.advance().unwrap();
            let nodes = sim.components()[0].curve.nodes();
            assert_eq!(nodes[0].r, 0.0);
            assert!((nodes[0].z - nodes[1].z).abs() < 1e-8);
        }
        assert!((sim.volume().unwrap() - v0).abs() < 1e-10 * v0);
    }

    #[test]
    fn split_of_touching_film() {
        let sub = SubstrateCurve::flat(20.0).unwrap();
        let n = 40;
        // A long film dipping to 5e-4 above the substrate in the middle.
        let nodes: Vec<PlaneVector> = (0..=n)
            .map(|j| {
                let s = j as f64 / n as f64;
                let r = 2.0 + 8.0 * s;
                let z = if j == 0 || j == n { 0.0 } else { 5e-4 + (2.0 * PI * s).sin().powi(2) * 0.5 };
                PlaneVector::new(r, z)
            })
            .collect();
        let state =
            FilmState::new(DiscreteCurve::new(nodes).unwrap(), Contacts { left: Some(2.0), right: 10.0 }, &sub)
                .unwrap();
        let index = SubstrateIndex::new(&sub);
        let settings = SolverSettings::default();
        let (a, b, c) = detect_and_split(&state, &sub, &index, &settings).unwrap().unwrap();
        assert!((c - 6.0).abs() < 1e-9);
        assert_eq!(a.n_elements(), 20);
        assert_eq!(b.n_elements(), 20);
        assert_eq!(a.contacts, Contacts { left: Some(2.0), right: c });
        assert_eq!(b.contacts, Contacts { left: Some(c), right: 10.0 });
        let before = state.volume(&sub).unwrap();
        let after = a.volume(&sub).unwrap() + b.volume(&sub).unwrap();
        assert!((after - before).abs() < 1e-12 * before, "{before} -> {after}");
        for part in [&a, &b] {
            let l = part.curve.lengths();
            let (lo, hi) = l.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            assert!(hi / lo < 1.2, "{lo} {hi}");
        }
        let strict = SolverSettings { min_split_nodes: 30, ..settings };
        assert!(matches!(
            detect_and_split(&state, &sub, &index, &strict),
            Err(SolverError::TooFewNodesAfterSplit { .. })
        ));
    }

    #[test]
    fn hole_closing_switches_to_axis() {
        let sub = SubstrateCurve::flat(10.0).unwrap();
        let nodes = vec![
            PlaneVector::new(0.0, 0.0),
            PlaneVector::new(0.5, 0.6),
            PlaneVector::new(1.5, 0.6),
            PlaneVector::new(2.0, 0.0),
        ];
        let state =
            FilmState::new(DiscreteCurve::new(nodes).unwrap(), Contacts { left: Some(0.0), right: 2.0 }, &sub)
                .unwrap();
        let switched = mode_switch(&state, &sub).unwrap();
        assert_eq!(switched.mode(), BoundaryMode::AxisInner);
        assert_eq!(switched.curve.first(), PlaneVector::new(0.0, 0.6));
    }

    #[test]
    fn rejects_bad_time_step() {
        let (sub, state) = bump_on_flat(8);
        let model = AnisotropyModel::new(GammaKind::Isotropic, StabilizerSpec::Constant(1.5)).unwrap();
        assert!(Simulation::new(sub, model, control(Variant::EnergyStable, 0.0), state).is_err());
    }
}
