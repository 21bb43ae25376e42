//! Command-line front end: configuration, run orchestration and file output.
//!
//! Exit codes: 0 on success, 1 for invalid input, 2 when the solver fails
//! mid-run (outputs written so far are flushed first).

pub mod config;
pub mod io;

use crate::anisotropy::{stability_margin, stabilizer_grid, STABILIZER_GRID};
use crate::diagnostics::{
    contact_angle, contact_midpoint, convergence_sweep, migration_tracker, ContactEnd, DiagnosticsError,
};
use crate::solver::{Simulation, SolverError};
use crate::vector::PlaneVector;
use clap::{Parser, Subcommand};
use config::{ConfigError, SimulationConfig};
use io::{CsvTable, IoError, RevolvedMesh, SeriesRow, TimeValue};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Build identifier baked in at compile time.
pub const GIT_DESCRIBE: &str = env!("AXIDEWET_GIT_DESCRIBE");

/// Azimuthal segments `export-3d` uses unless told otherwise.
pub const DEFAULT_NPHI: usize = 64;

/// Samples of the randomized stability check reported by `stabilizer`.
const MARGIN_SAMPLES: usize = 100_000;

#[derive(Parser, Debug)]
#[command(name = "axidewet", version = GIT_DESCRIBE, about = "Solid-state dewetting of axisymmetric films on curved substrates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evolve a film to `run.t_end`, writing a time series, snapshots and a manifest.
    Run { config: PathBuf },
    /// Mesh-refinement study at `converge.levels` with `Δt = dt_constant·h²`.
    Converge { config: PathBuf },
    /// Tabulate the stabilizing function of the configured surface energy.
    Stabilizer { config: PathBuf },
    /// Revolve a snapshot profile into a triangulated OBJ surface.
    #[command(name = "export-3d")]
    Export3d {
        snapshot: PathBuf,
        #[arg(long = "nphi", default_value_t = DEFAULT_NPHI)]
        n_phi: usize,
        /// Defaults to the snapshot path with an `.obj` extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run until one step changes the energy by less than `equilibrium.tol`.
    Equilibrium { config: PathBuf },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("solver failed: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Solver(s) => CliError::Solver(s.to_string()),
            DiagnosticsError::TooFewLevels(_) => CliError::Input(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => run(&SimulationConfig::load(&config)?),
        Command::Converge { config } => converge(&SimulationConfig::load(&config)?),
        Command::Stabilizer { config } => stabilizer(&SimulationConfig::load(&config)?),
        Command::Export3d { snapshot, n_phi, output } => {
            let output = output.unwrap_or_else(|| snapshot.with_extension("obj"));
            export_3d(&snapshot, n_phi, &output)
        }
        Command::Equilibrium { config } => equilibrium(&SimulationConfig::load(&config)?),
    }
}

#[derive(Serialize)]
struct Outcome {
    status: &'static str,
    steps: usize,
    t_final: f64,
    components: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a, X: Serialize> {
    command: &'a str,
    version: &'a str,
    git_describe: &'a str,
    seed: u64,
    variant: &'a str,
    stabilizer: crate::anisotropy::StabilizerProvenance,
    guesses: &'a [String],
    wall_time_s: f64,
    config: &'a SimulationConfig,
    outcome: Outcome,
    extra: X,
}

struct Session<'a> {
    command: &'static str,
    config: &'a SimulationConfig,
    dir: PathBuf,
    started: Instant,
}

impl<'a> Session<'a> {
    fn open(command: &'static str, config: &'a SimulationConfig) -> Result<Self, CliError> {
        let dir = config.output_dir(command);
        io::create_dir(&dir)?;
        Ok(Self { command, config, dir, started: Instant::now() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn finish<X: Serialize>(&self, sim: Option<&Simulation>, error: Option<&CliError>, extra: X) -> Result<(), CliError> {
        let model = self.config.model()?;
        let outcome = Outcome {
            status: if error.is_some() { "failed" } else { "completed" },
            steps: sim.map_or(0, |s| s.step_index()),
            t_final: sim.map_or(0.0, |s| s.time()),
            components: sim.map_or(0, |s| s.components().len()),
            error: error.map(|e| e.to_string()),
        };
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            git_describe: GIT_DESCRIBE,
            seed: self.config.run.seed,
            variant: self.config.run.variant.name(),
            stabilizer: model.provenance().clone(),
            guesses: &self.config.guesses,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            config: self.config,
            outcome,
            extra,
        };
        io::write_json(&self.path("manifest.json"), &manifest)?;
        log::info!("outputs in {}", self.dir.display());
        Ok(())
    }
}

fn simulation(config: &SimulationConfig, n: usize, dt: f64) -> Result<Simulation, CliError> {
    let sub = config.substrate_curve()?;
    let film = config.initial_film(&sub, n)?;
    let model = config.model()?;
    Simulation::new(sub, model, config.control(dt), film).map_err(|e| CliError::Input(e.to_string()))
}

/// Per-step outputs shared by `run` and `equilibrium`.
struct Recorder {
    series: CsvTable<SeriesRow>,
    migration: CsvTable<TimeValue>,
    angle: CsvTable<TimeValue>,
    initial_volume: f64,
    stride: usize,
    dir: PathBuf,
    last_snapshot: Option<usize>,
}

impl Recorder {
    fn new(session: &Session, sim: &Simulation) -> Result<Self, CliError> {
        let volume = sim.volume().map_err(|e| CliError::Input(e.to_string()))?;
        let energy = sim.energy().map_err(|e| CliError::Input(e.to_string()))?;
        let mut rec = Self {
            series: CsvTable::create(&session.path("series.csv"))?,
            migration: CsvTable::create(&session.path("migration.csv"))?,
            angle: CsvTable::create(&session.path("contact_angle.csv"))?,
            initial_volume: volume,
            stride: session.config.run.snapshot_stride,
            dir: session.dir.clone(),
            last_snapshot: None,
        };
        rec.series.push(&SeriesRow::initial(sim.components(), energy, volume))?;
        rec.track(sim)?;
        rec.snapshot(sim)?;
        Ok(rec)
    }

    fn track(&mut self, sim: &Simulation) -> Result<(), CliError> {
        let first = &sim.components()[0];
        let t = sim.time();
        if let Some(mid) = contact_midpoint(first) {
            self.migration.push(&TimeValue { t, value: mid })?;
        }
        if let Ok(angle) = contact_angle(first, sim.substrate(), ContactEnd::Outer) {
            self.angle.push(&TimeValue { t, value: angle })?;
        }
        Ok(())
    }

    fn snapshot(&mut self, sim: &Simulation) -> Result<(), CliError> {
        let step = sim.step_index();
        if self.last_snapshot == Some(step) {
            return Ok(());
        }
        for (k, comp) in sim.components().iter().enumerate() {
            io::write_snapshot(&self.dir.join(io::snapshot_name(step, k)), comp)?;
        }
        self.last_snapshot = Some(step);
        Ok(())
    }

    fn step(&mut self, sim: &Simulation, report: &crate::solver::StepReport) -> Result<(), CliError> {
        self.series.push(&SeriesRow::from_report(report, sim.components(), self.initial_volume))?;
        self.track(sim)?;
        if report.step.is_multiple_of(self.stride) || !report.events.is_empty() {
            self.snapshot(sim)?;
        }
        Ok(())
    }

    fn close(&mut self, sim: &Simulation) -> Result<(), CliError> {
        self.snapshot(sim)?;
        self.series.flush()?;
        self.migration.flush()?;
        self.angle.flush()?;
        Ok(())
    }
}

fn solver_failure(e: SolverError) -> CliError {
    CliError::Solver(e.to_string())
}

/// Steps needed to reach `t_end` with step `dt`, tolerant of rounding.
fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt - 1e-9).ceil().max(0.0) as usize
}

pub fn run(config: &SimulationConfig) -> Result<(), CliError> {
    let session = Session::open("run", config)?;
    let mut sim = simulation(config, config.run.n, config.run.dt)?;
    let mut rec = Recorder::new(&session, &sim)?;
    let steps = step_count(config.run.t_end, config.run.dt);
    let mut failure = None;
    for _ in 0..steps {
        match sim.advance() {
            Ok(report) => rec.step(&sim, &report)?,
            Err(e) => {
                failure = Some(solver_failure(e));
                break;
            }
        }
    }
    rec.close(&sim)?;
    session.finish(Some(&sim), failure.as_ref(), ())?;
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct EquilibriumSummary {
    reached: bool,
    t: f64,
    energy: f64,
    last_change: Option<f64>,
    inner_angle_deg: Option<f64>,
    outer_angle_deg: Option<f64>,
    migration_slope: Option<f64>,
}

pub fn equilibrium(config: &SimulationConfig) -> Result<(), CliError> {
    let session = Session::open("equilibrium", config)?;
    let mut sim = simulation(config, config.run.n, config.run.dt)?;
    let mut rec = Recorder::new(&session, &sim)?;
    let mut midpoints = Vec::new();
    let mut write_error = None;
    let result = crate::diagnostics::run_to_equilibrium(&mut sim, config.equilibrium.tol, config.equilibrium.t_max, |s, report| {
        if let Some(mid) = contact_midpoint(&s.components()[0]) {
            midpoints.push((s.time(), mid));
        }
        if write_error.is_none() {
            write_error = rec.step(s, report).err();
        }
    });
    rec.close(&sim)?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let first = &sim.components()[0];
    let angle = |end| contact_angle(first, sim.substrate(), end).ok();
    let summary = EquilibriumSummary {
        reached: result.is_ok(),
        t: sim.time(),
        energy: sim.energy().unwrap_or(f64::NAN),
        last_change: result.as_ref().ok().map(|eq| eq.last_change),
        inner_angle_deg: angle(ContactEnd::Inner),
        outer_angle_deg: angle(ContactEnd::Outer),
        migration_slope: (midpoints.len() >= 2).then(|| migration_tracker(midpoints).slope),
    };
    let failure = result.err().map(CliError::from);
    session.finish(Some(&sim), failure.as_ref(), &summary)?;
    if let Some(a) = summary.outer_angle_deg {
        println!("outer contact angle {a:.4} deg at t = {:.6}", summary.t);
    }
    if let Some(a) = summary.inner_angle_deg {
        println!("inner contact angle {a:.4} deg at t = {:.6}", summary.t);
    }
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct ConvergenceSummary {
    orders: Vec<f64>,
    non_monotone: bool,
}

pub fn converge(config: &SimulationConfig) -> Result<(), CliError> {
    let levels = &config.converge.levels;
    if levels.len() < 3 {
        return Err(CliError::Input(format!("a convergence study needs at least 3 levels, got {}", levels.len())));
    }
    let session = Session::open("converge", config)?;
    let c = config.converge.dt_constant;
    let result = convergence_sweep(levels, |h| c * h * h, config.converge.t_end, |n, dt| {
        simulation(config, n, dt).map_err(|e| SolverError::Invalid(e.to_string()))
    });
    let table = match result {
        Ok(t) => t,
        Err(e) => {
            let e = CliError::from(e);
            session.finish(None, Some(&e), ())?;
            return Err(e);
        }
    };
    let mut csv = CsvTable::create(&session.path("convergence.csv"))?;
    for row in &table.rows {
        csv.push(row)?;
        println!("h = {:.6e}  dt = {:.6e}  error = {:.6e}  order = {}", row.h, row.dt, row.error, row.order.map_or("-".into(), |o| format!("{o:.3}")));
    }
    csv.flush()?;
    if table.non_monotone {
        log::warn!("errors do not decrease monotonically");
    }
    let summary = ConvergenceSummary { orders: table.rows.iter().filter_map(|r| r.order).collect(), non_monotone: table.non_monotone };
    session.finish(None, None, &summary)
}

#[derive(Serialize)]
struct StabilizerRow {
    theta: f64,
    #[serde(rename = "S0")]
    s0: f64,
}

#[derive(Serialize)]
struct MarginSummary {
    samples: usize,
    worst_relative: f64,
}

pub fn stabilizer(config: &SimulationConfig) -> Result<(), CliError> {
    let session = Session::open("stabilizer", config)?;
    let model = config.model()?;
    let mut csv = CsvTable::create(&session.path("stabilizer.csv"))?;
    for theta in stabilizer_grid(STABILIZER_GRID) {
        csv.push(&StabilizerRow { theta, s0: model.stabilizer(theta) })?;
    }
    csv.flush()?;
    let report = stability_margin(&model, MARGIN_SAMPLES, config.run.seed);
    println!("worst stability margin over {} samples: {:.3e}", report.samples, report.worst_relative);
    session.finish(None, None, MarginSummary { samples: report.samples, worst_relative: report.worst_relative })
}

pub fn export_3d(snapshot: &Path, n_phi: usize, output: &Path) -> Result<(), CliError> {
    if n_phi < io::MIN_AZIMUTHAL {
        return Err(CliError::Input(format!("--nphi must be at least {}, got {n_phi}", io::MIN_AZIMUTHAL)));
    }
    let rows = io::read_snapshot(snapshot)?;
    let profile: Vec<PlaneVector> = rows.iter().map(|r| PlaneVector::new(r.r, r.z)).collect();
    let mesh = RevolvedMesh::revolve(&profile, n_phi)?;
    mesh.write_obj(output)?;
    println!("{}: {} vertices, {} triangles", output.display(), mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_count_reaches_end_time() {
        assert_eq!(step_count(0.0, 0.1), 0);
        assert_eq!(step_count(2.0, 2f64.powi(-9)), 1024);
        assert_eq!(step_count(1.0, 0.3), 4);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 1);
        assert_eq!(CliError::Solver("x".into()).exit_code(), 2);
    }
}
