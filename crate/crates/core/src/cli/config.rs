//! Run configuration: a TOML file, optionally layered over a named preset.

use crate::anisotropy::{AnisotropyError, AnisotropyModel, GammaKind, StabilizerSpec};
use crate::geometry::{SubstrateCurve, SubstrateKind};
use crate::presets::{build_film, FilmSpec, Preset};
use crate::solver::{FilmState, Material, SolverError, SolverSettings, StepControl, Variant};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Overrides the root that relative output directories are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "AXIDEWET_OUTPUT_ROOT";

pub const DEFAULT_ETA: f64 = 100.0;
pub const MIN_ELEMENTS: usize = 8;

pub fn default_sigma() -> f64 {
    -(3f64.sqrt()) / 2.0
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Field { field: &'static str, message: String },
    #[error("cannot read table {path}: {message}")]
    Table { path: PathBuf, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

/// How `gamma.stabilizer` was written: `auto`, `constant:<v>` or `table:<csv>`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilizerMode {
    Auto,
    Constant(f64),
    Table(PathBuf),
}

impl StabilizerMode {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let text = text.trim();
        if text == "auto" {
            return Ok(Self::Auto);
        }
        if let Some(v) = text.strip_prefix("constant:") {
            let v: f64 = v.trim().parse().map_err(|_| field("gamma.stabilizer", format!("bad constant in {text:?}")))?;
            return Ok(Self::Constant(v));
        }
        if let Some(p) = text.strip_prefix("table:") {
            return Ok(Self::Table(PathBuf::from(p.trim())));
        }
        Err(field("gamma.stabilizer", format!("expected auto, constant:<v> or table:<csv>, got {text:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaConfig {
    #[serde(flatten)]
    pub kind: GammaKind,
    pub stabilizer: StabilizerMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of elements, `h = 1/n`.
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// A snapshot is written every this many steps, plus the first and last.
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_variant() -> Variant {
    Variant::StructurePreserving
}

fn default_stride() -> usize {
    64
}

fn default_seed() -> u64 {
    crate::anisotropy::DEFAULT_MARGIN_SEED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub levels: Vec<usize>,
    /// `Δt = dt_constant · h²` on every level.
    pub dt_constant: f64,
    pub t_end: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self { levels: vec![32, 64, 128, 256], dt_constant: 16.0, t_end: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    /// Stop once one step changes the energy by less than this.
    pub tol: f64,
    pub t_max: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self { tol: crate::diagnostics::EQUILIBRIUM_TOL, t_max: 1000.0 }
    }
}

/// A fully resolved configuration. Every default is filled in, so writing it
/// back out describes the run completely.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub preset: Option<Preset>,
    pub substrate: SubstrateKind,
    pub film: FilmSpec,
    pub gamma: GammaConfig,
    pub material: Material,
    pub run: RunConfig,
    pub solver: SolverSettings,
    pub converge: ConvergeConfig,
    pub equilibrium: EquilibriumConfig,
    /// Setup choices the experiment description leaves open. Manifests list
    /// them at the top level.
    #[serde(skip)]
    pub guesses: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    eta: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<Preset>,
    substrate: Option<toml::Table>,
    film: Option<FilmSpec>,
    gamma: Option<toml::Table>,
    material: Option<RawMaterial>,
    run: toml::Table,
    #[serde(default)]
    solver: SolverSettings,
    #[serde(default)]
    converge: ConvergeConfig,
    #[serde(default)]
    equilibrium: EquilibriumConfig,
}

impl SimulationConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text. Relative table paths are taken from `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let scenario = match doc.get("preset") {
            Some(v) => {
                let preset: Preset = v.clone().try_into().map_err(|e: toml::de::Error| field("preset", e.to_string()))?;
                Some(preset.scenario())
            }
            None => None,
        };
        // Preset run parameters sit under anything the file sets.
        let run = doc.entry("run").or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let run = run.as_table_mut().ok_or_else(|| field("run", "must be a table"))?;
        if let Some(s) = &scenario {
            run.entry("n").or_insert(toml::Value::Integer(s.n as i64));
            run.entry("dt").or_insert(toml::Value::Float(s.dt));
            run.entry("t_end").or_insert(toml::Value::Float(s.t_end));
        }
        let raw: RawConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;

        let substrate = match raw.substrate {
            Some(table) => substrate_from_table(table, base)?,
            None => scenario.as_ref().map(|s| s.substrate.clone()).ok_or_else(|| field("substrate", "required without a preset"))?,
        };
        let film = match raw.film {
            Some(f) => f,
            None => scenario.as_ref().map(|s| s.film.clone()).ok_or_else(|| field("film", "required without a preset"))?,
        };
        let gamma = match raw.gamma {
            Some(table) => gamma_from_table(table, base)?,
            None => GammaConfig { kind: GammaKind::Isotropic, stabilizer: StabilizerMode::Auto },
        };
        let material = Material {
            eta: raw.material.as_ref().and_then(|m| m.eta).unwrap_or(DEFAULT_ETA),
            sigma: raw.material.as_ref().and_then(|m| m.sigma).unwrap_or_else(default_sigma),
        };
        let run: RunConfig = toml::Value::Table(raw.run).try_into().map_err(|e: toml::de::Error| field("run", e.to_string()))?;
        let guesses = scenario.map(|s| s.guesses.iter().map(|g| g.to_string()).collect()).unwrap_or_default();
        let config = Self {
            preset: raw.preset,
            substrate,
            film,
            gamma,
            material,
            run,
            solver: raw.solver,
            converge: raw.converge,
            equilibrium: raw.equilibrium,
            guesses,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let run = &self.run;
        if run.n < MIN_ELEMENTS {
            return Err(field("run.n", format!("needs at least {MIN_ELEMENTS} elements, got {}", run.n)));
        }
        if !(run.dt.is_finite() && run.dt > 0.0) {
            return Err(field("run.dt", format!("must be positive, got {}", run.dt)));
        }
        // T = 0 is accepted and yields only the initial snapshot.
        if !(run.t_end.is_finite() && run.t_end >= 0.0) {
            return Err(field("run.t_end", format!("must be non-negative, got {}", run.t_end)));
        }
        if run.snapshot_stride == 0 {
            return Err(field("run.snapshot_stride", "must be at least 1"));
        }
        if let GammaKind::Fourfold { beta } = self.gamma.kind {
            if !(beta.is_finite() && beta >= 0.0) {
                return Err(field("gamma.beta", format!("must be >= 0, got {beta}")));
            }
        }
        if !(self.material.eta.is_finite() && self.material.eta > 0.0) {
            return Err(field("material.eta", format!("must be positive, got {}", self.material.eta)));
        }
        if !self.material.sigma.is_finite() {
            return Err(field("material.sigma", "must be finite"));
        }
        if self.converge.levels.iter().any(|&n| n < MIN_ELEMENTS) {
            return Err(field("converge.levels", format!("every level needs at least {MIN_ELEMENTS} elements")));
        }
        if !(self.converge.dt_constant > 0.0 && self.converge.t_end > 0.0) {
            return Err(field("converge", "dt_constant and t_end must be positive"));
        }
        if !(self.equilibrium.tol > 0.0 && self.equilibrium.t_max > 0.0) {
            return Err(field("equilibrium", "tol and t_max must be positive"));
        }
        Ok(())
    }

    pub fn substrate_curve(&self) -> Result<SubstrateCurve, ConfigError> {
        SubstrateCurve::from_kind(&self.substrate).map_err(|e| field("substrate", e.to_string()))
    }

    pub fn model(&self) -> Result<AnisotropyModel, ConfigError> {
        let spec = match &self.gamma.stabilizer {
            StabilizerMode::Auto => StabilizerSpec::Auto,
            StabilizerMode::Constant(v) => StabilizerSpec::Constant(*v),
            StabilizerMode::Table(path) => StabilizerSpec::Table(read_pairs(path, ["theta", "S0"])?),
        };
        AnisotropyModel::new(self.gamma.kind.clone(), spec).map_err(|e: AnisotropyError| field("gamma", e.to_string()))
    }

    pub fn initial_film(&self, sub: &SubstrateCurve, n: usize) -> Result<FilmState, ConfigError> {
        build_film(sub, &self.film, n).map_err(|e: SolverError| field("film", e.to_string()))
    }

    pub fn control(&self, dt: f64) -> StepControl {
        StepControl { variant: self.run.variant, dt, material: self.material, settings: self.solver }
    }

    /// Output directory: `run.output_dir` (or a name derived from the preset)
    /// under the root from [`OUTPUT_ROOT_ENV`], or under the working directory.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        let name = self.run.output_dir.clone().unwrap_or_else(|| {
            let stem = self.preset.map_or("custom", |p| p.name());
            PathBuf::from("output").join(format!("{stem}-{command}"))
        });
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if name.is_relative() => PathBuf::from(root).join(name),
            _ => name,
        }
    }
}

fn gamma_from_table(mut table: toml::Table, base: &Path) -> Result<GammaConfig, ConfigError> {
    let stabilizer = match table.remove("stabilizer") {
        Some(v) => {
            let text = v.as_str().ok_or_else(|| field("gamma.stabilizer", "must be a string"))?;
            match StabilizerMode::parse(text)? {
                StabilizerMode::Table(p) => StabilizerMode::Table(base.join(p)),
                other => other,
            }
        }
        None => StabilizerMode::Auto,
    };
    let kind = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| field("gamma", e.to_string()))?;
    Ok(GammaConfig { kind, stabilizer })
}

fn substrate_from_table(mut table: toml::Table, base: &Path) -> Result<SubstrateKind, ConfigError> {
    if let Some(samples) = table.remove("samples") {
        let path = samples.as_str().ok_or_else(|| field("substrate.samples", "must be a path"))?;
        if !table.is_empty() && table.get("kind").and_then(|k| k.as_str()) != Some("sampled") {
            return Err(field("substrate.samples", "cannot be combined with other substrate keys"));
        }
        let points = read_pairs(&base.join(path), ["r", "z"])?.into_iter().map(|(r, z)| [r, z]).collect();
        return Ok(SubstrateKind::Sampled { points });
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| field("substrate", e.to_string()))
}

/// Reads a two-column numeric CSV with the given header.
pub fn read_pairs(path: &Path, header: [&str; 2]) -> Result<Vec<(f64, f64)>, ConfigError> {
    let bad = |message: String| ConfigError::Table { path: path.into(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let names = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if names.len() != 2 || names[0].trim() != header[0] || names[1].trim() != header[1] {
        return Err(bad(format!("expected header {},{}", header[0], header[1])));
    }
    let mut out = Vec::new();
    for record in reader.deserialize::<(f64, f64)>() {
        out.push(record.map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SimulationConfig, ConfigError> {
        SimulationConfig::parse(text, Path::new("."))
    }

    #[test]
    fn preset_supplies_defaults() {
        let c = parse("preset = \"case-i\"\n").unwrap();
        assert_eq!(c.run.n, 128);
        assert_eq!(c.run.dt, 2f64.powi(-9));
        assert_eq!(c.material.eta, 100.0);
        assert_eq!(c.material.sigma, -(3f64.sqrt()) / 2.0);
        assert_eq!(c.run.variant, Variant::StructurePreserving);
        assert_eq!(c.gamma.kind, GammaKind::Isotropic);
        assert_eq!(c.gamma.stabilizer, StabilizerMode::Auto);
    }

    #[test]
    fn file_overrides_preset() {
        let c = parse(
            "preset = \"case-ii\"\n[gamma]\nkind = \"fourfold\"\nbeta = 0.05\nstabilizer = \"constant:2.5\"\n\
             [run]\nn = 64\nvariant = \"energy-stable\"\n[material]\nsigma = -0.5\n",
        )
        .unwrap();
        assert_eq!(c.run.n, 64);
        assert_eq!(c.run.dt, 2f64.powi(-9));
        assert_eq!(c.gamma.kind, GammaKind::Fourfold { beta: 0.05 });
        assert_eq!(c.gamma.stabilizer, StabilizerMode::Constant(2.5));
        assert_eq!(c.run.variant, Variant::EnergyStable);
        assert_eq!(c.material.sigma, -0.5);
        assert!(!c.guesses.is_empty());
    }

    #[test]
    fn explicit_setup_without_preset() {
        let c = parse(
            "[substrate]\nkind = \"flat-line\"\nlength = 10.0\n\
             [film]\nkind = \"layer\"\nc_start = 1.0\nc_end = 3.0\nthickness = 0.5\n\
             [run]\nn = 32\ndt = 0.01\nt_end = 0.1\n",
        )
        .unwrap();
        let sub = c.substrate_curve().unwrap();
        assert_eq!(c.initial_film(&sub, 32).unwrap().n_elements(), 32);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = |text: &str| parse(text).unwrap_err().to_string();
        assert!(err("preset = \"case-i\"\n[run]\nn = 4\n").contains("run.n"));
        assert!(err("preset = \"case-i\"\n[run]\ndt = -1.0\n").contains("run.dt"));
        assert!(err("preset = \"case-i\"\n[run]\nt_end = -1.0\n").contains("run.t_end"));
        assert!(err("preset = \"case-i\"\n[gamma]\nkind = \"fourfold\"\nbeta = -0.1\n").contains("gamma.beta"));
        assert!(err("preset = \"case-i\"\n[gamma]\nkind = \"isotropic\"\nstabilizer = \"big\"\n").contains("gamma.stabilizer"));
        assert!(err("[run]\nn = 32\ndt = 0.1\nt_end = 1.0\n").contains("substrate"));
        assert!(err("preset = \"case-i\"\nbogus = 1\n").contains("bogus"));
    }

    #[test]
    fn sampled_substrate_and_table_stabilizer_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut pts = String::from("r,z\n");
        for k in 0..=40 {
            let r = k as f64 * 0.25;
            pts.push_str(&format!("{r},{}\n", 0.1 * r.sin()));
        }
        std::fs::write(dir.path().join("sub.csv"), pts).unwrap();
        std::fs::write(dir.path().join("s0.csv"), "theta,S0\n0.0,1.0\n1.0,2.0\n").unwrap();
        let c = SimulationConfig::parse(
            "[substrate]\nsamples = \"sub.csv\"\n[film]\nkind = \"layer\"\nc_start = 2.0\nc_end = 4.0\nthickness = 0.3\n\
             [gamma]\nkind = \"isotropic\"\nstabilizer = \"table:s0.csv\"\n[run]\nn = 16\ndt = 0.01\nt_end = 0.0\n",
            dir.path(),
        )
        .unwrap();
        assert!(matches!(c.substrate, SubstrateKind::Sampled { ref points } if points.len() == 41));
        let model = c.model().unwrap();
        assert!((model.stabilizer(0.5) - 1.5).abs() < 1e-12);
    }
}
