//! Scenario configuration documents.
//!
//! A configuration is a TOML document with the sections `field`, `kernel`,
//! `coverage`, `agents`, `sim` and `tune`. Every key is optional and falls
//! back to the plant settings; unknown keys are rejected. Several documents
//! can be layered with [`merge`], and single keys overridden with
//! `section.key=value` strings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coverage::CoverageParams;
use crate::dynamics::UnicycleParams;
use crate::error::{Error, Result};
use crate::field::{load_field_csv, synth_cloud_field, FieldSeries, Weather};
use crate::grid::{MissionGrid, Point};
use crate::kriging::KernelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fixed,
    Baseline,
    Proposed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fixed, Method::Baseline, Method::Proposed];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Fixed => "fixed",
            Method::Baseline => "baseline",
            Method::Proposed => "proposed",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed" => Ok(Method::Fixed),
            "baseline" => Ok(Method::Baseline),
            "proposed" => Ok(Method::Proposed),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    #[default]
    Synth,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub source: FieldSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub weather: Weather,
    pub seed: u64,
    /// Horizon of synthetic fields.
    pub steps: usize,
    /// Field index of simulation step 0.
    pub offset: usize,
    pub q1_min: f64,
    pub q1_max: f64,
    pub q2_min: f64,
    pub q2_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        let g = MissionGrid::plant();
        Self {
            source: FieldSource::Synth,
            path: None,
            weather: Weather::Cloudy,
            seed: 1,
            steps: 400,
            offset: 0,
            q1_min: g.q1_min,
            q1_max: g.q1_max,
            q2_min: g.q2_min,
            q2_max: g.q2_max,
            nx: g.nx,
            ny: g.ny,
        }
    }
}

impl FieldConfig {
    pub fn grid(&self) -> Result<MissionGrid> {
        MissionGrid::new(self.q1_min, self.q1_max, self.q2_min, self.q2_max, self.nx, self.ny)
    }

    pub fn load(&self) -> Result<FieldSeries> {
        let grid = self.grid()?;
        match self.source {
            FieldSource::Synth => synth_cloud_field(grid, self.steps, self.seed, self.weather),
            FieldSource::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("field.path is required when field.source = \"csv\"".into()))?;
                load_field_csv(path, grid)
            }
        }
    }

    /// Short label for reports: the weather preset or the CSV file stem.
    pub fn label(&self) -> String {
        match (&self.source, &self.path) {
            (FieldSource::Csv, Some(p)) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            _ => self.weather.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Lloyd centroids for the fixed method; for mobile methods the listed
    /// positions when they match `n`, otherwise random in `random_box`.
    #[default]
    Auto,
    Explicit,
    Lloyd,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    pub n: usize,
    pub init: InitMode,
    pub positions: Vec<Point>,
    /// `[q1_lo, q1_hi, q2_lo, q2_hi]` for random initialization.
    pub random_box: [f64; 4],
    pub repulsion: bool,
    pub safety_radius: f64,
    pub repulsion_gain: f64,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            n: 4,
            init: InitMode::Auto,
            positions: vec![[-0.54, -0.54], [-0.54, 0.86], [0.86, -0.52], [0.80, 0.86]],
            random_box: [-0.54, 0.80, -0.54, 0.86],
            repulsion: true,
            safety_radius: 0.3,
            repulsion_gain: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    #[default]
    Integrator,
    Unicycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub method: Method,
    /// Window length `L` in steps.
    pub window: usize,
    pub t0: usize,
    pub t_end: usize,
    pub dynamics: Dynamics,
    /// Speed limit (m/step).
    pub v_max: f64,
    /// Acceleration limit (m/step²).
    pub accel_max: f64,
    pub clamp_predictions: bool,
    /// Write map snapshots every this many steps (0 disables).
    pub snapshot_every: usize,
    pub seed: u64,
    pub unicycle: UnicycleParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            method: Method::Proposed,
            window: 10,
            t0: 1,
            t_end: 100,
            dynamics: Dynamics::Integrator,
            // 0.15 m/s and 0.1 m/s² over an 8 s planning period
            v_max: 1.2,
            accel_max: 6.4,
            clamp_predictions: false,
            snapshot_every: 0,
            seed: 1,
            unicycle: UnicycleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneParam {
    Beta,
    Sigma,
    Tau,
    K,
    KHat,
    Delta,
}

impl TuneParam {
    pub const ALL: [TuneParam; 6] =
        [TuneParam::Beta, TuneParam::Sigma, TuneParam::Tau, TuneParam::K, TuneParam::KHat, TuneParam::Delta];

    pub fn name(&self) -> &'static str {
        match self {
            TuneParam::Beta => "beta",
            TuneParam::Sigma => "sigma",
            TuneParam::Tau => "tau",
            TuneParam::K => "k",
            TuneParam::KHat => "k_hat",
            TuneParam::Delta => "delta",
        }
    }

    pub fn default_bounds(&self) -> [f64; 2] {
        match self {
            TuneParam::Beta => [1e-5, 1.0],
            TuneParam::Sigma => [0.01, 2.0],
            TuneParam::Tau => [0.01, 20.0],
            TuneParam::K => [0.1, 1000.0],
            TuneParam::KHat => [1e-2, 1.0],
            TuneParam::Delta => [-1.0, -1e-3],
        }
    }

    pub fn get(&self, cfg: &ScenarioConfig) -> f64 {
        match self {
            TuneParam::Beta => cfg.kernel.beta,
            TuneParam::Sigma => cfg.kernel.sigma,
            TuneParam::Tau => cfg.kernel.tau,
            TuneParam::K => cfg.coverage.k,
            TuneParam::KHat => cfg.coverage.k_hat,
            TuneParam::Delta => cfg.coverage.delta,
        }
    }

    pub fn set(&self, cfg: &mut ScenarioConfig, v: f64) {
        match self {
            TuneParam::Beta => cfg.kernel.beta = v,
            TuneParam::Sigma => cfg.kernel.sigma = v,
            TuneParam::Tau => cfg.kernel.tau = v,
            TuneParam::K => cfg.coverage.k = v,
            TuneParam::KHat => cfg.coverage.k_hat = v,
            TuneParam::Delta => cfg.coverage.delta = v,
        }
    }

    /// Section of the configuration document holding the parameter.
    pub fn section(&self) -> &'static str {
        match self {
            TuneParam::Beta | TuneParam::Sigma | TuneParam::Tau => "kernel",
            _ => "coverage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub free: Vec<TuneParam>,
    /// Box bounds per free parameter. Supplying this table replaces the
    /// defaults entirely.
    pub bounds: BTreeMap<TuneParam, [f64; 2]>,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Field index where the training segment starts.
    pub train_offset: usize,
    /// Simulation seeds averaged by the objective; empty means `sim.seed`.
    pub seeds: Vec<u64>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            free: vec![TuneParam::Beta, TuneParam::Sigma, TuneParam::Tau],
            bounds: TuneParam::ALL.iter().map(|p| (*p, p.default_bounds())).collect(),
            budget: 60,
            seed: 0,
            restarts: 0,
            train_offset: 0,
            seeds: Vec::new(),
        }
    }
}

/// Everything a single closed-loop run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub field: FieldConfig,
    pub kernel: KernelParams,
    pub coverage: CoverageParams,
    pub agents: AgentsConfig,
    pub sim: SimConfig,
}

impl ScenarioConfig {
    /// Checks every invariant that does not need the field loaded.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        self.field.grid().map_err(|e| Error::Config(format!("field: {e}")))?;
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.coverage.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.agents.n == 0 {
            return cfg("agents.n must be >= 1".into());
        }
        if self.agents.init == InitMode::Explicit && self.agents.positions.len() != self.agents.n {
            return cfg(format!(
                "agents.positions lists {} positions for agents.n = {}",
                self.agents.positions.len(),
                self.agents.n
            ));
        }
        let b = self.agents.random_box;
        if !(b[0] < b[1] && b[2] < b[3]) {
            return cfg(format!("agents.random_box must be [q1_lo, q1_hi, q2_lo, q2_hi] with lo < hi, got {b:?}"));
        }
        if self.agents.repulsion && !(self.agents.safety_radius > 0.0) {
            return cfg("agents.safety_radius must be > 0".into());
        }
        if self.sim.window == 0 {
            return cfg("sim.window must be >= 1".into());
        }
        if self.sim.t0 >= self.sim.t_end {
            return cfg(format!("sim.t0 ({}) must be < sim.t_end ({})", self.sim.t0, self.sim.t_end));
        }
        if self.sim.t0 == 0 {
            return cfg("sim.t0 must be >= 1 (predictions target t0 from data at t0 - 1)".into());
        }
        if !(self.sim.v_max > 0.0) || !(self.sim.accel_max > 0.0) {
            return cfg("sim.v_max and sim.accel_max must be > 0".into());
        }
        let u = &self.sim.unicycle;
        if u.steps == 0 || !(u.dt > 0.0) || !(u.v_max > 0.0) || !(u.accel_max > 0.0) {
            return cfg("sim.unicycle needs steps >= 1 and positive dt, v_max, accel_max".into());
        }
        if self.field.source == FieldSource::Synth && self.field.steps < self.field.offset + self.sim.t_end + 1 {
            return cfg(format!(
                "field.steps ({}) must cover field.offset + sim.t_end + 1 = {}",
                self.field.steps,
                self.field.offset + self.sim.t_end + 1
            ));
        }
        Ok(())
    }
}

/// The full configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub field: FieldConfig,
    pub kernel: KernelParams,
    pub coverage: CoverageParams,
    pub agents: AgentsConfig,
    pub sim: SimConfig,
    pub tune: TuneConfig,
}

impl ConfigFile {
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            field: self.field.clone(),
            kernel: self.kernel,
            coverage: self.coverage,
            agents: self.agents.clone(),
            sim: self.sim.clone(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        check_keys(&table)?;
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads and layers `paths` in order, then applies `overrides`.
    pub fn load(paths: &[PathBuf], overrides: &[String]) -> Result<Self> {
        Self::load_over(toml::Table::new(), paths, overrides)
    }

    /// Like [`ConfigFile::load`], layering on top of `base` instead of the
    /// defaults.
    pub fn load_onto(base: &ConfigFile, paths: &[PathBuf], overrides: &[String]) -> Result<Self> {
        let table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        Self::load_over(table, paths, overrides)
    }

    fn load_over(mut table: toml::Table, paths: &[PathBuf], overrides: &[String]) -> Result<Self> {
        for path in paths {
            merge(&mut table, read_table(path)?);
        }
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

const SECTIONS: [&str; 6] = ["field", "kernel", "coverage", "agents", "sim", "tune"];

/// Names unknown sections and keys by their dotted path. Serde also rejects
/// them, but its message omits the section.
fn check_keys(table: &toml::Table) -> Result<()> {
    let defaults = toml::Table::try_from(ConfigFile::default()).map_err(|e| Error::Config(e.to_string()))?;
    for (section, value) in table {
        if !SECTIONS.contains(&section.as_str()) {
            return Err(Error::Config(format!("unknown section `{section}`")));
        }
        let (Some(inner), Some(known)) = (value.as_table(), defaults.get(section).and_then(|v| v.as_table())) else {
            return Err(Error::Config(format!("`{section}` must be a table")));
        };
        for key in inner.keys() {
            let optional = section == "field" && key == "path";
            if !known.contains_key(key) && !optional {
                return Err(Error::Config(format!("unknown key `{section}.{key}`")));
            }
        }
    }
    Ok(())
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Deep-merges `top` over `base`: nested tables merge key by key, other
/// values replace.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies a `section.key[.sub]=value` override. The value is parsed as a
/// TOML value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key {path:?} must be section.key")));
    }
    let value = parse_value(raw.trim());
    let mut cursor = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cursor.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-table")))?;
    }
    cursor.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parameter fragment holding the tuned values, mergeable into a config.
pub fn params_fragment(params: &[(TuneParam, f64)]) -> String {
    let mut table = toml::Table::new();
    for (p, v) in params {
        let section = table
            .entry(p.section().to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .unwrap();
        section.insert(p.name().to_string(), toml::Value::Float(*v));
    }
    toml::to_string(&table).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ConfigFile::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ConfigFile::from_toml_str(&text).unwrap(), cfg);
        assert!(cfg.scenario().validate().is_ok());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = ConfigFile::from_toml_str("[sim]\nmethod = \"baseline\"\n[kernel]\nsigma = 0.4\n").unwrap();
        assert_eq!(cfg.sim.method, Method::Baseline);
        assert_eq!(cfg.kernel.sigma, 0.4);
        assert_eq!(cfg.kernel.tau, KernelParams::default().tau);
        assert_eq!(cfg.sim.window, 10);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ConfigFile::from_toml_str("[sim]\nmetod = \"fixed\"\n").unwrap_err();
        assert!(err.to_string().contains("sim.metod"), "{err}");
        let err = ConfigFile::from_toml_str("[simulation]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("simulation"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "sim.method=fixed").unwrap();
        apply_override(&mut t, "agents.n=6").unwrap();
        apply_override(&mut t, "kernel.beta=0.25").unwrap();
        apply_override(&mut t, "sim.unicycle.kp=0.5").unwrap();
        apply_override(&mut t, "agents.positions=[[0.0, 0.0]]").unwrap();
        let cfg = ConfigFile::from_table(t).unwrap();
        assert_eq!(cfg.sim.method, Method::Fixed);
        assert_eq!(cfg.agents.n, 6);
        assert_eq!(cfg.kernel.beta, 0.25);
        assert_eq!(cfg.sim.unicycle.kp, 0.5);
        assert_eq!(cfg.agents.positions, vec![[0.0, 0.0]]);
        assert!(apply_override(&mut toml::Table::new(), "nodot=1").is_err());
        assert!(apply_override(&mut toml::Table::new(), "sim.method").is_err());
    }

    #[test]
    fn zero_agents_rejected() {
        let mut cfg = ConfigFile::default().scenario();
        cfg.agents.n = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn merge_is_deep() {
        let mut base: toml::Table = toml::from_str("[kernel]\nsigma = 1.0\ntau = 2.0\n").unwrap();
        merge(&mut base, toml::from_str("[kernel]\ntau = 3.0\n").unwrap());
        assert_eq!(base["kernel"]["sigma"].as_float(), Some(1.0));
        assert_eq!(base["kernel"]["tau"].as_float(), Some(3.0));
    }

    #[test]
    fn fragment_merges_back() {
        let frag = params_fragment(&[(TuneParam::Sigma, 0.3), (TuneParam::K, 0.5), (TuneParam::Delta, -0.2)]);
        let cfg = ConfigFile::from_toml_str(&frag).unwrap();
        assert_eq!(cfg.kernel.sigma, 0.3);
        assert_eq!(cfg.coverage.k, 0.5);
        assert_eq!(cfg.coverage.delta, -0.2);
    }

    #[test]
    fn tune_bounds_table_replaces_defaults() {
        let cfg = ConfigFile::from_toml_str("[tune]\nfree = [\"sigma\", \"tau\"]\n[tune.bounds]\nsigma = [0.1, 1.0]\n")
            .unwrap();
        assert_eq!(cfg.tune.bounds.len(), 1);
        assert!(!cfg.tune.bounds.contains_key(&TuneParam::Tau));
    }
}
