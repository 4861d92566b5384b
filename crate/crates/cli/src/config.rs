//! Experiment configuration: parsing, defaults and validation with line references.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ptrlab_core::boundary_ops::FilterVariant;
use ptrlab_core::{presets, DomainGrid, MediumSpec, OmegaRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    BlagoCheck,
    Control,
    Focus,
    Distance,
    ArrivalMap,
    NoiseAvg,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::BlagoCheck => "blago-check",
            Kind::Control => "control",
            Kind::Focus => "focus",
            Kind::Distance => "distance",
            Kind::ArrivalMap => "arrival-map",
            Kind::NoiseAvg => "noise-avg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub medium: MediumConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub iteration: IterationSettings,
    pub blago: Option<BlagoConfig>,
    pub control: Option<ControlConfig>,
    pub focus: Option<FocusConfig>,
    pub distance: Option<DistanceConfig>,
    pub arrival: Option<ArrivalConfig>,
    pub noise: Option<NoiseConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("ptrlab-out")
}

/// A preset, optionally re-gridded, or inline nodal tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub preset: Option<String>,
    pub resolution: Option<usize>,
    pub horizon: Option<f64>,
    /// Inline media: `dim`, `c` (row-major nodal values), optional `q` and `eta`.
    pub dim: Option<usize>,
    pub c: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    Ideal,
    #[default]
    Auto,
    Cached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionChoice {
    /// Resolve the sign against interior solves, trying the causal filter first.
    #[default]
    Auto,
    Causal,
    Anticausal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub mode: OracleMode,
    #[serde(default)]
    pub convention: ConventionChoice,
}

/// A Gaussian pulse `a exp(-((t - center)/width)^2) cos(frequency t)` on one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub slot: usize,
    pub center: f64,
    pub width: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Pulses applied to every boundary slot (modulated along the perimeter in 2D).
    #[serde(default)]
    pub all_slots: Option<Pulse>,
    #[serde(default)]
    pub pulses: Vec<Pulse>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaSetting {
    Auto,
    Scaled(f64),
    Fixed(f64),
}

impl From<OmegaSetting> for OmegaRule {
    fn from(o: OmegaSetting) -> Self {
        match o {
            OmegaSetting::Auto => OmegaRule::Auto,
            OmegaSetting::Scaled(s) => OmegaRule::Scaled(s),
            OmegaSetting::Fixed(w) => OmegaRule::Fixed(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_omega")]
    pub omega: OmegaSetting,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub max_iter: Option<usize>,
}

fn default_alpha() -> f64 {
    1e-3
}
fn default_omega() -> OmegaSetting {
    OmegaSetting::Scaled(1.0)
}
fn default_tol() -> f64 {
    1e-5
}

impl Default for IterationSettings {
    fn default() -> Self {
        Self { alpha: default_alpha(), omega: default_omega(), tol: default_tol(), max_iter: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub slots: Vec<usize>,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlagoConfig {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

fn default_pairs() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub alphas: Vec<f64>,
    pub windows: Vec<Window>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusConfig {
    pub z: usize,
    pub t_hat: f64,
    pub t0: f64,
    pub r0: Option<f64>,
    pub j_max: Option<usize>,
    /// Slab thicknesses for point-value recovery (interval media only).
    pub point_deltas: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub z: usize,
    pub y: usize,
    pub t1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub queries: Vec<Query>,
    pub eps: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub patch_radius: f64,
    /// Flags queries whose `t1` looks past the cut time of `z`, from boundary data.
    #[serde(default = "yes")]
    pub cut_check: bool,
}

fn yes() -> bool {
    true
}

fn default_theta() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    #[serde(default = "default_pulse_steps")]
    pub pulse_steps: f64,
}

fn default_pulse_steps() -> f64 {
    ptrlab_core::distance::DEFAULT_PULSE_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    #[serde(default)]
    pub ell_x: f64,
    #[serde(default)]
    pub ell_t: f64,
    pub window: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
}

fn default_burn_in() -> usize {
    50
}
fn default_replicas() -> u64 {
    4
}

/// A configuration problem, pointing at the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}: {}", self.file, l, self.field, self.message),
            None => write!(f, "{}: {}: {}", self.file, self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Source text kept for locating fields in error messages.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    text: String,
    toml: bool,
}

/// Reads a TOML config, or a manifest JSON whose `config` entry is re-run.
pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        file: file.clone(),
        line: None,
        field: "(file)".into(),
        message: e.to_string(),
    })?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let config = if is_json {
        #[derive(Deserialize)]
        struct Manifest {
            config: ExperimentConfig,
        }
        serde_json::from_str::<Manifest>(&text).map(|m| m.config).map_err(|e| ConfigError {
            file: file.clone(),
            line: Some(e.line()),
            field: "config".into(),
            message: e.to_string(),
        })?
    } else {
        toml::from_str::<ExperimentConfig>(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            ConfigError { file: file.clone(), line, field: "(syntax)".into(), message: e.message().to_string() }
        })?
    };
    Ok(Loaded { config, path: path.to_path_buf(), text, toml: !is_json })
}

impl Loaded {
    /// Builds a located error for `field` (dotted path, e.g. `control.windows`).
    pub fn error(&self, field: &str, message: impl Into<String>) -> ConfigError {
        self.error_at(field, 0, message)
    }

    /// As `error`, for the `index`-th entry of a list of tables.
    pub fn error_at(&self, field: &str, index: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.path.display().to_string(),
            line: self.locate(field, index),
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Line of the `skip`-th occurrence of the key named by the last path segment, inside its section.
    fn locate(&self, field: &str, mut skip: usize) -> Option<usize> {
        let mut parts: Vec<&str> = field.split('.').collect();
        let key = parts.pop()?.split('[').next()?;
        let section = parts.first().map(|s| s.split('[').next().unwrap_or(s));
        let mut in_section = section.is_none();
        for (i, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if self.toml && t.starts_with('[') {
                let name = t.trim_matches(|c| c == '[' || c == ']').trim();
                in_section = section.is_none_or(|s| name == s || name.starts_with(&format!("{s}.")));
                continue;
            }
            let hit = if self.toml { assigns(t, key) } else { t.contains(&format!("\"{key}\"")) };
            if in_section && hit {
                if skip == 0 {
                    return Some(i + 1);
                }
                skip -= 1;
            }
        }
        None
    }

    /// Grid and medium from the preset or inline tables.
    pub fn build_medium(&self) -> Result<(DomainGrid, MediumSpec), ConfigError> {
        let m = &self.config.medium;
        if let Some(name) = &m.preset {
            if m.c.is_some() || m.q.is_some() || m.eta.is_some() || m.dim.is_some() {
                return Err(self.error("medium.preset", "a preset cannot be combined with inline tables"));
            }
            let p = presets::find(name).map_err(|e| self.error("medium.preset", e.to_string()))?;
            if let Some(h) = m.horizon {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(self.error("medium.horizon", "horizon must be positive"));
                }
            }
            return p.build(m.resolution, m.horizon).map_err(|e| self.error("medium.resolution", e.to_string()));
        }
        let dim = m.dim.ok_or_else(|| self.error("medium.dim", "inline media need `dim` (or give a `preset`)"))?;
        let c = m.c.clone().ok_or_else(|| self.error("medium.c", "inline media need nodal speeds `c`"))?;
        let res = m.resolution.ok_or_else(|| self.error("medium.resolution", "inline media need `resolution`"))?;
        let horizon = m.horizon.ok_or_else(|| self.error("medium.horizon", "inline media need `horizon`"))?;
        if dim != 1 && dim != 2 {
            return Err(self.error("medium.dim", "dimension must be 1 or 2"));
        }
        let n = res.pow(dim as u32);
        if c.len() != n {
            return Err(self.error("medium.c", format!("expected {n} nodal values, got {}", c.len())));
        }
        let c_max = c.iter().cloned().fold(0.0, f64::max);
        let grid = ptrlab_core::build_grid(&vec![1.0; dim], &vec![res; dim], horizon, c_max)
            .map_err(|e| self.error("medium.resolution", e.to_string()))?;
        let q = m.q.clone().unwrap_or_else(|| vec![0.0; n]);
        let eta = m.eta.clone().unwrap_or_else(|| vec![0.0; grid.n_boundary()]);
        let medium = MediumSpec::new(&grid, c, q, eta).map_err(|e| self.error("medium.c", e.to_string()))?;
        Ok((grid, medium))
    }

    /// Checks every lattice reference and schedule against the grid.
    pub fn validate(&self, grid: &DomainGrid) -> Result<(), ConfigError> {
        let c = &self.config;
        let nb = grid.n_boundary();
        let horizon = grid.horizon();
        let slot_ok = |s: usize| s < nb;
        for (i, p) in c.source.pulses.iter().enumerate() {
            if !slot_ok(p.slot) {
                return Err(self.error_at("source.pulses.slot", i, format!("pulse {i}: slot {} out of range (0..{nb})", p.slot)));
            }
            if !(p.width > 0.0) {
                return Err(self.error_at("source.pulses.width", i, format!("pulse {i}: width must be positive")));
            }
        }
        let it = &c.iteration;
        if !(it.alpha > 0.0 && it.alpha.is_finite()) {
            return Err(self.error("iteration.alpha", "alpha must be positive"));
        }
        if !(it.tol > 0.0) {
            return Err(self.error("iteration.tol", "tolerance must be positive"));
        }
        let needs_source = !matches!(c.kind, Kind::BlagoCheck | Kind::ArrivalMap);
        if needs_source && c.source.pulses.is_empty() && c.source.all_slots.is_none() {
            return Err(self.error("source.pulses", "this experiment needs a source"));
        }
        match c.kind {
            Kind::BlagoCheck => {
                if let Some(b) = &c.blago {
                    if b.pairs == 0 {
                        return Err(self.error("blago.pairs", "need at least one pair"));
                    }
                }
            }
            Kind::Control => {
                let ctl = c.control.as_ref().ok_or_else(|| self.error("control", "missing [control] section"))?;
                if ctl.alphas.is_empty() || ctl.alphas.iter().any(|a| !(*a > 0.0)) {
                    return Err(self.error("control.alphas", "need a non-empty list of positive values"));
                }
                self.check_windows("control.windows", &ctl.windows, nb, horizon)?;
            }
            Kind::Focus => {
                let f = c.focus.as_ref().ok_or_else(|| self.error("focus", "missing [focus] section"))?;
                if !slot_ok(f.z) {
                    return Err(self.error("focus.z", format!("slot {} out of range (0..{nb})", f.z)));
                }
                if !(0.0 < f.t0 && f.t0 <= f.t_hat) {
                    return Err(self.error("focus.t0", "need 0 < t0 <= t_hat"));
                }
                if f.t_hat >= horizon {
                    return Err(self.error("focus.t_hat", format!("t_hat must be below the horizon {horizon}")));
                }
                if let Some(d) = &f.point_deltas {
                    if grid.dim() != 1 {
                        return Err(self.error("focus.point_deltas", "point values are available on intervals only"));
                    }
                    if d.is_empty() || d.iter().any(|v| !(*v > 0.0 && *v < f.t_hat)) {
                        return Err(self.error("focus.point_deltas", "thicknesses must lie in (0, t_hat)"));
                    }
                }
            }
            Kind::Distance => {
                let d = c.distance.as_ref().ok_or_else(|| self.error("distance", "missing [distance] section"))?;
                if d.queries.is_empty() {
                    return Err(self.error("distance.queries", "need at least one query"));
                }
                for (i, q) in d.queries.iter().enumerate() {
                    if !slot_ok(q.z) || !slot_ok(q.y) {
                        return Err(self.error_at("distance.queries.z", i, format!("query {i}: slot out of range (0..{nb})")));
                    }
                    if !(d.eps < q.t1 && q.t1 < horizon) {
                        return Err(self.error_at("distance.queries.t1", i, format!("query {i}: need eps < t1 < T")));
                    }
                }
                if !(d.eps > 0.0) {
                    return Err(self.error("distance.eps", "eps must be positive"));
                }
                if !(d.theta > 0.0) {
                    return Err(self.error("distance.theta", "theta must be positive"));
                }
            }
            Kind::ArrivalMap => {
                if let Some(a) = &c.arrival {
                    if !(a.pulse_steps >= 1.0) {
                        return Err(self.error("arrival.pulse_steps", "pulse must span at least one step"));
                    }
                }
            }
            Kind::NoiseAvg => {
                if c.seed.is_none() {
                    return Err(self.error("seed", "noise-avg needs a seed"));
                }
                let n = c.noise.as_ref().ok_or_else(|| self.error("noise", "missing [noise] section"))?;
                if !(n.sigma >= 0.0) {
                    return Err(self.error("noise.sigma", "sigma must be non-negative"));
                }
                if n.checkpoints.is_empty() || n.checkpoints.contains(&0) {
                    return Err(self.error("noise.checkpoints", "need positive averaging counts"));
                }
                if n.replicas == 0 {
                    return Err(self.error("noise.replicas", "need at least one replica"));
                }
                if !(n.window > 0.0 && n.window <= horizon) {
                    return Err(self.error("noise.window", "window must lie in (0, T]"));
                }
            }
        }
        Ok(())
    }

    fn check_windows(&self, field: &str, windows: &[Window], nb: usize, horizon: f64) -> Result<(), ConfigError> {
        if windows.is_empty() {
            return Err(self.error(field, "need at least one window"));
        }
        for (i, w) in windows.iter().enumerate() {
            if w.slots.is_empty() {
                return Err(self.error_at(&format!("{field}.slots"), i, format!("window {i}: empty boundary patch")));
            }
            if let Some(s) = w.slots.iter().find(|s| **s >= nb) {
                return Err(self.error_at(&format!("{field}.slots"), i, format!("window {i}: slot {s} out of range (0..{nb})")));
            }
            if !(w.length > 0.0 && w.length <= horizon) {
                return Err(self.error_at(&format!("{field}.length"), i, format!("window {i}: length must lie in (0, T]")));
            }
        }
        Ok(())
    }
}

/// True when `line` assigns to `key` (as a bare key, possibly inside an inline table).
fn assigns(line: &str, key: &str) -> bool {
    line.match_indices(key).any(|(i, _)| {
        let before = line[..i].chars().next_back();
        let boundary = before.is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        boundary && line[i + key.len()..].trim_start().starts_with('=')
    })
}

pub fn preferred_variant(choice: ConventionChoice) -> FilterVariant {
    match choice {
        ConventionChoice::Anticausal => FilterVariant::Anticausal,
        _ => FilterVariant::Causal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loaded(text: &str) -> Loaded {
        let config = toml::from_str(text).unwrap();
        Loaded { config, path: PathBuf::from("t.toml"), text: text.into(), toml: true }
    }

    #[test]
    fn assignment_needs_a_key_boundary() {
        assert!(assigns("z = 1", "z"));
        assert!(assigns("{ y = 0, z = 1 }", "z"));
        assert!(!assigns("t_z = 1", "z"));
        assert!(!assigns("size = 1", "z"));
        assert!(!assigns("z_hat = 1", "z"));
    }

    #[test]
    fn entries_are_located_by_section_and_index() {
        let l = loaded(
            "kind = \"distance\"\n[medium]\npreset = \"1d-homogeneous\"\n[distance]\neps = 0.01\nqueries = [\n  { z = 0, y = 0, t1 = 0.3 },\n  { z = 5, y = 0, t1 = 0.3 },\n]\n",
        );
        assert_eq!(l.error("distance.eps", "x").line, Some(5));
        assert_eq!(l.error_at("distance.queries.z", 1, "x").line, Some(8));
        assert_eq!(l.error("medium.preset", "x").line, Some(3));
        assert_eq!(l.error("noise.sigma", "x").line, None);
    }

    #[test]
    fn defaults_fill_the_iteration_block() {
        let l = loaded("kind = \"arrival-map\"\n[medium]\npreset = \"2d-lens\"\n");
        assert_eq!(l.config.iteration, IterationSettings::default());
        assert_eq!(l.config.oracle.mode, OracleMode::Auto);
        let (g, _) = l.build_medium().unwrap();
        l.validate(&g).unwrap();
    }
}
