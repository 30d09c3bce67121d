//! Run configuration: a TOML document with one block per concern, plus
//! dotted-key overrides from the command line.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use helix_core::cluster::{ClusterOptions, GridSpec, Scenario, ScenarioKind};
use helix_core::equilibria::{Case, HelicalFamily, Unknown};
use helix_core::kmd::KmdOptions;
use helix_core::reduced::Mode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{origin}: {key}: {message}")]
    Invalid { origin: String, key: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Equilibria,
    Simulate,
    Landscape,
    Green,
    Solve,
    Energy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: String,
    pub formats: Vec<Format>,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: "helixlab-out".into(), formats: vec![Format::Json, Format::Csv] }
    }
}

/// Same layout as a serialized `HelicalFamily`, plus the optional unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyEntry {
    pub case: Case,
    #[serde(default = "one")]
    pub h: f64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<Missing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<f64>,
}

impl FamilyEntry {
    pub fn family(&self) -> HelicalFamily {
        HelicalFamily { case: self.case, h: self.h, theta0: self.theta0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Missing {
    Kappa2,
    Lambda2,
}

impl Missing {
    pub fn unknown(self) -> Unknown {
        match self {
            Missing::Kappa2 => Unknown::Kappa2,
            Missing::Lambda2 => Unknown::Lambda2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Equilibria {
    pub families: Vec<FamilyEntry>,
    pub tolerance: f64,
}

fn entry(case: Case, solve: Option<Missing>) -> FamilyEntry {
    FamilyEntry { case, h: 1.0, theta0: 0.0, solve, guess: None }
}

impl Default for Equilibria {
    fn default() -> Self {
        let families = vec![
            entry(Case::Polygon { n: 3, kappa: 1.0, r: 1.0 }, None),
            entry(Case::PolygonPlusCenter { n: 3, kappa: 1.0, mu: 0.5, r: 1.0 }, None),
            entry(Case::Asym2 { kappa1: 1.0, kappa2: 0.0, lambda1: 0.6, lambda2: 0.9 }, Some(Missing::Kappa2)),
            entry(Case::TwoByTwo { kappa: 1.0, mu: 0.8, lambda1: 0.7, lambda2: 0.0 }, Some(Missing::Lambda2)),
            entry(
                Case::TwoByTwoPlusCenter { kappa0: 0.5, kappa: 1.0, mu: 0.8, lambda1: 0.7, lambda2: 0.0 },
                Some(Missing::Lambda2),
            ),
        ];
        Self { families, tolerance: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulate {
    pub family: FamilyEntry,
    pub modes: usize,
    pub dt: f64,
    pub t_end: f64,
    pub save_stride: usize,
    pub collision_floor: f64,
    /// Relative amplitude of a cos(2s) radial ripple added to every filament.
    pub perturbation: f64,
    pub drift_tolerance: f64,
}

impl Default for Simulate {
    fn default() -> Self {
        let k = KmdOptions::default();
        Self {
            family: entry(Case::Polygon { n: 3, kappa: 1.0, r: 1.0 }, None),
            modes: 64,
            dt: 1e-3,
            t_end: 1.0,
            save_stride: 100,
            collision_floor: k.collision_floor,
            perturbation: 0.0,
            drift_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Max,
    Min,
}

impl Extremum {
    pub fn mode(self) -> Mode {
        match self {
            Extremum::Max => Mode::Max,
            Extremum::Min => Mode::Min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeBlock {
    pub family: FamilyEntry,
    pub mode: Extremum,
    pub starts: usize,
    pub spread: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LandscapeBlock {
    fn default() -> Self {
        Self {
            family: entry(Case::Polygon { n: 3, kappa: 1.0, r: 1.0 }, None),
            mode: Extremum::Max,
            starts: 8,
            spread: 0.2,
            seed: 7,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldChoice {
    Helical,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Green {
    pub field: FieldChoice,
    pub h: f64,
    pub poles: Vec<[f64; 2]>,
    pub probes: Vec<[f64; 2]>,
    /// Ring radii for the corrector-gradient probe about each pole.
    pub rings: Vec<f64>,
}

impl Default for Green {
    fn default() -> Self {
        Self {
            field: FieldChoice::Helical,
            h: 1.0,
            poles: vec![[0.4, 0.0]],
            probes: vec![[-0.4, 0.0], [0.0, 0.5]],
            rings: vec![0.2, 0.1, 0.05],
        }
    }
}

/// Scenario without its grid; the grid comes from the top-level block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioBlock {
    pub kind: ScenarioKind,
    #[serde(default = "one")]
    pub h: f64,
    #[serde(default = "three_halves")]
    pub p: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub rho0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn three_halves() -> f64 {
    1.5
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Polygon { n: 2, kappa: 2.0 * PI, r_star: 1.0 },
            h: 1.0,
            p: 1.5,
            epsilon: 0.04,
            rho0: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lift {
    pub samples: Vec<[f64; 3]>,
    pub t: f64,
}

impl Default for Lift {
    fn default() -> Self {
        Self { samples: Vec::new(), t: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub output: Output,
    pub grid: GridSpec,
    pub solver: ClusterOptions,
    pub scenario: ScenarioBlock,
    pub lift: Lift,
    pub equilibria: Equilibria,
    pub simulate: Simulate,
    pub landscape: LandscapeBlock,
    pub green: Green,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            output: Output::default(),
            grid: GridSpec { half_width: 1.0, n: 257 },
            solver: ClusterOptions::default(),
            scenario: ScenarioBlock::default(),
            lift: Lift::default(),
            equilibria: Equilibria::default(),
            simulate: Simulate::default(),
            landscape: LandscapeBlock::default(),
            green: Green::default(),
        }
    }
}

impl RunConfig {
    pub fn scenario(&self) -> Scenario {
        let s = &self.scenario;
        Scenario { kind: s.kind.clone(), h: s.h, p: s.p, epsilon: s.epsilon, grid: self.grid, rho0: s.rho0 }
    }
}

/// Parsed configuration together with the text it came from, for error lines.
pub struct Loaded {
    pub config: RunConfig,
    pub source: String,
    pub origin: String,
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_override(spec: &str) -> Result<(String, toml::Value), ConfigError> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override {spec:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(|p| p.is_empty()) {
        return Err(ConfigError::Parse(format!("override {spec:?} has an empty key")));
    }
    // values are TOML literals; anything else is taken as a bare string
    let v = match toml::from_str::<toml::Table>(&format!("v = {}", v.trim())) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(v.trim().to_string()),
    };
    Ok((k.to_string(), v))
}

/// Recursively lays `over` onto `base`. Tables carrying a `kind` tag replace
/// the base outright, since their variant fields do not mix.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load(source: &str, origin: &str, overrides: &[String]) -> Result<Loaded, ConfigError> {
    let located = |e: toml::de::Error| ConfigError::Parse(format!("{origin}: {}", e.to_string().trim_end()));
    let user: toml::Table = toml::from_str(source).map_err(located)?;
    // typed pass over the user's own text, so schema errors carry its line numbers
    toml::from_str::<RunConfig>(source).map_err(located)?;
    let defaults = toml::to_string(&RunConfig::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut table: toml::Table = toml::from_str(&defaults).map_err(|e| ConfigError::Parse(e.to_string()))?;
    merge(&mut table, user);
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_dotted(&mut table, &k, v)?;
    }
    let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| ConfigError::Parse(format!("{origin} (after overrides): {}", e.message())))?;
    Ok(Loaded { config, source: source.to_string(), origin: origin.to_string() })
}

/// 1-based line of the first assignment to the leaf of `key` inside its
/// section, or anywhere if the section is not found.
pub fn locate(source: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next()?;
    let section = key.split('.').next()?;
    let assigns = |line: &str| {
        let t = line.trim_start();
        t.strip_prefix(leaf).is_some_and(|r| r.trim_start().starts_with('='))
            || line.contains(&format!(" {leaf} ="))
            || line.contains(&format!("{{{leaf} ="))
            || line.contains(&format!(",{leaf} ="))
    };
    let mut in_section = false;
    let mut fallback = None;
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            let name = t.trim_matches(|c| c == '[' || c == ']').trim();
            in_section = name == section || name.starts_with(&format!("{section}."));
            continue;
        }
        if assigns(line) {
            if in_section {
                return Some(i + 1);
            }
            fallback.get_or_insert(i + 1);
        }
    }
    fallback
}

impl Loaded {
    pub fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let origin = match locate(&self.source, key) {
            Some(line) => format!("{}:{line}", self.origin),
            None => self.origin.clone(),
        };
        ConfigError::Invalid { origin, key: key.to_string(), message: message.into() }
    }

    /// Checks the blocks the chosen command reads.
    pub fn validate(&self, cmd: Command) -> Result<(), ConfigError> {
        let c = &self.config;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(self.invalid(key, format!("must be positive, got {v}")))
            }
        };
        let family = |block: &str, f: &FamilyEntry| -> Result<(), ConfigError> {
            let mut probe = f.family();
            // the solved-for parameter is not required up front
            match (&mut probe.case, f.solve) {
                (Case::Asym2 { kappa2, .. }, Some(Missing::Kappa2)) => *kappa2 = 1.0,
                (
                    Case::TwoByTwo { lambda2, .. } | Case::TwoByTwoPlusCenter { lambda2, .. },
                    Some(Missing::Lambda2),
                ) => *lambda2 = 1.0,
                (_, Some(m)) => return Err(self.invalid(&format!("{block}.solve"), format!("{m:?} does not apply to this case"))),
                _ => {}
            }
            probe.validate().map_err(|e| {
                let msg = e.to_string();
                let name = msg.split(": ").nth(1).and_then(|m| m.split_whitespace().next()).unwrap_or("family");
                let key = if name == "h" { format!("{block}.h") } else { format!("{block}.case.{name}") };
                self.invalid(&key, msg)
            })
        };
        if c.output.dir.is_empty() {
            return Err(self.invalid("output.dir", "must not be empty"));
        }
        match cmd {
            Command::Equilibria => {
                positive("equilibria.tolerance", c.equilibria.tolerance)?;
                if c.equilibria.families.is_empty() {
                    return Err(self.invalid("equilibria.families", "at least one family is required"));
                }
                for f in &c.equilibria.families {
                    family("equilibria.families", f)?;
                }
            }
            Command::Simulate => {
                let s = &c.simulate;
                family("simulate.family", &s.family)?;
                positive("simulate.dt", s.dt)?;
                positive("simulate.t_end", s.t_end)?;
                positive("simulate.collision_floor", s.collision_floor)?;
                positive("simulate.drift_tolerance", s.drift_tolerance)?;
                if s.modes < 8 || !s.modes.is_power_of_two() {
                    return Err(self.invalid("simulate.modes", format!("must be a power of two >= 8, got {}", s.modes)));
                }
                if s.save_stride == 0 {
                    return Err(self.invalid("simulate.save_stride", "must be at least 1"));
                }
            }
            Command::Landscape => {
                let l = &c.landscape;
                family("landscape.family", &l.family)?;
                positive("landscape.tol", l.tol)?;
                if !(l.spread >= 0.0 && l.spread < 1.0) {
                    return Err(self.invalid("landscape.spread", format!("must lie in [0, 1), got {}", l.spread)));
                }
                if l.starts == 0 {
                    return Err(self.invalid("landscape.starts", "must be at least 1"));
                }
            }
            Command::Green => {
                self.validate_grid()?;
                positive("green.h", c.green.h)?;
                if c.green.poles.is_empty() {
                    return Err(self.invalid("green.poles", "at least one pole is required"));
                }
                for r in &c.green.rings {
                    positive("green.rings", *r)?;
                }
            }
            Command::Solve | Command::Energy => {
                self.validate_grid()?;
                let s = &c.solver;
                positive("solver.damping", s.damping)?;
                positive("solver.tol", s.tol)?;
                positive("solver.linear_rtol", s.linear_rtol)?;
                positive("solver.pin_tol", s.pin_tol)?;
                if s.damping > 1.0 {
                    return Err(self.invalid("solver.damping", format!("must not exceed 1, got {}", s.damping)));
                }
                if s.max_iter == 0 {
                    return Err(self.invalid("solver.max_iter", "must be at least 1"));
                }
                self.validate_scenario()?;
            }
        }
        Ok(())
    }

    fn validate_grid(&self) -> Result<(), ConfigError> {
        let g = self.config.grid;
        if !(g.half_width > 0.0 && g.half_width.is_finite()) {
            return Err(self.invalid("grid.half_width", format!("must be positive, got {}", g.half_width)));
        }
        if g.n < 17 || !(g.n - 1).is_power_of_two() {
            return Err(self.invalid("grid.n", format!("must be 2^k + 1 with n >= 17, got {}", g.n)));
        }
        Ok(())
    }

    fn validate_scenario(&self) -> Result<(), ConfigError> {
        let s = self.config.scenario();
        let kind_fields: Vec<(&str, f64)> = match &s.kind {
            ScenarioKind::Generic { beta, .. } => vec![("beta", *beta)],
            ScenarioKind::Polygon { kappa, r_star, .. } => vec![("kappa", *kappa), ("r_star", *r_star)],
            ScenarioKind::PolygonPlusCenter { kappa, mu, r_star, .. } => vec![("kappa", *kappa), ("mu", *mu), ("r_star", *r_star)],
            ScenarioKind::Asym2 { kappa1, kappa2, lambda1, lambda2 } => {
                vec![("kappa1", *kappa1), ("kappa2", *kappa2), ("lambda1", *lambda1), ("lambda2", *lambda2)]
            }
            ScenarioKind::TwoByTwo { kappa, mu, lambda1, lambda2 } => {
                vec![("kappa", *kappa), ("mu", *mu), ("lambda1", *lambda1), ("lambda2", *lambda2)]
            }
            ScenarioKind::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => vec![
                ("kappa0", *kappa0),
                ("kappa", *kappa),
                ("mu", *mu),
                ("lambda1", *lambda1),
                ("lambda2", *lambda2),
            ],
        };
        for (name, v) in kind_fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(self.invalid(&format!("scenario.kind.{name}"), format!("must be positive, got {v}")));
            }
        }
        s.validate().map_err(|e| self.invalid("scenario", e.to_string()))
    }
}
