//! Run configuration: built-in defaults, `key = value` files with
//! `[section]` headers, and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use hdgmd::sim::WellPlacement;
use hdgmd::transport::SigmaDMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    Manufactured,
    LShape,
    Zero,
}

impl ScenarioName {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mms" | "manufactured" => Some(Self::Manufactured),
            "lshape" => Some(Self::LShape),
            "zero" => Some(Self::Zero),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuditMode {
    #[default]
    Record,
    Enforce,
    Off,
}

impl AuditMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "record" => Some(Self::Record),
            "enforce" => Some(Self::Enforce),
            "off" => Some(Self::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: ScenarioName,
    /// File the configuration was read from, if any.
    pub source: Option<PathBuf>,
    pub k: usize,
    pub tau: Option<f64>,
    pub t_final: Option<f64>,
    /// Manufactured and zero scenarios: uniform refinement level (first
    /// level for convergence studies). L-shape: extra uniform refinements
    /// of the graded mesh.
    pub refine: Option<usize>,
    pub levels: usize,
    pub sigma_u: f64,
    pub sigma_d: SigmaDMode,
    pub wells: WellPlacement,
    pub reconstruction: bool,
    pub audit: AuditMode,
    pub mesh_file: Option<PathBuf>,
    pub max_area: Option<f64>,
    pub snapshot_times: Vec<f64>,
    pub out: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            scenario: ScenarioName::Manufactured,
            source: None,
            k: 1,
            tau: None,
            t_final: None,
            refine: None,
            levels: 4,
            sigma_u: 1.0,
            sigma_d: SigmaDMode::Owner,
            wells: WellPlacement::default(),
            reconstruction: true,
            audit: AuditMode::Record,
            mesh_file: None,
            max_area: None,
            snapshot_times: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { path: PathBuf, msg: String },
    Syntax { path: PathBuf, line: usize, msg: String },
    Value { field: String, msg: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, msg } => write!(f, "cannot read {}: {msg}", path.display()),
            ConfigError::Syntax { path, line, msg } => write!(f, "{}:{line}: {msg}", path.display()),
            ConfigError::Value { field, msg } => write!(f, "invalid `{field}`: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn value_err(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| value_err(field, format!("cannot parse `{v}`")))
}

fn parse_bool(field: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(value_err(field, format!("expected true/false, got `{v}`"))),
    }
}

pub fn parse_wells(v: &str) -> Result<WellPlacement, ConfigError> {
    match v {
        "top-right" => Ok(WellPlacement::InjectorTopRight),
        "bottom-left" => Ok(WellPlacement::InjectorBottomLeft),
        "none" => Ok(WellPlacement::None),
        _ => Err(value_err("wells.injector", format!("expected top-right, bottom-left or none, got `{v}`"))),
    }
}

/// Section and key names accepted in configuration files.
const KEYS: &[(&str, &str)] = &[
    ("scenario", "name"),
    ("discretization", "k"),
    ("discretization", "tau"),
    ("discretization", "T"),
    ("discretization", "refine"),
    ("discretization", "levels"),
    ("discretization", "sigma_u"),
    ("discretization", "sigma_d"),
    ("discretization", "reconstruction"),
    ("mesh", "file"),
    ("mesh", "max_area"),
    ("wells", "injector"),
    ("output", "dir"),
    ("output", "snapshot_times"),
    ("output", "audit"),
];

impl Config {
    /// Read a configuration file. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut cfg = Self::parse_str(&text, path)?;
        cfg.source = Some(path.to_path_buf());
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.mesh_file {
            if m.is_relative() {
                cfg.mesh_file = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn parse_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        let syntax = |line: usize, msg: String| ConfigError::Syntax {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(i + 1, format!("malformed section header `{line}`")))?
                    .trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(syntax(i + 1, format!("unknown section `{name}`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(i + 1, format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&(section.as_str(), key)) {
                return Err(syntax(i + 1, format!("unknown key `{key}` in section `[{section}]`")));
            }
            cfg.set(&format!("{section}.{key}"), value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, field: &str, v: &str) -> Result<(), ConfigError> {
        match field {
            "scenario.name" => {
                self.scenario = ScenarioName::parse(v)
                    .ok_or_else(|| value_err(field, format!("unknown scenario `{v}` (mms, lshape, zero)")))?
            }
            "discretization.k" => self.k = parse_num(field, v)?,
            "discretization.tau" => self.tau = Some(parse_num(field, v)?),
            "discretization.T" => self.t_final = Some(parse_num(field, v)?),
            "discretization.refine" => self.refine = Some(parse_num(field, v)?),
            "discretization.levels" => self.levels = parse_num(field, v)?,
            "discretization.sigma_u" => self.sigma_u = parse_num(field, v)?,
            "discretization.sigma_d" => {
                self.sigma_d = match v {
                    "owner" => SigmaDMode::Owner,
                    "max" => SigmaDMode::Max,
                    _ => return Err(value_err(field, format!("expected owner or max, got `{v}`"))),
                }
            }
            "discretization.reconstruction" => self.reconstruction = parse_bool(field, v)?,
            "mesh.file" => self.mesh_file = Some(PathBuf::from(v)),
            "mesh.max_area" => self.max_area = Some(parse_num(field, v)?),
            "wells.injector" => self.wells = parse_wells(v)?,
            "output.dir" => self.out = PathBuf::from(v),
            "output.snapshot_times" => {
                self.snapshot_times = v
                    .split(',')
                    .map(|s| parse_num(field, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "output.audit" => {
                self.audit = AuditMode::parse(v)
                    .ok_or_else(|| value_err(field, format!("expected record, enforce or off, got `{v}`")))?
            }
            _ => return Err(value_err(field, "unknown field")),
        }
        Ok(())
    }

    /// Check values that can be checked before any mesh is built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(value_err("tau", format!("must be positive, got {t}")));
            }
        }
        if let Some(t) = self.t_final {
            if !(t > 0.0) {
                return Err(value_err("T", format!("must be positive, got {t}")));
            }
        }
        if !(self.sigma_u > 0.0) {
            return Err(value_err("sigma_u", format!("must be positive, got {}", self.sigma_u)));
        }
        if self.k > 6 {
            return Err(value_err("k", format!("degrees above 6 are not supported, got {}", self.k)));
        }
        if let Some(a) = self.max_area {
            if !(a > 0.0) {
                return Err(value_err("max_area", format!("must be positive, got {a}")));
            }
        }
        if self.snapshot_times.iter().any(|t| !(*t > 0.0)) {
            return Err(value_err("snapshot_times", "times must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let text = "# desk run\n[scenario]\nname = lshape\n\n[discretization]\nk = 2\ntau = 0.05 # step\nT = 5\n\
                    reconstruction = off\n[wells]\ninjector = bottom-left\n[output]\nsnapshot_times = 1, 2.5\naudit = enforce\n";
        let c = Config::parse_str(text, Path::new("x.cfg")).unwrap();
        assert_eq!(c.scenario, ScenarioName::LShape);
        assert_eq!(c.k, 2);
        assert_eq!(c.tau, Some(0.05));
        assert_eq!(c.t_final, Some(5.0));
        assert!(!c.reconstruction);
        assert_eq!(c.wells, WellPlacement::InjectorBottomLeft);
        assert_eq!(c.snapshot_times, vec![1.0, 2.5]);
        assert_eq!(c.audit, AuditMode::Enforce);
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let e = Config::parse_str("[discretization]\nkk = 2\n", Path::new("a.cfg")).unwrap_err();
        assert!(e.to_string().starts_with("a.cfg:2:"), "{e}");
        let e = Config::parse_str("k = 2\n", Path::new("a.cfg")).unwrap_err();
        assert!(e.to_string().contains("unknown key"));
        let e = Config::parse_str("[bogus]\n", Path::new("a.cfg")).unwrap_err();
        assert!(e.to_string().contains("unknown section"));
    }

    #[test]
    fn validation_names_the_field() {
        let c = Config {
            tau: Some(-1.0),
            ..Config::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("`tau`"));
        let e = Config::parse_str("[discretization]\nk = two\n", Path::new("a")).unwrap_err();
        assert!(e.to_string().contains("`discretization.k`"));
    }
}
