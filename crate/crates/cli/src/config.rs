//! Benchmark configuration files.
//!
//! Flat `key = value` text, one setting per line, `#` starts a comment.
//! Physical quantities carry a unit (`312.5 MHz`, `1.5 ms`). A file whose
//! first non-blank character is `{` is read as a JSON object with the same
//! keys; JSON values may be numbers or strings with units.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use pimcaps::capsnet::NetworkConfig;
use pimcaps::hmc::HmcConfig;
use pimcaps::sim::Scenario;
use serde::Serialize;

/// Every bundled config, keyed by name.
pub const BUNDLED: [(&str, &str); 12] = [
    ("caps-mn1", include_str!("../configs/caps-mn1.cfg")),
    ("caps-mn2", include_str!("../configs/caps-mn2.cfg")),
    ("caps-mn3", include_str!("../configs/caps-mn3.cfg")),
    ("caps-cf1", include_str!("../configs/caps-cf1.cfg")),
    ("caps-cf2", include_str!("../configs/caps-cf2.cfg")),
    ("caps-cf3", include_str!("../configs/caps-cf3.cfg")),
    ("caps-en1", include_str!("../configs/caps-en1.cfg")),
    ("caps-en2", include_str!("../configs/caps-en2.cfg")),
    ("caps-en3", include_str!("../configs/caps-en3.cfg")),
    ("caps-sv1", include_str!("../configs/caps-sv1.cfg")),
    ("caps-sv2", include_str!("../configs/caps-sv2.cfg")),
    ("caps-sv3", include_str!("../configs/caps-sv3.cfg")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source, line, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// One benchmark: a routing layer plus the device and run settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub name: String,
    pub network: NetworkConfig,
    /// Seconds the front layers take per batch; `None` uses the roofline
    /// estimate.
    pub host_latency: Option<f64>,
    pub n_batches: u64,
    pub vault_freq_hz: f64,
    pub n_vaults: usize,
    #[serde(serialize_with = "scenario_names")]
    pub scenarios: Vec<Scenario>,
    pub out_dir: Option<String>,
}

fn scenario_names<S: serde::Serializer>(v: &[Scenario], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|sc| sc.name()))
}

impl BenchmarkConfig {
    pub fn hmc(&self) -> HmcConfig {
        HmcConfig::default()
            .with_vaults(self.n_vaults)
            .with_frequency(self.vault_freq_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Text,
    Count,
    Seconds,
    Hertz,
    Scenarios,
}

const KEYS: [(&str, Kind); 13] = [
    ("name", Kind::Text),
    ("batch_size", Kind::Count),
    ("low_caps", Kind::Count),
    ("high_caps", Kind::Count),
    ("low_dim", Kind::Count),
    ("high_dim", Kind::Count),
    ("iterations", Kind::Count),
    ("host_latency", Kind::Seconds),
    ("n_batches", Kind::Count),
    ("vault_freq", Kind::Hertz),
    ("n_vaults", Kind::Count),
    ("scenarios", Kind::Scenarios),
    ("out_dir", Kind::Text),
];

const REQUIRED: [&str; 4] = ["name", "batch_size", "low_caps", "high_caps"];

struct Entry {
    value: String,
    line: Option<usize>,
}

/// Reads a config from a path, or a bundled config by name.
pub fn load_config(spec: &str) -> Result<BenchmarkConfig, LoadError> {
    if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == spec) {
        return parse_config(text, spec).map_err(LoadError::Config);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(format!("{spec}: {e}")))?;
    parse_config(&text, spec).map_err(LoadError::Config)
}

#[derive(Debug)]
pub enum LoadError {
    Io(String),
    Config(ConfigError),
}

pub fn bundled() -> Vec<BenchmarkConfig> {
    BUNDLED
        .iter()
        .map(|(name, text)| parse_config(text, name).expect("bundled configs are valid"))
        .collect()
}

pub fn parse_config(text: &str, source: &str) -> Result<BenchmarkConfig, ConfigError> {
    let err = |line: Option<usize>, message: String| ConfigError {
        source: source.to_string(),
        line,
        message,
    };
    let entries = if text.trim_start().starts_with('{') {
        parse_json(text).map_err(|m| err(None, m))?
    } else {
        parse_lines(text).map_err(|(line, m)| err(Some(line), m))?
    };
    for key in REQUIRED {
        if !entries.contains_key(key) {
            return Err(err(None, format!("missing required key '{key}'")));
        }
    }
    let text_of = |key: &str| entries.get(key).map(|e| (e.value.as_str(), e.line));
    let count = |key: &str, default: u64| -> Result<u64, ConfigError> {
        match text_of(key) {
            None => Ok(default),
            Some((v, line)) => {
                let n: u64 = v
                    .parse()
                    .map_err(|_| err(line, format!("{key}: expected a whole number, got '{v}'")))?;
                if n == 0 {
                    return Err(err(line, format!("{key} must be at least 1")));
                }
                Ok(n)
            }
        }
    };
    let name = text_of("name").map(|(v, _)| v.to_string()).unwrap_or_default();
    if name.is_empty() {
        return Err(err(
            text_of("name").and_then(|(_, l)| l),
            "name must not be empty".into(),
        ));
    }
    let as_usize = |n: u64| n as usize;
    let network = NetworkConfig::new(
        as_usize(count("batch_size", 1)?),
        as_usize(count("low_caps", 1)?),
        as_usize(count("high_caps", 1)?),
        as_usize(count("low_dim", NetworkConfig::DEFAULT_LOW_DIM as u64)?),
        as_usize(count("high_dim", NetworkConfig::DEFAULT_HIGH_DIM as u64)?),
        as_usize(count("iterations", 3)?),
    )
    .map_err(|e| err(None, e.to_string()))?;
    let host_latency = match text_of("host_latency") {
        None => None,
        Some((v, line)) => Some(parse_quantity(v, Kind::Seconds).map_err(|m| err(line, format!("host_latency: {m}")))?),
    };
    let vault_freq_hz = match text_of("vault_freq") {
        None => HmcConfig::default().vault_freq_hz,
        Some((v, line)) => {
            let f = parse_quantity(v, Kind::Hertz).map_err(|m| err(line, format!("vault_freq: {m}")))?;
            if f <= 0.0 {
                return Err(err(line, "vault_freq must be positive".into()));
            }
            f
        }
    };
    let n_vaults = as_usize(count("n_vaults", HmcConfig::default().n_vaults as u64)?);
    let hmc_check = HmcConfig::default().with_vaults(n_vaults).with_frequency(vault_freq_hz);
    hmc_check
        .validate()
        .map_err(|e| err(text_of("n_vaults").and_then(|(_, l)| l), e.to_string()))?;
    let scenarios = match text_of("scenarios") {
        None => Scenario::ALL.to_vec(),
        Some((v, line)) => parse_scenarios(v).map_err(|m| err(line, m))?,
    };
    Ok(BenchmarkConfig {
        name,
        network,
        host_latency,
        n_batches: count("n_batches", 1)?,
        vault_freq_hz,
        n_vaults,
        scenarios,
        out_dir: text_of("out_dir").map(|(v, _)| v.to_string()),
    })
}

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, kind)| *kind)
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, Entry>, (usize, String)> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or((line, format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let kind = kind_of(key).ok_or((line, format!("unknown key '{key}'")))?;
        if value.is_empty() {
            return Err((line, format!("{key}: missing value")));
        }
        if kind == Kind::Seconds || kind == Kind::Hertz {
            parse_quantity(value, kind).map_err(|m| (line, format!("{key}: {m}")))?;
        }
        let prev = out.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: Some(line),
            },
        );
        if prev.is_some() {
            return Err((line, format!("duplicate key '{key}'")));
        }
    }
    Ok(out)
}

fn parse_json(text: &str) -> Result<BTreeMap<String, Entry>, String> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let mut out = BTreeMap::new();
    for (key, v) in obj {
        let kind = kind_of(&key).ok_or(format!("unknown key '{key}'"))?;
        let value = match (&v, kind) {
            (serde_json::Value::String(s), _) => s.clone(),
            (serde_json::Value::Number(n), _) => n.to_string(),
            (serde_json::Value::Array(items), Kind::Scenarios) => items
                .iter()
                .map(|i| i.as_str().map(str::to_string).ok_or(format!("{key}: expected strings")))
                .collect::<Result<Vec<_>, _>>()?
                .join(","),
            _ => return Err(format!("{key}: unsupported value {v}")),
        };
        out.insert(key, Entry { value, line: None });
    }
    Ok(out)
}

fn parse_scenarios(v: &str) -> Result<Vec<Scenario>, String> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let sc: Scenario = item.parse().map_err(|e: pimcaps::sim::SimError| e.to_string())?;
        if !out.contains(&sc) {
            out.push(sc);
        }
    }
    if out.is_empty() {
        return Err("scenarios: empty list".into());
    }
    Ok(out)
}

/// `"<number> <unit>"` in SI units; the unit is mandatory.
fn parse_quantity(v: &str, kind: Kind) -> Result<f64, String> {
    let v = v.trim();
    let split = v
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .or_else(|| v.find(|c: char| c.is_ascii_alphabetic()));
    let (num, unit) = match split {
        Some(i) => (v[..i].trim(), v[i..].trim()),
        None => (v, ""),
    };
    let x: f64 = num.parse().map_err(|_| format!("'{v}' is not a number with a unit"))?;
    let scale = match (kind, unit) {
        (Kind::Seconds, "s") => 1.0,
        (Kind::Seconds, "ms") => 1e-3,
        (Kind::Seconds, "us") => 1e-6,
        (Kind::Seconds, "ns") => 1e-9,
        (Kind::Hertz, "Hz") => 1.0,
        (Kind::Hertz, "kHz") => 1e3,
        (Kind::Hertz, "MHz") => 1e6,
        (Kind::Hertz, "GHz") => 1e9,
        (Kind::Seconds, _) => return Err(format!("'{v}': expected a unit of s, ms, us or ns")),
        _ => return Err(format!("'{v}': expected a unit of Hz, kHz, MHz or GHz")),
    };
    let out = x * scale;
    if !out.is_finite() || out < 0.0 {
        return Err(format!("'{v}' must be a finite non-negative quantity"));
    }
    Ok(out)
}

/// Parses a frequency given on the command line, e.g. `625MHz` or `6.25e8`.
pub fn parse_frequency(v: &str) -> Result<f64, String> {
    let f = if v
        .trim()
        .chars()
        .any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
    {
        parse_quantity(v, Kind::Hertz)?
    } else {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("'{v}' is not a frequency"))?
    };
    if !(f.is_finite() && f > 0.0) {
        return Err(format!("'{v}' must be a positive frequency"));
    }
    Ok(f)
}
