//! Sectioned key-value configuration files.
//!
//! The format is a plain INI-style text: `[section]` headers, `key = value`
//! pairs, full-line comments starting with `#` or `;`. Every section and key
//! is validated against the published schema and unknown or duplicate keys
//! are rejected. Vector values are comma-separated decimals. After parsing,
//! defaults are resolved explicitly and the effective configuration can be
//! echoed back in the same grammar.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = Result<T, ConfigError>;

/// Allowed sections and keys.
const SCHEMA: &[(&str, &[&str])] = &[
    ("system", &["name", "dimension", "load_a", "load_b", "target0", "target_rate", "u0"]),
    ("metric", &["kind", "weights"]),
    ("dissipation", &["family", "p", "eps", "L"]),
    ("grid", &["T", "steps", "nodes"]),
    ("solver", &["tol", "max_iter", "multistart", "seed"]),
    ("family", &["law", "ratio", "count", "p", "p_limit"]),
    (
        "bv",
        &["delta_jump", "abs_floor", "tol_stab", "eb_tol", "cap_L", "window_pad", "dyadic_depth"],
    ),
    ("output", &["dir"]),
    ("transition", &["segments", "starts"]),
];

/// Parsed configuration: ordered sections of ordered key-value pairs.
#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> CfgResult<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError(format!(
                        "line {}: unknown section [{name}]",
                        lineno + 1
                    )));
                }
                if sections.contains_key(name) {
                    return Err(ConfigError(format!(
                        "line {}: duplicate section [{name}]",
                        lineno + 1
                    )));
                }
                sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let Some(section) = &current else {
                return Err(ConfigError(format!(
                    "line {}: key `{key}` outside any section",
                    lineno + 1
                )));
            };
            let allowed = SCHEMA.iter().find(|(s, _)| s == section).unwrap().1;
            if !allowed.contains(&key) {
                return Err(ConfigError(format!(
                    "line {}: unknown key `{key}` in section [{section}]",
                    lineno + 1
                )));
            }
            let entry = sections.get_mut(section).unwrap();
            if entry.contains_key(key) {
                return Err(ConfigError(format!(
                    "line {}: duplicate key `{key}` in section [{section}]",
                    lineno + 1
                )));
            }
            entry.insert(key.to_string(), value.to_string());
        }
        Ok(Self { sections })
    }

    pub fn load(path: &std::path::Path) -> CfgResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(|v| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> CfgResult<&str> {
        self.get(section, key).ok_or_else(|| {
            ConfigError(format!("missing required key `{key}` in section [{section}]"))
        })
    }

    pub fn get_f64(&self, section: &str, key: &str) -> CfgResult<Option<f64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ConfigError(format!("key `{key}` in [{section}]: not a number: {v}"))),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> CfgResult<f64> {
        Ok(self.get_f64(section, key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, section: &str, key: &str) -> CfgResult<f64> {
        self.get_f64(section, key)?.ok_or_else(|| {
            ConfigError(format!("missing required key `{key}` in section [{section}]"))
        })
    }

    pub fn get_usize(&self, section: &str, key: &str) -> CfgResult<Option<usize>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| {
                ConfigError(format!("key `{key}` in [{section}]: not a nonnegative integer: {v}"))
            }),
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> CfgResult<usize> {
        Ok(self.get_usize(section, key)?.unwrap_or(default))
    }

    pub fn get_u64(&self, section: &str, key: &str) -> CfgResult<Option<u64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<u64>().map(Some).map_err(|_| {
                ConfigError(format!("key `{key}` in [{section}]: not an integer: {v}"))
            }),
        }
    }

    pub fn get_vec(&self, section: &str, key: &str) -> CfgResult<Option<Vec<f64>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => {
                let parsed: Result<Vec<f64>, _> =
                    v.split(',').map(|t| t.trim().parse::<f64>()).collect();
                parsed.map(Some).map_err(|_| {
                    ConfigError(format!("key `{key}` in [{section}]: not a decimal vector: {v}"))
                })
            }
        }
    }

    /// Writes a resolved key back so the echoed configuration carries the
    /// explicit defaults.
    pub fn set(&mut self, section: &str, key: &str, value: String) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value);
    }

    /// Renders the configuration in the input grammar, sections and keys in
    /// deterministic (sorted) order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (section, entries) in &self.sections {
            out.push_str(&format!("[{section}]\n"));
            for (key, value) in entries {
                out.push_str(&format!("{key} = {value}\n"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let good = "[system]\nname = quadratic\ndimension = 2\n\n[grid]\nT = 1.0\nsteps = 10\n";
        let cfg = Config::parse(good).unwrap();
        assert_eq!(cfg.get("system", "name"), Some("quadratic"));
        assert_eq!(cfg.require_f64("grid", "T").unwrap(), 1.0);

        assert!(Config::parse("[system]\nbogus = 1\n").is_err());
        assert!(Config::parse("[nosuch]\n").is_err());
        assert!(Config::parse("[system]\nname = a\nname = b\n").is_err());
        assert!(Config::parse("name = orphan\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let text = "[grid]\nT = 2.0\nsteps = 4\n\n[system]\nname = marginal_demo\n";
        let cfg = Config::parse(text).unwrap();
        let rendered = cfg.render();
        let again = Config::parse(&rendered).unwrap();
        assert_eq!(cfg.render(), again.render());
    }

    #[test]
    fn vectors_parse() {
        let cfg = Config::parse("[system]\ntarget0 = 1.0, -2.5,3\n").unwrap();
        assert_eq!(cfg.get_vec("system", "target0").unwrap().unwrap(), vec![1.0, -2.5, 3.0]);
        assert!(Config::parse("[system]\ntarget0 = 1.0,x\n")
            .unwrap()
            .get_vec("system", "target0")
            .is_err());
    }
}
