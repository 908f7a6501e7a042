//! `key = value` configuration files with optional sections per
//! transformation, merged under command-line flags.
//!
//! ```text
//! weights = fixture/weights.txt
//! depth = 6
//!
//! [rotation]
//! range = 20
//! [translate]
//! range = 1.6, 1.6
//! ```
//!
//! Inside `[rotation]`, `[scale]` and `[translate]` the only key is
//! `range`. Relative paths in a file resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

/// Keys accepted at the top level; each matches a command-line flag.
pub const KEYS: &[&str] = &[
    "fn",
    "dim",
    "bounds",
    "weights",
    "images",
    "labels",
    "rotation",
    "scale",
    "translate",
    "matrix",
    "depth",
    "alpha",
    "tau",
    "max-iters",
    "max-queries",
    "lipschitz",
    "seed",
    "oracle-grid",
    "oracle-grid-cap",
    "oracle-random",
    "match-tol",
    "skip-misclassified",
    "out",
];

const SECTIONS: &[&str] = &["rotation", "scale", "translate"];
const PATH_KEYS: &[&str] = &["weights", "images", "labels", "out"];

/// Effective settings as strings, sorted by key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    bail!("line {}: unknown section [{name}]", n + 1);
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let key = match &section {
                Some(s) if key == "range" => s.clone(),
                Some(s) => bail!("line {}: unknown key `{key}` in [{s}]", n + 1),
                None if KEYS.contains(&key) => key.to_string(),
                None => bail!("line {}: unknown key `{key}`", n + 1),
            };
            let value = match base {
                Some(dir) if PATH_KEYS.contains(&key.as_str()) && Path::new(value).is_relative() => {
                    dir.join(value).to_string_lossy().into_owned()
                }
                _ => value.to_string(),
            };
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path.parent())
    }

    /// Flag values take precedence over file values.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_default(&mut self, key: &str, value: impl ToString) {
        self.values.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| anyhow!("missing required setting `{key}` (flag --{key})"))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("invalid value `{v}` for `{key}`: {e}")))
            .transpose()
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(key).map(PathBuf::from)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => bail!("invalid boolean `{v}` for `{key}`"),
        }
    }

    /// Comma-separated reals.
    pub fn reals(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(key).map(|v| parse_reals(v).with_context(|| format!("setting `{key}`"))).transpose()
    }

    /// `# key = value` lines for output headers.
    pub fn header(&self) -> String {
        self.values.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

pub fn parse_reals(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("`{}` is not a number", t.trim())))
        .collect()
}

/// `lo,hi` pairs separated by `;`.
pub fn parse_bounds(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(';')
        .map(|pair| match parse_reals(pair)?.as_slice() {
            &[lo, hi] => Ok((lo, hi)),
            _ => bail!("bounds `{pair}` must be `lo,hi`"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_map_to_keys() {
        let s = Settings::parse("depth = 5 # comment\n[rotation]\nrange = 20\n[translate]\nrange = 1.6,1.6\n", None).unwrap();
        assert_eq!(s.raw("depth"), Some("5"));
        assert_eq!(s.raw("rotation"), Some("20"));
        assert_eq!(s.reals("translate").unwrap(), Some(vec![1.6, 1.6]));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Settings::parse("colour = red\n", None).is_err());
        assert!(Settings::parse("[shear]\nrange = 1\n", None).is_err());
        assert!(Settings::parse("[scale]\nmax = 1\n", None).is_err());
        assert!(Settings::parse("depth 5\n", None).is_err());
    }

    #[test]
    fn flags_override_and_paths_resolve() {
        let mut s = Settings::parse("weights = w.txt\ndepth = 4\n", Some(Path::new("/data"))).unwrap();
        s.set("depth", 7);
        s.set_default("alpha", 2);
        s.set_default("depth", 1);
        assert_eq!(s.get::<u32>("depth").unwrap(), Some(7));
        assert_eq!(s.raw("alpha"), Some("2"));
        assert_eq!(s.path("weights").unwrap(), PathBuf::from("/data/w.txt"));
        assert_eq!(s.header(), "# alpha = 2\n# depth = 7\n# weights = /data/w.txt\n");
    }

    #[test]
    fn bounds_and_flags() {
        assert_eq!(parse_bounds("0,1; -2, 2").unwrap(), vec![(0.0, 1.0), (-2.0, 2.0)]);
        assert!(parse_bounds("0,1,2").is_err());
        let s = Settings::parse("skip-misclassified = yes\n", None).unwrap();
        assert!(s.flag("skip-misclassified").unwrap());
        assert!(!s.flag("out").unwrap());
    }
}
