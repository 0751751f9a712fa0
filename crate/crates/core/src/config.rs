//! Layered run configuration.
//!
//! A run configuration is assembled from an embedded default layer, any
//! number of TOML layers applied in order, and finally dotted-path
//! `key=value` overrides. Mappings merge key by key with later layers
//! winning; sequences are replaced wholesale.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::{Table, Value as TomlValue};

use crate::difficulty::{DifficultyWeights, Thresholds};
use crate::taskgen::Operation;

/// The default layer, applied beneath every user-supplied layer.
pub const DEFAULTS_TOML: &str = include_str!("../config/defaults.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}:{line}: parse error: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot read {}: {source}", file.display())]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown key `{path}`{}", nearest.as_ref().map(|n| format!(" (did you mean `{n}`?)")).unwrap_or_default())]
    UnknownKey { path: String, nearest: Option<String> },
    #[error("invalid override `{0}`: expected key=value")]
    BadOverride(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub site: SiteProfile,
    pub generation: GenParams,
    pub discovery: DiscoveryParams,
    pub difficulty: DifficultyConfig,
    pub provider: ProviderProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteProfile {
    pub name: String,
    pub base_url: String,
    pub require_login: bool,
    /// Engine identifier; resolved by [`crate::db::open_adapter`].
    pub engine: String,
    /// File path (embedded engine) or connection URL.
    pub database: String,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    pub max_templates_per_workflow: usize,
    pub max_instances_per_template: usize,
    /// First entry is the primary intent language.
    pub languages: Vec<String>,
    pub operations: Vec<Operation>,
    pub statement_timeout_ms: u64,
    pub max_sampled_rows: usize,
    pub allow_self_join: bool,
}

impl GenParams {
    pub fn primary_language(&self) -> &str {
        &self.languages[0]
    }

    pub fn allows(&self, op: Operation) -> bool {
        self.operations.contains(&op)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryParams {
    pub max_core_tables: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyConfig {
    pub w_table: f64,
    pub w_rel: f64,
    pub w_op: f64,
    pub w_result: f64,
    pub w_sql: f64,
    pub thresholds: [f64; 2],
}

impl DifficultyConfig {
    pub fn weights(&self) -> DifficultyWeights {
        DifficultyWeights {
            w_table: self.w_table,
            w_rel: self.w_rel,
            w_op: self.w_op,
            w_result: self.w_result,
            w_sql: self.w_sql,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            medium: self.thresholds[0],
            hard: self.thresholds[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderProfile {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    /// Column stem -> candidate target tables for implicit relations.
    pub aliases: BTreeMap<String, Vec<String>>,
}

impl RunConfig {
    /// The default layer alone; fails validation until site fields are set.
    pub fn defaults_table() -> Table {
        DEFAULTS_TOML.parse::<Table>().expect("embedded defaults parse")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Validation(m));
        if self.site.name.trim().is_empty() {
            return fail("site.name is required".into());
        }
        if self.site.database.trim().is_empty() {
            return fail("site.database is required".into());
        }
        for p in self.site.include.iter().chain(&self.site.exclude) {
            if let Err(e) = glob::Pattern::new(p) {
                return fail(format!("bad table pattern `{p}`: {e}"));
            }
        }
        let g = &self.generation;
        if g.languages.is_empty() {
            return fail("generation.languages must be nonempty".into());
        }
        if g.operations.is_empty() {
            return fail("generation.operations must be nonempty".into());
        }
        if g.max_templates_per_workflow == 0 {
            return fail("generation.max_templates_per_workflow must be >= 1".into());
        }
        if g.max_instances_per_template == 0 {
            return fail("generation.max_instances_per_template must be >= 1".into());
        }
        if g.max_sampled_rows == 0 {
            return fail("generation.max_sampled_rows must be >= 1".into());
        }
        if g.statement_timeout_ms == 0 {
            return fail("generation.statement_timeout_ms must be >= 1".into());
        }
        if self.discovery.max_core_tables == 0 {
            return fail("discovery.max_core_tables must be >= 1".into());
        }
        let w = self.difficulty.weights();
        if w.as_array().iter().any(|x| !x.is_finite() || *x < 0.0) {
            return fail("difficulty weights must be finite and >= 0".into());
        }
        if w.as_array().iter().all(|x| *x == 0.0) {
            return fail("difficulty weights all zero".into());
        }
        let [t1, t2] = self.difficulty.thresholds;
        if !(t1.is_finite() && t2.is_finite() && t1 < t2) {
            return fail(format!("difficulty.thresholds must satisfy t1 < t2 (got {t1}, {t2})"));
        }
        if self.provider.kind == ProviderKind::Http && self.provider.endpoint.trim().is_empty() {
            return fail("provider.endpoint is required when provider.kind = \"http\"".into());
        }
        Ok(())
    }
}

/// Loads and validates a run configuration from ordered layers plus overrides.
pub fn load_config<P: AsRef<Path>>(layer_paths: &[P], overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let defaults = RunConfig::defaults_table();
    let mut merged = defaults.clone();
    for path in layer_paths {
        let path = path.as_ref();
        let layer = read_layer(path)?;
        check_known(&layer, &defaults, "")?;
        deep_merge(&mut merged, layer);
    }
    for ov in overrides {
        apply_override(&mut merged, &defaults, ov)?;
    }
    from_table(merged)
}

/// Builds a configuration from in-memory TOML layers (no files involved).
pub fn load_config_str(layers: &[&str], overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let defaults = RunConfig::defaults_table();
    let mut merged = defaults.clone();
    for (i, text) in layers.iter().enumerate() {
        let layer = parse_layer(text, Path::new(&format!("<layer {i}>")))?;
        check_known(&layer, &defaults, "")?;
        deep_merge(&mut merged, layer);
    }
    for ov in overrides {
        apply_override(&mut merged, &defaults, ov)?;
    }
    from_table(merged)
}

fn from_table(merged: Table) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = TomlValue::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Validation(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_layer(path: &Path) -> Result<Table, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Io {
        file: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| {
        let good = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        ConfigError::Parse {
            file: path.to_path_buf(),
            line: good.iter().filter(|b| **b == b'\n').count() + 1,
            message: "file is not valid UTF-8".into(),
        }
    })?;
    parse_layer(&text, path)
}

fn parse_layer(text: &str, file: &Path) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        ConfigError::Parse {
            file: file.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

/// An empty table in the defaults marks a free-form map.
fn is_open_map(v: &TomlValue) -> bool {
    matches!(v, TomlValue::Table(t) if t.is_empty())
}

fn check_known(layer: &Table, defaults: &Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in layer {
        let path = join_path(prefix, k);
        match defaults.get(k) {
            None => {
                return Err(ConfigError::UnknownKey {
                    nearest: nearest_key(&path),
                    path,
                })
            }
            Some(d) if is_open_map(d) => {}
            Some(TomlValue::Table(dt)) => match v {
                TomlValue::Table(lt) => check_known(lt, dt, &path)?,
                _ => return Err(ConfigError::Validation(format!("{path} must be a table"))),
            },
            Some(_) => {}
        }
    }
    Ok(())
}

fn join_path(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn known_paths(t: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let p = join_path(prefix, k);
        if let TomlValue::Table(inner) = v {
            known_paths(inner, &p, out);
        }
        out.push(p);
    }
}

fn nearest_key(path: &str) -> Option<String> {
    let mut all = Vec::new();
    known_paths(&RunConfig::defaults_table(), "", &mut all);
    all.into_iter()
        .map(|k| (strsim::levenshtein(&k, path), k))
        .min()
        .map(|(_, k)| k)
}

fn deep_merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(TomlValue::Table(b)), TomlValue::Table(l)) => deep_merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(merged: &mut Table, defaults: &Table, ov: &str) -> Result<(), ConfigError> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(ov.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(ov.to_string()));
    }
    let segments: Vec<&str> = key.split('.').collect();

    // Resolve the target's default to learn its type.
    let mut cursor = defaults;
    let mut target: Option<&TomlValue> = None;
    let mut open = false;
    for (i, seg) in segments.iter().enumerate() {
        match cursor.get(*seg) {
            Some(v) if is_open_map(v) && i + 1 < segments.len() => {
                open = true;
                break;
            }
            Some(TomlValue::Table(t)) if i + 1 < segments.len() => cursor = t,
            Some(v) if i + 1 == segments.len() => target = Some(v),
            _ => {
                return Err(ConfigError::UnknownKey {
                    path: key.to_string(),
                    nearest: nearest_key(key),
                })
            }
        }
    }
    let value = if open {
        TomlValue::Array(split_list(raw).map(|s| TomlValue::String(s.to_string())).collect())
    } else {
        coerce(key, raw, target.expect("resolved target"))?
    };

    let (last, parents) = segments.split_last().expect("nonempty path");
    let mut slot = merged;
    for seg in parents {
        let entry = slot
            .entry(seg.to_string())
            .or_insert_with(|| TomlValue::Table(Table::new()));
        slot = match entry {
            TomlValue::Table(t) => t,
            _ => return Err(ConfigError::Validation(format!("{key}: parent is not a table"))),
        };
    }
    slot.insert(last.to_string(), value);
    Ok(())
}

fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn coerce(key: &str, raw: &str, like: &TomlValue) -> Result<TomlValue, ConfigError> {
    let bad = |what: &str| ConfigError::Validation(format!("{key}: expected {what}, got `{raw}`"));
    let raw_t = raw.trim();
    Ok(match like {
        TomlValue::String(_) => TomlValue::String(raw.to_string()),
        TomlValue::Integer(_) => TomlValue::Integer(raw_t.parse().map_err(|_| bad("integer"))?),
        TomlValue::Float(_) => TomlValue::Float(raw_t.parse().map_err(|_| bad("number"))?),
        TomlValue::Boolean(_) => TomlValue::Boolean(raw_t.parse().map_err(|_| bad("true or false"))?),
        TomlValue::Array(items) => {
            if raw_t.starts_with('[') {
                let t: Table = format!("v = {raw_t}").parse().map_err(|_| bad("array literal"))?;
                t["v"].clone()
            } else {
                let elem = items.first().cloned().unwrap_or(TomlValue::String(String::new()));
                TomlValue::Array(
                    split_list(raw)
                        .map(|s| coerce(key, s, &elem))
                        .collect::<Result<_, _>>()?,
                )
            }
        }
        TomlValue::Table(_) => {
            return Err(ConfigError::Validation(format!(
                "{key}: cannot assign a scalar to a table"
            )))
        }
        TomlValue::Datetime(_) => return Err(bad("datetime")),
    })
}

/// SHA-256 over the canonical JSON form (sorted keys) of the configuration.
pub fn effective_config_digest(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_value(cfg).expect("config serializes");
    let text = serde_json::to_string(&canonical).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
