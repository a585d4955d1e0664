//! Flat `key = value` configuration files (TOML syntax).

use std::path::Path;

use srsplat_core::pipeline::TrainConfig;

use crate::error::{Error, Result};

/// Parses config text on top of the defaults. Every unknown key is reported
/// in one error; values are range-checked per key.
pub fn parse_config(text: &str) -> std::result::Result<TrainConfig, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let unknown: Vec<&str> = table
        .keys()
        .map(String::as_str)
        .filter(|k| !TrainConfig::KEYS.iter().any(|info| info.name == *k))
        .collect();
    if !unknown.is_empty() {
        return Err(format!("unknown config keys: {}", unknown.join(", ")));
    }
    let mut cfg = TrainConfig::default();
    for info in TrainConfig::KEYS {
        if let Some(v) = table.get(info.name) {
            cfg.set(info.name, &scalar(info.name, v)?).map_err(|e| e.to_string())?;
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn scalar(key: &str, v: &toml::Value) -> std::result::Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(format!("config key `{key}` must be a single value")),
    }
}

/// Reads a config file; `default` names the built-in reference config.
pub fn load_config(spec: &str) -> Result<TrainConfig> {
    if spec == "default" {
        return Ok(reference_config());
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|m| Error::Validation(format!("{}: {m}", path.display())))
}

pub fn write_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_snapshot()).map_err(|e| Error::io(path, e))
}

/// Applies `key=value` overrides in order.
pub fn apply_overrides(cfg: &mut TrainConfig, overrides: &[String]) -> Result<()> {
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("override `{kv}` is not of the form key=value")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Error::Validation(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Error::Validation(e.to_string()))
}

/// Text of the shipped reference config (`configs/reference.toml`).
pub const REFERENCE_CONFIG: &str = include_str!("../../../configs/reference.toml");

/// Desk-scale reference configuration.
pub fn reference_config() -> TrainConfig {
    parse_config(REFERENCE_CONFIG).expect("shipped reference config is valid")
}

/// Table of every key with its default, valid range and meaning.
pub fn help_table() -> String {
    let defaults = TrainConfig::default();
    let width = TrainConfig::KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut out = String::from("CONFIG KEYS (key = default  [valid range]  meaning):\n");
    for k in TrainConfig::KEYS {
        let d = defaults.get(k.name).unwrap_or_default();
        out.push_str(&format!("  {:width$} = {:<10} [{}]  {}\n", k.name, d, k.range, k.doc));
    }
    out
}
