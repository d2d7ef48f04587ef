//! Writing stamped artifacts.
//!
//! JSON artifacts carry `config_hash` and `toolkit_version` keys; CSV
//! artifacts start with a `#` comment line holding the same two values; SVG
//! figures carry them in an XML comment.

use std::path::Path;

use serde::Serialize;
use serde::de::DeserializeOwned;

use crate::config::TOOLKIT_VERSION;
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: String,
    pub toolkit_version: String,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), toolkit_version: TOOLKIT_VERSION.to_string() }
    }

    pub fn csv_header(&self) -> String {
        format!("# dilseg {} config {}\n", self.toolkit_version, self.config_hash)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with the stamp merged into the top-level object (or wrapping
/// non-object values under `data`).
pub fn write_json<T: Serialize>(path: &Path, value: &T, stamp: &Stamp) -> Result<()> {
    let v = serde_json::to_value(value).map_err(|e| CliError::json(path, e))?;
    let mut obj = match v {
        serde_json::Value::Object(m) => m,
        other => {
            let mut m = serde_json::Map::new();
            m.insert("data".into(), other);
            m
        }
    };
    obj.insert("config_hash".into(), stamp.config_hash.clone().into());
    obj.insert("toolkit_version".into(), stamp.toolkit_version.clone().into());
    let text = serde_json::to_string_pretty(&obj).map_err(|e| CliError::json(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

/// Reads a stamped JSON artifact and returns it with its stamp.
pub fn read_stamped<T: DeserializeOwned>(path: &Path) -> Result<(T, Stamp)> {
    let mut v: serde_json::Value = read_json(path)?;
    let obj = v.as_object_mut().ok_or_else(|| CliError::Config(format!("{} is not a JSON object", path.display())))?;
    let take = |obj: &mut serde_json::Map<String, serde_json::Value>, k: &str| {
        obj.remove(k).and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    };
    let stamp = Stamp { config_hash: take(obj, "config_hash"), toolkit_version: take(obj, "toolkit_version") };
    let value = match obj.remove("data") {
        Some(d) if obj.is_empty() => d,
        Some(d) => {
            obj.insert("data".into(), d);
            v
        }
        None => v,
    };
    let value = serde_json::from_value(value).map_err(|e| CliError::json(path, e))?;
    Ok((value, stamp))
}

pub fn write_csv(path: &Path, body: &str, stamp: &Stamp) -> Result<()> {
    write_text(path, &(stamp.csv_header() + body))
}

pub fn write_svg(path: &Path, svg: &str, stamp: &Stamp) -> Result<()> {
    let comment = format!("<!-- dilseg {} config {} -->\n", stamp.toolkit_version, stamp.config_hash);
    write_text(path, &(comment + svg))
}

/// Path relative to `base` when possible, with forward slashes.
pub fn relative(path: &Path, base: &Path) -> String {
    let p = path.strip_prefix(base).unwrap_or(path);
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}
