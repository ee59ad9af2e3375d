//! The daemon's JSON configuration file.
//!
//! ```json
//! {
//!   "task_models": ["airline.task.xml", "handling.task.xml"],
//!   "profiles": "profiles.json",
//!   "flights": "flights.json",
//!   "templates": "templates.json",
//!   "bindings": ["cofos.bindings.json"],
//!   "capabilities": {"pc": {...}, "pda": {...}, "phone": {...}},
//!   "port": 7340,
//!   "ui_dir": "../web/dist",
//!   "feed": {"interval_secs": 10, "seed": 1},
//!   "snapshot": "flights.snapshot.json"
//! }
//! ```
//!
//! Paths are relative to the configuration file. Anything left out falls
//! back to the bundled fixtures.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::flightops::{parse_flights, parse_templates};
use crate::interaction_container::{BindingTable, CapabilityPresets};
use crate::profile_store::ProfileDocument;
use crate::runtime::{load_model, RuntimeConfig};

pub const DEFAULT_PORT: u16 = 7340;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedConfig {
    pub interval_secs: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task_models: Option<Vec<PathBuf>>,
    profiles: Option<PathBuf>,
    flights: Option<PathBuf>,
    templates: Option<PathBuf>,
    bindings: Option<Vec<PathBuf>>,
    capabilities: Option<CapabilityPresets>,
    port: Option<u16>,
    ui_dir: Option<PathBuf>,
    feed: Option<FeedConfig>,
    snapshot: Option<PathBuf>,
    scripted_bips: Option<bool>,
}

/// How the daemon listens, as opposed to what it loads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeOptions {
    pub host: String,
    pub port: u16,
    pub ui_dir: Option<PathBuf>,
    pub feed: Option<FeedConfig>,
    pub snapshot: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            ui_dir: None,
            feed: None,
            snapshot: None,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigError> {
    std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    String::from_utf8(read(path)?).map_err(|e| invalid(path, e))
}

fn invalid(path: &Path, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_owned(),
        reason: reason.to_string(),
    }
}

/// Reads a configuration file and every fixture it names.
pub fn load_config(path: &Path) -> Result<(RuntimeConfig, ServeOptions), ConfigError> {
    let file: FileConfig = serde_json::from_slice(&read(path)?).map_err(|e| invalid(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let at = |p: &PathBuf| base.join(p);
    let mut rt = RuntimeConfig::builtin();

    if let Some(models) = &file.task_models {
        rt.models = models
            .iter()
            .map(|m| {
                let p = at(m);
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                load_model(&name, &read(&p)?).map_err(|e| invalid(&p, e))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(p) = &file.profiles {
        let p = at(p);
        rt.profiles = serde_json::from_str::<ProfileDocument>(&read_text(&p)?).map_err(|e| invalid(&p, e))?;
    }
    if let Some(p) = &file.flights {
        let p = at(p);
        rt.flights = parse_flights(&read_text(&p)?).map_err(|e| invalid(&p, e))?;
    }
    if let Some(p) = &file.templates {
        let p = at(p);
        rt.templates = parse_templates(&read_text(&p)?).map_err(|e| invalid(&p, e))?;
    }
    if let Some(list) = &file.bindings {
        rt.bindings = list
            .iter()
            .map(|b| {
                let p = at(b);
                BindingTable::from_json(&read_text(&p)?).map_err(|e| invalid(&p, e))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(c) = file.capabilities {
        if ![c.pc, c.pda, c.phone].iter().all(|k| k.is_valid()) {
            return Err(invalid(path, "capability limits must be positive"));
        }
        rt.presets = c;
    }
    rt.scripted_bips = file.scripted_bips.unwrap_or(false);
    if let Some(FeedConfig { interval_secs: 0, .. }) = file.feed {
        return Err(invalid(path, "feed interval must be positive"));
    }
    let serve = ServeOptions {
        port: file.port.unwrap_or(DEFAULT_PORT),
        ui_dir: file.ui_dir.as_ref().map(at),
        feed: file.feed,
        snapshot: file.snapshot.as_ref().map(at),
        ..ServeOptions::default()
    };
    Ok((rt, serve))
}
