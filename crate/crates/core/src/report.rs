//! JSON report envelopes.
//!
//! Every report splits into a `stable` part, which depends only on the
//! inputs and seed, and a `volatile` part (wall time, timestamp) that is
//! expected to differ between runs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volatile {
    pub wall_time_secs: f64,
    pub timestamp_unix: u64,
}

impl Volatile {
    pub fn now(wall_time_secs: f64) -> Self {
        Self {
            wall_time_secs,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub stable: T,
    pub volatile: Volatile,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GicError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| GicError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GicError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| GicError::parse(path, e.line(), e.to_string()))
}
