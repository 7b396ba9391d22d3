//! Append-only session logs.
//!
//! A log is the sequence of reduced envelopes, one wire frame per line, each line prefixed
//! with its 1-based application index: `<index> <frame>`. Next to `name.log` sits
//! `name.meta.json`, holding what replay needs to rebuild the initial state (session id,
//! screen, dataset) and, once the log is closed, the applied count and final digest.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use holoproxy_core::protocol::{encode, Envelope, SessionId};
use holoproxy_core::{load_dataset_with, DataCube, ScreenConfig};
use serde::{Deserialize, Serialize};

pub const LOG_FORMAT: &str = "holoproxy-log/1";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad metadata: {detail}")]
    Meta { path: PathBuf, detail: String },
}

impl LogError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        LogError::Io { path: path.to_path_buf(), source }
    }
}

/// Pose jitter applied at ingest, before logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    /// Standard deviation in meters.
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedLog {
    pub applied: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogMeta {
    pub format: String,
    pub session: SessionId,
    pub screen: ScreenConfig,
    pub measure_name: String,
    pub measure_unit: String,
    pub cube_digest: String,
    pub cube_csv: String,
    pub jitter: Option<JitterConfig>,
    /// Present once the session owner closed the log cleanly.
    pub closed: Option<ClosedLog>,
}

impl LogMeta {
    pub fn new(session: SessionId, cube: &DataCube, screen: ScreenConfig, jitter: Option<JitterConfig>) -> Self {
        Self {
            format: LOG_FORMAT.to_string(),
            session,
            screen,
            measure_name: cube.measure_name().to_string(),
            measure_unit: cube.measure_unit().to_string(),
            cube_digest: cube.digest(),
            cube_csv: cube.to_csv_string(),
            jitter,
            closed: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        let text = fs::read_to_string(path).map_err(|e| LogError::io(path, e))?;
        let meta: LogMeta = serde_json::from_str(&text)
            .map_err(|e| LogError::Meta { path: path.to_path_buf(), detail: e.to_string() })?;
        if meta.format != LOG_FORMAT {
            let detail = format!("unsupported format {:?}", meta.format);
            return Err(LogError::Meta { path: path.to_path_buf(), detail });
        }
        Ok(meta)
    }

    /// Writes through a temporary file so a crash never leaves half a metadata file.
    pub fn write(&self, path: &Path) -> Result<(), LogError> {
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self).expect("metadata serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| LogError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| LogError::io(path, e))
    }

    /// Rebuilds the dataset, checking it against the recorded digest.
    pub fn cube(&self, path: &Path) -> Result<DataCube, LogError> {
        let bad = |detail: String| LogError::Meta { path: path.to_path_buf(), detail };
        let cube: DataCube = load_dataset_with(self.cube_csv.as_bytes(), &self.measure_name, &self.measure_unit)
            .map_err(|e| bad(e.to_string()))?;
        if cube.digest() != self.cube_digest {
            return Err(bad("dataset does not match its recorded digest".into()));
        }
        self.screen.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cube)
    }
}

/// `dir/name.log` → `dir/name.meta.json`.
pub fn meta_path(log_path: &Path) -> PathBuf {
    log_path.with_extension("meta.json")
}

/// Renders one log line.
pub fn log_line(index: u64, env: &Envelope) -> Vec<u8> {
    let mut line = format!("{index} ").into_bytes();
    line.extend_from_slice(&encode(env));
    line
}

/// Open log file plus its metadata.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
    meta: LogMeta,
}

impl LogWriter {
    /// Starts a fresh, empty log.
    pub fn create(path: &Path, meta: LogMeta) -> Result<Self, LogError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| LogError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| LogError::io(path, e))?;
        meta.write(&meta_path(path))?;
        Ok(Self { path: path.to_path_buf(), file, meta })
    }

    /// Reopens an existing log for appending and marks it open again.
    pub fn reopen(path: &Path, mut meta: LogMeta) -> Result<Self, LogError> {
        let file = OpenOptions::new().append(true).open(path).map_err(|e| LogError::io(path, e))?;
        meta.closed = None;
        meta.write(&meta_path(path))?;
        Ok(Self { path: path.to_path_buf(), file, meta })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, index: u64, env: &Envelope) -> Result<(), LogError> {
        self.file.write_all(&log_line(index, env)).map_err(|e| LogError::io(&self.path, e))
    }

    pub fn close(mut self, closed: ClosedLog) -> Result<ClosedLog, LogError> {
        self.file.sync_all().map_err(|e| LogError::io(&self.path, e))?;
        self.meta.closed = Some(closed.clone());
        self.meta.write(&meta_path(&self.path))?;
        Ok(closed)
    }
}
