//! Weight averaging over parameter snapshots and the step learning-rate
//! schedule with constant warmup.
//!
//! Snapshot files come in two flavours:
//!
//! - inline JSON: `{"entries": [{"name", "shape", "values": [...]}]}`;
//! - manifest + payload: `{"entries": [{"name", "shape", "dtype": "f64",
//!   "offset", "length"}]}` next to a raw little-endian `f64` payload.
//!   `offset` and `length` count elements, not bytes. The payload lives at
//!   the manifest path with extension `.bin` unless the manifest names it
//!   in a top-level `"payload"` key (relative to the manifest).
//!
//! Both round-trip bit-exactly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named flat parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub entries: Vec<ParamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl ParamSnapshot {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let s = ParamSnapshot {
            entries,
            notes: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate entry `{}`", e.name)));
            }
            let n: usize = e.shape.iter().product();
            if n != e.values.len() {
                return Err(Error::InvalidInput(format!(
                    "entry `{}` has shape {:?} but {} values",
                    e.name,
                    e.shape,
                    e.values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_inline_json(&self) -> Result<String> {
        if self
            .entries
            .iter()
            .any(|e| e.values.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidInput(
                "inline JSON cannot hold non-finite values; use the binary format".into(),
            ));
        }
        serde_json::to_string_pretty(self).map_err(|e| Error::Format {
            context: "snapshot serialization".into(),
            message: e.to_string(),
        })
    }

    pub fn from_inline_json(text: &str) -> Result<Self> {
        let s: ParamSnapshot = serde_json::from_str(text).map_err(|e| Error::Format {
            context: format!("snapshot (line {}, column {})", e.line(), e.column()),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    /// Writes `manifest` and its little-endian payload.
    pub fn save_binary(&self, manifest: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let manifest = manifest.as_ref();
        let payload_path = manifest.with_extension("bin");
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for e in &self.entries {
            for v in &e.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: "f64".into(),
                offset,
                length: e.values.len(),
            });
            offset += e.values.len();
        }
        let m = Manifest {
            entries,
            payload: payload_path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned()),
            notes: self.notes.clone(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(manifest, text).map_err(|e| Error::io(manifest, e))?;
        std::fs::write(&payload_path, bytes).map_err(|e| Error::io(&payload_path, e))
    }

    /// Loads either flavour, deciding by the presence of inline `values`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
            context: format!(
                "{} (line {}, column {})",
                path.display(),
                e.line(),
                e.column()
            ),
            message: e.to_string(),
        })?;
        let inline = probe
            .get("entries")
            .and_then(|e| e.as_array())
            .is_some_and(|a| a.iter().all(|e| e.get("values").is_some()));
        if inline {
            return Self::from_inline_json(&text);
        }
        let m: Manifest = serde_json::from_value(probe).map_err(|e| Error::Format {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        let payload_path = match &m.payload {
            Some(p) => path.parent().unwrap_or(Path::new("")).join(p),
            None => path.with_extension("bin"),
        };
        let bytes = std::fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        Self::from_manifest(m, &bytes, &payload_path)
    }

    fn from_manifest(m: Manifest, bytes: &[u8], payload: &Path) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Format {
                context: payload.display().to_string(),
                message: format!("payload length {} is not a multiple of 8", bytes.len()),
            });
        }
        let n_values = bytes.len() / 8;
        let mut entries = Vec::with_capacity(m.entries.len());
        for e in m.entries {
            if e.dtype != "f64" {
                return Err(Error::Format {
                    context: format!("entry `{}`", e.name),
                    message: format!("unsupported dtype `{}`", e.dtype),
                });
            }
            let end = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end <= n_values);
            let Some(end) = end else {
                return Err(Error::Format {
                    context: format!("entry `{}`", e.name),
                    message: format!(
                        "range {}+{} exceeds payload of {n_values} values",
                        e.offset, e.length
                    ),
                });
            };
            let values = bytes[e.offset * 8..end * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            entries.push(ParamEntry {
                name: e.name,
                shape: e.shape,
                values,
            });
        }
        let s = ParamSnapshot {
            entries,
            notes: m.notes,
        };
        s.validate()?;
        Ok(s)
    }

    /// Writes inline JSON when `inline` is set, manifest + payload otherwise.
    pub fn save(&self, path: impl AsRef<Path>, inline: bool) -> Result<()> {
        let path = path.as_ref();
        if inline {
            std::fs::write(path, self.to_inline_json()?).map_err(|e| Error::io(path, e))
        } else {
            self.save_binary(path)
        }
    }

    /// Path of the payload written next to a binary manifest.
    pub fn payload_path(manifest: impl AsRef<Path>) -> PathBuf {
        manifest.as_ref().with_extension("bin")
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    length: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
}

/// Order-independent mean of one element across snapshots.
///
/// Values are sorted first, then averaged as `min + sum(v - min) / k`.
/// Sorting makes the result independent of input order and the pivot makes
/// the mean of identical values exact.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let pivot = values[0];
    let dev: f64 = values.iter().map(|v| v - pivot).sum();
    pivot + dev / values.len() as f64
}

/// Elementwise mean of the snapshots.
pub fn swa_average(snapshots: &[ParamSnapshot]) -> Result<ParamSnapshot> {
    let Some(first) = snapshots.first() else {
        return Err(Error::IncompatibleSnapshots("no snapshots given".into()));
    };
    for s in snapshots {
        s.validate()?;
    }
    for (k, s) in snapshots.iter().enumerate().skip(1) {
        if s.entries.len() != first.entries.len() {
            return Err(Error::IncompatibleSnapshots(format!(
                "snapshot {k} has {} entries, snapshot 0 has {}",
                s.entries.len(),
                first.entries.len()
            )));
        }
        for (a, b) in first.entries.iter().zip(&s.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::IncompatibleSnapshots(format!(
                    "entry `{}` {:?} in snapshot 0 vs `{}` {:?} in snapshot {k}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
    }
    let mut column = vec![0.0; snapshots.len()];
    let entries = first
        .entries
        .iter()
        .enumerate()
        .map(|(e, entry)| {
            let values = (0..entry.values.len())
                .map(|i| {
                    for (slot, s) in column.iter_mut().zip(snapshots) {
                        *slot = s.entries[e].values[i];
                    }
                    stable_mean(&mut column)
                })
                .collect();
            ParamEntry {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                values,
            }
        })
        .collect();
    Ok(ParamSnapshot {
        entries,
        notes: Some(format!(
            "mean of {} snapshots; batch-norm statistics not recalibrated",
            snapshots.len()
        )),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    pub base_lr: f64,
    pub warmup_lr: f64,
    pub warmup_iters: u64,
    /// Epochs (zero-based) at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<u64>,
    pub decay_factor: f64,
    pub max_epoch: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            base_lr: 0.02,
            warmup_lr: 0.0067,
            warmup_iters: 500,
            decay_epochs: vec![8, 11],
            decay_factor: 0.1,
            max_epoch: 12,
        }
    }
}

/// Learning rate at a global iteration.
///
/// Constant `warmup_lr` for the first `warmup_iters` iterations, then
/// `base_lr` times `decay_factor` once for every decay epoch already reached.
pub fn lr_at(iteration: u64, iters_per_epoch: u64, cfg: &LrConfig) -> Result<f64> {
    if iters_per_epoch == 0 {
        return Err(Error::InvalidConfig(
            "iters_per_epoch must be positive".into(),
        ));
    }
    if cfg.decay_epochs.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig(
            "decay_epochs must be ascending".into(),
        ));
    }
    if iteration < cfg.warmup_iters {
        return Ok(cfg.warmup_lr);
    }
    let epoch = iteration / iters_per_epoch;
    let decays = cfg.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok((0..decays).fold(cfg.base_lr, |lr, _| lr * cfg.decay_factor))
}
