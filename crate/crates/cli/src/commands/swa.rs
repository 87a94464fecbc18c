use std::path::{Path, PathBuf};

use longtail_core::train_utils::{swa_average, ParamSnapshot};
use serde::{Deserialize, Serialize};

use crate::config::SwaConfig;
use crate::{CliError, CliResult, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwaReport {
    pub inputs: Vec<PathBuf>,
    pub entries: usize,
    pub parameters: usize,
    pub output: PathBuf,
    /// Written as manifest plus this payload file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<PathBuf>,
    pub notes: Option<String>,
}

/// Averages snapshots and writes the result, then reads it back and checks
/// the round trip is exact.
pub fn swa(inputs: &[PathBuf], out: &Path, cfg: &SwaConfig) -> CliResult<Outcome> {
    if inputs.is_empty() {
        return Err(CliError::Config("swa needs at least one snapshot".into()));
    }
    let snaps = inputs
        .iter()
        .map(ParamSnapshot::load)
        .collect::<longtail_core::Result<Vec<_>>>()?;
    let mean = swa_average(&snaps)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    mean.save(out, cfg.inline)?;
    let back = ParamSnapshot::load(out)?;
    let exact = back.entries.len() == mean.entries.len()
        && back.entries.iter().zip(&mean.entries).all(|(a, b)| {
            a.name == b.name
                && a.shape == b.shape
                && a.values
                    .iter()
                    .map(|v| v.to_bits())
                    .eq(b.values.iter().map(|v| v.to_bits()))
        });

    let report = SwaReport {
        inputs: inputs.to_vec(),
        entries: mean.entries.len(),
        parameters: mean.entries.iter().map(|e| e.values.len()).sum(),
        output: out.to_path_buf(),
        payload: (!cfg.inline).then(|| ParamSnapshot::payload_path(out)),
        notes: mean.notes.clone(),
    };
    let summary = format!(
        "averaged {} snapshots: {} entries, {} values -> {}",
        inputs.len(),
        report.entries,
        report.parameters,
        out.display()
    );
    let deferred = (!exact)
        .then(|| CliError::Check(format!("{} does not read back bit-exactly", out.display())));
    Ok(Outcome::new(&report, summary).with_deferred(deferred))
}
