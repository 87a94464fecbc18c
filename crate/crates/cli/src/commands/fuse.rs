use std::path::{Path, PathBuf};

use longtail_core::tta::{fuse as fuse_sets, DetectionSet, FusionMode};
use serde::{Deserialize, Serialize};

use crate::config::FuseConfig;
use crate::{write_file, CliError, CliResult, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub inputs: Vec<PathBuf>,
    pub mode: FusionMode,
    pub iou_thresh: f64,
    pub frame: (f64, f64),
    pub input_boxes: usize,
    pub output_boxes: usize,
    pub output: PathBuf,
}

/// Fuses detection files that share a frame into one file.
pub fn fuse(inputs: &[PathBuf], out: &Path, cfg: &FuseConfig) -> CliResult<Outcome> {
    if inputs.is_empty() {
        return Err(CliError::Config(
            "fuse needs at least one detection file".into(),
        ));
    }
    let sets = inputs
        .iter()
        .map(DetectionSet::load)
        .collect::<longtail_core::Result<Vec<_>>>()?;
    let fused = fuse_sets(&sets, cfg.iou_thresh, cfg.mode)?;
    write_file(out, fused.to_json())?;
    let report = FuseReport {
        inputs: inputs.to_vec(),
        mode: cfg.mode,
        iou_thresh: cfg.iou_thresh,
        frame: fused.frame,
        input_boxes: sets.iter().map(|s| s.boxes.len()).sum(),
        output_boxes: fused.boxes.len(),
        output: out.to_path_buf(),
    };
    let summary = format!(
        "fused {} sets ({} boxes) into {} boxes -> {}",
        inputs.len(),
        report.input_boxes,
        report.output_boxes,
        out.display()
    );
    Ok(Outcome::new(&report, summary))
}
