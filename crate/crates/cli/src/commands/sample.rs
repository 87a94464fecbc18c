use std::collections::BTreeMap;
use std::path::Path;

use longtail_core::anchor_sampler::{
    classify_candidates, generate_anchors, sample_batch, BatchDiagnostics, CandidateLabel,
    CandidateStatus, SampledBatch,
};
use longtail_core::class_balance::SampleWeights;
use longtail_core::dataset::load_dataset;
use longtail_core::geometry::{center_distance, diag_norm, iou};
use longtail_core::{BBox, Error};
use serde::{Deserialize, Serialize};

use super::{derive_seed, Stream};
use crate::config::SampleConfig;
use crate::{read_file, write_file, CliError, CliResult, Outcome};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub seed: u64,
    pub pool: usize,
    pub draws: usize,
    pub weights: BTreeMap<u64, f64>,
    pub probabilities: BTreeMap<u64, f64>,
    pub rarest_class: BTreeMap<u64, u32>,
    pub draw_counts: BTreeMap<u64, usize>,
    /// Drawn image ids in order.
    pub sequence: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Image weights and one seeded epoch of draws.
pub fn sample_balance(
    dataset: &Path,
    cfg: &SampleConfig,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<Outcome> {
    let (ds, _) = load_dataset(dataset)?;
    let mut report = BalanceReport {
        seed,
        draws: cfg.draws,
        ..Default::default()
    };
    match SampleWeights::compute(&ds) {
        Ok(w) => {
            report.pool = w.weights.len();
            report.probabilities = w.normalized();
            report.sequence = w.sample(seed, cfg.draws);
            report.weights = w.weights;
            report.rarest_class = w.rarest_class;
            report.draw_counts = report.weights.keys().map(|&k| (k, 0)).collect();
            for id in &report.sequence {
                *report
                    .draw_counts
                    .get_mut(id)
                    .expect("drawn ids are in the pool") += 1;
            }
        }
        Err(Error::EmptyPool) => {
            log::warn!("no annotated images; nothing to sample");
            report.draws = 0;
            report.warning = Some("empty pool: no annotated images".into());
        }
        Err(e) => return Err(e.into()),
    }
    if let Some(path) = out {
        write_file(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }
    let mut text = format!(
        "{} images in pool, {} draws (seed {seed})\n",
        report.pool, report.draws
    );
    for (id, w) in &report.weights {
        text += &format!(
            "  image {id:>8} weight {w:.6} p {:.6} drawn {}\n",
            report.probabilities[id], report.draw_counts[id]
        );
    }
    if let Some(w) = &report.warning {
        text += &format!("warning: {w}\n");
    }
    Ok(Outcome::new(&report, text.trim_end().to_string()))
}

/// Synthetic anchors-mode input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    /// `(width, height)`.
    pub image_size: (u32, u32),
    /// `[x1, y1, x2, y2]` per target.
    pub targets: Vec<[f64; 4]>,
}

impl TargetFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        serde_json::from_str(&read_file(path)?).map_err(|e| {
            CliError::Core(Error::Format {
                context: path.display().to_string(),
                message: e.to_string(),
            })
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnchorReport {
    pub seed: u64,
    pub anchors: usize,
    pub targets: usize,
    pub positive_pool: usize,
    pub hard_pool: usize,
    pub easy_pool: usize,
    pub excluded: usize,
    pub batches: Vec<SampledBatch>,
    pub total_hard: usize,
    pub total_easy: usize,
    /// Hard negatives over all sampled negatives across batches.
    pub realized_hard_share: f64,
    /// Sampled negatives failing the IoU or center-distance constraint.
    pub violations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Recomputes both negative-region constraints from scratch.
fn violates(anchor: &BBox, targets: &[BBox], neg_upper: f64) -> bool {
    let mut nearest: Option<(f64, &BBox)> = None;
    for t in targets {
        if iou(anchor, t).map_or(true, |v| v >= neg_upper) {
            return true;
        }
        let d = center_distance(anchor, t);
        if nearest.is_none_or(|(best, _)| d < best) {
            nearest = Some((d, t));
        }
    }
    match nearest {
        Some((d, t)) => d >= diag_norm(t),
        None => true,
    }
}

/// Classifies an anchor grid against the targets and draws seeded batches.
pub fn sample_anchors(
    targets_path: &Path,
    cfg: &SampleConfig,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<Outcome> {
    let file = TargetFile::load(targets_path)?;
    let targets = file
        .targets
        .iter()
        .map(|&[x1, y1, x2, y2]| BBox::new(x1, y1, x2, y2))
        .collect::<longtail_core::Result<Vec<_>>>()?;
    let mut grid = cfg.anchors.clone();
    grid.image_size = file.image_size;
    let anchors: Vec<BBox> = generate_anchors(&grid)?
        .into_iter()
        .map(|a| a.bbox)
        .collect();
    let labels: Vec<CandidateLabel> = classify_candidates(&anchors, &targets, &cfg.sampler)?;

    let mut report = AnchorReport {
        seed,
        anchors: anchors.len(),
        targets: targets.len(),
        ..Default::default()
    };
    for l in &labels {
        match l.status {
            CandidateStatus::Positive => report.positive_pool += 1,
            CandidateStatus::NegativeHard => report.hard_pool += 1,
            CandidateStatus::NegativeEasy => report.easy_pool += 1,
            CandidateStatus::Excluded => report.excluded += 1,
        }
    }
    if report.positive_pool == 0 {
        report.warnings.push("no positive anchors".into());
    }
    if report.hard_pool + report.easy_pool == 0 {
        report.warnings.push("no negative anchors".into());
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }

    for i in 0..cfg.batches {
        let batch = sample_batch(
            &labels,
            &cfg.sampler,
            derive_seed(seed, Stream::Batch, i as u64),
        )?;
        report.violations += batch
            .negatives
            .iter()
            .filter(|&&n| violates(&anchors[n], &targets, cfg.sampler.neg_iou_upper))
            .count();
        let BatchDiagnostics { hard, easy, .. } = batch.diagnostics;
        report.total_hard += hard;
        report.total_easy += easy;
        report.batches.push(batch);
    }
    let negatives = report.total_hard + report.total_easy;
    if negatives > 0 {
        report.realized_hard_share = report.total_hard as f64 / negatives as f64;
    }
    if let Some(path) = out {
        write_file(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }

    let text = format!(
        "{} anchors, {} targets: pools {} positive, {} hard, {} easy, {} excluded\n\
         {} batches: {} hard + {} easy negatives, hard share {:.4}, {} violations",
        report.anchors,
        report.targets,
        report.positive_pool,
        report.hard_pool,
        report.easy_pool,
        report.excluded,
        cfg.batches,
        report.total_hard,
        report.total_easy,
        report.realized_hard_share,
        report.violations
    );
    let deferred = (report.violations > 0).then(|| {
        CliError::Check(format!(
            "{} sampled negatives violate the negative region",
            report.violations
        ))
    });
    Ok(Outcome::new(&report, text).with_deferred(deferred))
}
