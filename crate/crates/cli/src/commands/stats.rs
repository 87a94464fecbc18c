use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use longtail_core::dataset::{
    class_counts, load_dataset, split_shot, stage_plan, IngestReport, StagedPlan,
};
use serde::{Deserialize, Serialize};

use crate::config::StatsConfig;
use crate::{CliResult, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub images: usize,
    pub annotations: usize,
    pub categories: usize,
    pub unannotated_images: usize,
    pub ingest: IngestCounts,
    pub class_counts: BTreeMap<u32, usize>,
    pub class_names: BTreeMap<u32, String>,
    pub shot_threshold: usize,
    pub many_shot: BTreeSet<u32>,
    pub few_shot: BTreeSet<u32>,
    pub plan: StagedPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounts {
    pub clamped: usize,
    pub dropped: usize,
}

impl From<IngestReport> for IngestCounts {
    fn from(r: IngestReport) -> Self {
        IngestCounts {
            clamped: r.clamped,
            dropped: r.dropped,
        }
    }
}

pub fn stats(dataset: &Path, cfg: &StatsConfig) -> CliResult<Outcome> {
    let (ds, ingest) = load_dataset(dataset)?;
    let counts = class_counts(&ds);
    let split = split_shot(&counts, cfg.shot_threshold);
    let unannotated = ds
        .annotations_by_image()
        .values()
        .filter(|a| a.is_empty())
        .count();
    let report = StatsReport {
        images: ds.images.len(),
        annotations: ds.annotations.len(),
        categories: ds.categories.len(),
        unannotated_images: unannotated,
        ingest: ingest.into(),
        class_names: ds
            .categories
            .iter()
            .map(|c| (c.id, c.name.clone()))
            .collect(),
        class_counts: counts,
        shot_threshold: cfg.shot_threshold,
        many_shot: split.many,
        few_shot: split.few,
        plan: stage_plan(&ds, cfg.shot_threshold),
    };

    let mut text = format!(
        "{} images ({} unannotated), {} boxes, {} categories\n",
        report.images, report.unannotated_images, report.annotations, report.categories
    );
    if ingest.clamped + ingest.dropped > 0 {
        text += &format!(
            "ingest: {} boxes clamped, {} dropped\n",
            ingest.clamped, ingest.dropped
        );
    }
    text += &format!(
        "threshold {}: {} many-shot, {} few-shot classes\n",
        cfg.shot_threshold,
        report.many_shot.len(),
        report.few_shot.len()
    );
    for (id, n) in &report.class_counts {
        let tag = if report.few_shot.contains(id) {
            "few"
        } else {
            "many"
        };
        text += &format!("  {id:>5} {:<24} {n:>8} {tag}\n", report.class_names[id]);
    }
    text += &format!(
        "stages: t1 {} images, t2 {} images, t3 {} images",
        report.plan.stage_t1.len(),
        report.plan.stage_t2.len(),
        report.plan.stage_t3.len()
    );
    Ok(Outcome::new(&report, text))
}
