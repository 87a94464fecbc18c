//! COCO-style annotation ingestion, class statistics and the many-shot /
//! few-shot staged training plan.
//!
//! File schema (any key order, unknown keys ignored):
//!
//! ```json
//! {
//!   "images":      [{"id": 1, "width": 640, "height": 480, "file_name": "a.jpg"}],
//!   "annotations": [{"id": 1, "image_id": 1, "category_id": 3, "bbox": [x, y, w, h]}],
//!   "categories":  [{"id": 3, "name": "pan"}]
//! }
//! ```
//!
//! Augmented datasets add optional provenance keys to annotations:
//! `source_image_id`, `paste_alpha` and `mix_lambda`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Few-shot threshold: classes with strictly fewer boxes are few-shot.
pub const DEFAULT_SHOT_THRESHOLD: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub provenance: Provenance,
}

/// Where an augmented annotation came from. All fields empty for original
/// annotations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paste_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

/// Non-fatal adjustments made while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    /// Boxes clipped to their image bounds.
    pub clamped: usize,
    /// Boxes with zero area (before or after clipping) that were discarded.
    pub dropped: usize,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(flatten)]
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    images: Vec<ImageRecord>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<Category>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Dataset, IngestReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_named(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str) -> Result<(Dataset, IngestReport)> {
    parse_dataset_named(text, "<dataset>")
}

fn parse_dataset_named(text: &str, name: &str) -> Result<(Dataset, IngestReport)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawDataset = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Error::Format {
            context: format!(
                "{name}: field `{}` (line {}, column {})",
                e.path(),
                inner.line(),
                inner.column()
            ),
            message: inner.to_string(),
        }
    })?;
    Dataset::from_raw(raw)
}

impl Dataset {
    fn from_raw(raw: RawDataset) -> Result<(Dataset, IngestReport)> {
        let mut problems = Vec::new();

        let mut dims: HashMap<u64, (f64, f64)> = HashMap::new();
        for img in &raw.images {
            if dims
                .insert(img.id, (img.width as f64, img.height as f64))
                .is_some()
            {
                problems.push(format!("duplicate image id {}", img.id));
            }
            if img.width == 0 || img.height == 0 {
                problems.push(format!("image {} has zero size", img.id));
            }
        }
        let mut cats = HashSet::new();
        for c in &raw.categories {
            if !cats.insert(c.id) {
                problems.push(format!("duplicate category id {}", c.id));
            }
        }

        let mut report = IngestReport::default();
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for a in raw.annotations {
            let Some(&(w, h)) = dims.get(&a.image_id) else {
                problems.push(format!(
                    "annotation {} references unknown image {}",
                    a.id, a.image_id
                ));
                continue;
            };
            if !cats.contains(&a.category_id) {
                problems.push(format!(
                    "annotation {} references unknown category {}",
                    a.id, a.category_id
                ));
                continue;
            }
            let [x, y, bw, bh] = a.bbox;
            if [x, y, bw, bh].iter().any(|v| !v.is_finite()) {
                problems.push(format!("annotation {} has non-finite bbox", a.id));
                continue;
            }
            let raw_box = BBox {
                x1: x,
                y1: y,
                x2: x + bw,
                y2: y + bh,
                score: None,
                class_id: Some(a.category_id),
            };
            let clipped = raw_box.clamp_to(w, h);
            if clipped.width() <= 0.0 || clipped.height() <= 0.0 {
                log::warn!("annotation {}: zero-area box dropped", a.id);
                report.dropped += 1;
                continue;
            }
            if clipped != raw_box {
                log::warn!("annotation {}: box clamped to image {}", a.id, a.image_id);
                report.clamped += 1;
            }
            annotations.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                class_id: a.category_id,
                bbox: clipped,
                provenance: a.provenance,
            });
        }

        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok((
            Dataset {
                images: raw.images,
                annotations,
                categories: raw.categories,
            },
            report,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = RawDataset {
            images: self.images.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| RawAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.class_id,
                    bbox: [a.bbox.x1, a.bbox.y1, a.bbox.width(), a.bbox.height()],
                    provenance: a.provenance,
                })
                .collect(),
            categories: self.categories.clone(),
        };
        serde_json::to_string_pretty(&raw).map_err(|e| Error::Format {
            context: "dataset serialization".into(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Annotations grouped by image id. Every image is present, possibly with
    /// an empty list; annotation order within an image follows the file.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> =
            self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a);
        }
        map
    }

    pub fn next_image_id(&self) -> u64 {
        self.images.iter().map(|i| i.id).max().map_or(1, |m| m + 1)
    }

    pub fn next_annotation_id(&self) -> u64 {
        self.annotations
            .iter()
            .map(|a| a.id)
            .max()
            .map_or(1, |m| m + 1)
    }
}

/// Boxes per class. Every category is present, with zero when unused.
pub fn class_counts(ds: &Dataset) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, usize> = ds.categories.iter().map(|c| (c.id, 0)).collect();
    for a in &ds.annotations {
        *counts.entry(a.class_id).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShotSplit {
    pub many: BTreeSet<u32>,
    pub few: BTreeSet<u32>,
}

/// Few-shot classes have strictly fewer than `threshold` boxes.
pub fn split_shot(counts: &BTreeMap<u32, usize>, threshold: usize) -> ShotSplit {
    let mut split = ShotSplit::default();
    for (&c, &n) in counts {
        if n < threshold {
            split.few.insert(c);
        } else {
            split.many.insert(c);
        }
    }
    split
}

/// Three-stage schedule: train on many-shot images, fine-tune on few-shot
/// images, then fine-tune on everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedPlan {
    pub threshold: usize,
    pub many_classes: BTreeSet<u32>,
    pub few_classes: BTreeSet<u32>,
    /// Images with at least one many-shot box.
    pub stage_t1: Vec<u64>,
    /// Images with at least one few-shot box.
    pub stage_t2: Vec<u64>,
    /// `stage_t1 ∪ stage_t2`.
    pub stage_t3: Vec<u64>,
    /// Few-shot annotation ids, for trainers that fine-tune on few-shot
    /// labels only instead of whole images.
    pub stage_t2_annotations: Vec<u64>,
    pub notes: String,
}

pub fn stage_plan(ds: &Dataset, threshold: usize) -> StagedPlan {
    let split = split_shot(&class_counts(ds), threshold);
    let mut t1 = BTreeSet::new();
    let mut t2 = BTreeSet::new();
    let mut t2_ann = Vec::new();
    for a in &ds.annotations {
        if split.few.contains(&a.class_id) {
            t2.insert(a.image_id);
            t2_ann.push(a.id);
        } else {
            t1.insert(a.image_id);
        }
    }
    let t3: BTreeSet<u64> = t1.union(&t2).copied().collect();
    t2_ann.sort_unstable();
    let notes = format!(
        "T1: train on {} many-shot images -> M1. \
         T2: fine-tune M1 on {} few-shot images -> M2. \
         T3: fine-tune M2 on all {} images -> final. \
         Every stage keeps all annotations of its images; stage_t2_annotations \
         lists the few-shot boxes for label-level fine-tuning.",
        t1.len(),
        t2.len(),
        t3.len()
    );
    StagedPlan {
        threshold,
        many_classes: split.many,
        few_classes: split.few,
        stage_t1: t1.into_iter().collect(),
        stage_t2: t2.into_iter().collect(),
        stage_t3: t3.into_iter().collect(),
        stage_t2_annotations: t2_ann,
        notes,
    }
}
