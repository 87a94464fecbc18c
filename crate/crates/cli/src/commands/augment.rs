use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use longtail_core::augment::{
    duck_fill, extract_patches, mixup, photometric, MixSource, PatchBank,
};
use longtail_core::dataset::{
    class_counts, load_dataset, split_shot, Annotation, Dataset, ImageRecord, Provenance,
};
use longtail_core::raster::Raster;
use longtail_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Stream};
use crate::config::{AugmentConfig, FillTargets};
use crate::{write_file, CliError, CliResult, Outcome};

/// Generated images go under this directory of the output root.
pub const GENERATED_DIR: &str = "augmented";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const REPORT_FILE: &str = "augment_report.json";

#[derive(Debug, Clone)]
pub struct AugmentArgs {
    pub dataset: PathBuf,
    /// Directory that `file_name` of the input images is relative to.
    pub images: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub seed: u64,
    pub few_shot_classes: BTreeSet<u32>,
    pub patches: usize,
    pub fill_targets: usize,
    pub duck_filled_images: usize,
    pub pastes_requested: usize,
    pub pastes_placed: usize,
    pub pastes_too_large: usize,
    pub pastes_no_room: usize,
    pub mixup_sources: usize,
    pub mixed_images: usize,
    pub input_images: usize,
    pub output_images: usize,
    pub input_annotations: usize,
    pub output_annotations: usize,
    /// Per-file failures, `path: message`.
    pub failures: Vec<String>,
}

struct Builder<'a> {
    args: &'a AugmentArgs,
    out: Dataset,
    next_image: u64,
    next_ann: u64,
    report: AugmentReport,
}

impl Builder<'_> {
    fn load(&mut self, rec: &ImageRecord) -> Option<Raster> {
        match load_image(&self.args.images, rec) {
            Ok(r) => Some(r),
            Err(e) => {
                self.fail(&self.args.images.join(&rec.file_name), &e);
                None
            }
        }
    }

    fn fail(&mut self, path: &Path, err: &dyn std::fmt::Display) {
        log::warn!("{}: {err}", path.display());
        self.report
            .failures
            .push(format!("{}: {err}", path.display()));
    }

    /// Writes a generated image and its labels; nothing is recorded if the
    /// write fails.
    fn emit(&mut self, name: String, raster: &Raster, boxes: Vec<(u32, BBox, Provenance)>) -> bool {
        let file_name = format!("{GENERATED_DIR}/{name}");
        let path = self.args.out.join(&file_name);
        if let Err(e) = raster.save(&path) {
            self.fail(&path, &e);
            return false;
        }
        let id = self.next_image;
        self.next_image += 1;
        self.out.images.push(ImageRecord {
            id,
            width: raster.width() as u32,
            height: raster.height() as u32,
            file_name,
        });
        for (class_id, bbox, provenance) in boxes {
            self.out.annotations.push(Annotation {
                id: self.next_ann,
                image_id: id,
                class_id,
                bbox: bbox.with_class(class_id),
                provenance,
            });
            self.next_ann += 1;
        }
        true
    }
}

fn load_image(dir: &Path, rec: &ImageRecord) -> longtail_core::Result<Raster> {
    let r = Raster::load(dir.join(&rec.file_name))?;
    if (r.width(), r.height()) != (rec.width as usize, rec.height as usize) {
        return Err(longtail_core::Error::InvalidInput(format!(
            "image is {}x{}, annotation file says {}x{}",
            r.width(),
            r.height(),
            rec.width,
            rec.height
        )));
    }
    Ok(r)
}

fn maybe_jitter(img: Raster, cfg: &AugmentConfig, seed: u64, id: u64) -> Raster {
    match &cfg.photometric {
        Some(p) => photometric(&img, derive_seed(seed, Stream::Photometric, id), p),
        None => img,
    }
}

/// Duck-fills the configured target images with few-shot patches and mixes
/// every few-shot image with a random partner. Generated images and the
/// merged annotation file are written under `args.out`; originals keep
/// their `file_name` relative to `args.images`.
pub fn augment(args: &AugmentArgs, cfg: &AugmentConfig, seed: u64) -> CliResult<Outcome> {
    cfg.duck_fill.validate()?;
    if !(cfg.mixup_beta.is_finite() && cfg.mixup_beta > 0.0) {
        return Err(CliError::Config(format!(
            "mixup_beta {} must be positive",
            cfg.mixup_beta
        )));
    }
    let (ds, _) = load_dataset(&args.dataset)?;
    let few = split_shot(&class_counts(&ds), cfg.shot_threshold).few;
    let by_image = ds.annotations_by_image();

    let mut b = Builder {
        args,
        out: ds.clone(),
        next_image: ds.next_image_id(),
        next_ann: ds.next_annotation_id(),
        report: AugmentReport {
            seed,
            few_shot_classes: few.clone(),
            input_images: ds.images.len(),
            input_annotations: ds.annotations.len(),
            ..Default::default()
        },
    };

    let has_few = |id: &u64| by_image[id].iter().any(|a| few.contains(&a.class_id));
    let targets: Vec<u64> = by_image
        .iter()
        .filter(|(id, anns)| match cfg.fill_targets {
            FillTargets::Unannotated => anns.is_empty(),
            FillTargets::NoFewShot => !has_few(id),
            FillTargets::All => true,
        })
        .map(|(&id, _)| id)
        .collect();
    b.report.fill_targets = targets.len();

    let wants_pastes = cfg.duck_fill.pastes_per_image.1 > 0 && !targets.is_empty();
    let bank = if wants_pastes {
        let mut failed = Vec::new();
        let (bank, _) = extract_patches(&ds, &few, |rec| {
            load_image(&args.images, rec)
                .inspect_err(|e| failed.push((args.images.join(&rec.file_name), e.to_string())))
        });
        for (path, msg) in failed {
            b.fail(&path, &msg);
        }
        bank
    } else {
        PatchBank::default()
    };
    b.report.patches = bank.len();
    if wants_pastes && bank.is_empty() {
        log::warn!("no few-shot patches available; skipping duck filling");
    }

    if !bank.is_empty() {
        for &id in &targets {
            let rec = ds.image(id).expect("target comes from the dataset");
            let Some(img) = b.load(rec) else { continue };
            let filled = duck_fill(
                &img,
                &bank,
                &cfg.duck_fill,
                derive_seed(seed, Stream::DuckFill, id),
            )?;
            let d = filled.diagnostics;
            b.report.pastes_requested += d.requested;
            b.report.pastes_placed += d.placed;
            b.report.pastes_too_large += d.too_large;
            b.report.pastes_no_room += d.no_room;
            if filled.pastes.is_empty() {
                continue;
            }
            let raster = maybe_jitter(filled.raster, cfg, seed, id);
            let boxes = filled
                .pastes
                .iter()
                .map(|p| {
                    let prov = Provenance {
                        source_image_id: Some(p.source_image_id),
                        paste_alpha: Some(p.alpha),
                        mix_lambda: None,
                    };
                    (p.class_id, p.bbox, prov)
                })
                .collect();
            if b.emit(format!("duck_{id}.png"), &raster, boxes) {
                b.report.duck_filled_images += 1;
            }
        }
    }

    if cfg.mixup {
        mix_all(&mut b, &ds, &by_image, &few, cfg, seed)?;
    }

    b.report.output_images = b.out.images.len();
    b.report.output_annotations = b.out.annotations.len();
    let ann_path = args.out.join(ANNOTATIONS_FILE);
    write_file(&ann_path, b.out.to_json()?)?;
    let report_path = args.out.join(REPORT_FILE);
    write_file(
        &report_path,
        serde_json::to_string_pretty(&b.report).expect("report serializes"),
    )?;

    let r = &b.report;
    let summary = format!(
        "{} patches from {} few-shot classes; {} duck-filled images ({} of {} pastes placed); {} mixed images\n\
         {} images, {} annotations written to {}",
        r.patches,
        r.few_shot_classes.len(),
        r.duck_filled_images,
        r.pastes_placed,
        r.pastes_requested,
        r.mixed_images,
        r.output_images,
        r.output_annotations,
        ann_path.display()
    );
    let deferred = r.failures.first().map(|first| CliError::Partial {
        failed: r.failures.len(),
        total: r.input_images,
        first: first.clone(),
    });
    Ok(Outcome::new(&b.report, summary).with_deferred(deferred))
}

fn mix_all(
    b: &mut Builder<'_>,
    ds: &Dataset,
    by_image: &BTreeMap<u64, Vec<&Annotation>>,
    few: &BTreeSet<u32>,
    cfg: &AugmentConfig,
    seed: u64,
) -> CliResult<()> {
    let sources: Vec<u64> = by_image
        .iter()
        .filter(|(_, anns)| anns.iter().any(|a| few.contains(&a.class_id)))
        .map(|(&id, _)| id)
        .collect();
    let annotated: Vec<u64> = by_image
        .iter()
        .filter(|(_, anns)| !anns.is_empty())
        .map(|(&id, _)| id)
        .collect();
    b.report.mixup_sources = sources.len();

    let boxes_of = |id: u64| -> Vec<BBox> {
        by_image[&id]
            .iter()
            .map(|a| a.bbox.with_class(a.class_id))
            .collect()
    };
    for &a_id in &sources {
        let partners: Vec<u64> = annotated.iter().copied().filter(|&p| p != a_id).collect();
        if partners.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::MixPartner, a_id));
        let b_id = partners[rng.random_range(0..partners.len())];
        let Some(a_img) = b.load(ds.image(a_id).expect("known image")) else {
            continue;
        };
        let Some(b_img) = b.load(ds.image(b_id).expect("known image")) else {
            continue;
        };

        let (w, h) = (a_img.width(), a_img.height());
        let sx = w as f64 / b_img.width() as f64;
        let sy = h as f64 / b_img.height() as f64;
        let b_img = b_img.resize_bilinear(w, h)?;
        let b_boxes: Vec<BBox> = boxes_of(b_id)
            .iter()
            .map(|bb| {
                bb.with_corners(bb.x1 * sx, bb.y1 * sy, bb.x2 * sx, bb.y2 * sy)
                    .clamp_to(w as f64, h as f64)
            })
            .filter(|bb| bb.area() > 0.0)
            .collect();
        let mixed = mixup(
            &a_img,
            &boxes_of(a_id),
            &b_img,
            &b_boxes,
            cfg.mixup_beta,
            derive_seed(seed, Stream::MixLambda, a_id),
        )?;
        let raster = maybe_jitter(mixed.raster, cfg, seed, a_id);
        let boxes = mixed
            .boxes
            .iter()
            .map(|wb| {
                let src = match wb.source {
                    MixSource::A => a_id,
                    MixSource::B => b_id,
                };
                let prov = Provenance {
                    source_image_id: Some(src),
                    paste_alpha: None,
                    mix_lambda: Some(wb.weight),
                };
                (
                    wb.bbox.class_id.expect("labels carry classes"),
                    wb.bbox,
                    prov,
                )
            })
            .collect();
        if b.emit(format!("mix_{a_id}_{b_id}.png"), &raster, boxes) {
            b.report.mixed_images += 1;
        }
    }
    Ok(())
}
