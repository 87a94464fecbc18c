//! Mix-up, duck filling (few-shot copy-paste) and photometric jitter.
//!
//! All operations are pure functions of `(inputs, seed, config)` and are
//! reproducible bit for bit: randomness comes from a seeded ChaCha stream,
//! resampling is bilinear and every blend rounds half up.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{overlap, BBox};
use crate::raster::{round_half_up, Raster, CHANNELS};

pub const DEFAULT_MIXUP_BETA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixSource {
    A,
    B,
}

/// A mixed-image label and the blend weight of the image it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedBox {
    pub bbox: BBox,
    pub source: MixSource,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupOutput {
    pub raster: Raster,
    pub boxes: Vec<WeightedBox>,
    pub lambda: f64,
}

/// Blends `a` and `b` as `round(lambda * a + (1 - lambda) * b)`.
pub fn mixup_with_lambda(
    a: &Raster,
    a_boxes: &[BBox],
    b: &Raster,
    b_boxes: &[BBox],
    lambda: f64,
) -> Result<MixupOutput> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::InvalidInput(format!(
            "mix-up needs equal sizes, got {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let pixels = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&pa, &pb)| round_half_up(lambda * pa as f64 + (1.0 - lambda) * pb as f64))
        .collect();
    let raster = Raster::new(a.width(), a.height(), pixels)?;
    let boxes = a_boxes
        .iter()
        .map(|&bbox| WeightedBox {
            bbox,
            source: MixSource::A,
            weight: lambda,
        })
        .chain(b_boxes.iter().map(|&bbox| WeightedBox {
            bbox,
            source: MixSource::B,
            weight: 1.0 - lambda,
        }))
        .collect();
    Ok(MixupOutput {
        raster,
        boxes,
        lambda,
    })
}

/// Mix-up with `lambda ~ Beta(beta_param, beta_param)`.
pub fn mixup(
    a: &Raster,
    a_boxes: &[BBox],
    b: &Raster,
    b_boxes: &[BBox],
    beta_param: f64,
    seed: u64,
) -> Result<MixupOutput> {
    let beta = Beta::new(beta_param, beta_param)
        .map_err(|e| Error::InvalidInput(format!("beta parameter {beta_param}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = beta.sample(&mut rng);
    mixup_with_lambda(a, a_boxes, b, b_boxes, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub raster: Raster,
    pub class_id: u32,
    pub source_image_id: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchBank {
    pub patches: Vec<Patch>,
}

impl PatchBank {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Integer pixel rectangle covered by a box after clipping to the image:
/// `floor` of the near corner, `ceil` of the far corner.
pub fn pixel_rect(b: &BBox, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = b.x1.floor().clamp(0.0, width as f64) as usize;
    let y0 = b.y1.floor().clamp(0.0, height as f64) as usize;
    let x1 = b.x2.ceil().clamp(0.0, width as f64) as usize;
    let y1 = b.y2.ceil().clamp(0.0, height as f64) as usize;
    (x1 > x0 && y1 > y0).then(|| (x0, y0, x1 - x0, y1 - y0))
}

/// Crops every few-shot annotation out of its image.
///
/// Returns the bank and the number of images that could not be read.
pub fn extract_patches<F>(
    ds: &Dataset,
    few_classes: &BTreeSet<u32>,
    mut load: F,
) -> (PatchBank, usize)
where
    F: FnMut(&ImageRecord) -> Result<Raster>,
{
    let mut bank = PatchBank::default();
    let mut unreadable = 0;
    if few_classes.is_empty() {
        return (bank, 0);
    }
    for (img_id, anns) in ds.annotations_by_image() {
        let few: Vec<_> = anns
            .into_iter()
            .filter(|a| few_classes.contains(&a.class_id))
            .collect();
        if few.is_empty() {
            continue;
        }
        let record = ds
            .image(img_id)
            .expect("annotations reference known images");
        let raster = match load(record) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping image {img_id}: {e}");
                unreadable += 1;
                continue;
            }
        };
        for a in few {
            if let Some((x, y, w, h)) = pixel_rect(&a.bbox, raster.width(), raster.height()) {
                let crop = raster.crop(x, y, w, h).expect("rect clipped to raster");
                bank.patches.push(Patch {
                    raster: crop,
                    class_id: a.class_id,
                    source_image_id: img_id,
                });
            }
        }
    }
    (bank, unreadable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuckFillConfig {
    /// Inclusive range for the number of pastes per image.
    pub pastes_per_image: (usize, usize),
    pub scale_range: (f64, f64),
    pub alpha_range: (f64, f64),
    /// Largest IoU allowed between two pastes in the same image.
    pub max_overlap_iou: f64,
    pub max_attempts: usize,
}

impl Default for DuckFillConfig {
    fn default() -> Self {
        DuckFillConfig {
            pastes_per_image: (1, 3),
            scale_range: (0.8, 1.2),
            alpha_range: (0.6, 1.0),
            max_overlap_iou: 0.2,
            max_attempts: 20,
        }
    }
}

impl DuckFillConfig {
    pub fn validate(&self) -> Result<()> {
        let (pmin, pmax) = self.pastes_per_image;
        let (smin, smax) = self.scale_range;
        let (amin, amax) = self.alpha_range;
        if pmin > pmax {
            return Err(Error::InvalidConfig(
                "pastes_per_image range reversed".into(),
            ));
        }
        if !(smin > 0.0 && smin <= smax && smax.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bad scale range ({smin}, {smax})"
            )));
        }
        if !(amin > 0.0 && amin <= amax && amax <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "bad alpha range ({amin}, {amax})"
            )));
        }
        if !(0.0..=1.0).contains(&self.max_overlap_iou) {
            return Err(Error::InvalidConfig(
                "max_overlap_iou outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One placed patch; `bbox` carries the class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Paste {
    pub bbox: BBox,
    pub class_id: u32,
    pub patch_index: usize,
    pub source_image_id: u64,
    pub scale: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DuckFillDiagnostics {
    pub requested: usize,
    pub placed: usize,
    /// Patches larger than the target after rescaling.
    pub too_large: usize,
    /// Pastes dropped after exhausting placement attempts.
    pub no_room: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuckFillOutput {
    pub raster: Raster,
    pub pastes: Vec<Paste>,
    pub diagnostics: DuckFillDiagnostics,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Blends `patch` onto `dst` at `(x0, y0)` as `alpha * patch + (1 - alpha) * dst`.
pub fn blend_patch(dst: &mut Raster, patch: &Raster, x0: usize, y0: usize, alpha: f64) {
    let w = patch.width();
    for y in 0..patch.height() {
        let src_row = &patch.pixels()[y * w * CHANNELS..(y + 1) * w * CHANNELS];
        let start = dst.index(x0, y0 + y, 0);
        let row = &mut dst.pixels_mut()[start..start + w * CHANNELS];
        for (d, &s) in row.iter_mut().zip(src_row) {
            *d = round_half_up(alpha * s as f64 + (1.0 - alpha) * *d as f64);
        }
    }
}

/// Pastes few-shot patches into `target`.
pub fn duck_fill(
    target: &Raster,
    bank: &PatchBank,
    cfg: &DuckFillConfig,
    seed: u64,
) -> Result<DuckFillOutput> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pmin, pmax) = cfg.pastes_per_image;
    let k = if pmin == pmax {
        pmin
    } else {
        rng.random_range(pmin..=pmax)
    };

    let mut out = target.clone();
    let mut pastes: Vec<Paste> = Vec::with_capacity(k);
    let mut diag = DuckFillDiagnostics {
        requested: k,
        ..Default::default()
    };
    let (tw, th) = (target.width(), target.height());

    for _ in 0..k {
        let idx = rng.random_range(0..bank.len());
        let patch = &bank.patches[idx];
        let scale = uniform(&mut rng, cfg.scale_range);
        let alpha = uniform(&mut rng, cfg.alpha_range);
        let pw = ((patch.raster.width() as f64 * scale).round() as usize).max(1);
        let ph = ((patch.raster.height() as f64 * scale).round() as usize).max(1);
        if pw > tw || ph > th {
            log::debug!("patch {idx} ({pw}x{ph}) does not fit {tw}x{th}");
            diag.too_large += 1;
            continue;
        }
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            let x = rng.random_range(0..=tw - pw);
            let y = rng.random_range(0..=th - ph);
            let cand = BBox::new(x as f64, y as f64, (x + pw) as f64, (y + ph) as f64)?
                .with_class(patch.class_id);
            if pastes
                .iter()
                .all(|p| overlap(&p.bbox, &cand) <= cfg.max_overlap_iou)
            {
                placed = Some((x, y, cand));
                break;
            }
        }
        let Some((x, y, bbox)) = placed else {
            diag.no_room += 1;
            continue;
        };
        let resized = patch.raster.resize_bilinear(pw, ph)?;
        blend_patch(&mut out, &resized, x, y, alpha);
        pastes.push(Paste {
            bbox,
            class_id: patch.class_id,
            patch_index: idx,
            source_image_id: patch.source_image_id,
            scale,
            alpha,
        });
    }
    diag.placed = pastes.len();
    Ok(DuckFillOutput {
        raster: out,
        pastes,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotometricConfig {
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub shuffle_channels: bool,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        PhotometricConfig {
            brightness_range: (-32.0, 32.0),
            contrast_range: (0.8, 1.2),
            shuffle_channels: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhotometricParams {
    /// Output channel `c` takes input channel `permutation[c]`.
    pub permutation: [usize; 3],
    pub contrast: f64,
    pub brightness: f64,
}

impl PhotometricParams {
    pub const IDENTITY: PhotometricParams = PhotometricParams {
        permutation: [0, 1, 2],
        contrast: 1.0,
        brightness: 0.0,
    };

    pub fn draw(cfg: &PhotometricConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut permutation = [0, 1, 2];
        if cfg.shuffle_channels {
            use rand::seq::SliceRandom;
            permutation.shuffle(&mut rng);
        }
        let contrast = uniform(&mut rng, cfg.contrast_range);
        let brightness = uniform(&mut rng, cfg.brightness_range);
        PhotometricParams {
            permutation,
            contrast,
            brightness,
        }
    }
}

/// `out[c] = clamp(contrast * in[perm[c]] + brightness)`.
pub fn apply_photometric(img: &Raster, p: &PhotometricParams) -> Raster {
    let identity_affine = p.contrast == 1.0 && p.brightness == 0.0;
    let mut out = img.clone();
    for (dst, src) in out
        .pixels_mut()
        .chunks_exact_mut(CHANNELS)
        .zip(img.pixels().chunks_exact(CHANNELS))
    {
        for c in 0..CHANNELS {
            let v = src[p.permutation[c]];
            dst[c] = if identity_affine {
                v
            } else {
                round_half_up(p.contrast * v as f64 + p.brightness)
            };
        }
    }
    out
}

/// Channel shuffle plus random brightness/contrast; boxes are unaffected.
pub fn photometric(img: &Raster, seed: u64, cfg: &PhotometricConfig) -> Raster {
    apply_photometric(img, &PhotometricParams::draw(cfg, seed))
}
