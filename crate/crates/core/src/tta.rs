//! Test-time augmentation: coordinate bookkeeping for multi-scale, flip and
//! blur transforms, Gaussian blur itself, and fusion of detections mapped
//! back to the original frame.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nms_indices, overlap, BBox};
use crate::raster::{round_half_up, Raster, CHANNELS};

/// Training input sizes the default scale set is derived from.
pub const REFERENCE_SIZES: [(f64, f64); 2] = [(1280.0, 720.0), (1394.0, 764.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtaTransform {
    pub scale: f64,
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub blur_sigma: f64,
}

impl TtaTransform {
    pub const IDENTITY: TtaTransform = TtaTransform {
        scale: 1.0,
        hflip: false,
        blur_sigma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "TTA scale {} must be positive",
                self.scale
            )));
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "blur sigma {} must be >= 0",
                self.blur_sigma
            )));
        }
        Ok(())
    }

    /// Identity, the two reference sizes (aspect preserved) and a horizontal
    /// flip of each, plus a blurred identity.
    pub fn default_set(frame: (f64, f64)) -> Vec<TtaTransform> {
        let mut scales = vec![1.0];
        for (w, h) in REFERENCE_SIZES {
            scales.push((w / frame.0).min(h / frame.1));
        }
        let mut out = Vec::new();
        for scale in scales {
            for hflip in [false, true] {
                out.push(TtaTransform {
                    scale,
                    hflip,
                    blur_sigma: 0.0,
                });
            }
        }
        out.push(TtaTransform {
            blur_sigma: 1.0,
            ..TtaTransform::IDENTITY
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct RawDetectionSet {
    frame: [f64; 2],
    boxes: Vec<Detection>,
}

/// Scored detections in a `(width, height)` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub frame: (f64, f64),
    pub boxes: Vec<BBox>,
}

impl DetectionSet {
    /// Validates boxes and clips them to the frame. Boxes that vanish after
    /// clipping are dropped.
    pub fn new(frame: (f64, f64), boxes: Vec<BBox>) -> Result<Self> {
        if !(frame.0 > 0.0 && frame.1 > 0.0 && frame.0.is_finite() && frame.1.is_finite()) {
            return Err(Error::InvalidInput(format!("bad frame {:?}", frame)));
        }
        let mut kept = Vec::with_capacity(boxes.len());
        for (i, b) in boxes.into_iter().enumerate() {
            b.validate()?;
            if b.score.is_none() {
                return Err(Error::InvalidInput(format!("detection {i} has no score")));
            }
            let c = b.clamp_to(frame.0, frame.1);
            if c.width() > 0.0 && c.height() > 0.0 {
                kept.push(c);
            }
        }
        Ok(DetectionSet { frame, boxes: kept })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawDetectionSet = serde_json::from_str(text).map_err(|e| Error::Format {
            context: format!("detections (line {}, column {})", e.line(), e.column()),
            message: e.to_string(),
        })?;
        let boxes = raw
            .boxes
            .into_iter()
            .map(|d| {
                let [x1, y1, x2, y2] = d.bbox;
                let b = BBox {
                    x1,
                    y1,
                    x2,
                    y2,
                    score: Some(d.score),
                    class_id: d.class_id,
                };
                b.validate().map(|_| b)
            })
            .collect::<Result<_>>()?;
        DetectionSet::new((raw.frame[0], raw.frame[1]), boxes)
    }

    pub fn to_json(&self) -> String {
        let raw = RawDetectionSet {
            frame: [self.frame.0, self.frame.1],
            boxes: self
                .boxes
                .iter()
                .map(|b| Detection {
                    bbox: b.corners(),
                    score: b.score.unwrap_or(0.0),
                    class_id: b.class_id,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("detections serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { context, message } => Error::Format {
                context: format!("{}: {context}", path.display()),
                message,
            },
            e => e,
        })
    }
}

/// Maps detections from the original frame into the transformed frame.
pub fn forward_boxes(dets: &DetectionSet, t: &TtaTransform) -> Result<DetectionSet> {
    t.validate()?;
    let fw = dets.frame.0 * t.scale;
    let fh = dets.frame.1 * t.scale;
    let boxes = dets
        .boxes
        .iter()
        .map(|b| {
            let (x1, x2) = (b.x1 * t.scale, b.x2 * t.scale);
            let (y1, y2) = (b.y1 * t.scale, b.y2 * t.scale);
            if t.hflip {
                b.with_corners(fw - x2, y1, fw - x1, y2)
            } else {
                b.with_corners(x1, y1, x2, y2)
            }
        })
        .collect();
    Ok(DetectionSet {
        frame: (fw, fh),
        boxes,
    })
}

/// Inverse of [`forward_boxes`]: maps detections made on the transformed
/// image back to the original frame.
pub fn invert_boxes(dets: &DetectionSet, t: &TtaTransform) -> Result<DetectionSet> {
    t.validate()?;
    let (fw, fh) = dets.frame;
    let boxes = dets
        .boxes
        .iter()
        .map(|b| {
            let (x1, x2) = if t.hflip {
                (fw - b.x2, fw - b.x1)
            } else {
                (b.x1, b.x2)
            };
            b.with_corners(x1 / t.scale, b.y1 / t.scale, x2 / t.scale, b.y2 / t.scale)
        })
        .collect();
    Ok(DetectionSet {
        frame: (fw / t.scale, fh / t.scale),
        boxes,
    })
}

/// Normalized sampled Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication. `sigma == 0` is the
/// identity.
pub fn gaussian_blur(img: &Raster, sigma: f64) -> Result<Raster> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "blur sigma {sigma} must be >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let clampi = |v: i64, n: i64| v.clamp(0, n - 1) as usize;

    let mut horiz = vec![0.0f64; img.pixels().len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = clampi(x + j as i64 - r, w);
                    acc += kv * img.get(sx, y as usize, c) as f64;
                }
                horiz[img.index(x as usize, y as usize, c)] = acc;
            }
        }
    }
    let mut out = vec![0u8; img.pixels().len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = clampi(y + j as i64 - r, h);
                    acc += kv * horiz[img.index(x as usize, sy, c)];
                }
                out[img.index(x as usize, y as usize, c)] = round_half_up(acc);
            }
        }
    }
    Raster::new(img.width(), img.height(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Per-class greedy NMS over the pooled detections.
    #[default]
    Nms,
    /// Per-class clustering; each cluster becomes its score-weighted mean
    /// box with the cluster's highest score.
    Avg,
}

/// Canonical order: class, score descending, then coordinates. Makes fusion
/// independent of the order in which sets are supplied.
fn canonical_cmp(a: &BBox, b: &BBox) -> Ordering {
    a.class_id
        .cmp(&b.class_id)
        .then(b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)))
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
        .then(a.x2.total_cmp(&b.x2))
        .then(a.y2.total_cmp(&b.y2))
}

fn score_order(a: &BBox, b: &BBox) -> Ordering {
    b.score
        .unwrap_or(0.0)
        .total_cmp(&a.score.unwrap_or(0.0))
        .then_with(|| canonical_cmp(a, b))
}

fn avg_cluster(group: &[BBox], iou_thresh: f64) -> Vec<BBox> {
    let mut used = vec![false; group.len()];
    let mut out = Vec::new();
    for i in 0..group.len() {
        if used[i] {
            continue;
        }
        let seed = group[i];
        let members: Vec<usize> = (i..group.len())
            .filter(|&j| !used[j] && (j == i || overlap(&seed, &group[j]) > iou_thresh))
            .collect();
        let total: f64 = members.iter().map(|&j| group[j].score.unwrap_or(0.0)).sum();
        let weight = |j: usize| {
            if total > 0.0 {
                group[j].score.unwrap_or(0.0) / total
            } else {
                1.0 / members.len() as f64
            }
        };
        let mut c = [0.0; 4];
        for &j in &members {
            used[j] = true;
            let w = weight(j);
            for (acc, v) in c.iter_mut().zip(group[j].corners()) {
                *acc += w * v;
            }
        }
        out.push(seed.with_corners(c[0], c[1], c[2], c[3]));
    }
    out
}

/// Fuses detection sets that share one frame.
pub fn fuse(sets: &[DetectionSet], iou_thresh: f64, mode: FusionMode) -> Result<DetectionSet> {
    let Some(first) = sets.first() else {
        return Err(Error::InvalidInput("nothing to fuse".into()));
    };
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::InvalidInput(format!(
            "iou threshold {iou_thresh} outside [0, 1]"
        )));
    }
    for (i, s) in sets.iter().enumerate() {
        if s.frame != first.frame {
            return Err(Error::InvalidInput(format!(
                "set {i} has frame {:?}, set 0 has {:?}",
                s.frame, first.frame
            )));
        }
    }
    let mut all: Vec<BBox> = sets.iter().flat_map(|s| s.boxes.iter().copied()).collect();
    all.sort_by(canonical_cmp);

    let mut fused = Vec::new();
    for group in all.chunk_by(|a, b| a.class_id == b.class_id) {
        match mode {
            FusionMode::Nms => {
                fused.extend(
                    nms_indices(group, iou_thresh)?
                        .into_iter()
                        .map(|i| group[i]),
                );
            }
            FusionMode::Avg => fused.extend(avg_cluster(group, iou_thresh)),
        }
    }
    fused.sort_by(score_order);
    Ok(DetectionSet {
        frame: first.frame,
        boxes: fused,
    })
}
