//! Grid anchors and the hard IoU-imbalance sampler.
//!
//! A candidate anchor `S` may only become a negative when, against the
//! target `T` whose center is nearest,
//!
//! - `max IoU(S, ·) < neg_iou_upper` (0.3), and
//! - `dist(center S, center T) < sqrt(T_w^2 + T_h^2)`.
//!
//! Negatives therefore ring the annotated boxes instead of covering the
//! whole frame, which keeps unlabeled objects elsewhere in the image out of
//! the negative set. Negatives with IoU in `(hard_iou_lower, neg_iou_upper)`
//! are *hard* and receive a fixed share of the negative quota.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{center_distance, diag_norm, overlap, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorGridConfig {
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
    pub strides: Vec<u32>,
    /// Anchor side length in units of the stride.
    pub scales: Vec<f64>,
    /// Height / width aspect ratios.
    pub ratios: Vec<f64>,
    /// Drop anchors that extend past the image instead of flagging them.
    pub drop_outside: bool,
}

impl Default for AnchorGridConfig {
    fn default() -> Self {
        AnchorGridConfig {
            image_size: (256, 256),
            strides: vec![8, 16, 32],
            scales: vec![4.0],
            ratios: vec![0.5, 1.0, 2.0],
            drop_outside: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    pub bbox: BBox,
    pub stride: u32,
    /// Whether the anchor lies entirely inside the image.
    pub inside: bool,
}

/// One anchor per (cell, scale, ratio) per stride, centered on cell centers.
///
/// The grid for stride `s` has `ceil(W / s) x ceil(H / s)` cells, so the
/// whole image is covered when `s` does not divide the image size.
pub fn generate_anchors(cfg: &AnchorGridConfig) -> Result<Vec<Anchor>> {
    if cfg.scales.is_empty() || cfg.ratios.is_empty() || cfg.strides.is_empty() {
        return Err(Error::InvalidConfig(
            "anchor grid needs at least one stride, scale and ratio".into(),
        ));
    }
    if cfg.strides.contains(&0) || cfg.strides.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "strides must be positive and strictly ascending".into(),
        ));
    }
    if cfg
        .scales
        .iter()
        .chain(&cfg.ratios)
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::InvalidConfig(
            "scales and ratios must be positive".into(),
        ));
    }
    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidConfig("image size must be positive".into()));
    }

    let mut out = Vec::new();
    for &stride in &cfg.strides {
        let s = stride as f64;
        let nx = cfg.image_size.0.div_ceil(stride);
        let ny = cfg.image_size.1.div_ceil(stride);
        for gy in 0..ny {
            let cy = (gy as f64 + 0.5) * s;
            for gx in 0..nx {
                let cx = (gx as f64 + 0.5) * s;
                for &scale in &cfg.scales {
                    let side = scale * s;
                    for &ratio in &cfg.ratios {
                        let r = ratio.sqrt();
                        let (hw, hh) = (side / r * 0.5, side * r * 0.5);
                        let bbox = BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)?;
                        let inside = bbox.is_inside(w, h);
                        if inside || !cfg.drop_outside {
                            out.push(Anchor {
                                bbox,
                                stride,
                                inside,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub pos_iou_thresh: f64,
    pub neg_iou_upper: f64,
    pub hard_iou_lower: f64,
    pub batch_size: usize,
    pub pos_fraction: f64,
    pub hard_neg_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            pos_iou_thresh: 0.7,
            neg_iou_upper: 0.3,
            hard_iou_lower: 0.05,
            batch_size: 256,
            pos_fraction: 0.5,
            hard_neg_fraction: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.hard_iou_lower
            && self.hard_iou_lower < self.neg_iou_upper
            && self.neg_iou_upper <= self.pos_iou_thresh
            && self.pos_iou_thresh <= 1.0;
        if !ordered {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= hard_iou_lower ({}) < neg_iou_upper ({}) <= pos_iou_thresh ({}) <= 1",
                self.hard_iou_lower, self.neg_iou_upper, self.pos_iou_thresh
            )));
        }
        for (name, v) in [
            ("pos_fraction", self.pos_fraction),
            ("hard_neg_fraction", self.hard_neg_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Positive,
    NegativeHard,
    NegativeEasy,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateLabel {
    pub anchor: BBox,
    pub max_iou: f64,
    /// Index of the target whose center is nearest; `None` without targets.
    pub nearest_target: Option<usize>,
    pub nearest_target_distance: f64,
    pub nearest_target_diag: f64,
    pub status: CandidateStatus,
}

impl CandidateLabel {
    /// Both negative-region constraints hold.
    pub fn in_negative_region(&self, cfg: &SamplerConfig) -> bool {
        self.nearest_target.is_some()
            && self.max_iou < cfg.neg_iou_upper
            && self.nearest_target_distance < self.nearest_target_diag
    }
}

fn label_one(anchor: &BBox, targets: &[BBox], cfg: &SamplerConfig) -> CandidateLabel {
    let mut max_iou = 0.0f64;
    let mut nearest: Option<(usize, f64)> = None;
    for (i, t) in targets.iter().enumerate() {
        max_iou = max_iou.max(overlap(anchor, t));
        let d = center_distance(anchor, t);
        if nearest.is_none_or(|(_, best)| d < best) {
            nearest = Some((i, d));
        }
    }
    let (nearest_target, dist, diag) = match nearest {
        Some((i, d)) => (Some(i), d, diag_norm(&targets[i])),
        None => (None, f64::INFINITY, 0.0),
    };
    let mut label = CandidateLabel {
        anchor: *anchor,
        max_iou,
        nearest_target,
        nearest_target_distance: dist,
        nearest_target_diag: diag,
        status: CandidateStatus::Excluded,
    };
    label.status = if nearest_target.is_none() {
        CandidateStatus::Excluded
    } else if max_iou >= cfg.pos_iou_thresh {
        CandidateStatus::Positive
    } else if label.in_negative_region(cfg) {
        if max_iou > cfg.hard_iou_lower {
            CandidateStatus::NegativeHard
        } else {
            CandidateStatus::NegativeEasy
        }
    } else {
        CandidateStatus::Excluded
    };
    label
}

/// Labels every anchor against the targets. Without targets every anchor is
/// excluded.
pub fn classify_candidates(
    anchors: &[BBox],
    targets: &[BBox],
    cfg: &SamplerConfig,
) -> Result<Vec<CandidateLabel>> {
    classify_candidates_with(Execution::default(), anchors, targets, cfg)
}

pub fn classify_candidates_with(
    exec: Execution,
    anchors: &[BBox],
    targets: &[BBox],
    cfg: &SamplerConfig,
) -> Result<Vec<CandidateLabel>> {
    cfg.validate()?;
    for b in anchors.iter().chain(targets) {
        b.validate()?;
    }
    Ok(exec.map(anchors, |a| label_one(a, targets, cfg)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BatchDiagnostics {
    pub positive_pool: usize,
    pub hard_pool: usize,
    pub easy_pool: usize,
    pub excluded: usize,
    pub positives: usize,
    pub hard: usize,
    pub easy: usize,
    /// `hard / (hard + easy)`, zero when no negatives were drawn.
    pub realized_hard_share: f64,
}

/// Sampled candidate indices, each list ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampledBatch {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub diagnostics: BatchDiagnostics,
}

fn draw(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Draws a batch without replacement.
///
/// Up to `floor(batch_size * pos_fraction)` positives are drawn; the rest of
/// the batch goes to negatives. The hard quota is `neg_quota *
/// hard_neg_fraction`, with a fractional remainder resolved by one Bernoulli
/// draw so the expected share is exact. A short hard pool is topped up from
/// the easy pool and vice versa.
pub fn sample_batch(
    candidates: &[CandidateLabel],
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampledBatch> {
    cfg.validate()?;
    let mut pos = Vec::new();
    let mut hard = Vec::new();
    let mut easy = Vec::new();
    let mut excluded = 0;
    for (i, c) in candidates.iter().enumerate() {
        match c.status {
            CandidateStatus::Positive => pos.push(i),
            CandidateStatus::NegativeHard => hard.push(i),
            CandidateStatus::NegativeEasy => easy.push(i),
            CandidateStatus::Excluded => excluded += 1,
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos_quota = (cfg.batch_size as f64 * cfg.pos_fraction).floor() as usize;
    let n_pos = pos_quota.min(pos.len());
    let neg_quota = cfg.batch_size - n_pos;

    let ideal = neg_quota as f64 * cfg.hard_neg_fraction;
    let mut hard_quota = ideal.floor() as usize;
    let frac = ideal - ideal.floor();
    if frac > 0.0 && rng.random::<f64>() < frac {
        hard_quota += 1;
    }
    let mut n_hard = hard_quota.min(hard.len());
    let n_easy = (neg_quota - n_hard).min(easy.len());
    n_hard = (neg_quota - n_easy).min(hard.len());

    let positives = draw(&mut rng, &pos, n_pos);
    let hard_pick = draw(&mut rng, &hard, n_hard);
    let easy_pick = draw(&mut rng, &easy, n_easy);

    let mut negatives: Vec<usize> = hard_pick.iter().chain(&easy_pick).copied().collect();
    negatives.sort_unstable();
    debug_assert!(negatives
        .iter()
        .all(|&i| candidates[i].in_negative_region(cfg)));

    let n_neg = n_hard + n_easy;
    if positives.is_empty() && negatives.is_empty() {
        log::debug!(
            "empty batch: {} positive, {} hard, {} easy, {} excluded candidates",
            pos.len(),
            hard.len(),
            easy.len(),
            excluded
        );
    }
    Ok(SampledBatch {
        positives,
        negatives,
        diagnostics: BatchDiagnostics {
            positive_pool: pos.len(),
            hard_pool: hard.len(),
            easy_pool: easy.len(),
            excluded,
            positives: n_pos,
            hard: n_hard,
            easy: n_easy,
            realized_hard_share: if n_neg == 0 {
                0.0
            } else {
                n_hard as f64 / n_neg as f64
            },
        },
    })
}
