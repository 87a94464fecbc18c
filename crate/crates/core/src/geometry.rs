//! Axis-aligned box arithmetic: IoU, center distance, diagonal length and
//! greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-form box in continuous pixel coordinates.
///
/// Annotation files carry `(x, y, w, h)`; use [`BBox::from_xywh`] at
/// ingestion. Fields are public, so [`BBox::validate`] is the single place
/// that checks `x2 > x1`, `y2 > y1` and the score range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox {
            x1,
            y1,
            x2,
            y2,
            score: None,
            class_id: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = Some(class_id);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite box {:?}", coords)));
        }
        if !(self.x2 > self.x1 && self.y2 > self.y1) {
            return Err(Error::InvalidInput(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Copy with the same score/class and new corners.
    pub fn with_corners(&self, x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            x1,
            y1,
            x2,
            y2,
            ..*self
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        self.with_corners(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Clips to `[0, width] x [0, height]`. The result may be degenerate.
    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        self.with_corners(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

/// IoU of two boxes that are already known to be valid.
pub(crate) fn overlap(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(overlap(a, b))
}

/// Euclidean distance between box centers.
pub fn center_distance(s: &BBox, t: &BBox) -> f64 {
    let (sx, sy) = s.center();
    let (tx, ty) = t.center();
    (sx - tx).hypot(sy - ty)
}

/// Length of the box diagonal, `sqrt(w^2 + h^2)`.
pub fn diag_norm(t: &BBox) -> f64 {
    t.width().hypot(t.height())
}

/// Greedy NMS returning indices of kept boxes in processing order.
///
/// Boxes are visited by descending score, ties by ascending input index. A
/// box is suppressed when its IoU with an already kept box exceeds
/// `iou_thresh`.
pub fn nms_indices(dets: &[BBox], iou_thresh: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::InvalidInput(format!(
            "iou threshold {iou_thresh} outside [0, 1]"
        )));
    }
    let mut scores = Vec::with_capacity(dets.len());
    for (i, d) in dets.iter().enumerate() {
        d.validate()?;
        match d.score {
            Some(s) => scores.push(s),
            None => {
                return Err(Error::InvalidInput(format!("detection {i} has no score")));
            }
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| overlap(&dets[k], &dets[i]) <= iou_thresh)
        {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Greedy NMS; see [`nms_indices`].
pub fn nms(dets: &[BBox], iou_thresh: f64) -> Result<Vec<BBox>> {
    Ok(nms_indices(dets, iou_thresh)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}
