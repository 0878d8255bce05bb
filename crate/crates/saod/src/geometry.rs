//! Exact box arithmetic: IoU, pairwise IoU, and greedy NMS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form. Geometry kernels require positive area
/// (`x2 > x1`, `y2 > y1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    /// From the `[x, y, w, h]` file convention.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]
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

    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1
    }

    fn check(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "box ({}, {}, {}, {}) has non-positive area",
                self.x1, self.y1, self.x2, self.y2
            )))
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

/// A box with a confidence score and an optional category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub category_id: Option<u64>,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64, category_id: Option<u64>) -> Self {
        ScoredBox {
            bbox,
            score,
            category_id,
        }
    }
}

/// Intersection over union. Continuous-area convention (no +1 pixel).
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Entry `(i, j)` equals `iou(a[i], b[j])`.
pub fn pairwise_iou(a: &[BBox], b: &[BBox]) -> Result<Vec<Vec<f64>>> {
    for bx in a.iter().chain(b.iter()) {
        bx.check()?;
    }
    Ok(a.iter()
        .map(|ai| {
            b.iter()
                .map(|bj| {
                    let inter = ai.intersection_area(bj);
                    inter / (ai.area() + bj.area() - inter)
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsMode {
    ClassAgnostic,
    ClassAware,
}

/// Greedy descending-score suppression.
///
/// Returns kept indices in descending score order, ties broken by ascending
/// input index. A box is suppressed when its IoU with an already-kept box
/// exceeds `iou_thresh`; in class-aware mode only same-category boxes compete.
pub fn nms(items: &[ScoredBox], iou_thresh: f64, mode: NmsMode) -> Result<Vec<usize>> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::domain(format!(
            "nms iou threshold {iou_thresh} outside (0, 1]"
        )));
    }
    for (i, item) in items.iter().enumerate() {
        item.bbox.check()?;
        if mode == NmsMode::ClassAware && item.category_id.is_none() {
            return Err(Error::domain(format!(
                "class-aware nms requires a category on every box; index {i} has none"
            )));
        }
    }

    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| items[j].score.total_cmp(&items[i].score).then(i.cmp(&j)));

    let mut suppressed = vec![false; items.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if suppressed[j] {
                continue;
            }
            if mode == NmsMode::ClassAware && items[i].category_id != items[j].category_id {
                continue;
            }
            let inter = items[i].bbox.intersection_area(&items[j].bbox);
            let union = items[i].bbox.area() + items[j].bbox.area() - inter;
            if inter / union > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}
