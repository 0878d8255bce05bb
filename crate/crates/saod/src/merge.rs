//! Merged ground truth: confident detections pooled with annotations.
//!
//! Detections scoring above `tau_m` are combined with the ground truth and
//! deduplicated by class-aware NMS. Ground-truth entries can never be
//! suppressed: they carry a score sentinel above any detection during NMS and
//! any entry the NMS would still drop (two same-class annotations may
//! legitimately overlap above `nms_iou`) is reinstated afterwards.

use serde::{Deserialize, Serialize};

use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, NmsMode, ScoredBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Minimum detection score (strict) for a pseudo entry. Default 0.9.
    pub tau_m: f64,
    /// Class-aware NMS threshold for deduplication. Default 0.5.
    pub nms_iou: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            tau_m: 0.9,
            nms_iou: 0.5,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.tau_m < 1.0) {
            return Err(Error::domain(format!(
                "tau_m = {} outside (0, 1)",
                self.tau_m
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::domain(format!(
                "nms_iou = {} outside (0, 1]",
                self.nms_iou
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gt,
    Pseudo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergedEntry {
    pub bbox: BBox,
    pub category_id: u64,
    pub provenance: Provenance,
    /// 1.0 for ground-truth entries, the detection score otherwise.
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MergedGT {
    pub entries: Vec<MergedEntry>,
}

impl MergedGT {
    pub fn pseudo_entries(&self) -> impl Iterator<Item = &MergedEntry> {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Pseudo)
    }
}

// Above any detection score, so NMS processes annotations first.
const GT_SENTINEL: f64 = 2.0;

/// Build the merged ground truth for one image.
///
/// Output order: every annotation exactly once (input order, score 1.0),
/// followed by the surviving pseudo entries in descending score order.
pub fn merge_ground_truth(
    detections: &[ScoredBox],
    gt: &[Annotation],
    cfg: &MergeConfig,
) -> Result<MergedGT> {
    cfg.validate()?;
    for (i, det) in detections.iter().enumerate() {
        if det.category_id.is_none() {
            return Err(Error::domain(format!(
                "detection {i} has no category; merged ground truth is class-aware"
            )));
        }
    }

    let mut pool: Vec<ScoredBox> = gt
        .iter()
        .map(|a| ScoredBox::new(a.corners(), GT_SENTINEL, Some(a.category_id)))
        .collect();
    pool.extend(detections.iter().filter(|d| d.score > cfg.tau_m).copied());

    let keep = geometry::nms(&pool, cfg.nms_iou, NmsMode::ClassAware)?;

    let mut entries: Vec<MergedEntry> = gt
        .iter()
        .map(|a| MergedEntry {
            bbox: a.corners(),
            category_id: a.category_id,
            provenance: Provenance::Gt,
            score: 1.0,
        })
        .collect();
    for k in keep {
        if k >= gt.len() {
            let d = pool[k];
            entries.push(MergedEntry {
                bbox: d.bbox,
                category_id: d.category_id.expect("checked above"),
                provenance: Provenance::Pseudo,
                score: d.score,
            });
        }
    }
    Ok(MergedGT { entries })
}
