//! Detection evaluation: interpolated average precision over a grid of IoU
//! thresholds, and proposal recall.
//!
//! Matching is greedy per image, category, and IoU threshold: detections are
//! visited in descending score order (ties by ascending input order) and each
//! one claims the still-unmatched ground-truth box of highest IoU, provided
//! that IoU reaches the threshold. The precision-recall curve is accumulated
//! over the whole dataset per category, and AP is the mean of interpolated
//! precision over a fixed recall grid (101 points by default, an 11-point
//! mode is available for comparability with older protocols). Categories
//! without any ground truth are excluded from averages.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::ScoredProposal;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{self, BBox};

/// A class-scored predicted box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// The ten COCO evaluation thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// 101-point recall grid 0.00, 0.01, ..., 1.00.
    #[default]
    Points101,
    /// 11-point recall grid 0.0, 0.1, ..., 1.0.
    Points11,
}

impl Interpolation {
    fn grid(self) -> Vec<f64> {
        match self {
            Interpolation::Points101 => (0..=100).map(|i| f64::from(i) / 100.0).collect(),
            Interpolation::Points11 => (0..=10).map(|i| f64::from(i) / 10.0).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    /// Mean AP over `iou_thresholds` and categories with ground truth.
    pub ap_coco: f64,
    /// AP at IoU 0.50 (computed even when 0.50 is not in `iou_thresholds`).
    pub ap50: f64,
    pub iou_thresholds: Vec<f64>,
    /// category id -> AP per threshold, aligned with `iou_thresholds`.
    pub per_category: BTreeMap<u64, Vec<f64>>,
}

impl fmt::Display for APReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "AP  = {:.4}  (mean over {} IoU thresholds)",
            self.ap_coco,
            self.iou_thresholds.len()
        )?;
        writeln!(f, "AP50 = {:.4}", self.ap50)?;
        for (cat, aps) in &self.per_category {
            let mean = aps.iter().sum::<f64>() / aps.len() as f64;
            writeln!(f, "  class {cat}: {mean:.4}")?;
        }
        Ok(())
    }
}

impl APReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("report serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn check_detections(gt: &Dataset, dets: &[Detection]) -> Result<()> {
    let images: std::collections::BTreeSet<u64> = gt.images.iter().map(|im| im.id).collect();
    let cats: std::collections::BTreeSet<u64> = gt.categories.iter().map(|c| c.id).collect();
    for (i, d) in dets.iter().enumerate() {
        if !images.contains(&d.image_id) {
            return Err(Error::domain(format!(
                "detection {i} references missing image id {}",
                d.image_id
            )));
        }
        if !cats.contains(&d.category_id) {
            return Err(Error::domain(format!(
                "detection {i} references missing category id {}",
                d.category_id
            )));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::domain(format!(
                "detection {i} score {} outside [0, 1]",
                d.score
            )));
        }
        if !d.bbox.is_valid() {
            return Err(Error::domain(format!(
                "detection {i} has a non-positive-area box"
            )));
        }
    }
    Ok(())
}

/// TP flags for one category at one threshold, ordered to match `dets`.
fn match_category(
    gt_by_image: &BTreeMap<u64, Vec<(u64, BBox)>>,
    dets: &[(usize, &Detection)],
    thresh: f64,
) -> Vec<bool> {
    let mut flags = vec![false; dets.len()];
    // Group detection positions per image, keeping the sorted global order.
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (pos, (_, d)) in dets.iter().enumerate() {
        by_image.entry(d.image_id).or_default().push(pos);
    }
    for (image_id, positions) in by_image {
        let Some(gts) = gt_by_image.get(&image_id) else {
            continue;
        };
        let mut taken = vec![false; gts.len()];
        for pos in positions {
            let det = dets[pos].1;
            let mut best: Option<(usize, f64)> = None;
            for (gi, (ann_id, gb)) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = det.bbox.intersection_area(gb)
                    / (det.bbox.area() + gb.area() - det.bbox.intersection_area(gb));
                let better = match best {
                    None => v >= thresh,
                    Some((bi, bv)) => v >= thresh && (v > bv || (v == bv && *ann_id < gts[bi].0)),
                };
                if better {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best {
                taken[gi] = true;
                flags[pos] = true;
            }
        }
    }
    flags
}

fn interpolated_ap(flags: &[bool], gt_count: usize, grid: &[f64]) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    if flags.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / gt_count as f64);
    }
    // Precision envelope from the right.
    let mut env = precision;
    for k in (0..env.len() - 1).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    let mut total = 0.0;
    for &r in grid {
        // First index with recall >= r (recall is non-decreasing).
        let k = recall.partition_point(|&v| v < r);
        if k < env.len() {
            total += env[k];
        }
    }
    total / grid.len() as f64
}

/// Evaluate detections against a ground-truth dataset at the given IoU
/// thresholds with the default 101-point interpolation.
pub fn evaluate_ap(gt: &Dataset, dets: &[Detection], iou_thresholds: &[f64]) -> Result<APReport> {
    evaluate_ap_with(gt, dets, iou_thresholds, Interpolation::Points101)
}

pub fn evaluate_ap_with(
    gt: &Dataset,
    dets: &[Detection],
    iou_thresholds: &[f64],
    interp: Interpolation,
) -> Result<APReport> {
    if iou_thresholds.is_empty() {
        return Err(Error::domain("no IoU thresholds given"));
    }
    for &t in iou_thresholds {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::domain(format!("IoU threshold {t} outside (0, 1]")));
        }
    }
    check_detections(gt, dets)?;
    let grid = interp.grid();

    // Ground truth per category, then per image.
    let mut gt_split: BTreeMap<u64, BTreeMap<u64, Vec<(u64, BBox)>>> = BTreeMap::new();
    for a in &gt.annotations {
        gt_split
            .entry(a.category_id)
            .or_default()
            .entry(a.image_id)
            .or_default()
            .push((a.id, a.corners()));
    }

    // Detections per category, sorted by descending score then input order.
    let mut det_split: BTreeMap<u64, Vec<(usize, &Detection)>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        det_split.entry(d.category_id).or_default().push((i, d));
    }
    for list in det_split.values_mut() {
        list.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    }
    let empty: Vec<(usize, &Detection)> = Vec::new();

    let mut per_category: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut ap50_per_cat: Vec<f64> = Vec::new();
    for (&cat, by_image) in &gt_split {
        let gt_count: usize = by_image.values().map(Vec::len).sum();
        let cat_dets = det_split.get(&cat).unwrap_or(&empty);
        let aps: Vec<f64> = iou_thresholds
            .iter()
            .map(|&t| interpolated_ap(&match_category(by_image, cat_dets, t), gt_count, &grid))
            .collect();
        ap50_per_cat.push(match iou_thresholds.iter().position(|&t| t == 0.5) {
            Some(k) => aps[k],
            None => interpolated_ap(&match_category(by_image, cat_dets, 0.5), gt_count, &grid),
        });
        per_category.insert(cat, aps);
    }

    let n_cats = per_category.len();
    let (ap_coco, ap50) = if n_cats == 0 {
        (0.0, 0.0)
    } else {
        let sum: f64 = per_category.values().flatten().sum();
        (
            sum / (n_cats * iou_thresholds.len()) as f64,
            ap50_per_cat.iter().sum::<f64>() / n_cats as f64,
        )
    };

    Ok(APReport {
        ap_coco,
        ap50,
        iou_thresholds: iou_thresholds.to_vec(),
        per_category,
    })
}

/// Fraction of annotations covered by at least one proposal of their image at
/// `IoU >= iou_thresh`, optionally restricted to the `top_k` proposals by
/// objectness. Returns 1.0 when the dataset has no annotations.
pub fn proposal_recall(
    gt: &Dataset,
    proposals: &BTreeMap<u64, Vec<ScoredProposal>>,
    iou_thresh: f64,
    top_k: Option<usize>,
) -> Result<f64> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::domain(format!(
            "recall IoU threshold {iou_thresh} outside (0, 1]"
        )));
    }
    let mut total = 0usize;
    let mut covered = 0usize;
    let by_image = gt.annotations_by_image();
    for (image_id, anns) in by_image {
        if anns.is_empty() {
            continue;
        }
        let mut props: Vec<&ScoredProposal> = proposals
            .get(&image_id)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        props.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));
        if let Some(k) = top_k {
            props.truncate(k);
        }
        for ann in anns {
            total += 1;
            let gb = ann.corners();
            if props.iter().any(|p| {
                geometry::iou(&p.bbox, &gb)
                    .map(|v| v >= iou_thresh)
                    .unwrap_or(false)
            }) {
                covered += 1;
            }
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(covered as f64 / total as f64)
}

/// Results-file entry: `bbox` is `[x, y, w, h]` as in annotation files.
#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

/// Load a results file (array of `{image_id, category_id, bbox, score}`).
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let records: Vec<DetectionRecord> = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: 0,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(records
        .into_iter()
        .map(|r| Detection {
            image_id: r.image_id,
            category_id: r.category_id,
            bbox: BBox::from_xywh(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]),
            score: r.score,
        })
        .collect())
}

/// Write detections in the results-file format.
pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<DetectionRecord> = dets
        .iter()
        .map(|d| DetectionRecord {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect();
    let mut s = serde_json::to_string(&records).expect("serialization cannot fail");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
