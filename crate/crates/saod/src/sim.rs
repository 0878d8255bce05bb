//! Synthetic end-to-end validation of proposal mining, no network required.
//!
//! The pipeline generates exhaustively annotated synthetic scenes, sparsifies
//! them with a split generator, simulates a noisy proposal source over the
//! *full* ground truth (a detector keeps seeing objects whose labels were
//! dropped), partitions the proposals against the kept annotations, and then
//! scores the mined unlabeled regions against the removal manifest: a mined
//! box is correct when it overlaps a removed annotation at IoU >= 0.5.
//!
//! With a noiseless detector and scenes whose objects overlap below `tau_bg`,
//! every removed annotation reappears as a high-objectness proposal clear of
//! all kept ground truth, so mined precision and recall are exactly 1.0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{assign_proposals, dedupe_unlabeled, ScoredProposal, Thresholds};
use crate::augment::Raster;
use crate::dataset::{Annotation, Category, Dataset, Image};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, ScoredBox};
use crate::merge::{merge_ground_truth, MergeConfig};
use crate::rng;
use crate::splits::{generate_split, RemovalManifest, SplitSpec};

/// Match threshold for scoring mined boxes against removed annotations.
pub const RECOVERY_IOU: f64 = 0.5;

/// Proposals per image id.
pub type ProposalMap = BTreeMap<u64, Vec<ScoredProposal>>;
/// Class-scored detections per image id.
pub type DetectionMap = BTreeMap<u64, Vec<ScoredBox>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_count: u32,
    pub width: u32,
    pub height: u32,
    /// Number of categories; ids 1..=categories.
    pub categories: u32,
    /// Inclusive range of objects per image.
    pub objects_per_image: [u32; 2],
    /// Inclusive range of object side lengths, pixels.
    pub object_size: [u32; 2],
    /// Pairwise IoU cap between placed objects. Keep below `tau_bg` for the
    /// exact noiseless-recovery guarantee.
    pub max_overlap: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_count: 20,
            width: 256,
            height: 256,
            categories: 3,
            objects_per_image: [1, 4],
            object_size: [16, 48],
            max_overlap: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("scene dims must be positive"));
        }
        if self.categories == 0 {
            return Err(Error::domain("at least one category required"));
        }
        let [lo, hi] = self.objects_per_image;
        if lo > hi {
            return Err(Error::domain("objects_per_image range is inverted"));
        }
        let [slo, shi] = self.object_size;
        if slo == 0 || slo > shi {
            return Err(Error::domain(
                "object_size range must be positive and ordered",
            ));
        }
        if shi > self.width.min(self.height) {
            return Err(Error::domain("object_size exceeds scene dims"));
        }
        if !(0.0..1.0).contains(&self.max_overlap) {
            return Err(Error::domain("max_overlap outside [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    /// Gaussian jitter (pixels) on each corner of a true box.
    pub localization_sigma: f64,
    pub fg_objectness_mean: f64,
    pub bg_objectness_mean: f64,
    pub objectness_sigma: f64,
    /// Expected spurious proposals per image (Poisson).
    pub false_positive_rate: f64,
    /// Probability a true object yields no proposal.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            localization_sigma: 1.0,
            fg_objectness_mean: 0.9,
            bg_objectness_mean: 0.1,
            objectness_sigma: 0.05,
            false_positive_rate: 1.0,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl DetectorNoise {
    /// Deterministic detector: exact boxes, exact objectness, no spurious
    /// proposals, no dropout.
    pub fn noiseless(fg: f64, bg: f64, seed: u64) -> Self {
        DetectorNoise {
            localization_sigma: 0.0,
            fg_objectness_mean: fg,
            bg_objectness_mean: bg,
            objectness_sigma: 0.0,
            false_positive_rate: 0.0,
            dropout_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fg_objectness_mean", self.fg_objectness_mean),
            ("bg_objectness_mean", self.bg_objectness_mean),
            ("dropout_rate", self.dropout_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("localization_sigma", self.localization_sigma),
            ("objectness_sigma", self.objectness_sigma),
            ("false_positive_rate", self.false_positive_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: u32 = 200;

fn place_objects(spec: &SceneSpec, image_index: u32) -> Result<Vec<(u64, BBox)>> {
    let mut rng = rng::stream(spec.seed, "scene-place", u64::from(image_index));
    let count = rng.random_range(spec.objects_per_image[0]..=spec.objects_per_image[1]);
    let mut placed: Vec<(u64, BBox)> = Vec::with_capacity(count as usize);
    'objects: for _ in 0..count {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(spec.object_size[0]..=spec.object_size[1]);
            let h = rng.random_range(spec.object_size[0]..=spec.object_size[1]);
            let x = rng.random_range(0..=spec.width - w);
            let y = rng.random_range(0..=spec.height - h);
            let candidate = BBox::from_xywh(f64::from(x), f64::from(y), f64::from(w), f64::from(h));
            let ok = placed.iter().all(|(_, b)| {
                geometry::iou(b, &candidate)
                    .map(|v| v <= spec.max_overlap)
                    .unwrap_or(false)
            });
            if ok {
                let cat = u64::from(rng.random_range(1..=spec.categories));
                placed.push((cat, candidate));
                continue 'objects;
            }
        }
        return Err(Error::domain(format!(
            "could not place object in image index {image_index} after {PLACEMENT_ATTEMPTS} attempts; \
             lower objects_per_image or max_overlap"
        )));
    }
    Ok(placed)
}

/// Fully annotated synthetic scenes, boxes only.
pub fn generate_scene_boxes(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let placements: Vec<Vec<(u64, BBox)>> = (0..spec.image_count)
        .into_par_iter()
        .map(|i| place_objects(spec, i))
        .collect::<Result<_>>()?;

    let images: Vec<Image> = (0..spec.image_count)
        .map(|i| Image {
            id: u64::from(i) + 1,
            width: spec.width,
            height: spec.height,
            file_name: format!("scene_{:05}.ppm", i + 1),
        })
        .collect();
    let categories: Vec<Category> = (1..=u64::from(spec.categories))
        .map(|id| Category {
            id,
            name: format!("object-{id}"),
        })
        .collect();
    let mut annotations = Vec::new();
    for (i, placed) in placements.iter().enumerate() {
        for &(cat, bbox) in placed {
            annotations.push(Annotation::new(
                annotations.len() as u64 + 1,
                i as u64 + 1,
                cat,
                bbox.to_xywh(),
            ));
        }
    }
    Ok(Dataset {
        images,
        annotations,
        categories,
        unlabeled_image_ids: BTreeSet::new(),
    })
}

fn category_color(id: u64) -> [u8; 3] {
    // Golden-ratio hue spacing, fixed saturation/value.
    let h = (id as f64 * 0.618_033_988_75).fract() * 6.0;
    let (s, v) = (0.75, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

fn render_scene(spec: &SceneSpec, image_id: u64, anns: &[&Annotation]) -> Raster {
    let mut rng = rng::stream(spec.seed, "scene-pixels", image_id);
    let pixels: Vec<u8> = (0..spec.width as usize * spec.height as usize * 3)
        .map(|_| rng.random_range(0..=80))
        .collect();
    let mut raster = Raster::new(spec.width, spec.height, pixels).expect("dims validated");
    for ann in anns {
        let color = category_color(ann.category_id);
        let [x, y, w, h] = ann.bbox;
        for py in y as u32..(y + h) as u32 {
            for px in x as u32..(x + w) as u32 {
                raster.set_pixel(px, py, color);
            }
        }
    }
    raster
}

/// Scenes plus rendered rasters (solid category-colored rectangles on a dark
/// noise background), aligned with `Dataset::images`.
pub fn generate_scene_set(spec: &SceneSpec) -> Result<(Dataset, Vec<Raster>)> {
    let ds = generate_scene_boxes(spec)?;
    let by_image = ds.annotations_by_image();
    let rasters: Vec<Raster> = ds
        .images
        .par_iter()
        .map(|im| render_scene(spec, im.id, &by_image[&im.id]))
        .collect();
    Ok((ds, rasters))
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0u64;
    let mut p = 1.0f64;
    loop {
        p *= rng.random_range(0.0..1.0);
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BBox, sigma: f64, width: f64, height: f64) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let mut draw = || sigma * rng.sample::<f64, _>(StandardNormal);
    let (mut x1, mut x2) = (b.x1 + draw(), b.x2 + draw());
    let (mut y1, mut y2) = (b.y1 + draw(), b.y2 + draw());
    if x2 < x1 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y2 < y1 {
        std::mem::swap(&mut y1, &mut y2);
    }
    let x1 = x1.clamp(0.0, width - 0.5);
    let y1 = y1.clamp(0.0, height - 0.5);
    BBox::new(
        x1,
        y1,
        x2.clamp(x1 + 0.5, width),
        y2.clamp(y1 + 0.5, height),
    )
}

/// Simulated proposal source and detector over the full (pre-split) truth.
///
/// Per surviving true object: one proposal at the jittered box with
/// objectness `clamp(N(fg_mean, sigma))`, and one class-scored detection with
/// the true category. Spurious proposals (Poisson count per image) are placed
/// uniformly with objectness `clamp(N(bg_mean, sigma))` and produce no
/// detections.
pub fn simulate_detector(
    full_gt: &Dataset,
    noise: &DetectorNoise,
) -> Result<(ProposalMap, DetectionMap)> {
    noise.validate()?;
    let by_image = full_gt.annotations_by_image();
    let per_image: Vec<(u64, f64, f64, Vec<&Annotation>)> = full_gt
        .images
        .iter()
        .map(|im| {
            (
                im.id,
                f64::from(im.width),
                f64::from(im.height),
                by_image[&im.id].clone(),
            )
        })
        .collect();

    let results: Vec<(u64, Vec<ScoredProposal>, Vec<ScoredBox>)> = per_image
        .into_par_iter()
        .map(|(image_id, width, height, anns)| {
            let mut rng = rng::stream(noise.seed, "detector", image_id);
            let mut proposals = Vec::new();
            let mut detections = Vec::new();
            for ann in anns {
                if noise.dropout_rate > 0.0 && rng.random_bool(noise.dropout_rate) {
                    continue;
                }
                let bbox = jitter_box(
                    &mut rng,
                    &ann.corners(),
                    noise.localization_sigma,
                    width,
                    height,
                );
                let objectness = if noise.objectness_sigma == 0.0 {
                    noise.fg_objectness_mean
                } else {
                    clamp01(
                        noise.fg_objectness_mean
                            + noise.objectness_sigma * rng.sample::<f64, _>(StandardNormal),
                    )
                };
                proposals.push(ScoredProposal::new(bbox, objectness));
                detections.push(ScoredBox::new(bbox, objectness, Some(ann.category_id)));
            }
            for _ in 0..poisson(&mut rng, noise.false_positive_rate) {
                let w = rng.random_range(2.0..=(width / 2.0).max(2.0));
                let h = rng.random_range(2.0..=(height / 2.0).max(2.0));
                let x = rng.random_range(0.0..=(width - w).max(0.0));
                let y = rng.random_range(0.0..=(height - h).max(0.0));
                let objectness = if noise.objectness_sigma == 0.0 {
                    noise.bg_objectness_mean
                } else {
                    clamp01(
                        noise.bg_objectness_mean
                            + noise.objectness_sigma * rng.sample::<f64, _>(StandardNormal),
                    )
                };
                proposals.push(ScoredProposal::new(BBox::from_xywh(x, y, w, h), objectness));
            }
            (image_id, proposals, detections)
        })
        .collect();

    let mut proposals = BTreeMap::new();
    let mut detections = BTreeMap::new();
    for (image_id, p, d) in results {
        proposals.insert(image_id, p);
        detections.insert(image_id, d);
    }
    Ok((proposals, detections))
}

/// Everything one experiment needs, built once and reusable across threshold
/// settings.
#[derive(Clone, Debug)]
pub struct SimInstance {
    pub scene: SceneSpec,
    pub noise: DetectorNoise,
    pub full: Dataset,
    pub sparse: Dataset,
    pub manifest: RemovalManifest,
    pub proposals: ProposalMap,
    pub detections: DetectionMap,
}

pub fn build_sim_instance(
    scene: &SceneSpec,
    split: &SplitSpec,
    noise: &DetectorNoise,
) -> Result<SimInstance> {
    let full = generate_scene_boxes(scene)?;
    let (sparse, manifest) = generate_split(&full, split)?;
    let (proposals, detections) = simulate_detector(&full, noise)?;
    Ok(SimInstance {
        scene: *scene,
        noise: *noise,
        full,
        sparse,
        manifest,
        proposals,
        detections,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRecovery {
    pub removed: u64,
    pub recovered: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub split: SplitSpec,
    pub noise: DetectorNoise,
    pub thresholds: Thresholds,
    pub merge: MergeConfig,
}

/// Outcome of one mining experiment. Ratios with a zero denominator report
/// 1.0 by convention; the corresponding `*_count` field is the explicit flag
/// for that case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Fraction of mined boxes overlapping a removed annotation.
    pub mined_precision: f64,
    /// Fraction of removed annotations covered by a mined box.
    pub mined_recall: f64,
    /// Fraction of merged-GT pseudo entries overlapping a removed annotation.
    pub pseudo_precision: f64,
    /// Proposals selected as unlabeled, before class-agnostic NMS.
    pub selected_count: u64,
    pub mined_count: u64,
    pub mined_matched: u64,
    pub removed_count: u64,
    pub removed_recovered: u64,
    pub pseudo_count: u64,
    pub pseudo_matched: u64,
    pub per_category: BTreeMap<u64, CategoryRecovery>,
    pub config: ExperimentConfig,
}

impl fmt::Display for RecoveryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mined: {} boxes ({} pre-NMS), {} matched -> precision {:.4}",
            self.mined_count, self.selected_count, self.mined_matched, self.mined_precision
        )?;
        writeln!(
            f,
            "removed: {} annotations, {} recovered -> recall {:.4}",
            self.removed_count, self.removed_recovered, self.mined_recall
        )?;
        writeln!(
            f,
            "pseudo labels: {} entries, {} matched -> precision {:.4}",
            self.pseudo_count, self.pseudo_matched, self.pseudo_precision
        )?;
        for (cat, c) in &self.per_category {
            writeln!(f, "  class {cat}: {}/{} recovered", c.recovered, c.removed)?;
        }
        Ok(())
    }
}

impl RecoveryReport {
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

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

struct ImageOutcome {
    selected: u64,
    mined: u64,
    mined_matched: u64,
    removed_recovered: Vec<(u64, bool)>, // (category, recovered)
    pseudo: u64,
    pseudo_matched: u64,
}

fn covers_any(b: &BBox, targets: &[BBox]) -> bool {
    targets.iter().any(|t| {
        let inter = b.intersection_area(t);
        inter / (b.area() + t.area() - inter) >= RECOVERY_IOU
    })
}

/// Partition, dedupe, merge, and score one built instance. With
/// `ppm_active = false` (warmup not yet elapsed) nothing is mined and the
/// report only carries the pseudo-label scores.
pub fn evaluate_instance(
    inst: &SimInstance,
    t: &Thresholds,
    merge: &MergeConfig,
    ppm_active: bool,
) -> Result<RecoveryReport> {
    t.validate()?;
    merge.validate()?;

    let kept_by_image = inst.sparse.annotations_by_image();
    let mut removed_by_image: BTreeMap<u64, Vec<&Annotation>> = inst
        .full
        .images
        .iter()
        .map(|im| (im.id, Vec::new()))
        .collect();
    for a in &inst.full.annotations {
        if inst.manifest.removed_annotation_ids.contains(&a.id) {
            removed_by_image.entry(a.image_id).or_default().push(a);
        }
    }

    let work: Vec<(u64, &Vec<ScoredProposal>)> =
        inst.proposals.iter().map(|(k, v)| (*k, v)).collect();
    let outcomes: Vec<ImageOutcome> = work
        .into_par_iter()
        .map(|(image_id, props)| -> Result<ImageOutcome> {
            let kept: Vec<Annotation> = kept_by_image
                .get(&image_id)
                .map(|v| v.iter().map(|&a| a.clone()).collect())
                .unwrap_or_default();
            let removed_boxes: Vec<BBox> = removed_by_image
                .get(&image_id)
                .map(|v| v.iter().map(|a| a.corners()).collect())
                .unwrap_or_default();

            let partition = assign_proposals(props, &kept, t, ppm_active)?;
            let mined = dedupe_unlabeled(props, &partition, merge.nms_iou)?;
            let mined_matched = mined
                .iter()
                .filter(|b| covers_any(b, &removed_boxes))
                .count();

            let removed_recovered = removed_by_image
                .get(&image_id)
                .map(|v| {
                    v.iter()
                        .map(|a| (a.category_id, covers_any(&a.corners(), &mined)))
                        .collect()
                })
                .unwrap_or_default();

            let dets = inst.detections.get(&image_id).cloned().unwrap_or_default();
            let merged = merge_ground_truth(&dets, &kept, merge)?;
            let pseudo: Vec<BBox> = merged.pseudo_entries().map(|e| e.bbox).collect();
            let pseudo_matched = pseudo
                .iter()
                .filter(|b| covers_any(b, &removed_boxes))
                .count();

            Ok(ImageOutcome {
                selected: partition.unlabeled.len() as u64,
                mined: mined.len() as u64,
                mined_matched: mined_matched as u64,
                removed_recovered,
                pseudo: pseudo.len() as u64,
                pseudo_matched: pseudo_matched as u64,
            })
        })
        .collect::<Result<_>>()?;

    let mut report = RecoveryReport {
        mined_precision: 1.0,
        mined_recall: 1.0,
        pseudo_precision: 1.0,
        selected_count: 0,
        mined_count: 0,
        mined_matched: 0,
        removed_count: 0,
        removed_recovered: 0,
        pseudo_count: 0,
        pseudo_matched: 0,
        per_category: BTreeMap::new(),
        config: ExperimentConfig {
            scene: inst.scene,
            split: inst.manifest.spec,
            noise: inst.noise,
            thresholds: *t,
            merge: *merge,
        },
    };
    for o in outcomes {
        report.selected_count += o.selected;
        report.mined_count += o.mined;
        report.mined_matched += o.mined_matched;
        report.pseudo_count += o.pseudo;
        report.pseudo_matched += o.pseudo_matched;
        for (cat, recovered) in o.removed_recovered {
            report.removed_count += 1;
            let entry = report.per_category.entry(cat).or_default();
            entry.removed += 1;
            if recovered {
                report.removed_recovered += 1;
                entry.recovered += 1;
            }
        }
    }
    report.mined_precision = ratio(report.mined_matched, report.mined_count);
    report.mined_recall = ratio(report.removed_recovered, report.removed_count);
    report.pseudo_precision = ratio(report.pseudo_matched, report.pseudo_count);
    Ok(report)
}

/// Full pipeline: generate scenes, sparsify, simulate, partition, mine, and
/// score recovery against the removal manifest.
pub fn run_ppm_experiment(
    scene: &SceneSpec,
    split: &SplitSpec,
    noise: &DetectorNoise,
    t: &Thresholds,
    merge: &MergeConfig,
) -> Result<RecoveryReport> {
    let inst = build_sim_instance(scene, split, noise)?;
    evaluate_instance(&inst, t, merge, true)
}

/// One experiment per `tau_ppm` value over a shared instance.
pub fn run_tau_ppm_sweep(
    scene: &SceneSpec,
    split: &SplitSpec,
    noise: &DetectorNoise,
    base: &Thresholds,
    merge: &MergeConfig,
    grid: &[f64],
) -> Result<Vec<(f64, RecoveryReport)>> {
    let inst = build_sim_instance(scene, split, noise)?;
    grid.iter()
        .map(|&tau_ppm| {
            let t = Thresholds { tau_ppm, ..*base };
            Ok((tau_ppm, evaluate_instance(&inst, &t, merge, true)?))
        })
        .collect()
}

fn draw_rect_outline(raster: &mut Raster, b: &BBox, color: [u8; 3]) {
    let w = raster.width() as i64;
    let h = raster.height() as i64;
    let x1 = (b.x1.round() as i64).clamp(0, w - 1);
    let y1 = (b.y1.round() as i64).clamp(0, h - 1);
    let x2 = ((b.x2.round() as i64) - 1).clamp(0, w - 1);
    let y2 = ((b.y2.round() as i64) - 1).clamp(0, h - 1);
    for x in x1..=x2 {
        raster.set_pixel(x as u32, y1 as u32, color);
        raster.set_pixel(x as u32, y2 as u32, color);
    }
    for y in y1..=y2 {
        raster.set_pixel(x1 as u32, y as u32, color);
        raster.set_pixel(x2 as u32, y as u32, color);
    }
}

pub const GT_COLOR: [u8; 3] = [255, 0, 0];
pub const MINED_COLOR: [u8; 3] = [255, 255, 255];

/// Scene rasters with kept ground truth outlined in red and mined boxes in
/// white, keyed by image id.
pub fn render_overlays(
    scene: &SceneSpec,
    inst: &SimInstance,
    t: &Thresholds,
    merge: &MergeConfig,
) -> Result<Vec<(u64, Raster)>> {
    let by_image = inst.full.annotations_by_image();
    let kept_by_image = inst.sparse.annotations_by_image();
    inst.full
        .images
        .iter()
        .map(|im| {
            let mut raster = render_scene(scene, im.id, &by_image[&im.id]);
            let kept: Vec<Annotation> = kept_by_image
                .get(&im.id)
                .map(|v| v.iter().map(|&a| a.clone()).collect())
                .unwrap_or_default();
            let props = inst.proposals.get(&im.id).cloned().unwrap_or_default();
            let partition = assign_proposals(&props, &kept, t, true)?;
            for bbox in dedupe_unlabeled(&props, &partition, merge.nms_iou)? {
                draw_rect_outline(&mut raster, &bbox, MINED_COLOR);
            }
            for a in &kept {
                draw_rect_outline(&mut raster, &a.corners(), GT_COLOR);
            }
            Ok((im.id, raster))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splits::SplitKind;

    fn tight_scene(images: u32, seed: u64) -> SceneSpec {
        SceneSpec {
            image_count: images,
            width: 128,
            height: 128,
            categories: 3,
            objects_per_image: [2, 4],
            object_size: [12, 24],
            max_overlap: 0.1,
            seed,
        }
    }

    #[test]
    fn zero_images_yield_empty_dataset() {
        let spec = SceneSpec {
            image_count: 0,
            ..tight_scene(0, 0)
        };
        let ds = generate_scene_boxes(&spec).unwrap();
        assert!(ds.images.is_empty());
        assert!(ds.annotations.is_empty());
    }

    #[test]
    fn annotation_count_within_configured_range() {
        let spec = SceneSpec {
            objects_per_image: [1, 3],
            ..tight_scene(10, 1)
        };
        let ds = generate_scene_boxes(&spec).unwrap();
        assert!((10..=30).contains(&ds.annotations.len()));
        assert!(crate::dataset::validate_dataset(&ds).is_empty());
    }

    #[test]
    fn scenes_are_deterministic_per_seed() {
        let spec = tight_scene(5, 9);
        assert_eq!(
            generate_scene_boxes(&spec).unwrap(),
            generate_scene_boxes(&spec).unwrap()
        );
        let other = SceneSpec { seed: 10, ..spec };
        assert_ne!(
            generate_scene_boxes(&spec).unwrap(),
            generate_scene_boxes(&other).unwrap()
        );
    }

    #[test]
    fn placed_objects_respect_overlap_cap() {
        let spec = tight_scene(8, 3);
        let ds = generate_scene_boxes(&spec).unwrap();
        for anns in ds.annotations_by_image().values() {
            for (i, a) in anns.iter().enumerate() {
                for b in &anns[i + 1..] {
                    let v = geometry::iou(&a.corners(), &b.corners()).unwrap();
                    assert!(v <= spec.max_overlap, "IoU {v}");
                }
            }
        }
    }

    #[test]
    fn infeasible_placement_names_the_image() {
        let spec = SceneSpec {
            image_count: 1,
            width: 32,
            height: 32,
            categories: 1,
            objects_per_image: [30, 30],
            object_size: [20, 20],
            max_overlap: 0.0,
            seed: 0,
        };
        match generate_scene_boxes(&spec) {
            Err(Error::Domain(msg)) => assert!(msg.contains("image index 0")),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn rendered_scenes_align_with_dataset() {
        let (ds, rasters) = generate_scene_set(&tight_scene(3, 5)).unwrap();
        assert_eq!(ds.images.len(), rasters.len());
        // Object interiors carry their category color.
        for (im, raster) in ds.images.iter().zip(&rasters) {
            for ann in ds.annotations.iter().filter(|a| a.image_id == im.id) {
                let [x, y, w, h] = ann.bbox;
                let cx = (x + w / 2.0) as u32;
                let cy = (y + h / 2.0) as u32;
                assert_eq!(raster.pixel(cx, cy), category_color(ann.category_id));
            }
        }
    }

    #[test]
    fn noiseless_detector_reproduces_gt_exactly() {
        let ds = generate_scene_boxes(&tight_scene(4, 7)).unwrap();
        let noise = DetectorNoise::noiseless(0.95, 0.05, 1);
        let (proposals, detections) = simulate_detector(&ds, &noise).unwrap();
        let by_image = ds.annotations_by_image();
        for (image_id, anns) in by_image {
            let props = &proposals[&image_id];
            assert_eq!(props.len(), anns.len());
            for (p, a) in props.iter().zip(&anns) {
                assert_eq!(p.bbox, a.corners());
                assert_eq!(p.objectness, 0.95);
            }
            for (d, a) in detections[&image_id].iter().zip(&anns) {
                assert_eq!(d.category_id, Some(a.category_id));
                assert_eq!(d.score, 0.95);
            }
        }
    }

    #[test]
    fn full_dropout_leaves_only_spurious_proposals() {
        let ds = generate_scene_boxes(&tight_scene(4, 8)).unwrap();
        let noise = DetectorNoise {
            dropout_rate: 1.0,
            false_positive_rate: 2.0,
            ..DetectorNoise::default()
        };
        let (proposals, detections) = simulate_detector(&ds, &noise).unwrap();
        assert!(detections.values().all(Vec::is_empty));
        let total: usize = proposals.values().map(Vec::len).sum();
        assert!(total > 0);
    }

    #[test]
    fn spurious_count_tracks_poisson_rate() {
        let ds = generate_scene_boxes(&SceneSpec {
            image_count: 100,
            ..tight_scene(100, 11)
        })
        .unwrap();
        let noise = DetectorNoise {
            dropout_rate: 1.0,
            false_positive_rate: 2.0,
            seed: 3,
            ..DetectorNoise::default()
        };
        let (proposals, _) = simulate_detector(&ds, &noise).unwrap();
        let total: usize = proposals.values().map(Vec::len).sum();
        // Expectation 200, allow 3 sigma.
        let bound = 3.0 * (200.0f64).sqrt();
        assert!((total as f64 - 200.0).abs() <= bound, "total {total}");
    }

    #[test]
    fn jittered_boxes_stay_inside_image() {
        let ds = generate_scene_boxes(&tight_scene(4, 13)).unwrap();
        let noise = DetectorNoise {
            localization_sigma: 10.0,
            ..DetectorNoise::default()
        };
        let (proposals, _) = simulate_detector(&ds, &noise).unwrap();
        for props in proposals.values() {
            for p in props {
                assert!(p.bbox.is_valid());
                assert!(p.bbox.x1 >= 0.0 && p.bbox.y1 >= 0.0);
                assert!(p.bbox.x2 <= 128.0 && p.bbox.y2 <= 128.0);
            }
        }
    }

    #[test]
    fn noiseless_experiment_recovers_everything() {
        let scene = tight_scene(20, 17);
        let split = SplitSpec::new(SplitKind::Split3, 0.5, None, 5);
        let noise = DetectorNoise::noiseless(0.95, 0.05, 2);
        let report = run_ppm_experiment(
            &scene,
            &split,
            &noise,
            &Thresholds::default(),
            &MergeConfig::default(),
        )
        .unwrap();
        assert!(report.removed_count > 0);
        assert_eq!(report.mined_precision, 1.0);
        assert_eq!(report.mined_recall, 1.0);
    }

    #[test]
    fn zero_removal_split_reports_unit_recall_with_zero_count() {
        let scene = tight_scene(5, 19);
        let split = SplitSpec::new(SplitKind::Split1, 0.0, None, 5);
        let noise = DetectorNoise::noiseless(0.95, 0.05, 2);
        let report = run_ppm_experiment(
            &scene,
            &split,
            &noise,
            &Thresholds::default(),
            &MergeConfig::default(),
        )
        .unwrap();
        assert_eq!(report.removed_count, 0);
        assert_eq!(report.mined_recall, 1.0);
        assert_eq!(report.mined_count, 0);
    }

    #[test]
    fn sweep_counts_shrink_as_tau_ppm_rises() {
        let scene = tight_scene(10, 23);
        let split = SplitSpec::new(SplitKind::Split3, 0.5, None, 7);
        let noise = DetectorNoise {
            localization_sigma: 1.0,
            fg_objectness_mean: 0.85,
            bg_objectness_mean: 0.3,
            objectness_sigma: 0.2,
            false_positive_rate: 3.0,
            dropout_rate: 0.1,
            seed: 29,
        };
        let sweep = run_tau_ppm_sweep(
            &scene,
            &split,
            &noise,
            &Thresholds::default(),
            &MergeConfig::default(),
            &[0.6, 0.7, 0.8, 0.9, 0.95],
        )
        .unwrap();
        assert_eq!(sweep.len(), 5);
        for pair in sweep.windows(2) {
            assert!(pair[1].1.selected_count <= pair[0].1.selected_count);
        }
    }

    #[test]
    fn recall_degrades_with_dropout() {
        let scene = tight_scene(15, 31);
        let split = SplitSpec::new(SplitKind::Split3, 0.5, None, 7);
        let mut prev = 1.1f64;
        for dropout in [0.0, 0.25, 0.5, 1.0] {
            let noise = DetectorNoise {
                dropout_rate: dropout,
                ..DetectorNoise::noiseless(0.95, 0.05, 37)
            };
            let report = run_ppm_experiment(
                &scene,
                &split,
                &noise,
                &Thresholds::default(),
                &MergeConfig::default(),
            )
            .unwrap();
            assert!(report.mined_recall <= prev, "dropout {dropout}");
            prev = report.mined_recall;
        }
    }

    #[test]
    fn pipeline_is_independent_of_worker_count() {
        let scene = tight_scene(12, 43);
        let split = SplitSpec::new(SplitKind::Split3, 0.5, None, 7);
        let noise = DetectorNoise::default();
        let mut reports = Vec::new();
        for workers in [1usize, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap();
            let report = pool
                .install(|| {
                    run_ppm_experiment(
                        &scene,
                        &split,
                        &noise,
                        &Thresholds::default(),
                        &MergeConfig::default(),
                    )
                })
                .unwrap();
            reports.push(report);
        }
        assert_eq!(reports[0], reports[1]);
    }

    #[test]
    fn overlays_render_for_each_image() {
        let scene = tight_scene(3, 41);
        let split = SplitSpec::new(SplitKind::Split3, 0.5, None, 7);
        let noise = DetectorNoise::noiseless(0.95, 0.05, 2);
        let inst = build_sim_instance(&scene, &split, &noise).unwrap();
        let overlays = render_overlays(
            &scene,
            &inst,
            &Thresholds::default(),
            &MergeConfig::default(),
        )
        .unwrap();
        assert_eq!(overlays.len(), 3);
        // Kept gt outlines are drawn in red.
        let kept = inst.sparse.annotations_by_image();
        let (image_id, raster) = &overlays[0];
        let ann = kept[image_id].first().expect("split3 keeps one");
        let [x, y, ..] = ann.bbox;
        assert_eq!(raster.pixel(x as u32, y as u32), GT_COLOR);
    }
}
