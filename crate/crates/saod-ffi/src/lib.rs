//! C ABI for the saod toolkit.
//!
//! Conventions:
//!
//! * Datasets travel as opaque `SaodDataset*` handles; free them with
//!   [`saod_dataset_free`].
//! * Structured inputs and outputs (specs, manifests, reports) are JSON
//!   strings in the library's documented schemas. Returned strings are
//!   heap-allocated; release them with [`saod_string_free`].
//! * Boxes cross the boundary as flat `[x1, y1, x2, y2]` quadruples.
//! * Every function returns a [`SaodStatus`]; on failure
//!   [`saod_last_error_message`] holds a thread-local description valid
//!   until the next call from the same thread.
//!
//! Pointer arguments must be valid for the documented lengths; beyond that
//! the usual C contract applies.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use saod::assign::{assign_proposals, ScoredProposal, Thresholds};
use saod::augment::{augment_image, replay_augment, AppliedParams, AugmentSpec, Raster};
use saod::dataset::{
    dataset_to_json, load_dataset, parse_dataset, save_dataset, validate_dataset, Annotation,
    Dataset,
};
use saod::error::Error;
use saod::eval::{coco_iou_thresholds, evaluate_ap, parse_detections};
use saod::geometry::{iou, nms, BBox, NmsMode, ScoredBox};
use saod::loss::{
    bce_loss, ce_loss, smooth_l1, ssl_consistency, total_loss, FeaturePair, LossWeights,
};
use saod::merge::{merge_ground_truth, MergeConfig, Provenance};
use saod::sim::{run_ppm_experiment, ExperimentConfig};
use saod::splits::{generate_split, make_ssl_saod, split_stats, SplitSpec};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaodStatus {
    Ok = 0,
    /// Argument or data outside an operation's domain (including integrity
    /// and validation failures).
    Domain = 1,
    /// Filesystem failure.
    Io = 2,
    /// Malformed JSON or raster text.
    Parse = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    /// An internal invariant failed; the library caught a panic.
    Panic = 6,
}

/// Opaque dataset handle.
pub struct SaodDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error_message(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(e: &Error) -> SaodStatus {
    set_error_message(e.to_string());
    match e {
        Error::Io { .. } => SaodStatus::Io,
        Error::Parse { .. } => SaodStatus::Parse,
        _ => SaodStatus::Domain,
    }
}

fn fail_with(status: SaodStatus, msg: &str) -> SaodStatus {
    set_error_message(msg.to_string());
    status
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Run `f` behind a panic guard; panics become `SaodStatus::Panic`.
fn guarded(f: impl FnOnce() -> SaodStatus) -> SaodStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail_with(SaodStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SaodStatus> {
    if p.is_null() {
        return Err(fail_with(
            SaodStatus::NullPointer,
            &format!("{name} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail_with(SaodStatus::InvalidUtf8, &format!("{name} is not UTF-8")))
}

unsafe fn dataset_arg<'a>(p: *const SaodDataset, name: &str) -> Result<&'a Dataset, SaodStatus> {
    if p.is_null() {
        return Err(fail_with(
            SaodStatus::NullPointer,
            &format!("{name} is null"),
        ));
    }
    Ok(&(*p).0)
}

fn boxes_from_flat(data: *const f64, n: usize) -> Vec<BBox> {
    if n == 0 {
        return Vec::new();
    }
    let flat = unsafe { std::slice::from_raw_parts(data, n * 4) };
    flat.chunks_exact(4)
        .map(|q| BBox::new(q[0], q[1], q[2], q[3]))
        .collect()
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn saod_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// call from the same thread; do not free.
#[no_mangle]
pub extern "C" fn saod_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn saod_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn saod_dataset_load(
    path: *const c_char,
    out: *mut *mut SaodDataset,
) -> SaodStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(SaodStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_dataset(Path::new(path)) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(SaodDataset(ds)));
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parse annotation JSON held in memory.
#[no_mangle]
pub unsafe extern "C" fn saod_dataset_parse(
    json: *const c_char,
    out: *mut *mut SaodDataset,
) -> SaodStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(SaodStatus::NullPointer, "out is null");
        }
        let json = match str_arg(json, "json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match parse_dataset(json) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(SaodDataset(ds)));
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn saod_dataset_save(
    ds: *const SaodDataset,
    path: *const c_char,
) -> SaodStatus {
    guarded(|| {
        let ds = match dataset_arg(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match save_dataset(ds, Path::new(path)) {
            Ok(()) => SaodStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Serialize a dataset to its annotation-file JSON.
#[no_mangle]
pub unsafe extern "C" fn saod_dataset_to_json(
    ds: *const SaodDataset,
    out_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        if out_json.is_null() {
            return fail_with(SaodStatus::NullPointer, "out_json is null");
        }
        let ds = match dataset_arg(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        *out_json = to_c_string(dataset_to_json(ds));
        SaodStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn saod_dataset_free(ds: *mut SaodDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

#[no_mangle]
pub unsafe extern "C" fn saod_dataset_counts(
    ds: *const SaodDataset,
    images: *mut usize,
    annotations: *mut usize,
    categories: *mut usize,
) -> SaodStatus {
    guarded(|| {
        let ds = match dataset_arg(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        if !images.is_null() {
            *images = ds.images.len();
        }
        if !annotations.is_null() {
            *annotations = ds.annotations.len();
        }
        if !categories.is_null() {
            *categories = ds.categories.len();
        }
        SaodStatus::Ok
    })
}

/// Count invariant violations; `report_json` (nullable) receives the full
/// report.
#[no_mangle]
pub unsafe extern "C" fn saod_dataset_validate(
    ds: *const SaodDataset,
    violation_count: *mut usize,
    report_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        let ds = match dataset_arg(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let report = validate_dataset(ds);
        if !violation_count.is_null() {
            *violation_count = report.violations.len();
        }
        if !report_json.is_null() {
            *report_json = to_c_string(
                serde_json::to_string(&report).expect("report serialization cannot fail"),
            );
        }
        SaodStatus::Ok
    })
}

/// Apply a split spec (JSON, e.g. `{"kind":"split1","p":0.5,"seed":7}`).
/// On success `out_ds` receives the sparsified dataset and `manifest_json`
/// (nullable) the removal manifest.
#[no_mangle]
pub unsafe extern "C" fn saod_generate_split(
    ds: *const SaodDataset,
    spec_json: *const c_char,
    out_ds: *mut *mut SaodDataset,
    manifest_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        if out_ds.is_null() {
            return fail_with(SaodStatus::NullPointer, "out_ds is null");
        }
        let ds = match dataset_arg(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let spec_json = match str_arg(spec_json, "spec_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let spec: SplitSpec = match serde_json::from_str(spec_json) {
            Ok(s) => s,
            Err(e) => return fail_with(SaodStatus::Parse, &format!("spec_json: {e}")),
        };
        match generate_split(ds, &spec) {
            Ok((sparse, manifest)) => {
                *out_ds = Box::into_raw(Box::new(SaodDataset(sparse)));
                if !manifest_json.is_null() {
                    *manifest_json = to_c_string(manifest.to_json());
                }
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn saod_make_ssl_saod(
    labeled: *const SaodDataset,
    unlabeled: *const SaodDataset,
    out_ds: *mut *mut SaodDataset,
) -> SaodStatus {
    guarded(|| {
        if out_ds.is_null() {
            return fail_with(SaodStatus::NullPointer, "out_ds is null");
        }
        let labeled = match dataset_arg(labeled, "labeled") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let unlabeled = match dataset_arg(unlabeled, "unlabeled") {
            Ok(d) => d,
            Err(status) => return status,
        };
        match make_ssl_saod(labeled, unlabeled) {
            Ok(ds) => {
                *out_ds = Box::into_raw(Box::new(SaodDataset(ds)));
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Sparsity report (JSON) of `sparse` against `original`.
#[no_mangle]
pub unsafe extern "C" fn saod_split_stats(
    original: *const SaodDataset,
    sparse: *const SaodDataset,
    report_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        if report_json.is_null() {
            return fail_with(SaodStatus::NullPointer, "report_json is null");
        }
        let original = match dataset_arg(original, "original") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let sparse = match dataset_arg(sparse, "sparse") {
            Ok(d) => d,
            Err(status) => return status,
        };
        match split_stats(original, sparse) {
            Ok(report) => {
                *report_json = to_c_string(
                    serde_json::to_string(&report).expect("report serialization cannot fail"),
                );
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Evaluate a detection results document (JSON array) against `gt`.
/// `thresholds` may be null with `n_thresholds = 0` for the standard
/// 0.50:0.05:0.95 grid.
#[no_mangle]
pub unsafe extern "C" fn saod_evaluate_ap(
    gt: *const SaodDataset,
    results_json: *const c_char,
    thresholds: *const f64,
    n_thresholds: usize,
    report_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        if report_json.is_null() {
            return fail_with(SaodStatus::NullPointer, "report_json is null");
        }
        let gt = match dataset_arg(gt, "gt") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let results_json = match str_arg(results_json, "results_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let dets = match parse_detections(results_json) {
            Ok(d) => d,
            Err(e) => return fail(&e),
        };
        let thresholds = if n_thresholds == 0 {
            coco_iou_thresholds()
        } else if thresholds.is_null() {
            return fail_with(SaodStatus::NullPointer, "thresholds is null");
        } else {
            std::slice::from_raw_parts(thresholds, n_thresholds).to_vec()
        };
        match evaluate_ap(gt, &dets, &thresholds) {
            Ok(report) => {
                *report_json = to_c_string(report.to_json());
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// IoU of two corner-form boxes.
#[no_mangle]
pub unsafe extern "C" fn saod_iou(
    ax1: f64,
    ay1: f64,
    ax2: f64,
    ay2: f64,
    bx1: f64,
    by1: f64,
    bx2: f64,
    by2: f64,
    out: *mut f64,
) -> SaodStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(SaodStatus::NullPointer, "out is null");
        }
        match iou(
            &BBox::new(ax1, ay1, ax2, ay2),
            &BBox::new(bx1, by1, bx2, by2),
        ) {
            Ok(v) => {
                *out = v;
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Greedy NMS over `n` boxes (`boxes` = 4n corner coordinates).
/// `categories` is required when `class_aware` is nonzero and may be null
/// otherwise. `keep` must hold `n` entries; `n_kept` receives the count.
#[no_mangle]
pub unsafe extern "C" fn saod_nms(
    boxes: *const f64,
    scores: *const f64,
    categories: *const u64,
    n: usize,
    iou_thresh: f64,
    class_aware: i32,
    keep: *mut usize,
    n_kept: *mut usize,
) -> SaodStatus {
    guarded(|| {
        if n_kept.is_null() || (n > 0 && (boxes.is_null() || scores.is_null() || keep.is_null())) {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let bb = boxes_from_flat(boxes, n);
        let scores = if n == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(scores, n)
        };
        let cats: Option<&[u64]> = if categories.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(categories, n))
        };
        let items: Vec<ScoredBox> = bb
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| ScoredBox::new(bbox, scores[i], cats.map(|c| c[i])))
            .collect();
        let mode = if class_aware != 0 {
            NmsMode::ClassAware
        } else {
            NmsMode::ClassAgnostic
        };
        match nms(&items, iou_thresh, mode) {
            Ok(kept) => {
                *n_kept = kept.len();
                for (slot, idx) in std::slice::from_raw_parts_mut(keep, n)
                    .iter_mut()
                    .zip(&kept)
                {
                    *slot = *idx;
                }
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Per-proposal label written to `labels`: 0 background, 1 labeled,
/// 2 unlabeled. `matched_ids[i]` (nullable) receives the matched annotation
/// id for labeled proposals (0 otherwise). `gt_ids` may be null (ids
/// 1..=n_gt are assumed).
#[no_mangle]
pub unsafe extern "C" fn saod_assign_proposals(
    prop_boxes: *const f64,
    objectness: *const f64,
    n_props: usize,
    gt_boxes: *const f64,
    gt_ids: *const u64,
    n_gt: usize,
    tau_fg: f64,
    tau_bg: f64,
    tau_obj: f64,
    tau_ppm: f64,
    ppm_active: i32,
    labels: *mut i32,
    matched_ids: *mut u64,
) -> SaodStatus {
    guarded(|| {
        if (n_props > 0 && (prop_boxes.is_null() || objectness.is_null() || labels.is_null()))
            || (n_gt > 0 && gt_boxes.is_null())
        {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let thresholds = match Thresholds::new(tau_fg, tau_bg, tau_obj, tau_ppm) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let obj = if n_props == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(objectness, n_props)
        };
        let props: Vec<ScoredProposal> = boxes_from_flat(prop_boxes, n_props)
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| ScoredProposal::new(bbox, obj[i]))
            .collect();
        let ids: Vec<u64> = if gt_ids.is_null() {
            (1..=n_gt as u64).collect()
        } else {
            std::slice::from_raw_parts(gt_ids, n_gt).to_vec()
        };
        let gt: Vec<Annotation> = boxes_from_flat(gt_boxes, n_gt)
            .into_iter()
            .zip(&ids)
            .map(|(b, &id)| Annotation::new(id, 1, 1, b.to_xywh()))
            .collect();
        match assign_proposals(&props, &gt, &thresholds, ppm_active != 0) {
            Ok(part) => {
                if n_props > 0 {
                    let labels = std::slice::from_raw_parts_mut(labels, n_props);
                    labels.fill(0);
                    if !matched_ids.is_null() {
                        std::slice::from_raw_parts_mut(matched_ids, n_props).fill(0);
                    }
                    for &(i, ann) in &part.labeled {
                        labels[i] = 1;
                        if !matched_ids.is_null() {
                            *matched_ids.add(i) = ann;
                        }
                    }
                    for &i in &part.unlabeled {
                        labels[i] = 2;
                    }
                }
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Merge confident detections with ground truth. Output buffers must hold
/// `n_dets + n_gt` entries; `out_boxes` holds 4 values per entry.
/// `out_provenance`: 0 ground truth, 1 pseudo.
#[no_mangle]
pub unsafe extern "C" fn saod_merge_ground_truth(
    det_boxes: *const f64,
    det_scores: *const f64,
    det_categories: *const u64,
    n_dets: usize,
    gt_boxes: *const f64,
    gt_categories: *const u64,
    n_gt: usize,
    tau_m: f64,
    nms_iou: f64,
    out_boxes: *mut f64,
    out_categories: *mut u64,
    out_scores: *mut f64,
    out_provenance: *mut i32,
    n_out: *mut usize,
) -> SaodStatus {
    guarded(|| {
        if n_out.is_null()
            || (n_dets > 0
                && (det_boxes.is_null() || det_scores.is_null() || det_categories.is_null()))
            || (n_gt > 0 && (gt_boxes.is_null() || gt_categories.is_null()))
        {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let cap = n_dets + n_gt;
        if cap > 0
            && (out_boxes.is_null()
                || out_categories.is_null()
                || out_scores.is_null()
                || out_provenance.is_null())
        {
            return fail_with(SaodStatus::NullPointer, "null output buffer");
        }
        let cfg = MergeConfig { tau_m, nms_iou };
        let det_sc = if n_dets == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(det_scores, n_dets)
        };
        let det_cat = if n_dets == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(det_categories, n_dets)
        };
        let dets: Vec<ScoredBox> = boxes_from_flat(det_boxes, n_dets)
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| ScoredBox::new(bbox, det_sc[i], Some(det_cat[i])))
            .collect();
        let gt_cat = if n_gt == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(gt_categories, n_gt)
        };
        let gt: Vec<Annotation> = boxes_from_flat(gt_boxes, n_gt)
            .into_iter()
            .enumerate()
            .map(|(i, b)| Annotation::new(i as u64 + 1, 1, gt_cat[i], b.to_xywh()))
            .collect();
        match merge_ground_truth(&dets, &gt, &cfg) {
            Ok(merged) => {
                *n_out = merged.entries.len();
                for (i, entry) in merged.entries.iter().enumerate() {
                    let qb = std::slice::from_raw_parts_mut(out_boxes.add(i * 4), 4);
                    qb.copy_from_slice(&[
                        entry.bbox.x1,
                        entry.bbox.y1,
                        entry.bbox.x2,
                        entry.bbox.y2,
                    ]);
                    *out_categories.add(i) = entry.category_id;
                    *out_scores.add(i) = entry.score;
                    *out_provenance.add(i) = i32::from(entry.provenance == Provenance::Pseudo);
                }
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

unsafe fn loss_out(
    result: saod::Result<(f64, Vec<f64>)>,
    loss: *mut f64,
    grad: *mut f64,
    n: usize,
) -> SaodStatus {
    match result {
        Ok((value, gradient)) => {
            if !loss.is_null() {
                *loss = value;
            }
            if !grad.is_null() {
                std::slice::from_raw_parts_mut(grad, n).copy_from_slice(&gradient);
            }
            SaodStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Mean binary cross-entropy; `grad` (nullable) receives n values.
#[no_mangle]
pub unsafe extern "C" fn saod_bce_loss(
    pred: *const f64,
    target: *const f64,
    n: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> SaodStatus {
    guarded(|| {
        if pred.is_null() || target.is_null() {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let p = std::slice::from_raw_parts(pred, n);
        let t = std::slice::from_raw_parts(target, n);
        loss_out(bce_loss(p, t), loss, grad, n)
    })
}

/// Softmax cross-entropy over unnormalized scores.
#[no_mangle]
pub unsafe extern "C" fn saod_ce_loss(
    scores: *const f64,
    n: usize,
    target_class: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> SaodStatus {
    guarded(|| {
        if scores.is_null() {
            return fail_with(SaodStatus::NullPointer, "scores is null");
        }
        let s = std::slice::from_raw_parts(scores, n);
        loss_out(ce_loss(s, target_class), loss, grad, n)
    })
}

/// Smooth-L1 with mean reduction.
#[no_mangle]
pub unsafe extern "C" fn saod_smooth_l1(
    pred: *const f64,
    target: *const f64,
    n: usize,
    beta: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> SaodStatus {
    guarded(|| {
        if pred.is_null() || target.is_null() {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let p = std::slice::from_raw_parts(pred, n);
        let t = std::slice::from_raw_parts(target, n);
        loss_out(smooth_l1(p, t, beta), loss, grad, n)
    })
}

/// Squared Euclidean distance between two feature vectors; `grad_a` and
/// `grad_o` (nullable) receive n values each.
#[no_mangle]
pub unsafe extern "C" fn saod_ssl_consistency(
    f_a: *const f64,
    f_o: *const f64,
    n: usize,
    loss: *mut f64,
    grad_a: *mut f64,
    grad_o: *mut f64,
) -> SaodStatus {
    guarded(|| {
        if f_a.is_null() || f_o.is_null() {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let a = std::slice::from_raw_parts(f_a, n).to_vec();
        let o = std::slice::from_raw_parts(f_o, n).to_vec();
        let pair = match FeaturePair::new(a, o) {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        match ssl_consistency(&pair) {
            Ok((value, ga, go)) => {
                if !loss.is_null() {
                    *loss = value;
                }
                if !grad_a.is_null() {
                    std::slice::from_raw_parts_mut(grad_a, n).copy_from_slice(&ga);
                }
                if !grad_o.is_null() {
                    std::slice::from_raw_parts_mut(grad_o, n).copy_from_slice(&go);
                }
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Total training objective `det_weight * (det_o + det_a) + rpn + ssl`.
#[no_mangle]
pub unsafe extern "C" fn saod_total_loss(
    det_o: f64,
    det_a: f64,
    rpn: f64,
    ssl: f64,
    det_weight: f64,
    out: *mut f64,
) -> SaodStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(SaodStatus::NullPointer, "out is null");
        }
        let w = LossWeights {
            lambda_reg: 1.0,
            det_weight,
        };
        match total_loss(det_o, det_a, rpn, ssl, &w) {
            Ok(v) => {
                *out = v;
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Apply the augmentation cascade to an RGB8 buffer (`width * height * 3`
/// bytes). `boxes` holds 4n corner coordinates. `spec_json` (nullable)
/// overrides the default spec; `params_json` (nullable) receives the
/// sampled parameters for replay.
#[no_mangle]
pub unsafe extern "C" fn saod_augment_image(
    pixels: *const u8,
    width: u32,
    height: u32,
    boxes: *const f64,
    n_boxes: usize,
    spec_json: *const c_char,
    out_pixels: *mut u8,
    params_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        if pixels.is_null() || out_pixels.is_null() || (n_boxes > 0 && boxes.is_null()) {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let len = width as usize * height as usize * 3;
        let img = match Raster::new(
            width,
            height,
            std::slice::from_raw_parts(pixels, len).to_vec(),
        ) {
            Ok(img) => img,
            Err(e) => return fail(&e),
        };
        let spec: AugmentSpec = if spec_json.is_null() {
            AugmentSpec::default()
        } else {
            let text = match str_arg(spec_json, "spec_json") {
                Ok(s) => s,
                Err(status) => return status,
            };
            match serde_json::from_str(text) {
                Ok(s) => s,
                Err(e) => return fail_with(SaodStatus::Parse, &format!("spec_json: {e}")),
            }
        };
        let boxes = boxes_from_flat(boxes, n_boxes);
        match augment_image(&img, &boxes, &spec) {
            Ok((out, params)) => {
                std::slice::from_raw_parts_mut(out_pixels, len).copy_from_slice(out.pixels());
                if !params_json.is_null() {
                    *params_json = to_c_string(params.to_json());
                }
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Re-apply recorded parameters to a same-size buffer.
#[no_mangle]
pub unsafe extern "C" fn saod_replay_augment(
    pixels: *const u8,
    width: u32,
    height: u32,
    params_json: *const c_char,
    out_pixels: *mut u8,
) -> SaodStatus {
    guarded(|| {
        if pixels.is_null() || out_pixels.is_null() {
            return fail_with(SaodStatus::NullPointer, "null buffer");
        }
        let text = match str_arg(params_json, "params_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let params: AppliedParams = match serde_json::from_str(text) {
            Ok(p) => p,
            Err(e) => return fail_with(SaodStatus::Parse, &format!("params_json: {e}")),
        };
        let len = width as usize * height as usize * 3;
        let img = match Raster::new(
            width,
            height,
            std::slice::from_raw_parts(pixels, len).to_vec(),
        ) {
            Ok(img) => img,
            Err(e) => return fail(&e),
        };
        match replay_augment(&img, &params) {
            Ok(out) => {
                std::slice::from_raw_parts_mut(out_pixels, len).copy_from_slice(out.pixels());
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Run the synthetic mining experiment from a JSON configuration with
/// members `scene`, `split`, `noise`, `thresholds`, and `merge`.
/// `report_json` receives the recovery report.
#[no_mangle]
pub unsafe extern "C" fn saod_run_ppm_experiment(
    config_json: *const c_char,
    report_json: *mut *mut c_char,
) -> SaodStatus {
    guarded(|| {
        if report_json.is_null() {
            return fail_with(SaodStatus::NullPointer, "report_json is null");
        }
        let text = match str_arg(config_json, "config_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config: ExperimentConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail_with(SaodStatus::Parse, &format!("config_json: {e}")),
        };
        match run_ppm_experiment(
            &config.scene,
            &config.split,
            &config.noise,
            &config.thresholds,
            &config.merge,
        ) {
            Ok(report) => {
                *report_json = to_c_string(report.to_json());
                SaodStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
