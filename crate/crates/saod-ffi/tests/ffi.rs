//! Exercise the C entry points the way a foreign caller would: raw pointers,
//! status codes, and the thread-local error message.

use std::ffi::{CStr, CString};
use std::ptr;

use saod_ffi::*;

const DATASET_JSON: &str = r#"{
    "images": [{"id": 1, "width": 100, "height": 100, "file_name": "a.jpg"},
               {"id": 2, "width": 100, "height": 100, "file_name": "b.jpg"}],
    "annotations": [
        {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
        {"id": 2, "image_id": 1, "category_id": 2, "bbox": [20, 20, 10, 10]},
        {"id": 3, "image_id": 2, "category_id": 1, "bbox": [5, 5, 30, 30]},
        {"id": 4, "image_id": 2, "category_id": 1, "bbox": [60, 60, 20, 20]}
    ],
    "categories": [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}]
}"#;

fn parse_fixture() -> *mut SaodDataset {
    let json = CString::new(DATASET_JSON).unwrap();
    let mut handle: *mut SaodDataset = ptr::null_mut();
    let status = unsafe { saod_dataset_parse(json.as_ptr(), &mut handle) };
    assert_eq!(status, SaodStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { saod_string_free(p) };
    s
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(saod_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn dataset_parse_counts_and_json_round_trip() {
    let ds = parse_fixture();
    let (mut images, mut annotations, mut categories) = (0usize, 0usize, 0usize);
    let status = unsafe { saod_dataset_counts(ds, &mut images, &mut annotations, &mut categories) };
    assert_eq!(status, SaodStatus::Ok);
    assert_eq!((images, annotations, categories), (2, 4, 2));

    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(
        unsafe { saod_dataset_to_json(ds, &mut json) },
        SaodStatus::Ok
    );
    let text = take_string(json);

    let reparsed = CString::new(text).unwrap();
    let mut again: *mut SaodDataset = ptr::null_mut();
    assert_eq!(
        unsafe { saod_dataset_parse(reparsed.as_ptr(), &mut again) },
        SaodStatus::Ok
    );
    unsafe {
        saod_dataset_free(again);
        saod_dataset_free(ds);
    }
}

#[test]
fn dataset_load_save_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let ds = parse_fixture();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { saod_dataset_save(ds, c_path.as_ptr()) },
        SaodStatus::Ok
    );

    let mut loaded: *mut SaodDataset = ptr::null_mut();
    assert_eq!(
        unsafe { saod_dataset_load(c_path.as_ptr(), &mut loaded) },
        SaodStatus::Ok
    );
    let mut annotations = 0usize;
    unsafe {
        saod_dataset_counts(loaded, ptr::null_mut(), &mut annotations, ptr::null_mut());
        saod_dataset_free(loaded);
        saod_dataset_free(ds);
    }
    assert_eq!(annotations, 4);
}

#[test]
fn missing_file_reports_io_with_message() {
    let path = CString::new("/nonexistent/saod-test.json").unwrap();
    let mut handle: *mut SaodDataset = ptr::null_mut();
    let status = unsafe { saod_dataset_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, SaodStatus::Io);
    let msg = unsafe { CStr::from_ptr(saod_last_error_message()) };
    assert!(msg.to_str().unwrap().contains("saod-test.json"));
}

#[test]
fn null_arguments_report_null_pointer() {
    let mut handle: *mut SaodDataset = ptr::null_mut();
    assert_eq!(
        unsafe { saod_dataset_load(ptr::null(), &mut handle) },
        SaodStatus::NullPointer
    );
    assert_eq!(
        unsafe { saod_dataset_save(ptr::null(), ptr::null()) },
        SaodStatus::NullPointer
    );
}

#[test]
fn malformed_json_reports_parse() {
    let json = CString::new("{not json").unwrap();
    let mut handle: *mut SaodDataset = ptr::null_mut();
    assert_eq!(
        unsafe { saod_dataset_parse(json.as_ptr(), &mut handle) },
        SaodStatus::Parse
    );
}

#[test]
fn validate_counts_violations() {
    let json = CString::new(
        r#"{"images": [{"id": 1, "width": 10, "height": 10, "file_name": ""}],
            "annotations": [], "categories": [{"id": 1, "name": ""}]}"#,
    )
    .unwrap();
    // Invalid datasets cannot come from parse; build via parse of a valid one
    // is impossible here, so parse rejects it outright.
    let mut handle: *mut SaodDataset = ptr::null_mut();
    assert_eq!(
        unsafe { saod_dataset_parse(json.as_ptr(), &mut handle) },
        SaodStatus::Domain
    );

    // A valid dataset validates clean.
    let ds = parse_fixture();
    let mut count = 99usize;
    assert_eq!(
        unsafe { saod_dataset_validate(ds, &mut count, ptr::null_mut()) },
        SaodStatus::Ok
    );
    assert_eq!(count, 0);
    unsafe { saod_dataset_free(ds) };
}

#[test]
fn generate_split_and_stats() {
    let ds = parse_fixture();
    let spec = CString::new(r#"{"kind":"split3","p":0.5,"seed":7}"#).unwrap();
    let mut sparse: *mut SaodDataset = ptr::null_mut();
    let mut manifest: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { saod_generate_split(ds, spec.as_ptr(), &mut sparse, &mut manifest) };
    assert_eq!(status, SaodStatus::Ok);
    let manifest_text = take_string(manifest);
    assert!(manifest_text.contains("removed_annotation_ids"));

    let mut annotations = 0usize;
    unsafe { saod_dataset_counts(sparse, ptr::null_mut(), &mut annotations, ptr::null_mut()) };
    assert_eq!(annotations, 2); // one kept per image at p = 0.5 with 2 anns each

    let mut report: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(
        unsafe { saod_split_stats(ds, sparse, &mut report) },
        SaodStatus::Ok
    );
    let report_text = take_string(report);
    assert!(report_text.contains("\"overall_removed_fraction\":0.5"));

    unsafe {
        saod_dataset_free(sparse);
        saod_dataset_free(ds);
    }
}

#[test]
fn bad_split_spec_reports_domain() {
    let ds = parse_fixture();
    let spec = CString::new(r#"{"kind":"split1","p":1.5,"seed":7}"#).unwrap();
    let mut sparse: *mut SaodDataset = ptr::null_mut();
    assert_eq!(
        unsafe { saod_generate_split(ds, spec.as_ptr(), &mut sparse, ptr::null_mut()) },
        SaodStatus::Domain
    );
    let msg = unsafe { CStr::from_ptr(saod_last_error_message()) };
    assert!(msg.to_str().unwrap().contains("outside [0, 1]"));
    unsafe { saod_dataset_free(ds) };
}

#[test]
fn evaluate_perfect_detections() {
    let ds = parse_fixture();
    let results = CString::new(
        r#"[{"image_id":1,"category_id":1,"bbox":[0,0,10,10],"score":1.0},
            {"image_id":1,"category_id":2,"bbox":[20,20,10,10],"score":1.0},
            {"image_id":2,"category_id":1,"bbox":[5,5,30,30],"score":1.0},
            {"image_id":2,"category_id":1,"bbox":[60,60,20,20],"score":1.0}]"#,
    )
    .unwrap();
    let mut report: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { saod_evaluate_ap(ds, results.as_ptr(), ptr::null(), 0, &mut report) };
    assert_eq!(status, SaodStatus::Ok);
    let text = take_string(report);
    assert!(text.contains("\"ap_coco\":1.0"), "report: {text}");
    unsafe { saod_dataset_free(ds) };
}

#[test]
fn iou_and_nms() {
    let mut v = 0.0f64;
    let status = unsafe { saod_iou(0.0, 0.0, 10.0, 10.0, 5.0, 0.0, 15.0, 10.0, &mut v) };
    assert_eq!(status, SaodStatus::Ok);
    assert!((v - 1.0 / 3.0).abs() < 1e-12);

    // Degenerate box.
    assert_eq!(
        unsafe { saod_iou(0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 1.0, 1.0, &mut v) },
        SaodStatus::Domain
    );

    let boxes = [
        0.0, 0.0, 10.0, 10.0, 0.0, 0.0, 10.0, 10.0, 40.0, 40.0, 50.0, 50.0,
    ];
    let scores = [0.8, 0.9, 0.5];
    let mut keep = [0usize; 3];
    let mut n_kept = 0usize;
    let status = unsafe {
        saod_nms(
            boxes.as_ptr(),
            scores.as_ptr(),
            ptr::null(),
            3,
            0.5,
            0,
            keep.as_mut_ptr(),
            &mut n_kept,
        )
    };
    assert_eq!(status, SaodStatus::Ok);
    assert_eq!(&keep[..n_kept], &[1, 2]);
}

#[test]
fn assign_proposals_labels() {
    let props = [
        0.0, 0.0, 10.0, 10.0, // exact gt copy
        40.0, 40.0, 52.0, 52.0, // isolated, confident
        70.0, 70.0, 80.0, 80.0, // isolated, weak
    ];
    let objectness = [0.9, 0.95, 0.3];
    let gt = [0.0, 0.0, 10.0, 10.0];
    let gt_ids = [42u64];
    let mut labels = [0i32; 3];
    let mut matched = [0u64; 3];
    let status = unsafe {
        saod_assign_proposals(
            props.as_ptr(),
            objectness.as_ptr(),
            3,
            gt.as_ptr(),
            gt_ids.as_ptr(),
            1,
            0.4,
            0.2,
            0.5,
            0.8,
            1,
            labels.as_mut_ptr(),
            matched.as_mut_ptr(),
        )
    };
    assert_eq!(status, SaodStatus::Ok);
    assert_eq!(labels, [1, 2, 0]);
    assert_eq!(matched, [42, 0, 0]);
}

#[test]
fn merge_ground_truth_preserves_gt() {
    let det_boxes = [0.0, 0.0, 10.0, 8.0, 50.0, 50.0, 60.0, 60.0];
    let det_scores = [0.95, 0.97];
    let det_cats = [1u64, 2];
    let gt_boxes = [0.0, 0.0, 10.0, 10.0];
    let gt_cats = [1u64];
    let mut out_boxes = [0.0f64; 12];
    let mut out_cats = [0u64; 3];
    let mut out_scores = [0.0f64; 3];
    let mut out_prov = [0i32; 3];
    let mut n_out = 0usize;
    let status = unsafe {
        saod_merge_ground_truth(
            det_boxes.as_ptr(),
            det_scores.as_ptr(),
            det_cats.as_ptr(),
            2,
            gt_boxes.as_ptr(),
            gt_cats.as_ptr(),
            1,
            0.9,
            0.5,
            out_boxes.as_mut_ptr(),
            out_cats.as_mut_ptr(),
            out_scores.as_mut_ptr(),
            out_prov.as_mut_ptr(),
            &mut n_out,
        )
    };
    assert_eq!(status, SaodStatus::Ok);
    // Same-class overlapping detection suppressed, disjoint one kept.
    assert_eq!(n_out, 2);
    assert_eq!(out_prov[..2], [0, 1]);
    assert_eq!(out_scores[0], 1.0);
    assert_eq!(out_scores[1], 0.97);
}

#[test]
fn loss_kernels_match_closed_forms() {
    let pred = [0.5];
    let target = [1.0];
    let mut loss = 0.0f64;
    let mut grad = [0.0f64; 1];
    assert_eq!(
        unsafe {
            saod_bce_loss(
                pred.as_ptr(),
                target.as_ptr(),
                1,
                &mut loss,
                grad.as_mut_ptr(),
            )
        },
        SaodStatus::Ok
    );
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

    let scores = [10.0, 0.0];
    assert_eq!(
        unsafe { saod_ce_loss(scores.as_ptr(), 2, 0, &mut loss, ptr::null_mut()) },
        SaodStatus::Ok
    );
    assert!((loss - 4.5398e-5).abs() < 1e-8);

    let p = [2.0];
    let t = [0.0];
    assert_eq!(
        unsafe { saod_smooth_l1(p.as_ptr(), t.as_ptr(), 1, 1.0, &mut loss, ptr::null_mut()) },
        SaodStatus::Ok
    );
    assert_eq!(loss, 1.5);

    let fa = [3.0];
    let fo = [1.0];
    let mut ga = [0.0f64; 1];
    let mut go = [0.0f64; 1];
    assert_eq!(
        unsafe {
            saod_ssl_consistency(
                fa.as_ptr(),
                fo.as_ptr(),
                1,
                &mut loss,
                ga.as_mut_ptr(),
                go.as_mut_ptr(),
            )
        },
        SaodStatus::Ok
    );
    assert_eq!(loss, 4.0);
    assert_eq!(ga[0], 4.0);
    assert_eq!(go[0], -4.0);

    assert_eq!(
        unsafe { saod_total_loss(2.0, 0.0, 1.0, 1.0, 0.5, &mut loss) },
        SaodStatus::Ok
    );
    assert_eq!(loss, 3.0);
}

#[test]
fn augment_neutral_spec_is_identity() {
    let pixels: Vec<u8> = (0..24 * 16 * 3).map(|i| (i % 251) as u8).collect();
    let mut out = vec![0u8; pixels.len()];
    let spec = CString::new(
        r#"{"contrast_range":[1,1],"brightness_range":[1,1],"saturation_range":[1,1],
            "lighting_scale":0,"lighting_basis":[[1,0,0],[0,1,0],[0,0,1]],
            "erase_area_range":[0.4,0.7],"erase_aspect_range":[0.3,3.3],
            "erase_probability":0,"seed":5}"#,
    )
    .unwrap();
    let mut params: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe {
        saod_augment_image(
            pixels.as_ptr(),
            24,
            16,
            ptr::null(),
            0,
            spec.as_ptr(),
            out.as_mut_ptr(),
            &mut params,
        )
    };
    assert_eq!(status, SaodStatus::Ok);
    assert_eq!(out, pixels);

    // Replay through the recorded parameters reproduces the output.
    let params_text = take_string(params);
    let params_c = CString::new(params_text).unwrap();
    let mut replayed = vec![0u8; pixels.len()];
    let status = unsafe {
        saod_replay_augment(
            pixels.as_ptr(),
            24,
            16,
            params_c.as_ptr(),
            replayed.as_mut_ptr(),
        )
    };
    assert_eq!(status, SaodStatus::Ok);
    assert_eq!(replayed, out);
}

#[test]
fn ppm_experiment_from_json_config() {
    let config = CString::new(
        r#"{
        "scene": {"image_count": 10, "width": 128, "height": 128, "categories": 3,
                  "objects_per_image": [2, 4], "object_size": [12, 24],
                  "max_overlap": 0.1, "seed": 5},
        "split": {"kind": "split3", "p": 0.5, "seed": 3},
        "noise": {"localization_sigma": 0.0, "fg_objectness_mean": 0.95,
                  "bg_objectness_mean": 0.05, "objectness_sigma": 0.0,
                  "false_positive_rate": 0.0, "dropout_rate": 0.0, "seed": 2},
        "thresholds": {"tau_fg": 0.4, "tau_bg": 0.2, "tau_obj": 0.5, "tau_ppm": 0.8},
        "merge": {"tau_m": 0.9, "nms_iou": 0.5}
    }"#,
    )
    .unwrap();
    let mut report: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { saod_run_ppm_experiment(config.as_ptr(), &mut report) };
    assert_eq!(status, SaodStatus::Ok);
    let text = take_string(report);
    assert!(text.contains("\"mined_precision\":1.0"), "report: {text}");
    assert!(text.contains("\"mined_recall\":1.0"), "report: {text}");
}
