//! In-memory detection dataset model and COCO-style annotation file I/O.
//!
//! The on-disk convention is the usual one: top-level `images`,
//! `annotations`, and `categories` members, with `bbox` as a 4-array
//! `[x, y, w, h]`. A toolkit extension member `unlabeled_image_ids` is
//! written only when non-empty and ignored when absent. Unsupported members
//! (segmentation, keypoints, crowd flags, licenses) are dropped on load and
//! never persisted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    /// May be empty for synthetic scenes.
    #[serde(default)]
    pub file_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]` in pixels, top-left origin. Fractional values are kept
    /// as-is; conversion to corner form happens at geometry boundaries.
    pub bbox: [f64; 4],
}

impl Annotation {
    pub fn new(id: u64, image_id: u64, category_id: u64, bbox: [f64; 4]) -> Self {
        Annotation {
            id,
            image_id,
            category_id,
            bbox,
        }
    }

    /// Corner-form view used by the geometry kernels.
    pub fn corners(&self) -> BBox {
        BBox::from_xywh(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }
}

/// A detection dataset. Values are immutable after construction; every
/// operation in this crate takes `&Dataset` and builds new values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    /// Images that belong to the unlabeled pool of a combined
    /// labeled+unlabeled training setup. Empty otherwise.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub unlabeled_image_ids: BTreeSet<u64>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&Image> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Annotations grouped per image, in dataset order. Images with no
    /// annotations map to empty vectors.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> =
            self.images.iter().map(|im| (im.id, Vec::new())).collect();
        for ann in &self.annotations {
            map.entry(ann.image_id).or_default().push(ann);
        }
        map
    }

    pub fn annotation_ids(&self) -> BTreeSet<u64> {
        self.annotations.iter().map(|a| a.id).collect()
    }

    /// Copy of `self` with annotations restricted to `kept` ids, order
    /// preserved.
    pub fn retain_annotations(&self, kept: &BTreeSet<u64>) -> Dataset {
        Dataset {
            images: self.images.clone(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| kept.contains(&a.id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
            unlabeled_image_ids: self.unlabeled_image_ids.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonPositiveCategoryId {
        category_id: u64,
    },
    DuplicateCategoryId {
        category_id: u64,
    },
    EmptyCategoryName {
        category_id: u64,
    },
    NonPositiveImageId {
        image_id: u64,
    },
    DuplicateImageId {
        image_id: u64,
    },
    BadImageDims {
        image_id: u64,
        width: u32,
        height: u32,
    },
    NonPositiveAnnotationId {
        annotation_id: u64,
    },
    DuplicateAnnotationId {
        annotation_id: u64,
    },
    NonPositiveBoxDims {
        annotation_id: u64,
    },
    BoxOutOfBounds {
        annotation_id: u64,
    },
    DanglingImageRef {
        annotation_id: u64,
        image_id: u64,
    },
    DanglingCategoryRef {
        annotation_id: u64,
        category_id: u64,
    },
    UnknownUnlabeledImage {
        image_id: u64,
    },
    AnnotatedUnlabeledImage {
        image_id: u64,
    },
}

impl Violation {
    fn is_dangling(&self) -> bool {
        matches!(
            self,
            Violation::DanglingImageRef { .. }
                | Violation::DanglingCategoryRef { .. }
                | Violation::UnknownUnlabeledImage { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveCategoryId { category_id } => {
                write!(f, "category id {category_id} is not positive")
            }
            Violation::DuplicateCategoryId { category_id } => {
                write!(f, "duplicate category id {category_id}")
            }
            Violation::EmptyCategoryName { category_id } => {
                write!(f, "category {category_id} has an empty name")
            }
            Violation::NonPositiveImageId { image_id } => {
                write!(f, "image id {image_id} is not positive")
            }
            Violation::DuplicateImageId { image_id } => {
                write!(f, "duplicate image id {image_id}")
            }
            Violation::BadImageDims {
                image_id,
                width,
                height,
            } => write!(f, "image {image_id} has non-positive dims {width}x{height}"),
            Violation::NonPositiveAnnotationId { annotation_id } => {
                write!(f, "annotation id {annotation_id} is not positive")
            }
            Violation::DuplicateAnnotationId { annotation_id } => {
                write!(f, "duplicate annotation id {annotation_id}")
            }
            Violation::NonPositiveBoxDims { annotation_id } => {
                write!(f, "annotation {annotation_id} has non-positive box dims")
            }
            Violation::BoxOutOfBounds { annotation_id } => {
                write!(f, "annotation {annotation_id} box exceeds image bounds")
            }
            Violation::DanglingImageRef {
                annotation_id,
                image_id,
            } => write!(
                f,
                "annotation {annotation_id} references missing image id {image_id}"
            ),
            Violation::DanglingCategoryRef {
                annotation_id,
                category_id,
            } => write!(
                f,
                "annotation {annotation_id} references missing category id {category_id}"
            ),
            Violation::UnknownUnlabeledImage { image_id } => {
                write!(
                    f,
                    "unlabeled_image_ids references missing image id {image_id}"
                )
            }
            Violation::AnnotatedUnlabeledImage { image_id } => {
                write!(
                    f,
                    "image {image_id} is listed as unlabeled but has annotations"
                )
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every type invariant. Violations are data, not errors: the report is
/// empty iff the dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut v = Vec::new();

    let mut cat_ids = BTreeSet::new();
    for c in &d.categories {
        if c.id == 0 {
            v.push(Violation::NonPositiveCategoryId { category_id: c.id });
        }
        if !cat_ids.insert(c.id) {
            v.push(Violation::DuplicateCategoryId { category_id: c.id });
        }
        if c.name.is_empty() {
            v.push(Violation::EmptyCategoryName { category_id: c.id });
        }
    }

    let mut image_dims: BTreeMap<u64, (u32, u32)> = BTreeMap::new();
    for im in &d.images {
        if im.id == 0 {
            v.push(Violation::NonPositiveImageId { image_id: im.id });
        }
        if image_dims.insert(im.id, (im.width, im.height)).is_some() {
            v.push(Violation::DuplicateImageId { image_id: im.id });
        }
        if im.width == 0 || im.height == 0 {
            v.push(Violation::BadImageDims {
                image_id: im.id,
                width: im.width,
                height: im.height,
            });
        }
    }

    let mut ann_ids = BTreeSet::new();
    let mut annotated_images = BTreeSet::new();
    for a in &d.annotations {
        annotated_images.insert(a.image_id);
        if a.id == 0 {
            v.push(Violation::NonPositiveAnnotationId {
                annotation_id: a.id,
            });
        }
        if !ann_ids.insert(a.id) {
            v.push(Violation::DuplicateAnnotationId {
                annotation_id: a.id,
            });
        }
        let [x, y, w, h] = a.bbox;
        if !(w > 0.0 && h > 0.0) {
            v.push(Violation::NonPositiveBoxDims {
                annotation_id: a.id,
            });
        }
        match image_dims.get(&a.image_id) {
            None => v.push(Violation::DanglingImageRef {
                annotation_id: a.id,
                image_id: a.image_id,
            }),
            Some(&(iw, ih)) => {
                // Zero clamping tolerance.
                if x < 0.0 || y < 0.0 || x + w > f64::from(iw) || y + h > f64::from(ih) {
                    v.push(Violation::BoxOutOfBounds {
                        annotation_id: a.id,
                    });
                }
            }
        }
        if !cat_ids.contains(&a.category_id) {
            v.push(Violation::DanglingCategoryRef {
                annotation_id: a.id,
                category_id: a.category_id,
            });
        }
    }

    for &id in &d.unlabeled_image_ids {
        if !image_dims.contains_key(&id) {
            v.push(Violation::UnknownUnlabeledImage { image_id: id });
        }
        if annotated_images.contains(&id) {
            v.push(Violation::AnnotatedUnlabeledImage { image_id: id });
        }
    }

    ValidationReport { violations: v }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    // serde_json reports 1-based line and column.
    let mut offset = 0;
    for (n, l) in text.split_inclusive('\n').enumerate() {
        if n + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len();
    }
    offset + column.saturating_sub(1)
}

fn parse_failure(text: &str, e: &serde_json::Error) -> Error {
    Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parse annotation text and reject datasets that violate invariants.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let ds: Dataset = serde_json::from_str(text).map_err(|e| parse_failure(text, &e))?;
    let report = validate_dataset(&ds);
    if report.is_empty() {
        return Ok(ds);
    }
    let dangling: Vec<String> = report
        .violations
        .iter()
        .filter(|v| v.is_dangling())
        .map(|v| v.to_string())
        .collect();
    if !dangling.is_empty() {
        return Err(Error::Integrity(dangling.join("; ")));
    }
    let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
    Err(Error::Validation(msgs.join("; ")))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Serialization is a pure function of the dataset value: equal inputs give
/// byte-identical text.
pub fn dataset_to_json(d: &Dataset) -> String {
    let mut s = serde_json::to_string(d).expect("dataset serialization cannot fail");
    s.push('\n');
    s
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_json(d)).map_err(|e| Error::io(path, e))
}
