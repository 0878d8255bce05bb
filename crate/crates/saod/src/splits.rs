//! Deterministic generation of sparsified training sets.
//!
//! Six procedures are supported, differing in whether annotations are
//! removed per category over the whole dataset or per image, and whether the
//! choice is class-aware:
//!
//! * `split1` — dataset-level, class-aware: per category, `p%` of its
//!   annotations are removed. Images may end up with zero annotations and
//!   stay in the training set.
//! * `split2` — image-level, class-aware: per image, all annotations of
//!   `p%` of the categories present in that image are removed.
//! * `split3` — image-level, class-agnostic: per image, `p%` of its
//!   annotations are removed, always keeping at least one.
//! * `split4` — image-level with fixed severity levels: `easy` removes one
//!   annotation, `hard` removes half, `extreme` keeps exactly one.
//! * `split5` — dataset-level, class-aware with a per-image
//!   exhaustive-or-absent constraint: within any image a category is either
//!   fully annotated or not annotated at all; per category roughly `p%` of
//!   its annotations are removed by dropping whole (image, category) groups,
//!   never emptying an image.
//! * `siod` — per (image, category) pair exactly one annotation is kept.
//!
//! Sampling uses per-entity keyed streams (see [`crate::rng`]), so a given
//! `(dataset, spec)` pair yields byte-identical output regardless of thread
//! count or iteration order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Split1,
    Split2,
    Split3,
    Split4,
    Split5,
    Siod,
}

impl SplitKind {
    /// Kinds that guarantee (and therefore require) at least one annotation
    /// per image.
    pub fn requires_nonempty_images(self) -> bool {
        matches!(
            self,
            SplitKind::Split3 | SplitKind::Split4 | SplitKind::Split5 | SplitKind::Siod
        )
    }

    fn tag(self) -> &'static str {
        match self {
            SplitKind::Split1 => "split1",
            SplitKind::Split2 => "split2",
            SplitKind::Split3 => "split3",
            SplitKind::Split4 => "split4",
            SplitKind::Split5 => "split5",
            SplitKind::Siod => "siod",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "split1" => Ok(SplitKind::Split1),
            "split2" => Ok(SplitKind::Split2),
            "split3" => Ok(SplitKind::Split3),
            "split4" => Ok(SplitKind::Split4),
            "split5" => Ok(SplitKind::Split5),
            "siod" => Ok(SplitKind::Siod),
            _ => Err(format!(
                "unknown split kind '{s}' (expected split1..split5 or siod)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split4Level {
    Easy,
    Hard,
    Extreme,
}

impl std::str::FromStr for Split4Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "easy" => Ok(Split4Level::Easy),
            "hard" => Ok(Split4Level::Hard),
            "extreme" => Ok(Split4Level::Extreme),
            _ => Err(format!("unknown level '{s}' (expected easy|hard|extreme)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Removal fraction in [0, 1]. Unused by `split4` and `siod`.
    #[serde(default)]
    pub p: f64,
    /// Severity level, present iff `kind == split4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Split4Level>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(kind: SplitKind, p: f64, level: Option<Split4Level>, seed: u64) -> Self {
        SplitSpec {
            kind,
            p,
            level,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!(
                "removal fraction p = {} outside [0, 1]",
                self.p
            )));
        }
        match (self.kind, self.level) {
            (SplitKind::Split4, None) => {
                Err(Error::domain("split4 requires a level (easy|hard|extreme)"))
            }
            (SplitKind::Split4, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::domain(format!(
                "level is only valid for split4, not {}",
                self.kind
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub kept: u64,
    pub removed: u64,
}

/// Exact record of what a split generator did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalManifest {
    pub spec: SplitSpec,
    pub kept_annotation_ids: BTreeSet<u64>,
    pub removed_annotation_ids: BTreeSet<u64>,
    /// category id -> kept/removed counts
    pub per_class_counts: BTreeMap<u64, ClassCount>,
}

impl RemovalManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("manifest serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RemovalManifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: 0,
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

/// Round-half-up for non-negative values.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn sample_distinct<R: Rng>(rng: &mut R, pool: &[u64], k: usize) -> Vec<u64> {
    let k = k.min(pool.len());
    rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Annotation ids per category, ids ascending.
fn ids_by_category(d: &Dataset) -> BTreeMap<u64, Vec<u64>> {
    let mut map: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for a in &d.annotations {
        map.entry(a.category_id).or_default().push(a.id);
    }
    for ids in map.values_mut() {
        ids.sort_unstable();
    }
    map
}

/// Per image: category -> annotation ids (both ascending).
fn image_category_ids(d: &Dataset) -> BTreeMap<u64, BTreeMap<u64, Vec<u64>>> {
    let mut map: BTreeMap<u64, BTreeMap<u64, Vec<u64>>> = BTreeMap::new();
    for a in &d.annotations {
        map.entry(a.image_id)
            .or_default()
            .entry(a.category_id)
            .or_default()
            .push(a.id);
    }
    for cats in map.values_mut() {
        for ids in cats.values_mut() {
            ids.sort_unstable();
        }
    }
    map
}

fn split1_removals(d: &Dataset, spec: &SplitSpec) -> BTreeSet<u64> {
    let per_cat: Vec<(u64, Vec<u64>)> = ids_by_category(d).into_iter().collect();
    per_cat
        .into_par_iter()
        .flat_map(|(cat, ids)| {
            let k = round_half_up(spec.p * ids.len() as f64);
            let mut rng = rng::stream(spec.seed, spec.kind.tag(), cat);
            sample_distinct(&mut rng, &ids, k)
        })
        .collect()
}

fn split2_removals(d: &Dataset, spec: &SplitSpec) -> BTreeSet<u64> {
    let per_image: Vec<(u64, BTreeMap<u64, Vec<u64>>)> =
        image_category_ids(d).into_iter().collect();
    per_image
        .into_par_iter()
        .flat_map(|(image_id, cats)| {
            let cat_ids: Vec<u64> = cats.keys().copied().collect();
            let k = round_half_up(spec.p * cat_ids.len() as f64);
            let mut rng = rng::stream(spec.seed, spec.kind.tag(), image_id);
            sample_distinct(&mut rng, &cat_ids, k)
                .into_iter()
                .flat_map(|c| cats[&c].clone())
                .collect::<Vec<u64>>()
        })
        .collect()
}

fn per_image_count_removals(
    d: &Dataset,
    spec: &SplitSpec,
    count: impl Fn(usize) -> usize + Sync,
) -> BTreeSet<u64> {
    let mut per_image: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for a in &d.annotations {
        per_image.entry(a.image_id).or_default().push(a.id);
    }
    let per_image: Vec<(u64, Vec<u64>)> = per_image
        .into_iter()
        .map(|(id, mut ids)| {
            ids.sort_unstable();
            (id, ids)
        })
        .collect();
    per_image
        .into_par_iter()
        .flat_map(|(image_id, ids)| {
            let k = count(ids.len()).min(ids.len());
            let mut rng = rng::stream(spec.seed, spec.kind.tag(), image_id);
            sample_distinct(&mut rng, &ids, k)
        })
        .collect()
}

fn split5_removals(d: &Dataset, spec: &SplitSpec) -> BTreeSet<u64> {
    let by_image = image_category_ids(d);
    let mut remaining: BTreeMap<u64, usize> = by_image
        .iter()
        .map(|(&img, cats)| (img, cats.values().map(Vec::len).sum()))
        .collect();

    // Occurrences of each category: image -> that image's annotation ids.
    let mut occurrences: BTreeMap<u64, BTreeMap<u64, Vec<u64>>> = BTreeMap::new();
    for (&img, cats) in &by_image {
        for (&cat, ids) in cats {
            occurrences.entry(cat).or_default().insert(img, ids.clone());
        }
    }

    let mut removed = BTreeSet::new();
    // Categories processed in ascending id order; the budget below makes the
    // per-class removed fraction approach p without ever overshooting it.
    for (&cat, occ) in &occurrences {
        let n_c: usize = occ.values().map(Vec::len).sum();
        let target = round_half_up(spec.p * n_c as f64);
        let mut images: Vec<u64> = occ.keys().copied().collect();
        let mut rng = rng::stream(spec.seed, spec.kind.tag(), cat);
        images.shuffle(&mut rng);
        let mut got = 0usize;
        for img in images {
            if got == target {
                break;
            }
            let ids = &occ[&img];
            if got + ids.len() > target {
                continue; // would overshoot the class budget
            }
            if remaining[&img] == ids.len() {
                continue; // would empty the image
            }
            *remaining.get_mut(&img).unwrap() -= ids.len();
            removed.extend(ids.iter().copied());
            got += ids.len();
        }
    }
    removed
}

fn siod_removals(d: &Dataset, spec: &SplitSpec) -> BTreeSet<u64> {
    let per_image: Vec<(u64, BTreeMap<u64, Vec<u64>>)> =
        image_category_ids(d).into_iter().collect();
    per_image
        .into_par_iter()
        .flat_map(|(image_id, cats)| {
            let mut rng = rng::stream(spec.seed, spec.kind.tag(), image_id);
            let mut out = Vec::new();
            for ids in cats.values() {
                let keep = rng.random_range(0..ids.len());
                out.extend(
                    ids.iter()
                        .enumerate()
                        .filter(|&(i, _)| i != keep)
                        .map(|(_, &id)| id),
                );
            }
            out
        })
        .collect()
}

/// Apply `spec` to `d`, returning the sparsified dataset and the manifest.
///
/// Deterministic: equal `(d, spec)` always produce identical results, for any
/// worker count.
pub fn generate_split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, RemovalManifest)> {
    spec.validate()?;

    if spec.kind.requires_nonempty_images() {
        let annotated: BTreeSet<u64> = d.annotations.iter().map(|a| a.image_id).collect();
        let empty: Vec<u64> = d
            .images
            .iter()
            .map(|im| im.id)
            .filter(|id| !annotated.contains(id))
            .collect();
        if !empty.is_empty() {
            return Err(Error::domain(format!(
                "{} requires at least one annotation per image; empty image ids: {:?}",
                spec.kind, empty
            )));
        }
    }

    let removed = match spec.kind {
        SplitKind::Split1 => split1_removals(d, spec),
        SplitKind::Split2 => split2_removals(d, spec),
        SplitKind::Split3 => {
            let p = spec.p;
            per_image_count_removals(d, spec, move |m| {
                round_half_up(p * m as f64).min(m.saturating_sub(1))
            })
        }
        SplitKind::Split4 => match spec.level.expect("validated above") {
            Split4Level::Easy => per_image_count_removals(d, spec, |m| usize::from(m >= 2)),
            Split4Level::Hard => per_image_count_removals(d, spec, |m| m / 2),
            Split4Level::Extreme => per_image_count_removals(d, spec, |m| m.saturating_sub(1)),
        },
        SplitKind::Split5 => split5_removals(d, spec),
        SplitKind::Siod => siod_removals(d, spec),
    };

    let all_ids = d.annotation_ids();
    let kept: BTreeSet<u64> = all_ids.difference(&removed).copied().collect();

    let mut per_class_counts: BTreeMap<u64, ClassCount> = BTreeMap::new();
    for a in &d.annotations {
        let entry = per_class_counts.entry(a.category_id).or_default();
        if removed.contains(&a.id) {
            entry.removed += 1;
        } else {
            entry.kept += 1;
        }
    }

    let manifest = RemovalManifest {
        spec: *spec,
        kept_annotation_ids: kept.clone(),
        removed_annotation_ids: removed,
        per_class_counts,
    };
    Ok((d.retain_annotations(&kept), manifest))
}

/// Combine a sparsely labeled set with a pool of unlabeled images.
///
/// Unlabeled images are appended with zero annotations and recorded in
/// `unlabeled_image_ids`; their ids are remapped when they collide with
/// labeled image ids. Any annotations carried by `unlabeled` are dropped.
pub fn make_ssl_saod(labeled_sparse: &Dataset, unlabeled: &Dataset) -> Result<Dataset> {
    let names: BTreeMap<u64, &str> = labeled_sparse
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let conflicts: Vec<String> = unlabeled
        .categories
        .iter()
        .filter_map(|c| match names.get(&c.id) {
            Some(&n) if n != c.name => Some(format!("id {} is '{}' vs '{}'", c.id, n, c.name)),
            _ => None,
        })
        .collect();
    if !conflicts.is_empty() {
        return Err(Error::domain(format!(
            "category tables conflict: {}",
            conflicts.join("; ")
        )));
    }

    let mut out = labeled_sparse.clone();
    for c in &unlabeled.categories {
        if !names.contains_key(&c.id) {
            out.categories.push(c.clone());
        }
    }

    let mut used: BTreeSet<u64> = out.images.iter().map(|im| im.id).collect();
    let mut next = used.iter().max().copied().unwrap_or(0) + 1;
    for im in &unlabeled.images {
        let mut im = im.clone();
        if used.contains(&im.id) {
            im.id = next;
            next += 1;
        }
        used.insert(im.id);
        out.unlabeled_image_ids.insert(im.id);
        out.images.push(im);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassFraction {
    pub total: u64,
    pub kept: u64,
    pub removed: u64,
    pub removed_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub total_annotations: u64,
    pub kept_annotations: u64,
    pub removed_annotations: u64,
    pub overall_removed_fraction: f64,
    pub per_class: BTreeMap<u64, ClassFraction>,
    pub image_count: u64,
    pub empty_image_count: u64,
    pub unlabeled_image_count: u64,
}

impl fmt::Display for SparsityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "annotations: {} kept / {} removed of {} ({:.2}% removed)",
            self.kept_annotations,
            self.removed_annotations,
            self.total_annotations,
            100.0 * self.overall_removed_fraction
        )?;
        for (cat, c) in &self.per_class {
            writeln!(
                f,
                "  class {cat}: {} kept / {} removed of {} ({:.2}%)",
                c.kept,
                c.removed,
                c.total,
                100.0 * c.removed_fraction
            )?;
        }
        write!(
            f,
            "images: {} total, {} without annotations, {} unlabeled",
            self.image_count, self.empty_image_count, self.unlabeled_image_count
        )
    }
}

fn fraction(removed: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        removed as f64 / total as f64
    }
}

/// Compare a sparsified dataset against its source.
pub fn split_stats(original: &Dataset, sparse: &Dataset) -> Result<SparsityReport> {
    let orig_ids = original.annotation_ids();
    let sparse_ids = sparse.annotation_ids();
    let extra: Vec<u64> = sparse_ids.difference(&orig_ids).copied().collect();
    if !extra.is_empty() {
        return Err(Error::domain(format!(
            "sparse annotations are not a subset of the original; unknown ids: {extra:?}"
        )));
    }

    let mut per_class: BTreeMap<u64, ClassFraction> = BTreeMap::new();
    for a in &original.annotations {
        let entry = per_class.entry(a.category_id).or_default();
        entry.total += 1;
        if sparse_ids.contains(&a.id) {
            entry.kept += 1;
        } else {
            entry.removed += 1;
        }
    }
    for c in per_class.values_mut() {
        c.removed_fraction = fraction(c.removed, c.total);
    }

    let annotated: BTreeSet<u64> = sparse.annotations.iter().map(|a| a.image_id).collect();
    let empty = sparse
        .images
        .iter()
        .filter(|im| !annotated.contains(&im.id))
        .count() as u64;

    let total = orig_ids.len() as u64;
    let kept = sparse_ids.len() as u64;
    Ok(SparsityReport {
        total_annotations: total,
        kept_annotations: kept,
        removed_annotations: total - kept,
        overall_removed_fraction: fraction(total - kept, total),
        per_class,
        image_count: sparse.images.len() as u64,
        empty_image_count: empty,
        unlabeled_image_count: sparse.unlabeled_image_ids.len() as u64,
    })
}
