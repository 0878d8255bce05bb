//! Three-way segregation of scored region proposals into labeled, unlabeled,
//! and background sets.
//!
//! The standard two-way rule treats every proposal that overlaps no ground
//! truth as a negative, which silently punishes regions whose annotations are
//! simply missing. Mining flips that: a proposal whose objectness clears
//! `tau_ppm` while staying below `tau_bg` IoU with every known annotation is
//! set aside as *unlabeled* instead of background.
//!
//! Gate semantics are fixed for determinism: objectness comparisons are
//! strict (`>`), the foreground IoU test is inclusive (`>= tau_fg`), and the
//! background IoU test is strict (`< tau_bg`). Proposals in the band
//! `tau_bg <= IoU < tau_fg` are assigned background.

use serde::{Deserialize, Serialize};

use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, NmsMode, ScoredBox};

/// IoU and objectness gates. Defaults are the detector-standard values
/// `tau_bg = 0.2`, `tau_fg = 0.4`, `tau_obj = 0.5`, `tau_ppm = 0.8`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_fg: f64,
    pub tau_bg: f64,
    pub tau_obj: f64,
    pub tau_ppm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_fg: 0.4,
            tau_bg: 0.2,
            tau_obj: 0.5,
            tau_ppm: 0.8,
        }
    }
}

impl Thresholds {
    pub fn new(tau_fg: f64, tau_bg: f64, tau_obj: f64, tau_ppm: f64) -> Result<Self> {
        let t = Thresholds {
            tau_fg,
            tau_bg,
            tau_obj,
            tau_ppm,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_fg", self.tau_fg),
            ("tau_bg", self.tau_bg),
            ("tau_obj", self.tau_obj),
            ("tau_ppm", self.tau_ppm),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::domain(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if self.tau_bg > self.tau_fg {
            return Err(Error::domain(format!(
                "tau_bg = {} exceeds tau_fg = {}",
                self.tau_bg, self.tau_fg
            )));
        }
        if self.tau_obj > self.tau_ppm {
            return Err(Error::domain(format!(
                "tau_obj = {} exceeds tau_ppm = {}",
                self.tau_obj, self.tau_ppm
            )));
        }
        Ok(())
    }
}

/// A region proposal with its objectness score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    pub bbox: BBox,
    pub objectness: f64,
}

impl ScoredProposal {
    pub fn new(bbox: BBox, objectness: f64) -> Self {
        ScoredProposal { bbox, objectness }
    }
}

/// Disjoint index sets whose union covers all proposals.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Partition {
    /// (proposal index, matched annotation id)
    pub labeled: Vec<(usize, u64)>,
    pub unlabeled: Vec<usize>,
    pub background: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpmSchedule {
    pub warmup_iterations: u64,
    pub current_iteration: u64,
}

/// Mining switches on once the warmup has elapsed (inclusive boundary).
pub fn ppm_gate(s: &PpmSchedule) -> bool {
    s.current_iteration >= s.warmup_iterations
}

/// Partition proposals against the available ground truth.
///
/// For each proposal with max-IoU `m` over `gt`:
/// * labeled iff `objectness > tau_obj` and `m >= tau_fg`, matched to the
///   argmax-IoU annotation (ties to the lowest annotation id);
/// * unlabeled iff `ppm_active`, `objectness > tau_ppm`, and `m < tau_bg`;
/// * background otherwise.
///
/// With no ground truth at all, `m = 0` for every proposal, so high-objectness
/// proposals of completely unlabeled images land in the unlabeled set.
pub fn assign_proposals(
    proposals: &[ScoredProposal],
    gt: &[Annotation],
    t: &Thresholds,
    ppm_active: bool,
) -> Result<Partition> {
    t.validate()?;
    for a in gt {
        if !a.corners().is_valid() {
            return Err(Error::domain(format!(
                "ground-truth annotation {} has a non-positive-area box",
                a.id
            )));
        }
    }

    let mut part = Partition::default();
    for (i, prop) in proposals.iter().enumerate() {
        let mut max_iou = 0.0f64;
        let mut best_id: Option<u64> = None;
        for a in gt {
            let v = geometry::iou(&prop.bbox, &a.corners())?;
            let better = match best_id {
                None => true,
                Some(id) => v > max_iou || (v == max_iou && a.id < id),
            };
            if better {
                max_iou = v;
                best_id = Some(a.id);
            }
        }
        if prop.objectness > t.tau_obj && max_iou >= t.tau_fg {
            part.labeled
                .push((i, best_id.expect("tau_fg > 0 implies a match")));
        } else if ppm_active && prop.objectness > t.tau_ppm && max_iou < t.tau_bg {
            part.unlabeled.push(i);
        } else {
            part.background.push(i);
        }
    }
    Ok(part)
}

/// Class-agnostic NMS (by objectness) over the unlabeled subset of a
/// partition. Returns the surviving boxes in descending objectness order.
pub fn dedupe_unlabeled(
    proposals: &[ScoredProposal],
    partition: &Partition,
    iou_thresh: f64,
) -> Result<Vec<BBox>> {
    let items: Vec<ScoredBox> = partition
        .unlabeled
        .iter()
        .map(|&i| {
            proposals
                .get(i)
                .map(|p| ScoredBox::new(p.bbox, p.objectness, None))
                .ok_or_else(|| {
                    Error::domain(format!("unlabeled index {i} out of range for proposals"))
                })
        })
        .collect::<Result<_>>()?;
    let keep = geometry::nms(&items, iou_thresh, NmsMode::ClassAgnostic)?;
    Ok(keep.into_iter().map(|k| items[k].bbox).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ann(id: u64, x: f64, y: f64, w: f64, h: f64) -> Annotation {
        Annotation::new(id, 1, 1, [x, y, w, h])
    }

    fn prop(x1: f64, y1: f64, x2: f64, y2: f64, objectness: f64) -> ScoredProposal {
        ScoredProposal::new(BBox::new(x1, y1, x2, y2), objectness)
    }

    #[test]
    fn high_iou_high_objectness_is_labeled() {
        // IoU with gt = 0.6: gt (0,0,10,10), proposal (0,0,10,6) -> 60/100.
        let gt = [ann(4, 0.0, 0.0, 10.0, 10.0)];
        let p = [prop(0.0, 0.0, 10.0, 6.0, 0.9)];
        let part = assign_proposals(&p, &gt, &Thresholds::default(), true).unwrap();
        assert_eq!(part.labeled, vec![(0, 4)]);
        assert!(part.unlabeled.is_empty());
        assert!(part.background.is_empty());
    }

    #[test]
    fn isolated_high_objectness_is_unlabeled_when_mining() {
        let gt = [ann(1, 0.0, 0.0, 10.0, 10.0)];
        let p = [prop(50.0, 50.0, 60.0, 60.0, 0.9)];
        let part = assign_proposals(&p, &gt, &Thresholds::default(), true).unwrap();
        assert_eq!(part.unlabeled, vec![0]);
    }

    #[test]
    fn isolated_low_objectness_is_background() {
        let gt = [ann(1, 0.0, 0.0, 10.0, 10.0)];
        let p = [prop(50.0, 50.0, 60.0, 60.0, 0.3)];
        let part = assign_proposals(&p, &gt, &Thresholds::default(), true).unwrap();
        assert_eq!(part.background, vec![0]);
    }

    #[test]
    fn empty_gt_mines_confident_proposals() {
        let p = [prop(0.0, 0.0, 10.0, 10.0, 0.85)];
        let part = assign_proposals(&p, &[], &Thresholds::default(), true).unwrap();
        assert_eq!(part.unlabeled, vec![0]);
    }

    #[test]
    fn mining_disabled_sends_everything_else_to_background() {
        let p = [
            prop(0.0, 0.0, 10.0, 10.0, 0.95),
            prop(50.0, 50.0, 60.0, 60.0, 0.95),
        ];
        let gt = [ann(1, 0.0, 0.0, 10.0, 10.0)];
        let part = assign_proposals(&p, &gt, &Thresholds::default(), false).unwrap();
        assert_eq!(part.labeled, vec![(0, 1)]);
        assert!(part.unlabeled.is_empty());
        assert_eq!(part.background, vec![1]);
    }

    #[test]
    fn gray_zone_iou_is_background() {
        // IoU = 0.3 sits between tau_bg and tau_fg.
        let gt = [ann(1, 0.0, 0.0, 10.0, 10.0)];
        let p = [prop(0.0, 0.0, 10.0, 3.0, 0.9)]; // IoU 30/100
        let part = assign_proposals(&p, &gt, &Thresholds::default(), true).unwrap();
        assert_eq!(part.background, vec![0]);
    }

    #[test]
    fn boundary_semantics_are_fixed() {
        let t = Thresholds::default();
        let gt = [ann(1, 0.0, 0.0, 10.0, 10.0)];

        // Objectness exactly tau_obj fails the strict foreground gate.
        let p = [prop(0.0, 0.0, 10.0, 10.0, 0.5)];
        let part = assign_proposals(&p, &gt, &t, true).unwrap();
        assert_eq!(part.background, vec![0]);

        // IoU exactly tau_fg passes the inclusive test: (0,0,10,4) -> 0.4.
        let p = [prop(0.0, 0.0, 10.0, 4.0, 0.9)];
        let part = assign_proposals(&p, &gt, &t, true).unwrap();
        assert_eq!(part.labeled, vec![(0, 1)]);

        // IoU exactly tau_bg fails the strict unlabeled test: (0,0,10,2) -> 0.2.
        let p = [prop(0.0, 0.0, 10.0, 2.0, 0.9)];
        let part = assign_proposals(&p, &gt, &t, true).unwrap();
        assert_eq!(part.background, vec![0]);

        // Objectness exactly tau_ppm fails the strict mining gate.
        let p = [prop(50.0, 50.0, 60.0, 60.0, 0.8)];
        let part = assign_proposals(&p, &gt, &t, true).unwrap();
        assert_eq!(part.background, vec![0]);
    }

    #[test]
    fn ties_match_lowest_annotation_id() {
        // Two identical gt boxes with different ids.
        let gt = [ann(9, 0.0, 0.0, 10.0, 10.0), ann(2, 0.0, 0.0, 10.0, 10.0)];
        let p = [prop(0.0, 0.0, 10.0, 10.0, 0.9)];
        let part = assign_proposals(&p, &gt, &Thresholds::default(), true).unwrap();
        assert_eq!(part.labeled, vec![(0, 2)]);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(Thresholds::new(0.4, 0.5, 0.5, 0.8).is_err()); // bg > fg
        assert!(Thresholds::new(0.4, 0.2, 0.9, 0.8).is_err()); // obj > ppm
        assert!(Thresholds::new(1.0, 0.2, 0.5, 0.8).is_err()); // out of (0,1)
        let gt = [ann(1, 0.0, 0.0, 10.0, 10.0)];
        let bad = Thresholds {
            tau_fg: 0.4,
            tau_bg: 0.5,
            tau_obj: 0.5,
            tau_ppm: 0.8,
        };
        assert!(assign_proposals(&[], &gt, &bad, true).is_err());
    }

    #[test]
    fn degenerate_gt_box_rejected() {
        let gt = [ann(1, 0.0, 0.0, 0.0, 10.0)];
        assert!(assign_proposals(&[], &gt, &Thresholds::default(), true).is_err());
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let mut rng = crate::rng::stream(31, "test-partition", 0);
        for _ in 0..2000 {
            let n = rng.random_range(0..=8);
            let props: Vec<ScoredProposal> = (0..n)
                .map(|_| {
                    let x = rng.random_range(0.0..30.0);
                    let y = rng.random_range(0.0..30.0);
                    prop(
                        x,
                        y,
                        x + rng.random_range(1.0..10.0),
                        y + rng.random_range(1.0..10.0),
                        rng.random_range(0.0..=1.0),
                    )
                })
                .collect();
            let gt: Vec<Annotation> = (0..rng.random_range(0..=3))
                .map(|k| {
                    ann(
                        k + 1,
                        rng.random_range(0.0..30.0),
                        rng.random_range(0.0..30.0),
                        rng.random_range(1.0..10.0),
                        rng.random_range(1.0..10.0),
                    )
                })
                .collect();
            let part = assign_proposals(&props, &gt, &Thresholds::default(), true).unwrap();
            let mut seen = vec![0u8; n];
            for &(i, _) in &part.labeled {
                seen[i] += 1;
            }
            for &i in part.unlabeled.iter().chain(part.background.iter()) {
                seen[i] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn raising_tau_ppm_never_grows_the_unlabeled_set() {
        let mut rng = crate::rng::stream(32, "test-ppm-monotone", 0);
        for _ in 0..500 {
            let props: Vec<ScoredProposal> = (0..8)
                .map(|_| {
                    let x = rng.random_range(0.0..30.0);
                    let y = rng.random_range(0.0..30.0);
                    prop(
                        x,
                        y,
                        x + rng.random_range(1.0..10.0),
                        y + rng.random_range(1.0..10.0),
                        rng.random_range(0.0..=1.0),
                    )
                })
                .collect();
            let gt = [ann(1, 5.0, 5.0, 8.0, 8.0)];
            let mut prev: Option<Vec<usize>> = None;
            for tau_ppm in [0.6, 0.7, 0.8, 0.9, 0.95] {
                let t = Thresholds {
                    tau_ppm,
                    ..Thresholds::default()
                };
                let part = assign_proposals(&props, &gt, &t, true).unwrap();
                if let Some(prev) = &prev {
                    assert!(part.unlabeled.iter().all(|i| prev.contains(i)));
                }
                prev = Some(part.unlabeled);
            }
        }
    }

    #[test]
    fn exact_missing_annotation_is_shielded() {
        // A proposal coinciding with a removed annotation, clear of kept gt,
        // must be mined rather than treated as a negative.
        let kept = [ann(1, 0.0, 0.0, 10.0, 10.0)];
        let removed_box = prop(40.0, 40.0, 52.0, 52.0, 0.95);
        let part = assign_proposals(&[removed_box], &kept, &Thresholds::default(), true).unwrap();
        assert_eq!(part.unlabeled, vec![0]);
    }

    #[test]
    fn ppm_gate_boundaries() {
        let s = PpmSchedule {
            warmup_iterations: 9000,
            current_iteration: 0,
        };
        assert!(!ppm_gate(&s));
        assert!(ppm_gate(&PpmSchedule {
            warmup_iterations: 9000,
            current_iteration: 9000,
        }));
        assert!(ppm_gate(&PpmSchedule {
            warmup_iterations: 0,
            current_iteration: 123,
        }));
    }

    #[test]
    fn dedupe_empty_unlabeled_set() {
        let part = Partition::default();
        assert!(dedupe_unlabeled(&[], &part, 0.5).unwrap().is_empty());
    }

    #[test]
    fn dedupe_keeps_highest_objectness() {
        let props = [
            prop(0.0, 0.0, 10.0, 10.0, 0.85),
            prop(0.1, 0.0, 10.1, 10.0, 0.9),
        ];
        let part = Partition {
            labeled: vec![],
            unlabeled: vec![0, 1],
            background: vec![],
        };
        let boxes = dedupe_unlabeled(&props, &part, 0.5).unwrap();
        assert_eq!(boxes, vec![props[1].bbox]);
    }

    #[test]
    fn dedupe_keeps_disjoint_boxes() {
        let props = [
            prop(0.0, 0.0, 5.0, 5.0, 0.9),
            prop(10.0, 0.0, 15.0, 5.0, 0.85),
            prop(20.0, 0.0, 25.0, 5.0, 0.95),
        ];
        let part = Partition {
            labeled: vec![],
            unlabeled: vec![0, 1, 2],
            background: vec![],
        };
        assert_eq!(dedupe_unlabeled(&props, &part, 0.5).unwrap().len(), 3);
    }

    #[test]
    fn dedupe_rejects_out_of_range_indices() {
        let part = Partition {
            labeled: vec![],
            unlabeled: vec![3],
            background: vec![],
        };
        assert!(dedupe_unlabeled(&[], &part, 0.5).is_err());
    }
}
