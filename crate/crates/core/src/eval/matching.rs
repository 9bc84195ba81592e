//! Greedy VOC matching of a ranked detection list against ground truth.

use std::collections::HashMap;

use crate::detection::{Detection, GroundTruthObject};
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive { gt: usize },
    FalsePositive,
    /// Matched a difficult object; counts neither way.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub outcome: Outcome,
    /// Largest IoU with any same-class object of the image.
    pub max_overlap: f64,
    /// False positive sitting on an object already claimed by a
    /// higher-ranked detection.
    pub duplicate: bool,
}

impl MatchResult {
    pub fn is_tp(&self) -> bool {
        matches!(self.outcome, Outcome::TruePositive { .. })
    }

    pub fn is_fp(&self) -> bool {
        self.outcome == Outcome::FalsePositive
    }
}

/// Indices of the class-`class` objects of every image.
pub(crate) fn index_ground_truth(gts: &[GroundTruthObject], class: usize) -> HashMap<&str, Vec<usize>> {
    let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        if g.class_id == class {
            map.entry(g.image_id.as_str()).or_default().push(i);
        }
    }
    map
}

/// Number of non-difficult objects of `class`.
pub fn count_positives(gts: &[GroundTruthObject], class: usize) -> usize {
    gts.iter().filter(|g| g.class_id == class && !g.difficult).count()
}

/// Matches detections, given in rank order, to class-`class` objects.
///
/// Each detection takes the highest-IoU object among the difficult objects
/// and the not-yet-claimed regular objects of its image. Above
/// `iou_threshold` it becomes a true positive (or is ignored for a difficult
/// object); otherwise it is a false positive. Returned in input order.
pub fn match_detections(
    ranked: &[&Detection],
    gts: &[GroundTruthObject],
    class: usize,
    iou_threshold: f64,
) -> Vec<MatchResult> {
    let by_image = index_ground_truth(gts, class);
    let mut claimed = vec![false; gts.len()];
    ranked
        .iter()
        .map(|d| {
            let empty = Vec::new();
            let candidates = by_image.get(d.image_id.as_str()).unwrap_or(&empty);
            let mut best: Option<(usize, f64)> = None;
            let mut max_overlap = 0.0f64;
            let mut duplicate = false;
            for &g in candidates {
                let o = iou(&d.bbox, &gts[g].bbox);
                max_overlap = max_overlap.max(o);
                if claimed[g] {
                    duplicate |= o > iou_threshold;
                    continue;
                }
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            let outcome = match best {
                Some((g, o)) if o > iou_threshold => {
                    if gts[g].difficult {
                        Outcome::Ignored
                    } else {
                        claimed[g] = true;
                        Outcome::TruePositive { gt: g }
                    }
                }
                _ => Outcome::FalsePositive,
            };
            MatchResult {
                outcome,
                max_overlap,
                duplicate: duplicate && outcome == Outcome::FalsePositive,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn bb(b: [f64; 4]) -> BoundingBox {
        BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
    }

    fn det(b: [f64; 4]) -> Detection {
        Detection::new("im", 0, 0, bb(b), 0.5)
    }

    fn gt(b: [f64; 4], difficult: bool) -> GroundTruthObject {
        GroundTruthObject {
            image_id: "im".into(),
            class_id: 0,
            bbox: bb(b),
            difficult,
        }
    }

    #[test]
    fn single_overlap_above_threshold_is_tp() {
        // IoU 60/100
        let d = det([0.0, 0.0, 10.0, 6.0]);
        let m = match_detections(&[&d], &[gt([0.0, 0.0, 10.0, 10.0], false)], 0, 0.5);
        assert!(m[0].is_tp());
        assert!((m[0].max_overlap - 0.6).abs() < 1e-12);
    }

    #[test]
    fn second_detection_on_same_object_is_duplicate_fp() {
        let a = det([0.0, 0.0, 10.0, 9.0]);
        let b = det([0.0, 0.0, 10.0, 8.0]);
        let m = match_detections(&[&a, &b], &[gt([0.0, 0.0, 10.0, 10.0], false)], 0, 0.5);
        assert!(m[0].is_tp());
        assert!(m[1].is_fp());
        assert!(m[1].duplicate);
    }

    #[test]
    fn low_overlap_is_fp() {
        let d = det([0.0, 0.0, 10.0, 4.0]);
        let m = match_detections(&[&d], &[gt([0.0, 0.0, 10.0, 10.0], false)], 0, 0.5);
        assert!(m[0].is_fp());
        assert!(!m[0].duplicate);
    }

    #[test]
    fn exactly_half_overlap_is_not_enough() {
        let d = det([0.0, 0.0, 10.0, 5.0]);
        let m = match_detections(&[&d], &[gt([0.0, 0.0, 10.0, 10.0], false)], 0, 0.5);
        assert!(m[0].is_fp());
    }

    #[test]
    fn difficult_objects_are_ignored_and_never_claimed() {
        let a = det([0.0, 0.0, 10.0, 10.0]);
        let b = det([0.0, 0.0, 10.0, 9.0]);
        let m = match_detections(&[&a, &b], &[gt([0.0, 0.0, 10.0, 10.0], true)], 0, 0.5);
        assert_eq!(m[0].outcome, Outcome::Ignored);
        assert_eq!(m[1].outcome, Outcome::Ignored);
    }

    #[test]
    fn other_images_and_classes_do_not_match() {
        let d = det([0.0, 0.0, 10.0, 10.0]);
        let mut g = gt([0.0, 0.0, 10.0, 10.0], false);
        g.image_id = "other".into();
        let mut h = gt([0.0, 0.0, 10.0, 10.0], false);
        h.class_id = 1;
        let m = match_detections(&[&d], &[g, h], 0, 0.5);
        assert!(m[0].is_fp());
        assert_eq!(m[0].max_overlap, 0.0);
    }
}
