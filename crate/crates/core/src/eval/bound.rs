//! Maximal AP: the AP a list would reach if every detection that can be a
//! true positive were ranked above all the others.

use std::collections::HashMap;

use crate::config::BoundMatching;
use crate::detection::{Detection, GroundTruthObject};
use crate::eval::ap::{average_precision, mean_ap, ApProtocol};
use crate::eval::matching::{count_positives, index_ground_truth};
use crate::geometry::iou;

/// Size of a maximum-cardinality matching between detections and objects,
/// where an edge exists when IoU exceeds the threshold (augmenting paths).
pub fn maximum_matching(adjacency: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(
        u: usize,
        adjacency: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &v in &adjacency[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adjacency, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut size = 0;
    for u in 0..adjacency.len() {
        let mut seen = vec![false; n_right];
        if augment(u, adjacency, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Number of detections of `class` that can be simultaneously matched to
/// distinct non-difficult objects.
pub fn matchable_count(
    dets: &[&Detection],
    gts: &[GroundTruthObject],
    class: usize,
    iou_threshold: f64,
    strategy: BoundMatching,
) -> usize {
    let by_image = index_ground_truth(gts, class);
    let mut per_image: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for d in dets.iter().filter(|d| d.class_id == class) {
        per_image.entry(d.image_id.as_str()).or_default().push(d);
    }
    let mut total = 0;
    for (image, ds) in per_image {
        let Some(objs) = by_image.get(image) else { continue };
        let objs: Vec<&GroundTruthObject> =
            objs.iter().map(|&g| &gts[g]).filter(|g| !g.difficult).collect();
        let adjacency: Vec<Vec<usize>> = ds
            .iter()
            .map(|d| {
                (0..objs.len())
                    .filter(|&k| iou(&d.bbox, &objs[k].bbox) > iou_threshold)
                    .collect()
            })
            .collect();
        total += match strategy {
            BoundMatching::Maximum => maximum_matching(&adjacency, objs.len()),
            BoundMatching::Greedy => greedy_matching(&ds, &objs, &adjacency),
        };
    }
    total
}

/// Greedy alternative: detections in descending score order take their
/// highest-IoU free object.
fn greedy_matching(dets: &[&Detection], objs: &[&GroundTruthObject], adjacency: &[Vec<usize>]) -> usize {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].best_score().total_cmp(&dets[a].best_score()).then(a.cmp(&b)));
    let mut taken = vec![false; objs.len()];
    let mut n = 0;
    for u in order {
        let best = adjacency[u]
            .iter()
            .filter(|&&v| !taken[v])
            .max_by(|&&a, &&b| {
                iou(&dets[u].bbox, &objs[a].bbox)
                    .total_cmp(&iou(&dets[u].bbox, &objs[b].bbox))
                    .then(b.cmp(&a))
            });
        if let Some(&v) = best {
            taken[v] = true;
            n += 1;
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalMap {
    /// Per class: (matchable detections, positives, maximal AP).
    pub per_class: Vec<(usize, usize, Option<f64>)>,
    pub map: Option<f64>,
}

/// AP of the ideal ranking: `matchable` hits first, then nothing else counts.
pub fn maximal_ap(matchable: usize, n_positives: usize, protocol: ApProtocol) -> Option<f64> {
    average_precision(&vec![true; matchable], n_positives, protocol)
}

pub fn maximal_map(
    dets: &[&Detection],
    gts: &[GroundTruthObject],
    n_classes: usize,
    iou_threshold: f64,
    strategy: BoundMatching,
    protocol: ApProtocol,
) -> MaximalMap {
    let per_class: Vec<(usize, usize, Option<f64>)> = (0..n_classes)
        .map(|c| {
            let k = matchable_count(dets, gts, c, iou_threshold, strategy);
            let n = count_positives(gts, c);
            (k, n, maximal_ap(k, n, protocol))
        })
        .collect();
    let map = mean_ap(&per_class.iter().map(|p| p.2).collect::<Vec<_>>());
    MaximalMap { per_class, map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    #[test]
    fn augmenting_paths_beat_greedy_choice() {
        // det0 can take obj0 or obj1, det1 only obj0
        let adj = vec![vec![0, 1], vec![0]];
        assert_eq!(maximum_matching(&adj, 2), 2);
        assert_eq!(maximum_matching(&[vec![0], vec![0]], 1), 1);
        assert_eq!(maximum_matching(&[], 3), 0);
    }

    #[test]
    fn greedy_can_fall_short() {
        // one wide detection overlapping two objects, best IoU with obj0,
        // and a second detection that only fits obj0
        let obj0 = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let obj1 = BoundingBox::new(4.0, 0.0, 14.0, 10.0).unwrap();
        let wide = Detection::new("im", 0, 0, BoundingBox::new(1.0, 0.0, 12.0, 10.0).unwrap(), 0.9);
        let left = Detection::new("im", 0, 0, BoundingBox::new(0.0, 0.0, 9.0, 10.0).unwrap(), 0.1);
        let gts: Vec<GroundTruthObject> = [obj0, obj1]
            .into_iter()
            .map(|b| GroundTruthObject {
                image_id: "im".into(),
                class_id: 0,
                bbox: b,
                difficult: false,
            })
            .collect();
        let dets = [&wide, &left];
        assert_eq!(matchable_count(&dets, &gts, 0, 0.5, BoundMatching::Maximum), 2);
        assert_eq!(matchable_count(&dets, &gts, 0, 0.5, BoundMatching::Greedy), 1);
    }

    #[test]
    fn maximal_ap_is_recall_for_all_points() {
        assert_eq!(maximal_ap(2, 4, ApProtocol::AllPoints), Some(0.5));
        assert_eq!(maximal_ap(4, 4, ApProtocol::AllPoints), Some(1.0));
        assert_eq!(maximal_ap(0, 0, ApProtocol::AllPoints), None);
    }
}
