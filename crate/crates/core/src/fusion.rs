//! Merging the outputs of several detectors into one ranked list per class.
//!
//! Naive merges order the union by calibrated score (mode I), interleave
//! the per-detector lists (mode II) or concatenate them best detector first
//! (mode III). Learned re-ranking scores every detection with its class
//! model. All modes finish with a suppression pass restricted to
//! corresponding detections.

use std::cmp::Ordering;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::corpus::{format_detection, parse_detection, read_text, records, write_text, DetectionCorpus, LineCtx, Roster};
use crate::detection::{correspondences, Detection};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geometry::OverlapMeasure;
use crate::rankers::RankerModel;

/// Which detection pairs may suppress each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmsScope {
    /// Only pairs linked by the correspondence relation.
    #[default]
    Correspondence,
    /// Every pair in the same image and class.
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub threshold: f64,
    pub overlap: OverlapMeasure,
    pub scope: NmsScope,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.4,
            overlap: OverlapMeasure::Coverage,
            scope: NmsScope::Correspondence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub detection: Detection,
    pub final_score: f64,
    /// Position in the input corpus, the last tie-break.
    pub source_index: usize,
    pub suppressed: bool,
}

impl ScoredDetection {
    pub fn new(detection: Detection, final_score: f64, source_index: usize) -> Self {
        Self {
            detection,
            final_score,
            source_index,
            suppressed: false,
        }
    }

    fn base_score(&self) -> f64 {
        self.detection.best_score()
    }
}

/// Output order: final score, then base score (both descending), then
/// image id, then input position.
pub fn rank_order(a: &ScoredDetection, b: &ScoredDetection) -> Ordering {
    b.final_score
        .total_cmp(&a.final_score)
        .then_with(|| b.base_score().total_cmp(&a.base_score()))
        .then_with(|| a.detection.image_id.cmp(&b.detection.image_id))
        .then_with(|| a.source_index.cmp(&b.source_index))
}

/// Order used inside suppression. Everything but the input position is
/// compared first, so identical inputs in any order suppress identically.
fn nms_order(a: &ScoredDetection, b: &ScoredDetection) -> Ordering {
    let (da, db) = (&a.detection, &b.detection);
    b.final_score
        .total_cmp(&a.final_score)
        .then_with(|| b.base_score().total_cmp(&a.base_score()))
        .then_with(|| db.raw_score.total_cmp(&da.raw_score))
        .then_with(|| da.detector_id.cmp(&db.detector_id))
        .then_with(|| {
            da.bbox
                .coords()
                .iter()
                .zip(db.bbox.coords().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.source_index.cmp(&b.source_index))
}

/// Suppression flags for the detections of one image and one class, in the
/// order given.
///
/// Detections are visited by descending final score. Each detection that is
/// still standing is kept and suppresses every not-yet-visited detection it
/// is linked to whose overlap with it reaches the threshold.
pub fn cross_nms(group: &[ScoredDetection], n_detectors: usize, cfg: &NmsConfig) -> Vec<bool> {
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.sort_by(|&a, &b| nms_order(&group[a], &group[b]));
    let canon: Vec<Detection> = order.iter().map(|&i| group[i].detection.clone()).collect();
    let n = canon.len();

    let mut linked = vec![vec![false; n]; n];
    match cfg.scope {
        NmsScope::AllPairs => {
            for (i, row) in linked.iter_mut().enumerate() {
                for (j, l) in row.iter_mut().enumerate() {
                    *l = i != j;
                }
            }
        }
        NmsScope::Correspondence => {
            for i in 0..n {
                for p in correspondences(i, &canon, n_detectors).slots().iter().flatten() {
                    if p.index != i {
                        linked[i][p.index] = true;
                        linked[p.index][i] = true;
                    }
                }
            }
        }
    }

    let mut suppressed = vec![false; n];
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        for j in i + 1..n {
            if !suppressed[j]
                && linked[i][j]
                && cfg.overlap.eval(&canon[j].bbox, &canon[i].bbox) >= cfg.threshold
            {
                suppressed[j] = true;
            }
        }
    }
    let mut out = vec![false; n];
    for (k, &i) in order.iter().enumerate() {
        out[i] = suppressed[k];
    }
    out
}

/// Per-class ranked lists with suppression flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDetectionList {
    classes: Vec<Vec<ScoredDetection>>,
}

impl RankedDetectionList {
    /// Runs suppression per (image, class) and sorts every class list.
    pub fn build(
        scored: Vec<ScoredDetection>,
        n_classes: usize,
        n_detectors: usize,
        nms: Option<&NmsConfig>,
    ) -> Self {
        let mut classes: Vec<Vec<ScoredDetection>> = vec![Vec::new(); n_classes];
        for s in scored {
            let c = s.detection.class_id;
            classes[c].push(s);
        }
        classes.par_iter_mut().for_each(|list| {
            if let Some(cfg) = nms {
                let mut by_image: IndexMap<&str, Vec<usize>> = IndexMap::new();
                for (k, s) in list.iter().enumerate() {
                    by_image.entry(s.detection.image_id.as_str()).or_default().push(k);
                }
                let mut flags = vec![false; list.len()];
                for members in by_image.values() {
                    let group: Vec<ScoredDetection> = members.iter().map(|&k| list[k].clone()).collect();
                    for (&k, f) in members.iter().zip(cross_nms(&group, n_detectors, cfg)) {
                        flags[k] = f;
                    }
                }
                for (s, f) in list.iter_mut().zip(flags) {
                    s.suppressed = f;
                }
            }
            list.sort_by(rank_order);
        });
        Self { classes }
    }

    /// Wraps lists that are already in rank order.
    pub fn from_sorted(classes: Vec<Vec<ScoredDetection>>) -> Self {
        Self { classes }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Every entry of a class, suppressed ones included.
    pub fn class(&self, class: usize) -> &[ScoredDetection] {
        &self.classes[class]
    }

    /// Surviving detections of a class in rank order.
    pub fn ranked(&self, class: usize) -> Vec<&Detection> {
        self.classes[class]
            .iter()
            .filter(|s| !s.suppressed)
            .map(|s| &s.detection)
            .collect()
    }

    pub fn ranked_per_class(&self) -> Vec<Vec<&Detection>> {
        (0..self.classes.len()).map(|c| self.ranked(c)).collect()
    }

    /// Surviving detections of all classes.
    pub fn surviving(&self) -> Vec<Detection> {
        self.classes
            .iter()
            .flatten()
            .filter(|s| !s.suppressed)
            .map(|s| s.detection.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Detection records with the final score and a suppression flag
    /// appended, classes in roster order, each in rank order.
    pub fn to_text(&self, detectors: &Roster, classes: &Roster) -> String {
        let mut out = String::new();
        for s in self.classes.iter().flatten() {
            format_detection(&mut out, &s.detection, detectors, classes);
            out.push_str(&format!("\t{}\t{}\n", s.final_score, u8::from(s.suppressed)));
        }
        out
    }

    pub fn save(&self, path: &Path, detectors: &Roster, classes: &Roster) -> Result<()> {
        write_text(path, &self.to_text(detectors, classes))
    }

    /// Reads a fused file, keeping the stored order.
    pub fn parse(path: &Path, text: &str, detectors: &Roster, classes: &Roster) -> Result<Self> {
        let mut lists: Vec<Vec<ScoredDetection>> = vec![Vec::new(); classes.len()];
        for (k, (line, f)) in records(text).enumerate() {
            let ctx = LineCtx { path, line };
            ctx.expect_fields(&f, &[10])?;
            let d = parse_detection(&ctx, &f, detectors, classes)?;
            let final_score = ctx.real(f[8], "final_score")?;
            let suppressed = ctx.flag(f[9], "suppressed")?;
            let c = d.class_id;
            lists[c].push(ScoredDetection {
                detection: d,
                final_score,
                source_index: k,
                suppressed,
            });
        }
        Ok(Self { classes: lists })
    }

    pub fn load(path: &Path, detectors: &Roster, classes: &Roster) -> Result<Self> {
        Self::parse(path, &read_text(path)?, detectors, classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaiveMode {
    /// Union ordered by calibrated score.
    ScoreUnion,
    /// Round-robin over the per-detector lists.
    Interleave,
    /// Whole lists one after another, best detector first.
    Concatenate,
}

fn calibrated(d: &Detection) -> Result<f64> {
    d.calibrated_score.ok_or_else(|| {
        Error::Data(format!(
            "detection in image `{}` has no calibrated score; naive merging needs calibration",
            d.image_id
        ))
    })
}

/// Naive combination of all detectors. `detector_order` lists detector ids
/// best first; it sets the concatenation order of mode III and the turn
/// order of mode II.
pub fn naive_merge(
    corpus: &DetectionCorpus,
    mode: NaiveMode,
    detector_order: &[usize],
    nms: &NmsConfig,
) -> Result<RankedDetectionList> {
    let n_det = corpus.detectors().len();
    let n_cls = corpus.classes().len();
    let dets = corpus.detections();
    for d in dets {
        calibrated(d)?;
    }
    let scored = match mode {
        NaiveMode::ScoreUnion => dets
            .iter()
            .enumerate()
            .map(|(i, d)| ScoredDetection::new(d.clone(), d.calibrated_score.unwrap(), i))
            .collect(),
        NaiveMode::Interleave | NaiveMode::Concatenate => {
            let mut order: Vec<usize> = detector_order.to_vec();
            let mut seen = vec![false; n_det];
            for &j in &order {
                if j >= n_det || std::mem::replace(&mut seen[j], true) {
                    return Err(Error::Config(format!("invalid detector order {detector_order:?}")));
                }
            }
            order.extend((0..n_det).filter(|&j| !seen[j]));

            let mut out = Vec::with_capacity(dets.len());
            for c in 0..n_cls {
                // per-detector lists of this class, in calibrated-score order
                let mut lists: Vec<Vec<ScoredDetection>> = vec![Vec::new(); n_det];
                for (i, d) in dets.iter().enumerate().filter(|(_, d)| d.class_id == c) {
                    lists[d.detector_id].push(ScoredDetection::new(d.clone(), d.calibrated_score.unwrap(), i));
                }
                for l in &mut lists {
                    l.sort_by(rank_order);
                }
                let total: usize = lists.iter().map(Vec::len).sum();
                let mut merged = Vec::with_capacity(total);
                if mode == NaiveMode::Concatenate {
                    for &j in &order {
                        merged.append(&mut lists[j]);
                    }
                } else {
                    let mut cursors = vec![0usize; n_det];
                    while merged.len() < total {
                        for &j in &order {
                            if let Some(s) = lists[j].get(cursors[j]) {
                                merged.push(s.clone());
                                cursors[j] += 1;
                            }
                        }
                    }
                }
                for (pos, mut s) in merged.into_iter().enumerate() {
                    s.final_score = 1.0 - pos as f64 / total as f64;
                    out.push(s);
                }
            }
            out
        }
    };
    Ok(RankedDetectionList::build(scored, n_cls, n_det, Some(nms)))
}

/// Scores every detection with its class model, then suppresses.
/// `features` rows follow the corpus order.
pub fn rerank(
    corpus: &DetectionCorpus,
    features: &FeatureMatrix,
    models: &[RankerModel],
    nms: &NmsConfig,
) -> Result<RankedDetectionList> {
    let n_cls = corpus.classes().len();
    if features.len() != corpus.len() {
        return Err(Error::DimensionMismatch {
            expected: corpus.len(),
            actual: features.len(),
        });
    }
    let mut by_class: Vec<Option<&RankerModel>> = vec![None; n_cls];
    for m in models {
        if m.class_id >= n_cls {
            return Err(Error::Data(format!("model for unknown class id {}", m.class_id)));
        }
        by_class[m.class_id] = Some(m);
    }
    let scored = corpus
        .detections()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let m = by_class[d.class_id].ok_or_else(|| {
                Error::Data(format!(
                    "no ranking model for class `{}`",
                    corpus.classes().name(d.class_id)
                ))
            })?;
            Ok(ScoredDetection::new(d.clone(), m.score(features.row(i))?, i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedDetectionList::build(
        scored,
        n_cls,
        corpus.detectors().len(),
        Some(nms),
    ))
}

/// Re-ranking of one detector's output with features computed on a
/// one-detector roster.
pub fn single_detector_rerank(
    corpus: &DetectionCorpus,
    features: &FeatureMatrix,
    models: &[RankerModel],
    nms: &NmsConfig,
) -> Result<RankedDetectionList> {
    if corpus.detectors().len() != 1 {
        return Err(Error::Data(format!(
            "single-detector re-ranking needs a one-detector corpus, got {} detectors",
            corpus.detectors().len()
        )));
    }
    rerank(corpus, features, models, nms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn bb(b: [f64; 4]) -> BoundingBox {
        BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
    }

    fn scored(detector: usize, b: [f64; 4], score: f64, idx: usize) -> ScoredDetection {
        let d = Detection::new("im", 0, detector, bb(b), score).with_calibrated(score);
        ScoredDetection::new(d, score, idx)
    }

    #[test]
    fn identical_boxes_suppress_the_lower() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let g = vec![scored(0, b, 0.9, 0), scored(1, b, 0.8, 1)];
        assert_eq!(cross_nms(&g, 2, &NmsConfig::default()), vec![false, true]);
    }

    #[test]
    fn low_coverage_keeps_both() {
        // second box covered 30%
        let g = vec![
            scored(0, [0.0, 0.0, 10.0, 10.0], 0.9, 0),
            scored(1, [7.0, 0.0, 17.0, 10.0], 0.8, 1),
        ];
        assert_eq!(cross_nms(&g, 2, &NmsConfig::default()), vec![false, false]);
    }

    #[test]
    fn correspondence_chain() {
        // a covers half of b, b covers half of c, a and c disjoint
        let g = vec![
            scored(0, [0.0, 0.0, 10.0, 10.0], 0.9, 0),
            scored(1, [5.0, 0.0, 15.0, 10.0], 0.8, 1),
            scored(2, [10.0, 0.0, 20.0, 10.0], 0.7, 2),
        ];
        assert_eq!(cross_nms(&g, 3, &NmsConfig::default()), vec![false, true, false]);
    }

    #[test]
    fn same_detector_duplicates_only_meet_under_all_pairs() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let g = vec![scored(0, b, 0.9, 0), scored(0, b, 0.8, 1)];
        assert_eq!(cross_nms(&g, 1, &NmsConfig::default()), vec![false, false]);
        let all = NmsConfig {
            scope: NmsScope::AllPairs,
            ..NmsConfig::default()
        };
        assert_eq!(cross_nms(&g, 1, &all), vec![false, true]);
    }

    fn corpus(dets: Vec<Detection>, n_det: usize) -> DetectionCorpus {
        let names: Vec<String> = (0..n_det).map(|i| format!("d{i}")).collect();
        DetectionCorpus::new(
            Roster::detectors(names).unwrap(),
            Roster::classes(["cat"]).unwrap(),
            dets,
        )
        .unwrap()
    }

    fn det(detector: usize, x: f64, s: f64) -> Detection {
        Detection::new("im", 0, detector, bb([x, 0.0, x + 10.0, 10.0]), s).with_calibrated(s)
    }

    #[test]
    fn interleave_alternates_detectors() {
        let c = corpus(
            vec![det(0, 0.0, 0.9), det(0, 100.0, 0.1), det(1, 200.0, 0.8), det(1, 300.0, 0.7)],
            2,
        );
        let out = naive_merge(&c, NaiveMode::Interleave, &[0, 1], &NmsConfig::default()).unwrap();
        let scores: Vec<f64> = out.ranked(0).iter().map(|d| d.raw_score).collect();
        assert_eq!(scores, vec![0.9, 0.8, 0.1, 0.7]);
        let finals: Vec<f64> = out.class(0).iter().map(|s| s.final_score).collect();
        assert_eq!(finals, vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn concatenate_puts_the_best_detector_first() {
        let c = corpus(vec![det(0, 0.0, 0.9), det(1, 200.0, 0.95)], 2);
        let out = naive_merge(&c, NaiveMode::Concatenate, &[0, 1], &NmsConfig::default()).unwrap();
        let scores: Vec<f64> = out.ranked(0).iter().map(|d| d.raw_score).collect();
        assert_eq!(scores, vec![0.9, 0.95]);
    }

    #[test]
    fn score_union_orders_by_calibrated_score() {
        let c = corpus(vec![det(0, 0.0, 0.5), det(1, 200.0, 0.6)], 2);
        let out = naive_merge(&c, NaiveMode::ScoreUnion, &[0, 1], &NmsConfig::default()).unwrap();
        assert_eq!(out.ranked(0)[0].detector_id, 1);
    }

    #[test]
    fn naive_merge_requires_calibration() {
        let d = Detection::new("im", 0, 0, bb([0.0, 0.0, 1.0, 1.0]), 0.5);
        let c = corpus(vec![d], 1);
        assert!(naive_merge(&c, NaiveMode::ScoreUnion, &[0], &NmsConfig::default()).is_err());
    }

    #[test]
    fn rerank_needs_a_model_per_class() {
        let c = corpus(vec![det(0, 0.0, 0.5)], 1);
        let f = FeatureMatrix {
            dim: 1,
            image_ids: vec!["im".into()],
            rows: vec![vec![0.5]],
        };
        assert!(rerank(&c, &f, &[], &NmsConfig::default()).is_err());
        let m = RankerModel::from_weights(0, vec![1.0], 0.0);
        assert_eq!(rerank(&c, &f, &[m], &NmsConfig::default()).unwrap().ranked(0).len(), 1);
    }

    #[test]
    fn fused_file_round_trip() {
        let c = corpus(vec![det(0, 0.0, 0.5), det(1, 0.0, 0.6)], 2);
        let out = naive_merge(&c, NaiveMode::ScoreUnion, &[0, 1], &NmsConfig::default()).unwrap();
        let text = out.to_text(c.detectors(), c.classes());
        let back = RankedDetectionList::parse(Path::new("f"), &text, c.detectors(), c.classes()).unwrap();
        assert_eq!(back.ranked_per_class().len(), 1);
        assert_eq!(back.to_text(c.detectors(), c.classes()), text);
        assert_eq!(back.ranked(0).len(), 1);
    }
}
