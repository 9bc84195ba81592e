//! False-positive taxonomy: poor localization, confusion with a similar
//! class, confusion with another class, and background.

use crate::corpus::Roster;
use crate::detection::{Detection, GroundTruthObject};
use crate::error::{Error, Result};
use crate::eval::matching::MatchResult;
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FpType {
    Loc,
    Sim,
    Oth,
    Bg,
}

impl FpType {
    pub const ALL: [FpType; 4] = [FpType::Loc, FpType::Sim, FpType::Oth, FpType::Bg];

    pub fn name(self) -> &'static str {
        match self {
            FpType::Loc => "loc",
            FpType::Sim => "sim",
            FpType::Oth => "oth",
            FpType::Bg => "bg",
        }
    }
}

/// Partition of the classes into similarity groups. Classes outside every
/// group are only similar to themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGroups {
    names: Vec<String>,
    group_of: Vec<Option<usize>>,
}

const VOC_GROUPS: &[(&str, &[&str])] = &[
    ("animal", &["bird", "cat", "cow", "dog", "horse", "sheep"]),
    ("furniture", &["chair", "diningtable", "sofa"]),
    (
        "vehicle",
        &["aeroplane", "bicycle", "boat", "bus", "car", "motorbike", "train"],
    ),
    ("person", &["person"]),
];

impl SimilarityGroups {
    pub fn new(classes: &Roster, groups: &[(String, Vec<String>)]) -> Result<Self> {
        let mut group_of = vec![None; classes.len()];
        let mut names = Vec::new();
        for (gi, (name, members)) in groups.iter().enumerate() {
            names.push(name.clone());
            for m in members {
                let c = classes.id(m).map_err(|_| {
                    Error::Config(format!("similarity group `{name}` names unknown class `{m}`"))
                })?;
                if group_of[c].is_some() {
                    return Err(Error::Config(format!("class `{m}` is in two similarity groups")));
                }
                group_of[c] = Some(gi);
            }
        }
        Ok(Self { names, group_of })
    }

    /// Animal, furniture and vehicle groups plus person, restricted to the
    /// classes present in the roster.
    pub fn default_for(classes: &Roster) -> Self {
        let groups: Vec<(String, Vec<String>)> = VOC_GROUPS
            .iter()
            .map(|(g, members)| {
                (
                    g.to_string(),
                    members
                        .iter()
                        .filter(|m| classes.id(m).is_ok())
                        .map(|m| m.to_string())
                        .collect(),
                )
            })
            .filter(|(_, m): &(String, Vec<String>)| !m.is_empty())
            .collect();
        Self::new(classes, &groups).expect("filtered to known classes")
    }

    pub fn group(&self, class: usize) -> Option<usize> {
        self.group_of.get(class).copied().flatten()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.group_of.len())
            .filter(|&c| self.group_of[c] == Some(group))
            .collect()
    }

    pub fn similar(&self, a: usize, b: usize) -> bool {
        a != b && self.group(a).is_some() && self.group(a) == self.group(b)
    }
}

/// Types one false positive of class `class`. `image_gts` are all objects of
/// the detection's image, any class.
pub fn classify_fp(
    det: &Detection,
    m: &MatchResult,
    image_gts: &[&GroundTruthObject],
    groups: &SimilarityGroups,
) -> FpType {
    if m.duplicate || (0.1..=0.5).contains(&m.max_overlap) {
        return FpType::Loc;
    }
    let mut sim = false;
    let mut oth = false;
    for g in image_gts.iter().filter(|g| g.class_id != det.class_id) {
        if iou(&det.bbox, &g.bbox) >= 0.1 {
            if groups.similar(det.class_id, g.class_id) {
                sim = true;
            } else {
                oth = true;
            }
        }
    }
    if sim {
        FpType::Sim
    } else if oth {
        FpType::Oth
    } else {
        FpType::Bg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyRow {
    /// Number of top-ranked false positives considered.
    pub fp_count: usize,
    /// Fractions in `FpType::ALL` order.
    pub fractions: [f64; 4],
}

/// Default reporting points: 25, 50, 100, ... below the total, then the total.
pub fn default_buckets(total: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut b = 25;
    while b < total {
        out.push(b);
        b *= 2;
    }
    if total > 0 {
        out.push(total);
    }
    out
}

/// Cumulative type fractions among the top `n` false positives for each
/// bucket `n`. `types` lists false positives in rank order.
pub fn fp_taxonomy(types: &[FpType], buckets: &[usize]) -> Vec<TaxonomyRow> {
    buckets
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let n = n.min(types.len());
            let mut counts = [0usize; 4];
            for t in &types[..n] {
                counts[FpType::ALL.iter().position(|x| x == t).unwrap()] += 1;
            }
            let mut fractions = [0.0; 4];
            for (f, c) in fractions.iter_mut().zip(counts) {
                *f = c as f64 / n as f64;
            }
            TaxonomyRow {
                fp_count: n,
                fractions,
            }
        })
        .filter(|r| r.fp_count > 0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::matching::{match_detections, Outcome};
    use crate::geometry::BoundingBox;

    fn bb(b: [f64; 4]) -> BoundingBox {
        BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
    }

    fn roster() -> Roster {
        Roster::classes(["cat", "dog", "car"]).unwrap()
    }

    fn gt(class: usize, b: [f64; 4]) -> GroundTruthObject {
        GroundTruthObject {
            image_id: "im".into(),
            class_id: class,
            bbox: bb(b),
            difficult: false,
        }
    }

    fn fp(max_overlap: f64, duplicate: bool) -> MatchResult {
        MatchResult {
            outcome: Outcome::FalsePositive,
            max_overlap,
            duplicate,
        }
    }

    #[test]
    fn duplicate_is_loc() {
        let g = gt(0, [0.0, 0.0, 10.0, 10.0]);
        let a = Detection::new("im", 0, 0, bb([0.0, 0.0, 10.0, 10.0]), 0.9);
        let b = Detection::new("im", 0, 0, bb([0.0, 0.0, 10.0, 9.0]), 0.8);
        let gts = vec![g];
        let m = match_detections(&[&a, &b], &gts, 0, 0.5);
        let groups = SimilarityGroups::default_for(&roster());
        assert_eq!(classify_fp(&b, &m[1], &[&gts[0]], &groups), FpType::Loc);
    }

    #[test]
    fn weak_overlap_with_own_class_is_loc() {
        let g = gt(0, [0.0, 0.0, 10.0, 10.0]);
        // IoU 30/100
        let d = Detection::new("im", 0, 0, bb([0.0, 0.0, 10.0, 3.0]), 0.9);
        let m = match_detections(&[&d], std::slice::from_ref(&g), 0, 0.5);
        assert!((m[0].max_overlap - 0.3).abs() < 1e-12);
        let groups = SimilarityGroups::default_for(&roster());
        assert_eq!(classify_fp(&d, &m[0], &[&g], &groups), FpType::Loc);
    }

    #[test]
    fn isolated_fp_is_background() {
        let g = gt(0, [0.0, 0.0, 10.0, 10.0]);
        let d = Detection::new("im", 0, 0, bb([50.0, 50.0, 60.0, 60.0]), 0.9);
        let groups = SimilarityGroups::default_for(&roster());
        assert_eq!(classify_fp(&d, &fp(0.0, false), &[&g], &groups), FpType::Bg);
    }

    #[test]
    fn similar_and_other_class_confusions() {
        let groups = SimilarityGroups::default_for(&roster());
        let dog = gt(1, [0.0, 0.0, 10.0, 10.0]);
        let car = gt(2, [0.0, 0.0, 10.0, 10.0]);
        let d = Detection::new("im", 0, 0, bb([0.0, 0.0, 10.0, 10.0]), 0.9);
        assert_eq!(classify_fp(&d, &fp(0.0, false), &[&dog], &groups), FpType::Sim);
        assert_eq!(classify_fp(&d, &fp(0.0, false), &[&car], &groups), FpType::Oth);
        assert_eq!(classify_fp(&d, &fp(0.0, false), &[&car, &dog], &groups), FpType::Sim);
    }

    #[test]
    fn unknown_group_member_rejected() {
        let r = SimilarityGroups::new(&roster(), &[("pets".into(), vec!["cat".into(), "cow".into()])]);
        assert!(r.is_err());
    }

    #[test]
    fn fractions_sum_to_one() {
        let types = [FpType::Bg, FpType::Loc, FpType::Loc, FpType::Oth, FpType::Sim];
        for row in fp_taxonomy(&types, &[1, 2, 3, 5, 9]) {
            let s: f64 = row.fractions.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(default_buckets(120), vec![25, 50, 100, 120]);
        assert!(default_buckets(0).is_empty());
    }
}
