//! VOC-protocol evaluation and the analyses built on it.

pub mod ap;
pub mod bound;
pub mod importance;
pub mod matching;
pub mod taxonomy;

use crate::corpus::{group_ground_truth, Roster};
use crate::detection::{Detection, GroundTruthObject};
use crate::error::{Error, Result};

use ap::{average_precision, mean_ap, pr_points, ApProtocol};
use matching::{count_positives, match_detections, MatchResult, Outcome};
use taxonomy::{classify_fp, FpType, SimilarityGroups, TaxonomyRow};

pub use importance::feature_importance;

#[derive(Debug, Clone)]
pub struct ClassEvaluation {
    pub class_id: usize,
    pub n_positives: usize,
    /// Match results in rank order, one per detection.
    pub matches: Vec<MatchResult>,
    /// True-positive flags of the counted (non-ignored) detections.
    pub tp: Vec<bool>,
    pub ap_voc07: Option<f64>,
    pub ap_all_points: Option<f64>,
}

impl ClassEvaluation {
    pub fn ap(&self, protocol: ApProtocol) -> Option<f64> {
        match protocol {
            ApProtocol::Voc07ElevenPoint => self.ap_voc07,
            ApProtocol::AllPoints => self.ap_all_points,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub classes: Vec<ClassEvaluation>,
}

impl EvalReport {
    pub fn map(&self, protocol: ApProtocol) -> Option<f64> {
        mean_ap(&self.classes.iter().map(|c| c.ap(protocol)).collect::<Vec<_>>())
    }
}

pub fn evaluate_class(
    ranked: &[&Detection],
    gts: &[GroundTruthObject],
    class: usize,
    iou_threshold: f64,
) -> ClassEvaluation {
    let matches = match_detections(ranked, gts, class, iou_threshold);
    let tp: Vec<bool> = matches
        .iter()
        .filter(|m| m.outcome != Outcome::Ignored)
        .map(MatchResult::is_tp)
        .collect();
    let n_positives = count_positives(gts, class);
    ClassEvaluation {
        class_id: class,
        n_positives,
        ap_voc07: average_precision(&tp, n_positives, ApProtocol::Voc07ElevenPoint),
        ap_all_points: average_precision(&tp, n_positives, ApProtocol::AllPoints),
        matches,
        tp,
    }
}

/// Evaluates one ranked list per class (index = class id).
pub fn evaluate(
    ranked_per_class: &[Vec<&Detection>],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
) -> EvalReport {
    EvalReport {
        classes: ranked_per_class
            .iter()
            .enumerate()
            .map(|(c, ranked)| evaluate_class(ranked, gts, c, iou_threshold))
            .collect(),
    }
}

/// Types every false positive of an evaluated class, in rank order.
pub fn false_positive_types(
    ranked: &[&Detection],
    evaluation: &ClassEvaluation,
    gts: &[GroundTruthObject],
    groups: &SimilarityGroups,
) -> Vec<FpType> {
    let by_image = group_ground_truth(gts);
    ranked
        .iter()
        .zip(&evaluation.matches)
        .filter(|(_, m)| m.is_fp())
        .map(|(d, m)| {
            let image_gts = by_image.get(d.image_id.as_str()).map_or(&[][..], |v| &v[..]);
            classify_fp(d, m, image_gts, groups)
        })
        .collect()
}

pub(crate) fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)
            .map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv: {e}")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// Per-class AP table with mAP, both protocols side by side.
pub fn ap_table_text(report: &EvalReport, classes: &Roster, title: &str) -> String {
    let width = classes.names().iter().map(String::len).max().unwrap_or(5).max(5);
    let mut out = format!("# {title}\n");
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>13}  {:>10}\n",
        "class", "n_gt", "voc07-11point", "all-points"
    ));
    for c in &report.classes {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>13}  {:>10}\n",
            classes.name(c.class_id),
            c.n_positives,
            fmt_opt(c.ap_voc07),
            fmt_opt(c.ap_all_points)
        ));
    }
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>13}  {:>10}\n",
        "mAP",
        "",
        fmt_opt(report.map(ApProtocol::Voc07ElevenPoint)),
        fmt_opt(report.map(ApProtocol::AllPoints))
    ));
    out
}

pub fn ap_table_csv(report: &EvalReport, classes: &Roster) -> Result<String> {
    let mut rows = vec![vec![
        "class".to_string(),
        "n_gt".to_string(),
        "ap_voc07_11point".to_string(),
        "ap_all_points".to_string(),
    ]];
    for c in &report.classes {
        rows.push(vec![
            classes.name(c.class_id).to_string(),
            c.n_positives.to_string(),
            fmt_opt(c.ap_voc07),
            fmt_opt(c.ap_all_points),
        ]);
    }
    rows.push(vec![
        "mAP".to_string(),
        String::new(),
        fmt_opt(report.map(ApProtocol::Voc07ElevenPoint)),
        fmt_opt(report.map(ApProtocol::AllPoints)),
    ]);
    csv_string(rows)
}

/// Precision/recall points of every class, one row per counted detection.
pub fn pr_curves_csv(report: &EvalReport, classes: &Roster) -> Result<String> {
    let mut rows = vec![vec![
        "class".to_string(),
        "rank".to_string(),
        "recall".to_string(),
        "precision".to_string(),
    ]];
    for c in &report.classes {
        if c.n_positives == 0 {
            continue;
        }
        let (r, p) = pr_points(&c.tp, c.n_positives);
        for (k, (r, p)) in r.iter().zip(&p).enumerate() {
            rows.push(vec![
                classes.name(c.class_id).to_string(),
                (k + 1).to_string(),
                format!("{r:.6}"),
                format!("{p:.6}"),
            ]);
        }
    }
    csv_string(rows)
}

pub fn taxonomy_csv(rows: &[(String, Vec<TaxonomyRow>)]) -> Result<String> {
    let mut out = vec![vec![
        "group".to_string(),
        "fp_count".to_string(),
        "loc".to_string(),
        "sim".to_string(),
        "oth".to_string(),
        "bg".to_string(),
    ]];
    for (group, table) in rows {
        for r in table {
            let mut row = vec![group.clone(), r.fp_count.to_string()];
            row.extend(r.fractions.iter().map(|f| format!("{f:.6}")));
            out.push(row);
        }
    }
    csv_string(out)
}

pub fn importance_csv(names: &[String], importance: &[f64]) -> Result<String> {
    let mut rows = vec![vec!["feature".to_string(), "mean_abs_weight".to_string()]];
    for (n, v) in names.iter().zip(importance) {
        rows.push(vec![n.clone(), format!("{v:.6}")]);
    }
    csv_string(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    #[test]
    fn csv_quotes_fields_with_commas() {
        let s = csv_string(vec![vec!["a,b".into(), "c".into()]]).unwrap();
        assert_eq!(s, "\"a,b\",c\n");
    }

    #[test]
    fn report_lists_both_protocols() {
        let classes = Roster::classes(["cat"]).unwrap();
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let d = Detection::new("im", 0, 0, b, 1.0);
        let g = GroundTruthObject {
            image_id: "im".into(),
            class_id: 0,
            bbox: b,
            difficult: false,
        };
        let report = evaluate(&[vec![&d]], &[g], 0.5);
        assert_eq!(report.map(ApProtocol::AllPoints), Some(1.0));
        let text = ap_table_text(&report, &classes, "t");
        assert!(text.contains("1.000000"));
        assert!(ap_table_csv(&report, &classes).unwrap().starts_with("class,n_gt"));
    }
}
