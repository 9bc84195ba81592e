//! Precision/recall curves and average precision under the two VOC protocols.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApProtocol {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    Voc07ElevenPoint,
    /// Area under the monotone precision envelope.
    AllPoints,
}

impl ApProtocol {
    pub const BOTH: [ApProtocol; 2] = [ApProtocol::Voc07ElevenPoint, ApProtocol::AllPoints];

    pub fn tag(self) -> &'static str {
        match self {
            ApProtocol::Voc07ElevenPoint => "voc07-11point",
            ApProtocol::AllPoints => "all-points",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "voc07-11point" | "voc07" | "11point" => Some(ApProtocol::Voc07ElevenPoint),
            "all-points" | "allpoints" => Some(ApProtocol::AllPoints),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
    pub protocol: ApProtocol,
}

/// Recall and precision after each ranked detection. `tp` holds one flag
/// per counted (non-ignored) detection in rank order.
pub fn pr_points(tp: &[bool], n_positives: usize) -> (Vec<f64>, Vec<f64>) {
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / n_positives as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    (recall, precision)
}

/// Average precision, or `None` when the class has no positives.
pub fn average_precision(tp: &[bool], n_positives: usize, protocol: ApProtocol) -> Option<f64> {
    if n_positives == 0 {
        return None;
    }
    let (recall, precision) = pr_points(tp, n_positives);
    Some(match protocol {
        ApProtocol::AllPoints => all_points(&recall, &precision),
        ApProtocol::Voc07ElevenPoint => eleven_point(&recall, &precision),
    })
}

pub fn pr_curve(tp: &[bool], n_positives: usize, protocol: ApProtocol) -> Option<PrCurve> {
    let ap = average_precision(tp, n_positives, protocol)?;
    let (recall, precision) = pr_points(tp, n_positives);
    Some(PrCurve {
        recall,
        precision,
        ap,
        protocol,
    })
}

fn all_points(recall: &[f64], precision: &[f64]) -> f64 {
    let n = recall.len();
    let mut mrec = Vec::with_capacity(n + 2);
    let mut mpre = Vec::with_capacity(n + 2);
    mrec.push(0.0);
    mpre.push(0.0);
    mrec.extend_from_slice(recall);
    mpre.extend_from_slice(precision);
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

fn eleven_point(recall: &[f64], precision: &[f64]) -> f64 {
    (0..=10)
        .map(|k| {
            let t = k as f64 / 10.0;
            recall
                .iter()
                .zip(precision)
                .filter(|(r, _)| **r >= t)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Mean over the classes whose AP is defined.
pub fn mean_ap(aps: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}
