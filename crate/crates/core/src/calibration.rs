//! Platt sigmoid calibration of raw detector scores.
//!
//! Scores of independently trained detectors live on unrelated scales; a
//! sigmoid `1 / (1 + exp(x * alpha + beta))` fitted per detector (and by
//! default per class) maps each onto a probability of being a true positive.

use std::path::Path;

use crate::config::CalibrationScope;
use crate::corpus::{read_text, records, write_text, DetectionCorpus, LineCtx, Roster};
use crate::detection::GroundTruthObject;
use crate::error::{Error, Result};
use crate::eval::matching::{match_detections, Outcome};

const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-8;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattParams {
    pub alpha: f64,
    pub beta: f64,
}

impl PlattParams {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn apply(&self, x: f64) -> f64 {
        apply_platt(*self, x)
    }
}

/// `1 / (1 + exp(x * alpha + beta))`, kept strictly inside (0, 1).
pub fn apply_platt(p: PlattParams, x: f64) -> f64 {
    let z = x * p.alpha + p.beta;
    let v = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Prior-corrected targets: positives map to `(N+ + 1)/(N+ + 2)`, negatives
/// to `1/(N- + 2)`.
pub fn smoothed_targets(labels: &[bool]) -> Vec<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    labels.iter().map(|&l| if l { hi } else { lo }).collect()
}

/// Cross-entropy between the sigmoid and the targets.
pub fn platt_objective(scores: &[f64], targets: &[f64], p: PlattParams) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&x, &t)| {
            let z = x * p.alpha + p.beta;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Gradient of [`platt_objective`] with respect to `(alpha, beta)`.
pub fn platt_gradient(scores: &[f64], targets: &[f64], p: PlattParams) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (&x, &t) in scores.iter().zip(targets) {
        let d = t - apply_unclamped(p, x);
        g[0] += x * d;
        g[1] += d;
    }
    g
}

fn apply_unclamped(p: PlattParams, x: f64) -> f64 {
    let z = x * p.alpha + p.beta;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Fits Platt parameters by damped Newton iterations with backtracking.
///
/// The inputs are sorted before fitting, so the result does not depend on
/// the order in which samples are supplied.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattParams> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite calibration score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateCalibration(format!(
            "{} samples, {} positive; both classes are required",
            labels.len(),
            n_pos
        )));
    }

    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ls: Vec<bool> = pairs.iter().map(|p| p.1).collect();
    let t = smoothed_targets(&ls);

    let n_neg = (ls.len() - n_pos) as f64;
    let mut p = PlattParams::new(0.0, ((n_neg + 1.0) / (n_pos as f64 + 1.0)).ln());
    let mut f = platt_objective(&xs, &t, p);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&x, &ti) in xs.iter().zip(&t) {
            let q = apply_unclamped(p, x);
            let d2 = q * (1.0 - q);
            h11 += x * x * d2;
            h22 += d2;
            h21 += x * d2;
            let d1 = ti - q;
            g1 += x * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-12 && g2.abs() < 1e-12 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let slope = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand = PlattParams::new(p.alpha + step * da, p.beta + step * db);
            let fc = platt_objective(&xs, &t, cand);
            if fc < f + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let rel = (f - fc) / f.abs().max(f64::MIN_POSITIVE);
        p = cand;
        f = fc;
        if rel < REL_TOL {
            break;
        }
    }
    if !(p.alpha.is_finite() && p.beta.is_finite()) {
        return Err(Error::Numeric("calibration diverged".into()));
    }
    Ok(p)
}

/// Platt parameters for every (detector, class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    n_classes: usize,
    params: Vec<PlattParams>,
}

impl CalibrationTable {
    pub fn uniform(n_detectors: usize, n_classes: usize, p: PlattParams) -> Self {
        Self {
            n_classes,
            params: vec![p; n_detectors * n_classes],
        }
    }

    pub fn get(&self, detector: usize, class: usize) -> PlattParams {
        self.params[detector * self.n_classes + class]
    }

    pub fn set(&mut self, detector: usize, class: usize, p: PlattParams) {
        self.params[detector * self.n_classes + class] = p;
    }

    /// Fills in `calibrated_score` for every detection of the corpus.
    pub fn apply(&self, corpus: &mut DetectionCorpus) -> Result<()> {
        let n_det = corpus.detectors().len();
        if n_det * self.n_classes != self.params.len() || corpus.classes().len() != self.n_classes {
            return Err(Error::Data(
                "calibration table does not match the corpus rosters".into(),
            ));
        }
        for d in corpus.detections_mut() {
            d.calibrated_score = Some(self.get(d.detector_id, d.class_id).apply(d.raw_score));
        }
        Ok(())
    }

    pub fn to_text(&self, detectors: &Roster, classes: &Roster) -> String {
        let mut out = String::new();
        for d in 0..detectors.len() {
            for c in 0..classes.len() {
                let p = self.get(d, c);
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    detectors.name(d),
                    classes.name(c),
                    p.alpha,
                    p.beta
                ));
            }
        }
        out
    }

    pub fn save(&self, path: &Path, detectors: &Roster, classes: &Roster) -> Result<()> {
        write_text(path, &self.to_text(detectors, classes))
    }

    pub fn parse(path: &Path, text: &str, detectors: &Roster, classes: &Roster) -> Result<Self> {
        let mut seen = vec![false; detectors.len() * classes.len()];
        let mut table = Self::uniform(detectors.len(), classes.len(), PlattParams::new(0.0, 0.0));
        for (line, f) in records(text) {
            let ctx = LineCtx { path, line };
            ctx.expect_fields(&f, &[4])?;
            let d = ctx.id(detectors, f[0])?;
            let c = ctx.id(classes, f[1])?;
            let p = PlattParams::new(ctx.real(f[2], "alpha")?, ctx.real(f[3], "beta")?);
            table.set(d, c, p);
            seen[d * classes.len() + c] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "{}: no calibration for detector `{}` class `{}`",
                path.display(),
                detectors.name(i / classes.len()),
                classes.name(i % classes.len())
            )));
        }
        Ok(table)
    }

    pub fn load(path: &Path, detectors: &Roster, classes: &Roster) -> Result<Self> {
        Self::parse(path, &read_text(path)?, detectors, classes)
    }
}

/// Outcome of fitting a calibration table.
#[derive(Debug, Clone)]
pub struct CalibrationFit {
    pub table: CalibrationTable,
    /// (detector, class) pairs that fell back to the detector's pooled fit.
    pub pooled_fallbacks: Vec<(usize, usize)>,
}

/// Per-detection labels for calibration: true positives under VOC matching
/// of each detector's own list against the ground truth. Detections matched
/// to difficult objects are dropped.
pub fn calibration_samples(
    corpus: &DetectionCorpus,
    gts: &[GroundTruthObject],
    iou_threshold: f64,
) -> Vec<Vec<(Vec<f64>, Vec<bool>)>> {
    let n_det = corpus.detectors().len();
    let n_cls = corpus.classes().len();
    let mut out = vec![vec![(Vec::new(), Vec::new()); n_cls]; n_det];
    for det in 0..n_det {
        for cls in 0..n_cls {
            let mut dets: Vec<(usize, f64)> = corpus
                .detections()
                .iter()
                .enumerate()
                .filter(|(_, d)| d.detector_id == det && d.class_id == cls)
                .map(|(i, d)| (i, d.raw_score))
                .collect();
            dets.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let ranked: Vec<&crate::Detection> =
                dets.iter().map(|&(i, _)| &corpus.detections()[i]).collect();
            let matches = match_detections(&ranked, gts, cls, iou_threshold);
            let slot = &mut out[det][cls];
            for (d, m) in ranked.iter().zip(&matches) {
                match m.outcome {
                    Outcome::Ignored => {}
                    o => {
                        slot.0.push(d.raw_score);
                        slot.1.push(matches!(o, Outcome::TruePositive { .. }));
                    }
                }
            }
        }
    }
    out
}

/// Fits the calibration table. With per-class scope, classes whose samples
/// lack positives or negatives fall back to the detector's pooled fit.
pub fn fit_calibration(
    corpus: &DetectionCorpus,
    gts: &[GroundTruthObject],
    scope: CalibrationScope,
    iou_threshold: f64,
) -> Result<CalibrationFit> {
    let n_det = corpus.detectors().len();
    let n_cls = corpus.classes().len();
    let samples = calibration_samples(corpus, gts, iou_threshold);
    let mut table = CalibrationTable::uniform(n_det, n_cls, PlattParams::new(0.0, 0.0));
    let mut pooled_fallbacks = Vec::new();
    for (det, per_class) in samples.iter().enumerate() {
        let mut pooled_scores = Vec::new();
        let mut pooled_labels = Vec::new();
        for (s, l) in per_class {
            pooled_scores.extend_from_slice(s);
            pooled_labels.extend_from_slice(l);
        }
        let pooled = || {
            fit_platt(&pooled_scores, &pooled_labels).map_err(|e| match e {
                Error::DegenerateCalibration(m) => Error::DegenerateCalibration(format!(
                    "detector `{}`: {m}",
                    corpus.detectors().name(det)
                )),
                other => other,
            })
        };
        match scope {
            CalibrationScope::Pooled => {
                let p = pooled()?;
                for cls in 0..n_cls {
                    table.set(det, cls, p);
                }
            }
            CalibrationScope::PerClass => {
                let mut pooled_cache = None;
                for (cls, (s, l)) in per_class.iter().enumerate() {
                    match fit_platt(s, l) {
                        Ok(p) => table.set(det, cls, p),
                        Err(Error::DegenerateCalibration(_)) => {
                            if pooled_cache.is_none() {
                                pooled_cache = Some(pooled()?);
                            }
                            table.set(det, cls, pooled_cache.unwrap());
                            pooled_fallbacks.push((det, cls));
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(CalibrationFit {
        table,
        pooled_fallbacks,
    })
}
