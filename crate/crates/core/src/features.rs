//! Context features for every detection.
//!
//! Three blocks are concatenated:
//!
//! * `Rs`: detector-detector agreement. A one-hot detector indicator, the
//!   relative score `R_j = gamma_j * score(partner_j)` for each detector, the
//!   pairwise sums `R_a + R_b` (a < b) and the total. With three detectors
//!   that is 3 + 3 + 3 + 1 = 10 values.
//! * `Os`: object saliency. For each proposal source (OBJ, CORE, EES) the
//!   mean of the `n_neighbors` largest IoUs with the detection, plus the
//!   confidence of the best-overlapping EES proposal (4 values).
//! * `So`: object-object context. For each class, the sum over detectors of
//!   that detector's best score for the class in the image (one value per
//!   class).

use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{
    fmt_real, read_text, records, write_text, DetectionCorpus, ImageProposals, LineCtx, ProposalSet,
    ProposalSource, Roster,
};
use crate::detection::{correspondences, Detection};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::kernel_map::{chi2_feature_map, EXPANSION};

/// Which score feeds the relative scores and the class context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreSource {
    #[default]
    Calibrated,
    Raw,
}

impl ScoreSource {
    pub fn score(self, d: &Detection) -> Result<f64> {
        match self {
            ScoreSource::Raw => Ok(d.raw_score),
            ScoreSource::Calibrated => d.calibrated_score.ok_or_else(|| {
                Error::Data(format!(
                    "detection in image `{}` has no calibrated score; run calibration first",
                    d.image_id
                ))
            }),
        }
    }
}

/// Feature blocks switched on, for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureBlocks {
    pub rs: bool,
    pub os: bool,
    pub so: bool,
}

impl Default for FeatureBlocks {
    fn default() -> Self {
        Self::ALL
    }
}

impl FeatureBlocks {
    pub const ALL: FeatureBlocks = FeatureBlocks {
        rs: true,
        os: true,
        so: true,
    };

    /// Parses a comma-separated subset of `rs`, `os`, `so`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut b = FeatureBlocks {
            rs: false,
            os: false,
            so: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "rs" => b.rs = true,
                "os" => b.os = true,
                "so" => b.so = true,
                other => return Err(Error::Config(format!("unknown feature block `{other}`"))),
            }
        }
        if !(b.rs || b.os || b.so) {
            return Err(Error::Config("at least one feature block is required".into()));
        }
        Ok(b)
    }

    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.rs {
            parts.push("rs");
        }
        if self.os {
            parts.push("os");
        }
        if self.so {
            parts.push("so");
        }
        parts.join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub n_neighbors: usize,
    pub score_source: ScoreSource,
    pub blocks: FeatureBlocks,
    pub feature_map: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 10,
            score_source: ScoreSource::Calibrated,
            blocks: FeatureBlocks::ALL,
            feature_map: false,
        }
    }
}

pub fn rs_dim(n_detectors: usize) -> usize {
    2 * n_detectors + n_detectors * n_detectors.saturating_sub(1) / 2 + 1
}

pub const OS_DIM: usize = 4;

/// Length of the feature vector for the given rosters and options.
pub fn feature_dim(n_detectors: usize, n_classes: usize, config: &FeatureConfig) -> usize {
    let b = config.blocks;
    let base = if b.rs { rs_dim(n_detectors) } else { 0 }
        + if b.os { OS_DIM } else { 0 }
        + if b.so { n_classes } else { 0 };
    if config.feature_map {
        base * EXPANSION
    } else {
        base
    }
}

pub fn feature_names(detectors: &Roster, classes: &Roster, config: &FeatureConfig) -> Vec<String> {
    let n = detectors.len();
    let mut names = Vec::new();
    if config.blocks.rs {
        names.extend(detectors.names().iter().map(|d| format!("I_D[{d}]")));
        names.extend(detectors.names().iter().map(|d| format!("R[{d}]")));
        for a in 0..n {
            for b in a + 1..n {
                names.push(format!("R[{}]+R[{}]", detectors.name(a), detectors.name(b)));
            }
        }
        names.push("R_total".to_string());
    }
    if config.blocks.os {
        for s in ProposalSource::ALL {
            names.push(format!("Os[{}]", s.name()));
        }
        names.push("Os[EES_confidence]".to_string());
    }
    if config.blocks.so {
        names.extend(classes.names().iter().map(|c| format!("So[{c}]")));
    }
    if config.feature_map {
        names
            .into_iter()
            .flat_map(|n| (0..EXPANSION).map(move |k| format!("{n}#{k}")))
            .collect()
    } else {
        names
    }
}

/// The unmapped feature blocks of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatureVector {
    pub rs: Vec<f64>,
    pub os: [f64; OS_DIM],
    pub so: Vec<f64>,
}

impl ContextFeatureVector {
    pub fn to_vec(&self, blocks: FeatureBlocks) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.rs.len() + OS_DIM + self.so.len());
        if blocks.rs {
            v.extend_from_slice(&self.rs);
        }
        if blocks.os {
            v.extend_from_slice(&self.os);
        }
        if blocks.so {
            v.extend_from_slice(&self.so);
        }
        v
    }
}

/// Relative score per detector for `class_dets[i]`: the overlap with the
/// best-matching detection of that detector times that detection's score.
/// `class_dets` holds the detections of one image and one class.
pub fn relative_scores(
    i: usize,
    class_dets: &[Detection],
    n_detectors: usize,
    source: ScoreSource,
) -> Result<Vec<f64>> {
    let corr = correspondences(i, class_dets, n_detectors);
    corr.slots()
        .iter()
        .map(|slot| match slot {
            Some(p) => Ok(p.gamma * source.score(&class_dets[p.index])?),
            None => Ok(0.0),
        })
        .collect()
}

/// `[indicator | R | pairwise sums | total]`.
pub fn assemble_rs(detector_id: usize, r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut v = Vec::with_capacity(rs_dim(n));
    v.extend((0..n).map(|j| if j == detector_id { 1.0 } else { 0.0 }));
    v.extend_from_slice(r);
    for a in 0..n {
        for b in a + 1..n {
            v.push(r[a] + r[b]);
        }
    }
    v.push(r.iter().sum());
    v
}

/// Saliency of a detection measured against region proposals.
pub fn object_saliency(det: &Detection, proposals: Option<&ImageProposals>, n_neighbors: usize) -> [f64; OS_DIM] {
    let mut out = [0.0; OS_DIM];
    let Some(props) = proposals else { return out };
    for source in ProposalSource::ALL {
        let mut overlaps: Vec<f64> = props
            .source(source)
            .iter()
            .map(|p| iou(&det.bbox, &p.bbox))
            .collect();
        overlaps.sort_by(|a, b| b.total_cmp(a));
        let top: f64 = overlaps.iter().take(n_neighbors).sum();
        out[source.index()] = top / n_neighbors as f64;
    }
    let mut best: Option<(f64, f64)> = None;
    for p in props.source(ProposalSource::Ees) {
        let o = iou(&det.bbox, &p.bbox);
        if o <= 0.0 {
            continue;
        }
        let c = p.confidence.unwrap_or(0.0);
        if best.is_none_or(|(bo, bc)| o > bo || (o == bo && c > bc)) {
            best = Some((o, c));
        }
    }
    out[OS_DIM - 1] = best.map_or(0.0, |(_, c)| c);
    out
}

/// Per class, the sum over detectors of the detector's best score for that
/// class in the image.
pub fn object_object_context(
    image_dets: &[Detection],
    n_detectors: usize,
    n_classes: usize,
    source: ScoreSource,
) -> Result<Vec<f64>> {
    let mut best: Vec<Option<f64>> = vec![None; n_detectors * n_classes];
    for d in image_dets {
        let s = source.score(d)?;
        let slot = &mut best[d.class_id * n_detectors + d.detector_id];
        if slot.is_none_or(|b| s > b) {
            *slot = Some(s);
        }
    }
    Ok((0..n_classes)
        .map(|c| {
            best[c * n_detectors..(c + 1) * n_detectors]
                .iter()
                .flatten()
                .sum()
        })
        .collect())
}

/// Feature blocks of every detection of one image, in the image's order.
pub fn image_features(
    image_dets: &[Detection],
    proposals: Option<&ImageProposals>,
    n_detectors: usize,
    n_classes: usize,
    config: &FeatureConfig,
) -> Result<Vec<ContextFeatureVector>> {
    let so = object_object_context(image_dets, n_detectors, n_classes, config.score_source)?;
    // local positions of each class's detections
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (k, d) in image_dets.iter().enumerate() {
        by_class[d.class_id].push(k);
    }
    let mut out: Vec<Option<ContextFeatureVector>> = vec![None; image_dets.len()];
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        let subset: Vec<Detection> = members.iter().map(|&k| image_dets[k].clone()).collect();
        for (local, &k) in members.iter().enumerate() {
            let r = relative_scores(local, &subset, n_detectors, config.score_source)?;
            out[k] = Some(ContextFeatureVector {
                rs: assemble_rs(image_dets[k].detector_id, &r),
                os: object_saliency(&image_dets[k], proposals, config.n_neighbors),
                so: so.clone(),
            });
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every class visited")).collect())
}

/// Feature rows aligned with the detections of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub image_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Computes features for every detection of the corpus. Rows follow the
/// corpus order; images are processed in parallel.
pub fn extract_features(
    corpus: &DetectionCorpus,
    proposals: &ProposalSet,
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    let n_det = corpus.detectors().len();
    let n_cls = corpus.classes().len();
    let images: Vec<(&str, std::ops::Range<usize>)> = corpus.images().collect();
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|(image, range)| {
            let dets = &corpus.detections()[range.clone()];
            let blocks = image_features(dets, proposals.image(image), n_det, n_cls, config)?;
            blocks
                .into_iter()
                .map(|b| {
                    let v = b.to_vec(config.blocks);
                    if config.feature_map {
                        chi2_feature_map(&v)
                    } else {
                        Ok(v)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = per_image.into_iter().flatten().collect();
    Ok(FeatureMatrix {
        dim: feature_dim(n_det, n_cls, config),
        image_ids: corpus.detections().iter().map(|d| d.image_id.clone()).collect(),
        rows,
    })
}

/// `image_id, detection index, values...` per line.
pub fn format_feature_dump(m: &FeatureMatrix) -> String {
    let mut out = String::new();
    for (i, (image, row)) in m.image_ids.iter().zip(&m.rows).enumerate() {
        out.push_str(image);
        out.push('\t');
        out.push_str(&i.to_string());
        for v in row {
            out.push('\t');
            out.push_str(&fmt_real(*v));
        }
        out.push('\n');
    }
    out
}

pub fn save_feature_dump(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_text(path, &format_feature_dump(m))
}

pub fn parse_feature_dump(path: &Path, text: &str, dim: usize) -> Result<FeatureMatrix> {
    let mut image_ids = Vec::new();
    let mut rows = Vec::new();
    for (line, f) in records(text) {
        let ctx = LineCtx { path, line };
        ctx.expect_fields(&f, &[dim + 2])?;
        let idx: usize = f[1]
            .parse()
            .map_err(|_| ctx.err(format!("invalid detection index `{}`", f[1])))?;
        if idx != rows.len() {
            return Err(ctx.err(format!("expected detection index {}, found {idx}", rows.len())));
        }
        image_ids.push(f[0].to_string());
        rows.push(
            f[2..]
                .iter()
                .map(|v| ctx.real(v, "feature"))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(FeatureMatrix { dim, image_ids, rows })
}

pub fn load_feature_dump(path: &Path, dim: usize) -> Result<FeatureMatrix> {
    parse_feature_dump(path, &read_text(path)?, dim)
}
