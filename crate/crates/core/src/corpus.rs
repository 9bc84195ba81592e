//! Line-oriented record files for detections, ground truth and proposals.
//!
//! Every record is one line of tab-separated fields. Reals are written with
//! six decimal places, so a file produced by this module reads back and
//! re-serializes to the same bytes.

use std::fs;
use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;

use crate::detection::{Detection, GroundTruthObject};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Ordered list of names with their integer ids (position in the list).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    kind: &'static str,
    names: Vec<String>,
}

impl Roster {
    pub fn new(kind: &'static str, names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config(format!("empty {kind} roster")));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(['\t', '\n', ',']) {
                return Err(Error::Config(format!("invalid {kind} name `{n}`")));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate {kind} name `{n}`")));
            }
        }
        Ok(Self { kind, names })
    }

    pub fn detectors<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new("detector", names.into_iter().map(Into::into).collect())
    }

    pub fn classes<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new("class", names.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
            })
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Roster holding only the named entry.
    pub fn restrict(&self, id: usize) -> Self {
        Self {
            kind: self.kind,
            names: vec![self.names[id].clone()],
        }
    }
}

/// Detections grouped by image, in first-appearance order of the images.
#[derive(Debug, Clone)]
pub struct DetectionCorpus {
    detectors: Roster,
    classes: Roster,
    detections: Vec<Detection>,
    images: IndexMap<String, Range<usize>>,
}

impl DetectionCorpus {
    /// Builds a corpus, regrouping by image while keeping the relative order
    /// of detections inside each image.
    pub fn new(detectors: Roster, classes: Roster, detections: Vec<Detection>) -> Result<Self> {
        let mut buckets: IndexMap<String, Vec<Detection>> = IndexMap::new();
        for d in detections {
            if d.detector_id >= detectors.len() {
                return Err(Error::Data(format!(
                    "detector id {} outside roster of {}",
                    d.detector_id,
                    detectors.len()
                )));
            }
            if d.class_id >= classes.len() {
                return Err(Error::Data(format!(
                    "class id {} outside roster of {}",
                    d.class_id,
                    classes.len()
                )));
            }
            if let Some(c) = d.calibrated_score {
                if !(c > 0.0 && c < 1.0) {
                    return Err(Error::Data(format!("calibrated score {c} outside (0,1)")));
                }
            }
            buckets.entry(d.image_id.clone()).or_default().push(d);
        }
        let mut flat = Vec::new();
        let mut images = IndexMap::with_capacity(buckets.len());
        for (image, dets) in buckets {
            let start = flat.len();
            flat.extend(dets);
            images.insert(image, start..flat.len());
        }
        Ok(Self {
            detectors,
            classes,
            detections: flat,
            images,
        })
    }

    pub fn detectors(&self) -> &Roster {
        &self.detectors
    }

    pub fn classes(&self) -> &Roster {
        &self.classes
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn detections_mut(&mut self) -> &mut [Detection] {
        &mut self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Image ids with the index range of their detections.
    pub fn images(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.images.iter().map(|(k, r)| (k.as_str(), r.clone()))
    }

    pub fn image(&self, image_id: &str) -> &[Detection] {
        self.images
            .get(image_id)
            .map_or(&[][..], |r| &self.detections[r.clone()])
    }

    /// Corpus with only the detections of one detector, re-indexed against a
    /// one-entry detector roster.
    pub fn restrict_to_detector(&self, detector_id: usize) -> Result<Self> {
        let dets = self
            .detections
            .iter()
            .filter(|d| d.detector_id == detector_id)
            .map(|d| Detection {
                detector_id: 0,
                ..d.clone()
            })
            .collect();
        Self::new(
            self.detectors.restrict(detector_id),
            self.classes.clone(),
            dets,
        )
    }

    /// Corpus with only the given detectors; ids and roster are unchanged.
    pub fn filter_detectors(&self, keep: &[usize]) -> Result<Self> {
        let dets = self
            .detections
            .iter()
            .filter(|d| keep.contains(&d.detector_id))
            .cloned()
            .collect();
        Self::new(self.detectors.clone(), self.classes.clone(), dets)
    }
}

/// Region proposal sources used for the object-saliency features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProposalSource {
    Obj,
    Core,
    Ees,
}

impl ProposalSource {
    pub const ALL: [ProposalSource; 3] = [ProposalSource::Obj, ProposalSource::Core, ProposalSource::Ees];

    pub fn name(self) -> &'static str {
        match self {
            ProposalSource::Obj => "OBJ",
            ProposalSource::Core => "CORE",
            ProposalSource::Ees => "EES",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Only EES proposals carry a confidence.
    pub fn has_confidence(self) -> bool {
        self == ProposalSource::Ees
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub confidence: Option<f64>,
}

/// Proposals of one image, one list per source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageProposals {
    by_source: [Vec<Proposal>; 3],
}

impl ImageProposals {
    pub fn source(&self, source: ProposalSource) -> &[Proposal] {
        &self.by_source[source.index()]
    }

    pub fn push(&mut self, source: ProposalSource, proposal: Proposal) -> Result<()> {
        if source.has_confidence() != proposal.confidence.is_some() {
            return Err(Error::Data(format!(
                "{} proposals {} a confidence",
                source.name(),
                if source.has_confidence() { "require" } else { "must not carry" }
            )));
        }
        self.by_source[source.index()].push(proposal);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProposalSet {
    images: IndexMap<String, ImageProposals>,
}

impl ProposalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageProposals> {
        self.images.get(image_id)
    }

    pub fn image_mut(&mut self, image_id: &str) -> &mut ImageProposals {
        self.images.entry(image_id.to_string()).or_default()
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, &ImageProposals)> {
        self.images.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Formats a real the way every record file stores it.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.6}")
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers, split on tabs.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').collect()))
}

pub(crate) struct LineCtx<'a> {
    pub path: &'a Path,
    pub line: usize,
}

impl LineCtx<'_> {
    pub fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    pub fn expect_fields(&self, fields: &[&str], counts: &[usize]) -> Result<()> {
        if counts.contains(&fields.len()) {
            Ok(())
        } else {
            Err(self.err(format!(
                "expected {} tab-separated fields, found {}",
                counts
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(" or "),
                fields.len()
            )))
        }
    }

    pub fn real(&self, field: &str, what: &str) -> Result<f64> {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| self.err(format!("invalid {what} `{field}`")))?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite {what}")));
        }
        Ok(v)
    }

    pub fn bbox(&self, fields: &[&str]) -> Result<BoundingBox> {
        let x0 = self.real(fields[0], "x_min")?;
        let y0 = self.real(fields[1], "y_min")?;
        let x1 = self.real(fields[2], "x_max")?;
        let y1 = self.real(fields[3], "y_max")?;
        BoundingBox::new(x0, y0, x1, y1).map_err(|e| self.err(e.to_string()))
    }

    pub fn id(&self, roster: &Roster, name: &str) -> Result<usize> {
        roster.id(name).map_err(|e| self.err(e.to_string()))
    }

    pub fn flag(&self, field: &str, what: &str) -> Result<bool> {
        match field.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(self.err(format!("invalid {what} flag `{other}` (expected 0 or 1)"))),
        }
    }
}

fn push_box(out: &mut String, b: &BoundingBox) {
    for v in b.coords() {
        out.push('\t');
        out.push_str(&fmt_real(v));
    }
}

pub(crate) fn parse_detection(
    ctx: &LineCtx<'_>,
    f: &[&str],
    detectors: &Roster,
    classes: &Roster,
) -> Result<Detection> {
    if f[0].is_empty() {
        return Err(ctx.err("empty image id"));
    }
    let class_id = ctx.id(classes, f[1])?;
    let detector_id = ctx.id(detectors, f[2])?;
    let bbox = ctx.bbox(&f[3..7])?;
    let raw_score = ctx.real(f[7], "raw_score")?;
    Ok(Detection::new(f[0], class_id, detector_id, bbox, raw_score))
}

pub(crate) fn format_detection(out: &mut String, d: &Detection, detectors: &Roster, classes: &Roster) {
    out.push_str(&d.image_id);
    out.push('\t');
    out.push_str(classes.name(d.class_id));
    out.push('\t');
    out.push_str(detectors.name(d.detector_id));
    push_box(out, &d.bbox);
    out.push('\t');
    out.push_str(&fmt_real(d.raw_score));
}

pub fn parse_detections(
    path: &Path,
    text: &str,
    detectors: &Roster,
    classes: &Roster,
) -> Result<DetectionCorpus> {
    let mut dets = Vec::new();
    for (line, f) in records(text) {
        let ctx = LineCtx { path, line };
        ctx.expect_fields(&f, &[8])?;
        dets.push(parse_detection(&ctx, &f, detectors, classes)?);
    }
    DetectionCorpus::new(detectors.clone(), classes.clone(), dets)
}

/// Reads a detection record file against fixed rosters.
pub fn load_detections(path: &Path, detectors: &Roster, classes: &Roster) -> Result<DetectionCorpus> {
    parse_detections(path, &read_text(path)?, detectors, classes)
}

pub fn format_detections(corpus: &DetectionCorpus) -> String {
    let mut out = String::new();
    for d in corpus.detections() {
        format_detection(&mut out, d, corpus.detectors(), corpus.classes());
        out.push('\n');
    }
    out
}

pub fn save_detections(path: &Path, corpus: &DetectionCorpus) -> Result<()> {
    write_text(path, &format_detections(corpus))
}

pub fn parse_ground_truth(path: &Path, text: &str, classes: &Roster) -> Result<Vec<GroundTruthObject>> {
    let mut out = Vec::new();
    for (line, f) in records(text) {
        let ctx = LineCtx { path, line };
        ctx.expect_fields(&f, &[7])?;
        if f[0].is_empty() {
            return Err(ctx.err("empty image id"));
        }
        out.push(GroundTruthObject {
            image_id: f[0].to_string(),
            class_id: ctx.id(classes, f[1])?,
            bbox: ctx.bbox(&f[2..6])?,
            difficult: ctx.flag(f[6], "difficult")?,
        });
    }
    Ok(out)
}

pub fn load_ground_truth(path: &Path, classes: &Roster) -> Result<Vec<GroundTruthObject>> {
    parse_ground_truth(path, &read_text(path)?, classes)
}

pub fn format_ground_truth(gts: &[GroundTruthObject], classes: &Roster) -> String {
    let mut out = String::new();
    for g in gts {
        out.push_str(&g.image_id);
        out.push('\t');
        out.push_str(classes.name(g.class_id));
        push_box(&mut out, &g.bbox);
        out.push_str(if g.difficult { "\t1\n" } else { "\t0\n" });
    }
    out
}

pub fn save_ground_truth(path: &Path, gts: &[GroundTruthObject], classes: &Roster) -> Result<()> {
    write_text(path, &format_ground_truth(gts, classes))
}

pub fn parse_proposals(path: &Path, text: &str) -> Result<ProposalSet> {
    let mut set = ProposalSet::new();
    for (line, f) in records(text) {
        let ctx = LineCtx { path, line };
        ctx.expect_fields(&f, &[7])?;
        let source = ProposalSource::parse(f[1])
            .ok_or_else(|| ctx.err(format!("unknown proposal source `{}`", f[1])))?;
        let bbox = ctx.bbox(&f[2..6])?;
        let confidence = match f[6].trim() {
            "-" => None,
            v => Some(ctx.real(v, "confidence")?),
        };
        set.image_mut(f[0])
            .push(source, Proposal { bbox, confidence })
            .map_err(|e| ctx.err(e.to_string()))?;
    }
    Ok(set)
}

pub fn load_proposals(path: &Path) -> Result<ProposalSet> {
    parse_proposals(path, &read_text(path)?)
}

pub fn format_proposals(set: &ProposalSet) -> String {
    let mut out = String::new();
    for (image, props) in set.images() {
        for source in ProposalSource::ALL {
            for p in props.source(source) {
                out.push_str(image);
                out.push('\t');
                out.push_str(source.name());
                push_box(&mut out, &p.bbox);
                out.push('\t');
                match p.confidence {
                    Some(c) => out.push_str(&fmt_real(c)),
                    None => out.push('-'),
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn save_proposals(path: &Path, set: &ProposalSet) -> Result<()> {
    write_text(path, &format_proposals(set))
}

/// Ground truth grouped by image id, preserving file order inside an image.
pub fn group_ground_truth(gts: &[GroundTruthObject]) -> IndexMap<&str, Vec<&GroundTruthObject>> {
    let mut map: IndexMap<&str, Vec<&GroundTruthObject>> = IndexMap::new();
    for g in gts {
        map.entry(g.image_id.as_str()).or_default().push(g);
    }
    map
}
