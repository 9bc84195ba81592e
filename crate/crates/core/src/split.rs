//! Fold manifest and the cross-fold provenance rule.
//!
//! Context models learn from detections on a fold, so those detections must
//! come from detector models that never saw that fold: train-fold detections
//! are produced by detectors trained on val and vice versa, while test-fold
//! detections come from detectors trained on trainval.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fold {
    Train,
    Val,
    TrainVal,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 4] = [Fold::Train, Fold::Val, Fold::TrainVal, Fold::Test];

    pub fn name(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::TrainVal => "trainval",
            Fold::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    /// True when the two folds share images.
    pub fn overlaps(self, other: Fold) -> bool {
        use Fold::*;
        self == other
            || matches!(
                (self, other),
                (TrainVal, Train) | (TrainVal, Val) | (Train, TrainVal) | (Val, TrainVal)
            )
    }

    /// Folds whose detections are used to fit context models and calibration.
    pub fn trains_context(self) -> bool {
        !matches!(self, Fold::Test)
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFiles {
    pub detections: PathBuf,
    pub ground_truth: PathBuf,
    pub proposals: PathBuf,
    /// Fold the detector models producing `detections` were trained on.
    pub provenance: Fold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    folds: Vec<(Fold, FoldFiles)>,
}

impl SplitManifest {
    pub fn new(folds: Vec<(Fold, FoldFiles)>) -> Self {
        Self { folds }
    }

    pub fn fold(&self, fold: Fold) -> Option<&FoldFiles> {
        self.folds.iter().find(|(f, _)| *f == fold).map(|(_, v)| v)
    }

    pub fn folds(&self) -> impl Iterator<Item = (Fold, &FoldFiles)> {
        self.folds.iter().map(|(f, v)| (*f, v))
    }

    /// Folds used for context training (train and val, plus an explicit
    /// trainval entry if the manifest has one).
    pub fn context_folds(&self) -> Vec<Fold> {
        if self.fold(Fold::TrainVal).is_some() {
            vec![Fold::TrainVal]
        } else {
            vec![Fold::Train, Fold::Val]
        }
    }

    /// Reads a manifest of `<fold>.<field> = <path>` entries. Paths are
    /// resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_key_values(&kv, &base)
    }

    pub fn from_key_values(kv: &KeyValues, base: &Path) -> Result<Self> {
        for (k, _) in kv.iter() {
            let ok = k
                .split_once('.')
                .is_some_and(|(f, field)| {
                    Fold::parse(f).is_some()
                        && matches!(field, "detections" | "ground_truth" | "proposals" | "provenance")
                });
            if !ok {
                return Err(Error::Config(format!("unknown manifest key `{k}`")));
            }
        }
        let mut folds = Vec::new();
        for fold in Fold::ALL {
            let present = kv.with_prefix(&format!("{}.", fold.name())).count() > 0;
            if !present {
                continue;
            }
            let get = |field: &str| kv.require(&format!("{}.{field}", fold.name()));
            let provenance_name = get("provenance")?;
            let provenance = Fold::parse(provenance_name).ok_or_else(|| {
                Error::Config(format!("unknown provenance fold `{provenance_name}`"))
            })?;
            folds.push((
                fold,
                FoldFiles {
                    detections: base.join(get("detections")?),
                    ground_truth: base.join(get("ground_truth")?),
                    proposals: base.join(get("proposals")?),
                    provenance,
                },
            ));
        }
        Ok(Self { folds })
    }

    pub fn to_key_values(&self, relative_to: &Path) -> KeyValues {
        let mut kv = KeyValues::default();
        let rel = |p: &Path| {
            p.strip_prefix(relative_to)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        for (fold, files) in &self.folds {
            let n = fold.name();
            kv.set(format!("{n}.detections"), rel(&files.detections));
            kv.set(format!("{n}.ground_truth"), rel(&files.ground_truth));
            kv.set(format!("{n}.proposals"), rel(&files.proposals));
            kv.set(format!("{n}.provenance"), files.provenance.name());
        }
        kv
    }
}

/// Checks that train, val and test are present, that every referenced file
/// exists, and that no fold's detections were produced by a detector trained
/// on images of the same fold.
pub fn assemble_split(manifest: SplitManifest) -> Result<SplitManifest> {
    for required in [Fold::Train, Fold::Val, Fold::Test] {
        if manifest.fold(required).is_none() {
            return Err(Error::Config(format!("manifest lacks the `{required}` fold")));
        }
    }
    check_provenance(&manifest)?;
    for (fold, files) in manifest.folds() {
        for p in [&files.detections, &files.ground_truth, &files.proposals] {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{fold} fold references missing file `{}`",
                    p.display()
                )));
            }
        }
    }
    Ok(manifest)
}

/// The provenance rule alone, without touching the filesystem.
pub fn check_provenance(manifest: &SplitManifest) -> Result<()> {
    for (fold, files) in manifest.folds() {
        if files.provenance.overlaps(fold) {
            let role = if fold.trains_context() {
                "context-training"
            } else {
                "evaluation"
            };
            return Err(Error::CrossFold(format!(
                "{role} detections of fold `{fold}` were produced by detectors trained on `{}`; \
                 use detectors trained on a disjoint fold",
                files.provenance
            )));
        }
    }
    Ok(())
}
