//! Plain `key = value` configuration files and the run configuration built
//! from them.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;

use crate::corpus::{read_text, Roster};
use crate::error::{Error, Result};
use crate::eval::ap::ApProtocol;
use crate::eval::taxonomy::SimilarityGroups;
use crate::features::{FeatureBlocks, FeatureConfig, ScoreSource};
use crate::fusion::{NmsConfig, NmsScope};
use crate::geometry::OverlapMeasure;
use crate::rankers::{LossKind, TrainConfig};

/// Ordered `key = value` entries. `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: IndexMap<String, String>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(split_list)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Keys starting with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v)))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

/// How Platt parameters are grouped when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalibrationScope {
    #[default]
    PerClass,
    Pooled,
}

/// Maximal-mAP matching strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundMatching {
    #[default]
    Maximum,
    Greedy,
}

/// Everything a pipeline step needs, resolved from a config file plus
/// command-line overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: KeyValues,
    pub base_dir: PathBuf,
    pub detectors: Roster,
    pub classes: Roster,
    pub manifest: PathBuf,
    pub work_dir: PathBuf,
    pub seed: u64,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub calibration: CalibrationScope,
    pub nms: NmsConfig,
    pub ap_protocol: ApProtocol,
    pub iou_threshold: f64,
    pub bound_matching: BoundMatching,
    pub groups: SimilarityGroups,
    pub train_single: bool,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        for (k, v) in overrides {
            kv.set(k.clone(), v.clone());
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_key_values(kv, &base)
    }

    pub fn from_key_values(kv: KeyValues, base_dir: &Path) -> Result<Self> {
        const KNOWN: &[&str] = &[
            "detectors",
            "classes",
            "manifest",
            "work_dir",
            "seed",
            "n_neighbors",
            "score_source",
            "feature_map",
            "feature_blocks",
            "loss",
            "c",
            "pair_cap",
            "pair_margin",
            "pooled_model",
            "calibration",
            "nms_threshold",
            "nms_overlap",
            "nms_scope",
            "ap_protocol",
            "iou_threshold",
            "bound_matching",
            "train_single",
        ];
        for (k, _) in kv.iter() {
            if !KNOWN.contains(&k) && !k.starts_with("group.") {
                return Err(Error::Config(format!("unknown configuration key `{k}`")));
            }
        }
        let detectors = Roster::detectors(
            kv.list("detectors")
                .ok_or_else(|| Error::Config("missing key `detectors`".into()))?,
        )?;
        let classes = Roster::classes(
            kv.list("classes")
                .ok_or_else(|| Error::Config("missing key `classes`".into()))?,
        )?;
        let manifest = base_dir.join(kv.require("manifest")?);
        if !manifest.exists() {
            return Err(Error::Config(format!(
                "manifest `{}` does not exist",
                manifest.display()
            )));
        }
        let work_dir = base_dir.join(kv.get("work_dir").unwrap_or("."));
        let seed: u64 = match kv.get("seed") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid seed `{v}`")))?,
            None => return Err(Error::Config("missing key `seed`".into())),
        };

        let score_source = match kv.get("score_source").unwrap_or("calibrated") {
            "calibrated" => ScoreSource::Calibrated,
            "raw" => ScoreSource::Raw,
            v => return Err(Error::Config(format!("invalid score_source `{v}`"))),
        };
        let feature_map = parse_bool("feature_map", kv.get("feature_map").unwrap_or("off"))?;
        let blocks = FeatureBlocks::parse(kv.get("feature_blocks").unwrap_or("rs,os,so"))?;
        let n_neighbors: usize = kv.parse_or("n_neighbors", 10)?;
        if n_neighbors == 0 {
            return Err(Error::Config("n_neighbors must be at least 1".into()));
        }
        let features = FeatureConfig {
            n_neighbors,
            score_source,
            blocks,
            feature_map,
        };

        let loss = LossKind::from_tag(kv.get("loss").unwrap_or("logistic"))
            .ok_or_else(|| Error::Config(format!("invalid loss `{}`", kv.get("loss").unwrap_or(""))))?;
        let c: f64 = kv.parse_or("c", 1.0)?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {c}")));
        }
        let train = TrainConfig {
            loss,
            c,
            pair_cap: kv.parse_or("pair_cap", 100_000)?,
            pair_margin: kv.parse_or("pair_margin", 0.1)?,
            pooled: parse_bool("pooled_model", kv.get("pooled_model").unwrap_or("false"))?,
            seed,
            ..TrainConfig::default()
        };

        let calibration = match kv.get("calibration").unwrap_or("per-class") {
            "per-class" => CalibrationScope::PerClass,
            "pooled" => CalibrationScope::Pooled,
            v => return Err(Error::Config(format!("invalid calibration `{v}`"))),
        };
        let nms = NmsConfig {
            threshold: kv.parse_or("nms_threshold", 0.4)?,
            overlap: match kv.get("nms_overlap").unwrap_or("coverage") {
                "coverage" => OverlapMeasure::Coverage,
                "iou" => OverlapMeasure::Iou,
                v => return Err(Error::Config(format!("invalid nms_overlap `{v}`"))),
            },
            scope: match kv.get("nms_scope").unwrap_or("correspondence") {
                "correspondence" => NmsScope::Correspondence,
                "all-pairs" => NmsScope::AllPairs,
                v => return Err(Error::Config(format!("invalid nms_scope `{v}`"))),
            },
        };
        let ap_protocol = ApProtocol::from_tag(kv.get("ap_protocol").unwrap_or("voc07-11point"))
            .ok_or_else(|| Error::Config("invalid ap_protocol".into()))?;
        let bound_matching = match kv.get("bound_matching").unwrap_or("maximum") {
            "maximum" => BoundMatching::Maximum,
            "greedy" => BoundMatching::Greedy,
            v => return Err(Error::Config(format!("invalid bound_matching `{v}`"))),
        };
        let group_entries: Vec<(String, Vec<String>)> = kv
            .with_prefix("group.")
            .map(|(g, v)| (g.to_string(), split_list(v)))
            .collect();
        let groups = if group_entries.is_empty() {
            SimilarityGroups::default_for(&classes)
        } else {
            SimilarityGroups::new(&classes, &group_entries)?
        };

        Ok(Self {
            base_dir: base_dir.to_path_buf(),
            detectors,
            classes,
            manifest,
            work_dir,
            seed,
            features,
            train,
            calibration,
            nms,
            ap_protocol,
            iou_threshold: kv.parse_or("iou_threshold", 0.5)?,
            bound_matching,
            groups,
            train_single: parse_bool("train_single", kv.get("train_single").unwrap_or("true"))?,
            source: kv,
        })
    }
}
