//! The pipeline steps behind the command line: simulate, calibrate,
//! featurize, train, rerank, eval, analyze and bound.
//!
//! Every step reads and writes files under the run's work directory and
//! records a manifest (step, crate version, configuration hash, seed and the
//! SHA-256 of every input and output) in `manifests/`. Nothing time- or
//! machine-dependent is written, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::calibration::{fit_calibration, CalibrationTable};
use crate::config::{KeyValues, RunConfig};
use crate::corpus::{
    group_ground_truth, load_detections, load_ground_truth, load_proposals, read_text, save_detections,
    save_ground_truth, save_proposals, write_text, DetectionCorpus, ProposalSet, Roster,
};
use crate::detection::{Detection, GroundTruthObject};
use crate::error::{Error, Result};
use crate::eval::ap::ApProtocol;
use crate::eval::bound::maximal_map;
use crate::eval::taxonomy::{default_buckets, fp_taxonomy, FpType};
use crate::eval::{
    ap_table_csv, ap_table_text, csv_string, evaluate, false_positive_types, feature_importance, importance_csv,
    pr_curves_csv, taxonomy_csv, EvalReport,
};
use crate::features::{extract_features, feature_dim, feature_names, load_feature_dump, save_feature_dump, FeatureMatrix};
use crate::fusion::{naive_merge, rerank, NaiveMode, RankedDetectionList, ScoredDetection};
use crate::geometry::iou;
use crate::rankers::{train, RankerModel, TrainingSet};
use crate::split::{assemble_split, Fold, FoldFiles, SplitManifest};
use crate::synth::{save_latents, Scenario};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Provenance record written next to a step's outputs.
struct Manifest<'a> {
    /// Paths are recorded relative to this directory.
    base: &'a Path,
    dir: &'a Path,
    step: String,
    config_hash: String,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest<'_> {
    fn write(&self) -> Result<PathBuf> {
        let mut kv = KeyValues::default();
        kv.set("step", self.step.as_str());
        kv.set("version", VERSION);
        kv.set("config_sha256", self.config_hash.as_str());
        kv.set("seed", self.seed.to_string());
        for p in &self.inputs {
            kv.set(format!("input.{}", rel(p, self.base)), file_hash(p)?);
        }
        for p in &self.outputs {
            kv.set(format!("output.{}", rel(p, self.base)), file_hash(p)?);
        }
        let path = self
            .dir
            .join("manifests")
            .join(format!("{}.manifest", self.step.replace(':', "-")));
        write_text(&path, &kv.to_text())?;
        Ok(path)
    }
}

/// What a step did, for the command line to print.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub summary: String,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Generates a full simulated split from a scenario file into `out_dir`:
/// one directory per fold with detections, ground truth, proposals and the
/// difficulty sidecar, plus `split.cfg` and a starter `run.cfg`.
pub fn simulate(scenario_path: &Path, out_dir: &Path) -> Result<StepReport> {
    let scenario = Scenario::load(scenario_path)?;
    let detectors = scenario.detector_roster()?;
    // folds and the fold their (simulated) detector models were trained on
    let plan = [
        (Fold::Train, Fold::Val, scenario.images[0]),
        (Fold::Val, Fold::Train, scenario.images[1]),
        (Fold::Test, Fold::TrainVal, scenario.images[2]),
    ];
    let mut outputs = Vec::new();
    let mut folds = Vec::new();
    for (fold, provenance, n) in plan {
        let sim = scenario.simulate_fold(fold.name(), n)?;
        let dir = out_dir.join(fold.name());
        let files = FoldFiles {
            detections: dir.join("detections.tsv"),
            ground_truth: dir.join("ground_truth.tsv"),
            proposals: dir.join("proposals.tsv"),
            provenance,
        };
        save_detections(&files.detections, &sim.corpus)?;
        save_ground_truth(&files.ground_truth, &sim.scene.objects, &scenario.classes)?;
        save_proposals(&files.proposals, &sim.proposals)?;
        let latents = dir.join("latents.tsv");
        save_latents(&latents, &sim.scene, &scenario.classes)?;
        outputs.extend([
            files.detections.clone(),
            files.ground_truth.clone(),
            files.proposals.clone(),
            latents,
        ]);
        folds.push((fold, files));
    }
    let split_path = out_dir.join("split.cfg");
    write_text(&split_path, &SplitManifest::new(folds).to_key_values(out_dir).to_text())?;
    let run_path = out_dir.join("run.cfg");
    let mut run = KeyValues::default();
    run.set("detectors", detectors.names().join(","));
    run.set("classes", scenario.classes.names().join(","));
    run.set("manifest", "split.cfg");
    run.set("work_dir", "work");
    run.set("seed", scenario.seed.to_string());
    write_text(&run_path, &run.to_text())?;
    outputs.extend([split_path, run_path]);

    let scenario_text = read_text(scenario_path)?;
    let manifest = Manifest {
        base: out_dir,
        dir: out_dir,
        step: "simulate".into(),
        config_hash: sha256_hex(scenario_text.as_bytes()),
        seed: scenario.seed,
        inputs: vec![],
        outputs: outputs.clone(),
    }
    .write()?;
    Ok(StepReport {
        summary: format!(
            "simulated {} detectors, {} classes, {}/{}/{} images in {}",
            detectors.len(),
            scenario.classes.len(),
            scenario.images[0],
            scenario.images[1],
            scenario.images[2],
            out_dir.display()
        ),
        outputs,
        manifest,
    })
}

/// Output list selector for `rerank`, `eval` and `analyze`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RerankMode {
    Learned,
    Naive(NaiveMode),
    /// Context re-ranking of one detector's output.
    Single(String),
    /// One detector's calibrated output.
    Baseline(String),
}

impl RerankMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "learned" => RerankMode::Learned,
            "naive-i" => RerankMode::Naive(NaiveMode::ScoreUnion),
            "naive-ii" => RerankMode::Naive(NaiveMode::Interleave),
            "naive-iii" => RerankMode::Naive(NaiveMode::Concatenate),
            _ => match s.split_once(':') {
                Some(("single", d)) if !d.is_empty() => RerankMode::Single(d.to_string()),
                Some(("baseline", d)) if !d.is_empty() => RerankMode::Baseline(d.to_string()),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown mode `{s}` (expected learned, naive-i, naive-ii, naive-iii, \
                         single:<detector> or baseline:<detector>)"
                    )))
                }
            },
        })
    }

    /// File-name form of the mode.
    pub fn stem(&self) -> String {
        match self {
            RerankMode::Learned => "learned".into(),
            RerankMode::Naive(NaiveMode::ScoreUnion) => "naive-i".into(),
            RerankMode::Naive(NaiveMode::Interleave) => "naive-ii".into(),
            RerankMode::Naive(NaiveMode::Concatenate) => "naive-iii".into(),
            RerankMode::Single(d) => format!("single-{d}"),
            RerankMode::Baseline(d) => format!("baseline-{d}"),
        }
    }
}

/// Maximum IoU of each detection with an object of its class in its image.
pub fn overlap_labels(corpus: &DetectionCorpus, gts: &[GroundTruthObject]) -> Vec<f64> {
    let by_image = group_ground_truth(gts);
    corpus
        .detections()
        .iter()
        .map(|d| {
            by_image.get(d.image_id.as_str()).map_or(0.0, |objs| {
                objs.iter()
                    .filter(|g| g.class_id == d.class_id)
                    .map(|g| iou(&d.bbox, &g.bbox))
                    .fold(0.0, f64::max)
            })
        })
        .collect()
}

/// Mean AP of one detector's own calibrated ranking.
fn detector_map(corpus: &DetectionCorpus, gts: &[GroundTruthObject], cfg: &RunConfig) -> Option<f64> {
    let mut per_class: Vec<Vec<&Detection>> = vec![Vec::new(); corpus.classes().len()];
    for d in corpus.detections() {
        per_class[d.class_id].push(d);
    }
    for list in &mut per_class {
        list.sort_by(|a, b| b.best_score().total_cmp(&a.best_score()));
    }
    evaluate(&per_class, gts, cfg.iou_threshold).map(cfg.ap_protocol)
}

/// A run: configuration plus the validated split.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub cfg: RunConfig,
    pub split: SplitManifest,
}

/// One fold loaded from disk.
pub struct FoldData {
    pub corpus: DetectionCorpus,
    pub gts: Vec<GroundTruthObject>,
    pub proposals: ProposalSet,
    pub files: Vec<PathBuf>,
}

impl Workspace {
    pub fn open(cfg: RunConfig) -> Result<Self> {
        let split = assemble_split(SplitManifest::load(&cfg.manifest)?)?;
        Ok(Self { cfg, split })
    }

    fn work(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.work_dir.join(rel)
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.work("calibration.tsv")
    }

    pub fn detector_order_path(&self) -> PathBuf {
        self.work("detector_order.tsv")
    }

    /// `single` names the detector of a one-detector feature set.
    pub fn features_path(&self, fold: Fold, single: Option<&str>) -> PathBuf {
        match single {
            None => self.work(format!("features/{fold}.tsv")),
            Some(d) => self.work(format!("features/single-{d}/{fold}.tsv")),
        }
    }

    pub fn model_dir(&self, single: Option<&str>) -> PathBuf {
        match single {
            None => self.work("models/fused"),
            Some(d) => self.work(format!("models/single-{d}")),
        }
    }

    pub fn fused_path(&self, mode: &RerankMode) -> PathBuf {
        self.work(format!("fused/{}.tsv", mode.stem()))
    }

    pub fn eval_dir(&self, mode: &RerankMode) -> PathBuf {
        self.work(format!("eval/{}", mode.stem()))
    }

    pub fn analysis_dir(&self, mode: &RerankMode) -> PathBuf {
        self.work(format!("analysis/{}", mode.stem()))
    }

    pub fn bound_path(&self) -> PathBuf {
        self.work("bound/bounds.csv")
    }

    fn manifest(&self, step: String, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<PathBuf> {
        Manifest {
            base: &self.cfg.base_dir,
            dir: &self.cfg.work_dir,
            step,
            config_hash: sha256_hex(self.cfg.source.to_text().as_bytes()),
            seed: self.cfg.seed,
            inputs,
            outputs,
        }
        .write()
    }

    fn fold_files(&self, fold: Fold) -> Result<&FoldFiles> {
        self.split
            .fold(fold)
            .ok_or_else(|| Error::Config(format!("manifest lacks the `{fold}` fold")))
    }

    pub fn load_fold(&self, fold: Fold) -> Result<FoldData> {
        let f = self.fold_files(fold)?;
        Ok(FoldData {
            corpus: load_detections(&f.detections, &self.cfg.detectors, &self.cfg.classes)?,
            gts: load_ground_truth(&f.ground_truth, &self.cfg.classes)?,
            proposals: load_proposals(&f.proposals)?,
            files: vec![f.detections.clone(), f.ground_truth.clone(), f.proposals.clone()],
        })
    }

    /// A fold with calibrated scores filled in.
    pub fn load_calibrated(&self, fold: Fold) -> Result<FoldData> {
        let mut data = self.load_fold(fold)?;
        let table = CalibrationTable::load(&self.calibration_path(), &self.cfg.detectors, &self.cfg.classes)?;
        table.apply(&mut data.corpus)?;
        data.files.push(self.calibration_path());
        Ok(data)
    }

    /// Context-training folds merged into one corpus.
    fn context_data(&self) -> Result<FoldData> {
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        let mut proposals = ProposalSet::new();
        let mut files = Vec::new();
        for fold in self.split.context_folds() {
            let d = self.load_fold(fold)?;
            dets.extend(d.corpus.detections().iter().cloned());
            gts.extend(d.gts);
            for (image, p) in d.proposals.images() {
                *proposals.image_mut(image) = p.clone();
            }
            files.extend(d.files);
        }
        Ok(FoldData {
            corpus: DetectionCorpus::new(self.cfg.detectors.clone(), self.cfg.classes.clone(), dets)?,
            gts,
            proposals,
            files,
        })
    }

    fn detector_id(&self, name: &str) -> Result<usize> {
        self.cfg.detectors.id(name)
    }

    /// Fits Platt calibration on the context folds and ranks the detectors
    /// by their calibrated mAP there.
    pub fn calibrate(&self) -> Result<StepReport> {
        let data = self.context_data()?;
        let fit = fit_calibration(&data.corpus, &data.gts, self.cfg.calibration, self.cfg.iou_threshold)?;
        let path = self.calibration_path();
        fit.table.save(&path, &self.cfg.detectors, &self.cfg.classes)?;

        let mut calibrated = data.corpus.clone();
        fit.table.apply(&mut calibrated)?;
        let mut ranking: Vec<(usize, f64)> = (0..self.cfg.detectors.len())
            .map(|j| {
                let single = calibrated.restrict_to_detector(j)?;
                Ok((j, detector_map(&single, &data.gts, &self.cfg).unwrap_or(0.0)))
            })
            .collect::<Result<_>>()?;
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let order_text: String = ranking
            .iter()
            .map(|(j, m)| format!("{}\t{m:.6}\n", self.cfg.detectors.name(*j)))
            .collect();
        let order_path = self.detector_order_path();
        write_text(&order_path, &order_text)?;

        let outputs = vec![path, order_path];
        let manifest = self.manifest("calibrate".into(), data.files, outputs.clone())?;
        let mut summary = format!(
            "calibrated {} detector/class pairs",
            self.cfg.detectors.len() * self.cfg.classes.len()
        );
        if !fit.pooled_fallbacks.is_empty() {
            summary.push_str(&format!(
                " ({} fell back to per-detector pooled fits)",
                fit.pooled_fallbacks.len()
            ));
        }
        Ok(StepReport {
            summary,
            outputs,
            manifest,
        })
    }

    fn detector_order(&self) -> Result<Vec<usize>> {
        let path = self.detector_order_path();
        read_text(&path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| self.detector_id(l.split('\t').next().unwrap_or("")))
            .collect()
    }

    fn feature_dim(&self, single: bool) -> usize {
        let n = if single { 1 } else { self.cfg.detectors.len() };
        feature_dim(n, self.cfg.classes.len(), &self.cfg.features)
    }

    /// Feature dumps for every fold, for the full roster and (when
    /// `train_single` is on) for each detector alone.
    pub fn featurize(&self) -> Result<StepReport> {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let folds: Vec<Fold> = self.split.folds().map(|(f, _)| f).collect();
        for fold in folds {
            let data = self.load_calibrated(fold)?;
            let m = extract_features(&data.corpus, &data.proposals, &self.cfg.features)?;
            let path = self.features_path(fold, None);
            save_feature_dump(&path, &m)?;
            outputs.push(path);
            if self.cfg.train_single {
                for j in 0..self.cfg.detectors.len() {
                    let single = data.corpus.restrict_to_detector(j)?;
                    let m = extract_features(&single, &data.proposals, &self.cfg.features)?;
                    let path = self.features_path(fold, Some(self.cfg.detectors.name(j)));
                    save_feature_dump(&path, &m)?;
                    outputs.push(path);
                }
            }
            inputs.extend(data.files);
        }
        inputs.dedup();
        let manifest = self.manifest("featurize".into(), inputs, outputs.clone())?;
        Ok(StepReport {
            summary: format!(
                "wrote {} feature dumps ({} dimensions for the full roster)",
                outputs.len(),
                self.feature_dim(false)
            ),
            outputs,
            manifest,
        })
    }

    fn load_features(&self, fold: Fold, single: Option<&str>) -> Result<FeatureMatrix> {
        load_feature_dump(&self.features_path(fold, single), self.feature_dim(single.is_some()))
    }

    /// Trains one model per class (or one pooled model) from context-fold
    /// features and overlap labels.
    fn train_models(&self, single: Option<&str>) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let n_cls = self.cfg.classes.len();
        let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_cls];
        let mut labels: Vec<Vec<f64>> = vec![Vec::new(); n_cls];
        let mut inputs = Vec::new();
        for fold in self.split.context_folds() {
            let mut data = self.load_fold(fold)?;
            if let Some(d) = single {
                data.corpus = data.corpus.restrict_to_detector(self.detector_id(d)?)?;
            }
            let feats = self.load_features(fold, single)?;
            if feats.len() != data.corpus.len() {
                return Err(Error::Data(format!(
                    "feature dump for fold `{fold}` has {} rows for {} detections; rerun featurize",
                    feats.len(),
                    data.corpus.len()
                )));
            }
            let y = overlap_labels(&data.corpus, &data.gts);
            for ((d, row), y) in data.corpus.detections().iter().zip(feats.rows).zip(y) {
                rows[d.class_id].push(row);
                labels[d.class_id].push(y);
            }
            inputs.push(self.features_path(fold, single));
            inputs.extend(data.files);
        }
        let cfg = &self.cfg.train;
        let models: Vec<RankerModel> = if cfg.pooled {
            let ts = TrainingSet::new(rows.concat(), labels.concat())?;
            let m = train(&ts, 0, cfg)?;
            (0..n_cls)
                .map(|c| RankerModel {
                    class_id: c,
                    ..m.clone()
                })
                .collect()
        } else {
            rows.into_par_iter()
                .zip(labels)
                .enumerate()
                .map(|(c, (r, l))| {
                    let ts = TrainingSet::new(r, l)?;
                    train(&ts, c, cfg).map_err(|e| match e {
                        Error::DegenerateTraining(m) => Error::DegenerateTraining(format!(
                            "class `{}`: {m}",
                            self.cfg.classes.name(c)
                        )),
                        other => other,
                    })
                })
                .collect::<Result<_>>()?
        };
        let dir = self.model_dir(single);
        let mut outputs = Vec::new();
        for m in &models {
            let path = dir.join(format!("{}.model", self.cfg.classes.name(m.class_id)));
            m.save(&path)?;
            outputs.push(path);
        }
        Ok((inputs, outputs))
    }

    pub fn train(&self) -> Result<StepReport> {
        let (mut inputs, mut outputs) = self.train_models(None)?;
        if self.cfg.train_single {
            for d in self.cfg.detectors.names() {
                let (i, o) = self.train_models(Some(d))?;
                inputs.extend(i);
                outputs.extend(o);
            }
        }
        inputs.sort();
        inputs.dedup();
        let manifest = self.manifest("train".into(), inputs, outputs.clone())?;
        Ok(StepReport {
            summary: format!(
                "trained {} {} models (C = {})",
                outputs.len(),
                self.cfg.train.loss.tag(),
                self.cfg.train.c
            ),
            outputs,
            manifest,
        })
    }

    pub fn load_models(&self, single: Option<&str>) -> Result<(Vec<RankerModel>, Vec<PathBuf>)> {
        let dir = self.model_dir(single);
        let mut models = Vec::new();
        let mut paths = Vec::new();
        for c in self.cfg.classes.names() {
            let path = dir.join(format!("{c}.model"));
            if path.exists() {
                models.push(RankerModel::load(&path)?);
                paths.push(path);
            }
        }
        Ok((models, paths))
    }

    /// Builds the fused test-fold list for `mode` in memory.
    ///
    /// A baseline runs on raw scores when no calibration table exists:
    /// calibration never reorders one detector's list.
    pub fn fuse(&self, mode: &RerankMode) -> Result<(RankedDetectionList, Vec<PathBuf>)> {
        let data = match mode {
            RerankMode::Baseline(_) if !self.calibration_path().exists() => self.load_fold(Fold::Test)?,
            _ => self.load_calibrated(Fold::Test)?,
        };
        let mut inputs = data.files.clone();
        let nms = &self.cfg.nms;
        let list = match mode {
            RerankMode::Naive(m) => {
                inputs.push(self.detector_order_path());
                naive_merge(&data.corpus, *m, &self.detector_order()?, nms)?
            }
            RerankMode::Baseline(d) => {
                let single = data.corpus.restrict_to_detector(self.detector_id(d)?)?;
                let scored = single
                    .detections()
                    .iter()
                    .enumerate()
                    .map(|(i, d)| ScoredDetection::new(d.clone(), d.best_score(), i))
                    .collect();
                RankedDetectionList::build(scored, self.cfg.classes.len(), 1, Some(nms))
            }
            RerankMode::Learned => {
                let feats = self.load_features(Fold::Test, None)?;
                let (models, paths) = self.load_models(None)?;
                inputs.push(self.features_path(Fold::Test, None));
                inputs.extend(paths);
                rerank(&data.corpus, &feats, &models, nms)?
            }
            RerankMode::Single(d) => {
                let single = data.corpus.restrict_to_detector(self.detector_id(d)?)?;
                let feats = self.load_features(Fold::Test, Some(d))?;
                let (models, paths) = self.load_models(Some(d))?;
                inputs.push(self.features_path(Fold::Test, Some(d)));
                inputs.extend(paths);
                crate::fusion::single_detector_rerank(&single, &feats, &models, nms)?
            }
        };
        Ok((list, inputs))
    }

    fn mode_detectors(&self, mode: &RerankMode) -> Result<Roster> {
        Ok(match mode {
            RerankMode::Single(d) | RerankMode::Baseline(d) => self.cfg.detectors.restrict(self.detector_id(d)?),
            _ => self.cfg.detectors.clone(),
        })
    }

    pub fn rerank(&self, mode: &RerankMode) -> Result<StepReport> {
        let (list, inputs) = self.fuse(mode)?;
        let path = self.fused_path(mode);
        list.save(&path, &self.mode_detectors(mode)?, &self.cfg.classes)?;
        let kept = list.ranked_per_class().iter().map(Vec::len).sum::<usize>();
        let manifest = self.manifest(format!("rerank-{}", mode.stem()), inputs, vec![path.clone()])?;
        Ok(StepReport {
            summary: format!(
                "{}: {kept} of {} detections kept after suppression",
                mode.stem(),
                list.len()
            ),
            outputs: vec![path],
            manifest,
        })
    }

    pub fn load_fused(&self, mode: &RerankMode) -> Result<RankedDetectionList> {
        RankedDetectionList::load(&self.fused_path(mode), &self.mode_detectors(mode)?, &self.cfg.classes)
    }

    /// Evaluates a fused list against the test ground truth.
    pub fn evaluate_list(&self, list: &RankedDetectionList) -> Result<EvalReport> {
        let gts = load_ground_truth(&self.fold_files(Fold::Test)?.ground_truth, &self.cfg.classes)?;
        Ok(evaluate(&list.ranked_per_class(), &gts, self.cfg.iou_threshold))
    }

    pub fn eval(&self, mode: &RerankMode) -> Result<(EvalReport, StepReport)> {
        let list = self.load_fused(mode)?;
        let report = self.evaluate_list(&list)?;
        let dir = self.eval_dir(mode);
        let text_path = dir.join("report.txt");
        let csv_path = dir.join("ap.csv");
        write_text(&text_path, &ap_table_text(&report, &self.cfg.classes, &mode.stem()))?;
        write_text(&csv_path, &ap_table_csv(&report, &self.cfg.classes)?)?;
        let inputs = vec![self.fused_path(mode), self.fold_files(Fold::Test)?.ground_truth.clone()];
        let outputs = vec![text_path, csv_path];
        let manifest = self.manifest(format!("eval-{}", mode.stem()), inputs, outputs.clone())?;
        let map = report.map(self.cfg.ap_protocol);
        Ok((
            report,
            StepReport {
                summary: format!(
                    "{}: mAP ({}) = {}",
                    mode.stem(),
                    self.cfg.ap_protocol.tag(),
                    map.map_or("-".to_string(), |m| format!("{m:.4}"))
                ),
                outputs,
                manifest,
            },
        ))
    }

    /// False-positive taxonomy and PR curves of a fused list; feature
    /// importance when the mode has models.
    pub fn analyze(&self, mode: &RerankMode) -> Result<StepReport> {
        let list = self.load_fused(mode)?;
        let gts_path = self.fold_files(Fold::Test)?.ground_truth.clone();
        let gts = load_ground_truth(&gts_path, &self.cfg.classes)?;
        let report = evaluate(&list.ranked_per_class(), &gts, self.cfg.iou_threshold);
        let groups = &self.cfg.groups;

        // false-positive types in global rank order, overall and per group
        let mut all: Vec<(f64, usize, FpType)> = Vec::new();
        for (c, eval) in report.classes.iter().enumerate() {
            let ranked = list.ranked(c);
            let types = false_positive_types(&ranked, eval, &gts, groups);
            let fp_scores = list
                .class(c)
                .iter()
                .filter(|s| !s.suppressed)
                .zip(&eval.matches)
                .filter(|(_, m)| m.is_fp())
                .map(|(s, _)| s.final_score);
            for (score, t) in fp_scores.zip(types) {
                all.push((score, c, t));
            }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut rows = Vec::new();
        let overall: Vec<FpType> = all.iter().map(|x| x.2).collect();
        rows.push(("all".to_string(), fp_taxonomy(&overall, &default_buckets(overall.len()))));
        for (g, name) in groups.names().iter().enumerate() {
            let types: Vec<FpType> = all
                .iter()
                .filter(|x| groups.group(x.1) == Some(g))
                .map(|x| x.2)
                .collect();
            rows.push((name.clone(), fp_taxonomy(&types, &default_buckets(types.len()))));
        }
        let dir = self.analysis_dir(mode);
        let tax_path = dir.join("fp_taxonomy.csv");
        write_text(&tax_path, &taxonomy_csv(&rows)?)?;
        let pr_path = dir.join("pr_curves.csv");
        write_text(&pr_path, &pr_curves_csv(&report, &self.cfg.classes)?)?;
        let mut inputs = vec![self.fused_path(mode), gts_path];
        let mut outputs = vec![tax_path, pr_path];

        let single = match mode {
            RerankMode::Single(d) => Some(d.as_str()),
            _ => None,
        };
        if matches!(mode, RerankMode::Learned | RerankMode::Single(_)) {
            let (models, paths) = self.load_models(single)?;
            let refs: Vec<&RankerModel> = models.iter().collect();
            let importance = feature_importance(&refs)?;
            let detectors = self.mode_detectors(mode)?;
            let names = feature_names(&detectors, &self.cfg.classes, &self.cfg.features);
            let path = dir.join("feature_importance.csv");
            write_text(&path, &importance_csv(&names, &importance)?)?;
            inputs.extend(paths);
            outputs.push(path);
        }
        let manifest = self.manifest(format!("analyze-{}", mode.stem()), inputs, outputs.clone())?;
        Ok(StepReport {
            summary: format!("{}: {} false positives analyzed", mode.stem(), overall.len()),
            outputs,
            manifest,
        })
    }

    /// Maximal mAP of every non-empty detector subset on the test fold.
    pub fn bound(&self) -> Result<StepReport> {
        let data = self.load_fold(Fold::Test)?;
        let n = self.cfg.detectors.len();
        let mut rows = vec![vec![
            "detectors".to_string(),
            "size".to_string(),
            "maximal_map_voc07_11point".to_string(),
            "maximal_map_all_points".to_string(),
        ]];
        let mut best = (String::new(), -1.0);
        for mask in 1u32..(1 << n) {
            let members: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
            let dets: Vec<&Detection> = data
                .corpus
                .detections()
                .iter()
                .filter(|d| members.contains(&d.detector_id))
                .collect();
            let name = members
                .iter()
                .map(|&j| self.cfg.detectors.name(j))
                .collect::<Vec<_>>()
                .join("+");
            let mut row = vec![name.clone(), members.len().to_string()];
            for protocol in ApProtocol::BOTH {
                let m = maximal_map(
                    &dets,
                    &data.gts,
                    self.cfg.classes.len(),
                    self.cfg.iou_threshold,
                    self.cfg.bound_matching,
                    protocol,
                )
                .map;
                if protocol == self.cfg.ap_protocol && m.unwrap_or(0.0) > best.1 {
                    best = (name.clone(), m.unwrap_or(0.0));
                }
                row.push(m.map_or("-".to_string(), |v| format!("{v:.6}")));
            }
            rows.push(row);
        }
        let text = csv_string(rows)?;
        let path = self.bound_path();
        write_text(&path, &text)?;
        let manifest = self.manifest("bound".into(), data.files, vec![path.clone()])?;
        Ok(StepReport {
            summary: format!("highest maximal mAP: {} ({:.4})", best.0, best.1),
            outputs: vec![path],
            manifest,
        })
    }
}
