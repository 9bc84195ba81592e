//! Per-class linear ranking models.
//!
//! Pointwise learners fit `g(x) = w . x + b` with an L2-regularized hinge,
//! logistic or squared epsilon-insensitive loss; the pairwise learner fits
//! a hinge on score differences of preference pairs. Features are
//! standardized with training statistics before optimization and the
//! resulting model is folded back into the raw feature space, so scoring is
//! a plain dot product.

pub mod optim;
pub mod pairs;
pub mod problem;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{read_text, write_text};
use crate::error::{Error, Result};
use crate::rng;

use optim::{dual_cd, newton_cg, OptResult};
use pairs::preference_pairs;
use problem::{Problem, RowLoss};

/// Tube half-width of the squared epsilon-insensitive loss.
pub const EPSILON: f64 = 0.1;

/// Overlap above which a detection counts as positive.
pub const POSITIVE_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    /// PoW1: hinge on binarized labels.
    Hinge,
    /// PoW2: logistic loss on binarized labels.
    #[default]
    Logistic,
    /// PoW3: squared epsilon-insensitive regression on overlap labels.
    SqEpsInsensitive,
    /// PaW1: hinge on preference pairs.
    PairwiseHinge,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Hinge,
        LossKind::Logistic,
        LossKind::SqEpsInsensitive,
        LossKind::PairwiseHinge,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::Logistic => "logistic",
            LossKind::SqEpsInsensitive => "sq-eps-insensitive",
            LossKind::PairwiseHinge => "pairwise-hinge",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "hinge" | "pow1" => Some(LossKind::Hinge),
            "logistic" | "pow2" => Some(LossKind::Logistic),
            "sq-eps-insensitive" | "pow3" => Some(LossKind::SqEpsInsensitive),
            "pairwise-hinge" | "paw1" => Some(LossKind::PairwiseHinge),
            _ => None,
        }
    }

    pub fn is_pairwise(self) -> bool {
        self == LossKind::PairwiseHinge
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub c: f64,
    /// Maximum preference pairs per model.
    pub pair_cap: usize,
    /// Minimum label gap for a preference pair.
    pub pair_margin: f64,
    /// Train one model on all classes instead of one per class.
    pub pooled: bool,
    pub seed: u64,
    /// Relative objective change (Newton) or duality gap (coordinate
    /// descent) at which optimization stops.
    pub tol: f64,
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            c: 1.0,
            pair_cap: 100_000,
            pair_margin: 0.1,
            pooled: false,
            seed: 0,
            tol: 1e-6,
            max_iter: 1000,
            standardize: true,
        }
    }
}

/// Feature rows with overlap labels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl TrainingSet {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let dim = rows.first().map_or(0, Vec::len);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("training features must be finite".into()));
            }
        }
        if let Some(y) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::Data(format!("overlap label {y} outside [0, 1]")));
        }
        Ok(Self { rows, labels })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn binary_labels(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&y| if y > POSITIVE_OVERLAP { 1.0 } else { -1.0 })
            .collect()
    }

    /// Appends the rows of `other`.
    pub fn extend(&mut self, other: TrainingSet) -> Result<()> {
        if !self.is_empty() && !other.is_empty() && self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        self.rows.extend(other.rows);
        self.labels.extend(other.labels);
        Ok(())
    }

    /// Rows sorted by label, then features. Training on the canonical order
    /// makes models independent of the input order.
    fn canonical(&self) -> (Vec<&[f64]>, Vec<f64>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.labels[a].total_cmp(&self.labels[b]).then_with(|| {
                self.rows[a]
                    .iter()
                    .zip(&self.rows[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        (
            idx.iter().map(|&i| &self.rows[i][..]).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation; constant dimensions keep
    /// scale 1.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A trained linear scorer `g(x) = weights . x + bias` in raw feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel {
    pub class_id: usize,
    pub loss: LossKind,
    pub c: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Statistics the model was trained under.
    pub standardizer: Standardizer,
    pub diagnostics: Diagnostics,
}

impl RankerModel {
    pub fn from_weights(class_id: usize, weights: Vec<f64>, bias: f64) -> Self {
        let dim = weights.len();
        Self {
            class_id,
            loss: LossKind::default(),
            c: 1.0,
            weights,
            bias,
            standardizer: Standardizer::identity(dim),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: x.len(),
            });
        }
        Ok(problem::dot(&self.weights, x) + self.bias)
    }

    /// Weights in standardized units, comparable across dimensions.
    pub fn standardized_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.standardizer.scale)
            .map(|(w, s)| w * s)
            .collect()
    }

    fn from_standardized(
        class_id: usize,
        cfg: &TrainConfig,
        std: Standardizer,
        w: &[f64],
        b: f64,
        result: &OptResult,
    ) -> Self {
        let weights: Vec<f64> = w.iter().zip(&std.scale).map(|(w, s)| w / s).collect();
        let bias = b - problem::dot(&weights, &std.mean);
        Self {
            class_id,
            loss: cfg.loss,
            c: cfg.c,
            weights,
            bias,
            standardizer: std,
            diagnostics: Diagnostics {
                objective: result.objective,
                iterations: result.iterations,
                converged: result.converged,
            },
        }
    }
}

/// Starting point of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    /// Uniform random primal weights (Newton) or dual variables (coordinate
    /// descent) from the given seed.
    Random(u64),
}

fn row_loss(loss: LossKind) -> RowLoss {
    match loss {
        LossKind::Hinge | LossKind::PairwiseHinge => RowLoss::Hinge,
        LossKind::Logistic => RowLoss::Logistic,
        LossKind::SqEpsInsensitive => RowLoss::SqEpsInsensitive { eps: EPSILON },
    }
}

/// Builds the optimization problem in standardized space.
///
/// Pointwise rows get a trailing constant 1 so the bias is learned (and
/// regularized) with the weights. Pairwise rows are differences
/// `x_hi - x_lo` with target +1.
pub fn build_problem(ts: &TrainingSet, cfg: &TrainConfig, class_id: usize) -> Result<(Problem, Standardizer)> {
    if ts.is_empty() {
        return Err(Error::DegenerateTraining("empty training set".into()));
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {}", cfg.c)));
    }
    let (rows, labels) = ts.canonical();
    let std = if cfg.standardize {
        Standardizer::fit(&rows)
    } else {
        Standardizer::identity(ts.dim())
    };
    let z: Vec<Vec<f64>> = rows.iter().map(|r| std.apply(r)).collect();
    let problem = match cfg.loss {
        LossKind::PairwiseHinge => {
            let mut rng = rng::stream(cfg.seed, &[rng::tag("pairs"), class_id as u64]);
            let pairs = preference_pairs(&labels, cfg.pair_margin, cfg.pair_cap, &mut rng)?;
            Problem {
                rows: pairs
                    .iter()
                    .map(|&(hi, lo)| z[hi].iter().zip(&z[lo]).map(|(a, b)| a - b).collect())
                    .collect(),
                targets: vec![1.0; pairs.len()],
                loss: RowLoss::Hinge,
                c: cfg.c,
            }
        }
        loss => {
            let targets: Vec<f64> = if loss == LossKind::SqEpsInsensitive {
                labels.clone()
            } else {
                let t: Vec<f64> = labels
                    .iter()
                    .map(|&y| if y > POSITIVE_OVERLAP { 1.0 } else { -1.0 })
                    .collect();
                let pos = t.iter().filter(|&&v| v > 0.0).count();
                if pos == 0 || pos == t.len() {
                    return Err(Error::DegenerateTraining(format!(
                        "{} needs positive and negative examples ({pos} of {} positive)",
                        loss.tag(),
                        t.len()
                    )));
                }
                t
            };
            Problem {
                rows: z
                    .into_iter()
                    .map(|mut r| {
                        r.push(1.0);
                        r
                    })
                    .collect(),
                targets,
                loss: row_loss(loss),
                c: cfg.c,
            }
        }
    };
    Ok((problem, std))
}

/// Runs the solver matching the loss on a built problem.
pub fn optimize(problem: &Problem, cfg: &TrainConfig, class_id: usize, init: Init) -> Result<OptResult> {
    let init_rng = |n: usize, lo: f64, hi: f64, seed: u64| -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(lo..=hi)).collect()
    };
    match problem.loss {
        RowLoss::Hinge => {
            let alpha0 = match init {
                Init::Zero => None,
                Init::Random(s) => Some(init_rng(problem.len(), 0.0, problem.c, s)),
            };
            let mut rng = rng::stream(cfg.seed, &[rng::tag("dual-cd"), class_id as u64]);
            dual_cd(problem, alpha0, cfg.tol, cfg.max_iter, &mut rng)
        }
        _ => {
            let theta0 = match init {
                Init::Zero => vec![0.0; problem.dim()],
                Init::Random(s) => init_rng(problem.dim(), -1.0, 1.0, s),
            };
            newton_cg(problem, theta0, cfg.tol, cfg.max_iter)
        }
    }
}

/// Trains a model for `class_id` from a given starting point.
pub fn train_from(ts: &TrainingSet, class_id: usize, cfg: &TrainConfig, init: Init) -> Result<RankerModel> {
    let (problem, std) = build_problem(ts, cfg, class_id)?;
    let result = optimize(&problem, cfg, class_id, init)?;
    let dim = ts.dim();
    let (w, b) = if cfg.loss.is_pairwise() {
        (&result.theta[..], 0.0)
    } else {
        (&result.theta[..dim], result.theta[dim])
    };
    let model = RankerModel::from_standardized(class_id, cfg, std, w, b, &result);
    if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
        return Err(Error::Numeric("training produced non-finite weights".into()));
    }
    Ok(model)
}

pub fn train_pointwise(ts: &TrainingSet, class_id: usize, cfg: &TrainConfig) -> Result<RankerModel> {
    if cfg.loss.is_pairwise() {
        return Err(Error::Config("pairwise loss passed to the pointwise trainer".into()));
    }
    train_from(ts, class_id, cfg, Init::Zero)
}

pub fn train_pairwise(ts: &TrainingSet, class_id: usize, cfg: &TrainConfig) -> Result<RankerModel> {
    let cfg = TrainConfig {
        loss: LossKind::PairwiseHinge,
        ..*cfg
    };
    train_from(ts, class_id, &cfg, Init::Zero)
}

pub fn train(ts: &TrainingSet, class_id: usize, cfg: &TrainConfig) -> Result<RankerModel> {
    train_from(ts, class_id, cfg, Init::Zero)
}

/// Analytic-versus-numeric gradient error of the raw (unstandardized)
/// objective at `theta`. `theta` has `dim + 1` entries for pointwise losses
/// (bias last) and `dim` for the pairwise loss.
pub fn gradient_check(loss: LossKind, theta: &[f64], batch: &TrainingSet, c: f64) -> Result<f64> {
    let cfg = TrainConfig {
        loss,
        c,
        standardize: false,
        ..TrainConfig::default()
    };
    let (problem, _) = build_problem(batch, &cfg, 0)?;
    if problem.dim() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            actual: theta.len(),
        });
    }
    Ok(problem::finite_difference_error(&problem, theta, 1e-5))
}

struct FieldReader<'a, I> {
    path: &'a Path,
    lines: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> FieldReader<'a, I> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message,
        }
    }

    /// Value of the next line, which must start with `key`.
    fn field(&mut self, key: &str) -> Result<String> {
        let Some((i, l)) = self.lines.next() else {
            return Err(self.err(format!("missing `{key}` line")));
        };
        self.line = i + 1;
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        if k != key {
            return Err(self.err(format!("expected `{key}`, found `{k}`")));
        }
        Ok(v.to_string())
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.err(format!("invalid `{key}` value `{v}`")))
    }

    fn real(&mut self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    fn reals(&mut self, key: &str, dim: usize) -> Result<Vec<f64>> {
        let v = self.field(key)?;
        let xs = v
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| self.err(format!("invalid number `{x}`"))))
            .collect::<Result<Vec<_>>>()?;
        if xs.len() != dim {
            return Err(self.err(format!("`{key}` has {} values, expected {dim}", xs.len())));
        }
        Ok(xs)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

impl RankerModel {
    /// Line-oriented text; floats use shortest round-trip formatting so a
    /// reload is bit-exact.
    pub fn to_text(&self) -> String {
        format!(
            "detfuse-ranker 1\nloss {}\nclass {}\nc {}\ndim {}\nmean {}\nscale {}\nbias {}\nweights {}\nobjective {}\niterations {}\nconverged {}\n",
            self.loss.tag(),
            self.class_id,
            self.c,
            self.dim(),
            join(&self.standardizer.mean),
            join(&self.standardizer.scale),
            self.bias,
            join(&self.weights),
            self.diagnostics.objective,
            self.diagnostics.iterations,
            self.diagnostics.converged,
        )
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut r = FieldReader {
            path,
            lines: text.lines().enumerate(),
            line: 0,
        };
        let v = r.field("detfuse-ranker")?;
        if v != "1" {
            return Err(r.err(format!("unsupported model version `{v}`")));
        }
        let v = r.field("loss")?;
        let loss = LossKind::from_tag(&v).ok_or_else(|| r.err(format!("unknown loss `{v}`")))?;
        let class_id = r.parsed("class")?;
        let c = r.real("c")?;
        let dim: usize = r.parsed("dim")?;
        let mean = r.reals("mean", dim)?;
        let scale = r.reals("scale", dim)?;
        let bias = r.real("bias")?;
        let weights = r.reals("weights", dim)?;
        let objective = r.real("objective")?;
        let iterations = r.parsed("iterations")?;
        let converged = r.parsed("converged")?;
        Ok(Self {
            class_id,
            loss,
            c,
            weights,
            bias,
            standardizer: Standardizer { mean, scale },
            diagnostics: Diagnostics {
                objective,
                iterations,
                converged,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }
}
