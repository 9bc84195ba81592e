//! Seeded generator of scenes, detector outputs and region proposals.
//!
//! Every object carries a hidden difficulty latent `u ~ U(0, 1)`. A
//! detector finds an object of class `c` when its skill for `c` exceeds the
//! object's effective difficulty `share * u + (1 - share) * v`, where `v` is
//! a private per-detector draw; with `share = 1` all detectors see the same
//! difficulty and therefore miss the same hard objects. True-positive scores
//! rise with `1 - difficulty`; false positives are drawn around objects
//! (poor localization) or at random (background).
//!
//! Each image draws from its own stream derived from the seed, so output
//! does not depend on scheduling.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::config::{split_list, KeyValues};
use crate::corpus::{
    fmt_real, write_text, DetectionCorpus, ImageProposals, Proposal, ProposalSet, ProposalSource,
    Roster,
};
use crate::detection::{Detection, GroundTruthObject};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::rng::{derive_seed, stream, tag};

/// Scene layout parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    /// Poisson mean of objects per image.
    pub objects_per_image: f64,
    /// Relative class frequencies, one per class.
    pub class_weights: Vec<f64>,
    /// Box side range as a fraction of the canvas side.
    pub box_size: (f64, f64),
    /// Largest IoU allowed between two objects of one image.
    pub max_gt_iou: f64,
    /// Placement attempts per object before giving up.
    pub placement_retries: usize,
    /// Share of the hardest objects flagged difficult.
    pub difficult_rate: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 500.0,
            height: 375.0,
            objects_per_image: 2.0,
            class_weights: vec![1.0],
            box_size: (0.15, 0.5),
            max_gt_iou: 0.3,
            placement_retries: 200,
            difficult_rate: 0.0,
        }
    }
}

/// Error profile of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    pub name: String,
    /// Per class, in `[0, 1]`.
    pub skill: Vec<f64>,
    /// Per class, expected false positives per image.
    pub fp_rate: Vec<f64>,
    /// Corner jitter of true positives, in pixels.
    pub sigma: f64,
    /// Share of false positives placed around an object instead of at random.
    pub loc_fp_fraction: f64,
    /// True-positive score: `mean + slope * (1 - difficulty)`, spread `sd`.
    pub tp_score: (f64, f64, f64),
    /// False-positive score mean and spread.
    pub fp_score: (f64, f64),
    /// Raw score = `offset + scale * s` for a latent score `s` in `[0, 1]`.
    pub score_scale: f64,
    pub score_offset: f64,
    /// Weight of the shared difficulty latent.
    pub latent_share: f64,
}

impl DetectorProfile {
    pub fn perfect(name: &str, n_classes: usize) -> Self {
        Self {
            name: name.to_string(),
            skill: vec![1.0; n_classes],
            fp_rate: vec![0.0; n_classes],
            sigma: 0.0,
            loc_fp_fraction: 0.0,
            tp_score: (0.5, 0.5, 0.0),
            fp_score: (0.2, 0.1),
            score_scale: 1.0,
            score_offset: 0.0,
            latent_share: 1.0,
        }
    }

    fn validate(&self, n_classes: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("detector `{}`: {what}", self.name)));
        if self.skill.len() != n_classes || self.fp_rate.len() != n_classes {
            return bad("skill and fp_rate need one value per class");
        }
        if self.skill.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("skill must lie in [0, 1]");
        }
        if self.fp_rate.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("fp_rate must be non-negative");
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.loc_fp_fraction) || !(0.0..=1.0).contains(&self.latent_share) {
            return bad("loc_fp_fraction and latent_share must lie in [0, 1]");
        }
        if !(self.tp_score.2 >= 0.0 && self.fp_score.1 >= 0.0) {
            return bad("score spreads must be non-negative");
        }
        Ok(())
    }
}

/// Proposal generator for one source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    /// Proposals per image.
    pub count: usize,
    /// Corner jitter of object-covering proposals, as a fraction of box size.
    pub jitter: f64,
    /// Share of proposals placed uniformly at random.
    pub random_fraction: f64,
    /// Noise on EES confidences around the best ground-truth overlap.
    pub confidence_noise: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            count: 40,
            jitter: 0.1,
            random_fraction: 0.5,
            confidence_noise: 0.1,
        }
    }
}

/// A generated scene: ground truth plus the hidden difficulty of each object.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_ids: Vec<String>,
    pub objects: Vec<GroundTruthObject>,
    /// Difficulty latent per object, aligned with `objects`.
    pub latents: Vec<f64>,
    /// Object index range of every image, aligned with `image_ids`.
    ranges: Vec<std::ops::Range<usize>>,
}

impl Scene {
    fn image_objects(&self, k: usize) -> (&[GroundTruthObject], &[f64]) {
        let r = self.ranges[k].clone();
        (&self.objects[r.clone()], &self.latents[r])
    }

    /// Sidecar with the difficulty of every object.
    pub fn latent_text(&self, classes: &Roster) -> String {
        let mut out = String::new();
        for (g, u) in self.objects.iter().zip(&self.latents) {
            out.push_str(&g.image_id);
            out.push('\t');
            out.push_str(classes.name(g.class_id));
            for v in g.bbox.coords() {
                out.push('\t');
                out.push_str(&fmt_real(v));
            }
            out.push('\t');
            out.push_str(&fmt_real(*u));
            out.push('\n');
        }
        out
    }
}

// Record files keep six decimals; rounding here keeps generated values and
// their reloaded copies identical.
fn q6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn q2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn make_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64) -> BoundingBox {
    let cx0 = q2(x0.clamp(0.0, w - 1.0));
    let cy0 = q2(y0.clamp(0.0, h - 1.0));
    let cx1 = q2(x1.clamp(cx0 + 1.0, w));
    let cy1 = q2(y1.clamp(cy0 + 1.0, h));
    BoundingBox::new(cx0, cy0, cx1, cy1).expect("clamped box has positive extent")
}

fn random_box(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> BoundingBox {
    let (lo, hi) = spec.box_size;
    let bw = rng.random_range(lo..=hi) * spec.width;
    let bh = rng.random_range(lo..=hi) * spec.height;
    let x0 = rng.random_range(0.0..=(spec.width - bw).max(0.0));
    let y0 = rng.random_range(0.0..=(spec.height - bh).max(0.0));
    make_box(x0, y0, x0 + bw, y0 + bh, spec.width, spec.height)
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
}

fn gaussian(mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("valid normal").sample(rng)
}

/// Gaussian restricted to `[0, 1]` by rejection; falls back to clamping
/// when the mass inside is negligible.
fn unit_gaussian(mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    for _ in 0..64 {
        let x = gaussian(mean, sd, rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    mean.clamp(0.0, 1.0)
}

fn pick_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Ground truth for `n_images` images named `<prefix>-<index>`.
pub fn generate_ground_truth(spec: &SceneSpec, prefix: &str, n_images: usize, seed: u64) -> Result<Scene> {
    if n_images == 0 {
        return Err(Error::Config("a scene needs at least one image".into()));
    }
    if spec.class_weights.is_empty() || spec.class_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config("class weights must be non-negative".into()));
    }
    if spec.class_weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config("class weights must not all be zero".into()));
    }
    let (lo, hi) = spec.box_size;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Config("box_size must satisfy 0 < min <= max <= 1".into()));
    }
    let width = n_images.to_string().len().max(5);
    let per_image: Vec<(Vec<GroundTruthObject>, Vec<f64>)> = (0..n_images)
        .into_par_iter()
        .map(|k| {
            let image_id = format!("{prefix}-{k:0width$}");
            let mut rng = stream(seed, &[tag("scene"), k as u64]);
            let n = poisson(spec.objects_per_image, &mut rng);
            let mut objects: Vec<GroundTruthObject> = Vec::with_capacity(n);
            let mut latents = Vec::with_capacity(n);
            for _ in 0..n {
                let class_id = pick_weighted(&spec.class_weights, &mut rng);
                let mut placed = None;
                for _ in 0..spec.placement_retries.max(1) {
                    let b = random_box(spec, &mut rng);
                    if objects.iter().all(|g| iou(&g.bbox, &b) <= spec.max_gt_iou) {
                        placed = Some(b);
                        break;
                    }
                }
                let bbox = placed.ok_or_else(|| {
                    Error::Config(format!(
                        "could not place object {} in image `{image_id}` after {} attempts",
                        objects.len(),
                        spec.placement_retries
                    ))
                })?;
                let u = q6(rng.random::<f64>());
                objects.push(GroundTruthObject {
                    image_id: image_id.clone(),
                    class_id,
                    bbox,
                    difficult: u >= 1.0 - spec.difficult_rate,
                });
                latents.push(u);
            }
            Ok((objects, latents))
        })
        .collect::<Result<_>>()?;

    let mut scene = Scene {
        image_ids: (0..n_images).map(|k| format!("{prefix}-{k:0width$}")).collect(),
        objects: Vec::new(),
        latents: Vec::new(),
        ranges: Vec::with_capacity(n_images),
    };
    for (objects, latents) in per_image {
        let start = scene.objects.len();
        scene.objects.extend(objects);
        scene.latents.extend(latents);
        scene.ranges.push(start..scene.objects.len());
    }
    Ok(scene)
}

/// A box around `g` that overlaps it only partially.
fn mislocalized(g: &BoundingBox, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> BoundingBox {
    let (w, h) = (g.width(), g.height());
    let sx = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let sy = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let dx = sx * rng.random_range(0.3..0.7) * w;
    let dy = sy * rng.random_range(0.0..0.3) * h;
    let s = rng.random_range(0.7..1.3);
    let cx = g.x_min() + w / 2.0 + dx;
    let cy = g.y_min() + h / 2.0 + dy;
    make_box(
        cx - s * w / 2.0,
        cy - s * h / 2.0,
        cx + s * w / 2.0,
        cy + s * h / 2.0,
        spec.width,
        spec.height,
    )
}

fn jittered(g: &BoundingBox, sd: f64, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> BoundingBox {
    let c = g.coords();
    let j: Vec<f64> = c.iter().map(|&v| v + gaussian(0.0, sd, rng)).collect();
    make_box(j[0], j[1], j[2], j[3], spec.width, spec.height)
}

/// Outputs of one detector on a scene, in image order.
pub fn simulate_detector(
    scene: &Scene,
    spec: &SceneSpec,
    detector_id: usize,
    profile: &DetectorProfile,
    seed: u64,
) -> Result<Vec<Detection>> {
    let n_classes = spec.class_weights.len();
    profile.validate(n_classes)?;
    let raw = |s: f64| q6(profile.score_offset + profile.score_scale * s);
    let per_image: Vec<Vec<Detection>> = (0..scene.image_ids.len())
        .into_par_iter()
        .map(|k| {
            let image_id = &scene.image_ids[k];
            let (objects, latents) = scene.image_objects(k);
            let mut rng = stream(seed, &[tag("detector"), detector_id as u64, k as u64]);
            let mut out = Vec::new();
            for (g, &u) in objects.iter().zip(latents) {
                let v: f64 = rng.random();
                let difficulty = profile.latent_share * u + (1.0 - profile.latent_share) * v;
                if profile.skill[g.class_id] > difficulty {
                    let bbox = jittered(&g.bbox, profile.sigma, spec, &mut rng);
                    let (mean, slope, sd) = profile.tp_score;
                    let s = unit_gaussian(mean + slope * (1.0 - difficulty), sd, &mut rng);
                    out.push(Detection::new(image_id.as_str(), g.class_id, detector_id, bbox, raw(s)));
                }
            }
            for c in 0..n_classes {
                for _ in 0..poisson(profile.fp_rate[c], &mut rng) {
                    let near = !objects.is_empty() && rng.random::<f64>() < profile.loc_fp_fraction;
                    let bbox = if near {
                        let g = &objects[rng.random_range(0..objects.len())];
                        mislocalized(&g.bbox, spec, &mut rng)
                    } else {
                        random_box(spec, &mut rng)
                    };
                    let s = unit_gaussian(profile.fp_score.0, profile.fp_score.1, &mut rng);
                    out.push(Detection::new(image_id.as_str(), c, detector_id, bbox, raw(s)));
                }
            }
            out
        })
        .collect();
    Ok(per_image.into_iter().flatten().collect())
}

/// Proposals of one source on a scene. Object-covering proposals cycle
/// through the objects of the image so each is covered once before any is
/// covered twice.
pub fn simulate_proposals(
    scene: &Scene,
    spec: &SceneSpec,
    source: ProposalSource,
    cfg: &ProposalConfig,
    seed: u64,
) -> Result<Vec<(String, Vec<Proposal>)>> {
    if !(0.0..=1.0).contains(&cfg.random_fraction) || !(cfg.jitter >= 0.0) || !(cfg.confidence_noise >= 0.0) {
        return Err(Error::Config(format!("invalid {} proposal parameters", source.name())));
    }
    Ok((0..scene.image_ids.len())
        .into_par_iter()
        .map(|k| {
            let (objects, _) = scene.image_objects(k);
            let mut rng = stream(seed, &[tag("proposals"), source.index() as u64, k as u64]);
            let n_obj = if objects.is_empty() {
                0
            } else {
                (cfg.count as f64 * (1.0 - cfg.random_fraction)).ceil() as usize
            };
            let props = (0..cfg.count)
                .map(|p| {
                    let bbox = if p < n_obj {
                        let g = &objects[p % objects.len()].bbox;
                        let sd = cfg.jitter * 0.5 * (g.width() + g.height()) / 2.0;
                        jittered(g, sd, spec, &mut rng)
                    } else {
                        random_box(spec, &mut rng)
                    };
                    let confidence = source.has_confidence().then(|| {
                        let best = objects.iter().map(|g| iou(&g.bbox, &bbox)).fold(0.0, f64::max);
                        q6((best + gaussian(0.0, cfg.confidence_noise, &mut rng)).clamp(0.0, 1.0))
                    });
                    Proposal { bbox, confidence }
                })
                .collect();
            (scene.image_ids[k].clone(), props)
        })
        .collect())
}

/// A complete simulation recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub classes: Roster,
    pub scene: SceneSpec,
    pub detectors: Vec<DetectorProfile>,
    pub proposals: [ProposalConfig; 3],
    /// Images in the train, val and test folds.
    pub images: [usize; 3],
}

/// One simulated fold.
#[derive(Debug, Clone)]
pub struct SimFold {
    pub scene: Scene,
    pub corpus: DetectionCorpus,
    pub proposals: ProposalSet,
}

impl Scenario {
    pub fn detector_roster(&self) -> Result<Roster> {
        Roster::detectors(self.detectors.iter().map(|d| d.name.clone()))
    }

    /// Simulates one fold; `prefix` names its images and keys its seeds.
    pub fn simulate_fold(&self, prefix: &str, n_images: usize) -> Result<SimFold> {
        let seed = derive_seed(self.seed, &[tag(prefix)]);
        let scene = generate_ground_truth(&self.scene, prefix, n_images, seed)?;
        let mut dets = Vec::new();
        for (j, p) in self.detectors.iter().enumerate() {
            dets.extend(simulate_detector(&scene, &self.scene, j, p, seed)?);
        }
        let corpus = DetectionCorpus::new(self.detector_roster()?, self.classes.clone(), dets)?;
        let mut proposals = ProposalSet::new();
        for id in &scene.image_ids {
            proposals.image_mut(id);
        }
        for source in ProposalSource::ALL {
            let cfg = &self.proposals[source.index()];
            for (image, props) in simulate_proposals(&scene, &self.scene, source, cfg, seed)? {
                let slot: &mut ImageProposals = proposals.image_mut(&image);
                for p in props {
                    slot.push(source, p)?;
                }
            }
        }
        Ok(SimFold {
            scene,
            corpus,
            proposals,
        })
    }

    /// Reads a scenario file. See `scenarios/standard.cfg` for every key.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let classes = Roster::classes(
            kv.list("classes")
                .ok_or_else(|| Error::Config("scenario needs `classes`".into()))?,
        )?;
        let n = classes.len();
        let reals = |key: &str, default: &[f64]| -> Result<Vec<f64>> {
            match kv.get(key) {
                None => Ok(default.to_vec()),
                Some(v) => split_list(v)
                    .iter()
                    .map(|x| {
                        x.parse::<f64>()
                            .ok()
                            .filter(|f| f.is_finite())
                            .ok_or_else(|| Error::Config(format!("invalid number `{x}` for `{key}`")))
                    })
                    .collect(),
            }
        };
        let real = |key: &str, default: f64| -> Result<f64> {
            let v = reals(key, &[default])?;
            if v.len() != 1 {
                return Err(Error::Config(format!("`{key}` takes one value")));
            }
            Ok(v[0])
        };
        let per_class = |key: &str, default: f64| -> Result<Vec<f64>> {
            let v = reals(key, &[default])?;
            match v.len() {
                1 => Ok(vec![v[0]; n]),
                k if k == n => Ok(v),
                k => Err(Error::Config(format!("`{key}` has {k} values for {n} classes"))),
            }
        };
        let tuple = |key: &str, default: &[f64]| -> Result<Vec<f64>> {
            let v = reals(key, default)?;
            if v.len() != default.len() {
                return Err(Error::Config(format!("`{key}` takes {} values", default.len())));
            }
            Ok(v)
        };

        let d = SceneSpec::default();
        let canvas = tuple("canvas", &[d.width, d.height])?;
        let box_size = tuple("box_size", &[d.box_size.0, d.box_size.1])?;
        let scene = SceneSpec {
            width: canvas[0],
            height: canvas[1],
            objects_per_image: real("objects_per_image", d.objects_per_image)?,
            class_weights: per_class("class_weights", 1.0)?,
            box_size: (box_size[0], box_size[1]),
            max_gt_iou: real("max_gt_iou", d.max_gt_iou)?,
            placement_retries: kv.parse_or("placement_retries", d.placement_retries)?,
            difficult_rate: real("difficult_rate", d.difficult_rate)?,
        };

        let names = kv
            .list("detectors")
            .ok_or_else(|| Error::Config("scenario needs `detectors`".into()))?;
        let mut detectors = Vec::new();
        for name in names {
            let key = |k: &str| format!("detector.{name}.{k}");
            let tp = tuple(&key("tp_score"), &[0.3, 0.6, 0.1])?;
            let fp = tuple(&key("fp_score"), &[0.3, 0.15])?;
            let p = DetectorProfile {
                skill: per_class(&key("skill"), 0.7)?,
                fp_rate: per_class(&key("fp_rate"), 0.5)?,
                sigma: real(&key("sigma"), 3.0)?,
                loc_fp_fraction: real(&key("loc_fp_fraction"), 0.3)?,
                tp_score: (tp[0], tp[1], tp[2]),
                fp_score: (fp[0], fp[1]),
                score_scale: real(&key("score_scale"), 1.0)?,
                score_offset: real(&key("score_offset"), 0.0)?,
                latent_share: real(&key("latent_share"), 1.0)?,
                name,
            };
            p.validate(n)?;
            detectors.push(p);
        }

        let mut proposals = [ProposalConfig::default(); 3];
        for source in ProposalSource::ALL {
            let key = |k: &str| format!("proposals.{}.{k}", source.name().to_lowercase());
            let d = ProposalConfig::default();
            proposals[source.index()] = ProposalConfig {
                count: kv.parse_or(&key("count"), d.count)?,
                jitter: real(&key("jitter"), d.jitter)?,
                random_fraction: real(&key("random_fraction"), d.random_fraction)?,
                confidence_noise: real(&key("confidence_noise"), d.confidence_noise)?,
            };
        }

        let seed: u64 = kv
            .require("seed")?
            .parse()
            .map_err(|_| Error::Config("invalid scenario seed".into()))?;

        let known_prefixes = ["detector.", "proposals."];
        const KNOWN: &[&str] = &[
            "seed",
            "classes",
            "canvas",
            "objects_per_image",
            "class_weights",
            "box_size",
            "max_gt_iou",
            "placement_retries",
            "difficult_rate",
            "detectors",
            "images.train",
            "images.val",
            "images.test",
        ];
        for (k, _) in kv.iter() {
            if !KNOWN.contains(&k) && !known_prefixes.iter().any(|p| k.starts_with(p)) {
                return Err(Error::Config(format!("unknown scenario key `{k}`")));
            }
        }

        Ok(Self {
            seed,
            classes,
            scene,
            detectors,
            proposals,
            images: [
                kv.parse_or("images.train", 250)?,
                kv.parse_or("images.val", 250)?,
                kv.parse_or("images.test", 500)?,
            ],
        })
    }
}

/// Writes the difficulty sidecar of a scene.
pub fn save_latents(path: &Path, scene: &Scene, classes: &Roster) -> Result<()> {
    write_text(path, &scene.latent_text(classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::bound::maximal_map;
    use crate::config::BoundMatching;
    use crate::eval::ap::ApProtocol;

    fn spec(n_classes: usize) -> SceneSpec {
        SceneSpec {
            class_weights: vec![1.0; n_classes],
            ..SceneSpec::default()
        }
    }

    #[test]
    fn ground_truth_is_deterministic_and_inside_the_canvas() {
        let s = spec(3);
        let a = generate_ground_truth(&s, "t", 50, 7).unwrap();
        let b = generate_ground_truth(&s, "t", 50, 7).unwrap();
        assert_eq!(a, b);
        for g in &a.objects {
            let [x0, y0, x1, y1] = g.bbox.coords();
            assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= s.width && y1 <= s.height);
        }
        assert!(generate_ground_truth(&s, "t", 0, 7).is_err());
    }

    #[test]
    fn object_count_matches_the_poisson_mean() {
        let s = SceneSpec {
            objects_per_image: 3.0,
            box_size: (0.05, 0.2),
            ..spec(2)
        };
        let scene = generate_ground_truth(&s, "t", 1000, 11).unwrap();
        let mean = scene.objects.len() as f64 / 1000.0;
        assert!((mean - 3.0).abs() < 0.3, "mean {mean}");
    }

    #[test]
    fn crowded_scenes_fail_placement() {
        let s = SceneSpec {
            objects_per_image: 30.0,
            box_size: (0.9, 1.0),
            max_gt_iou: 0.0,
            placement_retries: 5,
            ..spec(1)
        };
        assert!(generate_ground_truth(&s, "t", 3, 1).is_err());
    }

    #[test]
    fn perfect_detector_reproduces_ground_truth() {
        let s = spec(2);
        let scene = generate_ground_truth(&s, "t", 30, 3).unwrap();
        let dets = simulate_detector(&scene, &s, 0, &DetectorProfile::perfect("p", 2), 3).unwrap();
        assert_eq!(dets.len(), scene.objects.len());
        for (d, g) in dets.iter().zip(&scene.objects) {
            assert_eq!(d.bbox, g.bbox);
        }
        let refs: Vec<&Detection> = dets.iter().collect();
        let m = maximal_map(&refs, &scene.objects, 2, 0.5, BoundMatching::Maximum, ApProtocol::AllPoints);
        assert_eq!(m.map, Some(1.0));
    }

    #[test]
    fn zero_skill_finds_nothing() {
        let s = spec(1);
        let scene = generate_ground_truth(&s, "t", 30, 3).unwrap();
        let p = DetectorProfile {
            skill: vec![0.0],
            ..DetectorProfile::perfect("p", 1)
        };
        assert!(simulate_detector(&scene, &s, 0, &p, 3).unwrap().is_empty());
    }

    #[test]
    fn false_positive_count_matches_the_rate() {
        let s = spec(1);
        let scene = generate_ground_truth(&s, "t", 1000, 5).unwrap();
        let p = DetectorProfile {
            skill: vec![0.0],
            fp_rate: vec![2.0],
            ..DetectorProfile::perfect("p", 1)
        };
        let n = simulate_detector(&scene, &s, 0, &p, 5).unwrap().len() as f64;
        assert!((n - 2000.0).abs() < 200.0, "{n}");
    }

    #[test]
    fn exact_proposals_cover_every_object() {
        let s = spec(2);
        let scene = generate_ground_truth(&s, "t", 20, 9).unwrap();
        let cfg = ProposalConfig {
            count: 30,
            jitter: 0.0,
            random_fraction: 0.0,
            confidence_noise: 0.0,
        };
        let props = simulate_proposals(&scene, &s, ProposalSource::Obj, &cfg, 9).unwrap();
        for (k, (_, list)) in props.iter().enumerate() {
            for g in scene.image_objects(k).0 {
                assert!(list.iter().any(|p| p.bbox == g.bbox));
            }
        }
        assert_eq!(props, simulate_proposals(&scene, &s, ProposalSource::Obj, &cfg, 9).unwrap());
    }

    #[test]
    fn random_proposals_rarely_hit_objects() {
        let s = SceneSpec {
            objects_per_image: 1.0,
            box_size: (0.05, 0.15),
            ..spec(1)
        };
        let scene = generate_ground_truth(&s, "t", 200, 4).unwrap();
        let cfg = ProposalConfig {
            random_fraction: 1.0,
            ..ProposalConfig::default()
        };
        let props = simulate_proposals(&scene, &s, ProposalSource::Core, &cfg, 4).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for (k, (_, list)) in props.iter().enumerate() {
            for p in list {
                let best = scene.image_objects(k).0.iter().map(|g| iou(&g.bbox, &p.bbox)).fold(0.0, f64::max);
                total += best;
                count += 1;
            }
        }
        assert!(total / (count as f64) < 0.5);
    }
}
