//! Detections, ground truth, and the per-detector correspondence search.

use crate::geometry::{iou, BoundingBox};

/// One output of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub detector_id: usize,
    pub bbox: BoundingBox,
    pub raw_score: f64,
    /// Platt-calibrated score in (0, 1), once calibration has been applied.
    pub calibrated_score: Option<f64>,
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        class_id: usize,
        detector_id: usize,
        bbox: BoundingBox,
        raw_score: f64,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            detector_id,
            bbox,
            raw_score,
            calibrated_score: None,
        }
    }

    pub fn with_calibrated(mut self, score: f64) -> Self {
        self.calibrated_score = Some(score);
        self
    }

    /// Calibrated score if present, raw score otherwise.
    pub fn best_score(&self) -> f64 {
        self.calibrated_score.unwrap_or(self.raw_score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BoundingBox,
    pub difficult: bool,
}

/// Maximum-overlap partner found for one detector slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partner {
    /// Index into the detection slice the search ran over.
    pub index: usize,
    /// Overlap with the partner, strictly positive.
    pub gamma: f64,
}

/// Per-detector maximum-overlap partners of one detection.
///
/// Slot `j` holds the detection of detector `j` with the largest IoU, or
/// nothing when no detection of `j` overlaps at all. The detection's own
/// detector slot always holds the detection itself with overlap 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    slots: Vec<Option<Partner>>,
}

impl Correspondence {
    pub fn slots(&self) -> &[Option<Partner>] {
        &self.slots
    }

    pub fn partner(&self, detector: usize) -> Option<Partner> {
        self.slots.get(detector).copied().flatten()
    }

    pub fn gamma(&self, detector: usize) -> f64 {
        self.partner(detector).map_or(0.0, |p| p.gamma)
    }

    pub fn n_detectors(&self) -> usize {
        self.slots.len()
    }
}

/// Finds, for every detector, the detection in `dets` that overlaps
/// `dets[i]` most.
///
/// `dets` is expected to hold the detections of one image and one class.
/// Ties on IoU go to the higher raw score, then to the lower index.
pub fn correspondences(i: usize, dets: &[Detection], n_detectors: usize) -> Correspondence {
    let me = &dets[i];
    let mut slots: Vec<Option<Partner>> = vec![None; n_detectors];
    for (k, other) in dets.iter().enumerate() {
        let j = other.detector_id;
        if j >= n_detectors || j == me.detector_id {
            continue;
        }
        let gamma = iou(&me.bbox, &other.bbox);
        if gamma <= 0.0 {
            continue;
        }
        let better = match slots[j] {
            None => true,
            Some(cur) => {
                gamma > cur.gamma
                    || (gamma == cur.gamma && other.raw_score > dets[cur.index].raw_score)
            }
        };
        if better {
            slots[j] = Some(Partner { index: k, gamma });
        }
    }
    if me.detector_id < n_detectors {
        slots[me.detector_id] = Some(Partner {
            index: i,
            gamma: 1.0,
        });
    }
    Correspondence { slots }
}
