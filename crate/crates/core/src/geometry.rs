//! Axis-aligned boxes and the two overlap measures used throughout the crate.

use crate::error::{Error, Result};

/// Axis-aligned bounding box in pixel coordinates with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(invalid("empty extent"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Area of the intersection with `other`, 0 when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    // the union is never smaller than either box; clamping keeps rounding
    // from pushing IoU above a coverage value
    let union = (a.area() + b.area() - inter).max(a.area()).max(b.area());
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of `candidate` covered by `dominator`: intersection over the
/// candidate's own area.
pub fn coverage(candidate: &BoundingBox, dominator: &BoundingBox) -> f64 {
    let inter = candidate.intersection_area(dominator);
    (inter / candidate.area()).clamp(0.0, 1.0)
}

/// Overlap measure used when deciding whether a detection suppresses another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapMeasure {
    /// Intersection over the suppressed candidate's area.
    #[default]
    Coverage,
    Iou,
}

impl OverlapMeasure {
    pub fn eval(self, candidate: &BoundingBox, dominator: &BoundingBox) -> f64 {
        match self {
            OverlapMeasure::Coverage => coverage(candidate, dominator),
            OverlapMeasure::Iou => iou(candidate, dominator),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        let third = iou(&a, &bb(5.0, 0.0, 15.0, 10.0));
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(10.0, 0.0, 20.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
        assert_eq!(coverage(&a, &b), 0.0);
    }

    #[test]
    fn coverage_examples() {
        let inner = bb(2.0, 2.0, 4.0, 4.0);
        let outer = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(coverage(&inner, &outer), 1.0);
        assert_eq!(coverage(&outer, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(coverage(&outer, &bb(5.0, 0.0, 15.0, 10.0)), 0.5);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(5.0, 0.0, 5.0, 10.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 10.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(coverage(&a, &b) >= ab);
            prop_assert!(coverage(&b, &a) >= ab);
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
