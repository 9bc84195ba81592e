//! Explicit feature map approximating the additive chi-squared kernel.
//!
//! The chi-squared kernel `k(x, y) = 2xy / (x + y)` is homogeneous, so
//! `k(x, y) = sqrt(xy) * sech(ln(x/y) / 2)`, whose spectrum is
//! `kappa(lambda) = sech(pi * lambda)`. Sampling that spectrum at `0` and
//! `+-L` gives three output coordinates per input coordinate:
//!
//! ```text
//! sqrt(x L kappa(0)),
//! sqrt(2 x L kappa(L)) cos(L ln x),
//! sqrt(2 x L kappa(L)) sin(L ln x)
//! ```
//!
//! and their inner products approximate the kernel.

use crate::error::{Error, Result};

/// Output coordinates per input coordinate.
pub const EXPANSION: usize = 3;

/// Spectrum sampling period for an order-1 map of the chi-squared kernel.
pub fn default_period() -> f64 {
    2.0 * std::f64::consts::PI / (5.86 + 3.65)
}

/// Maps a non-negative vector into `3 * len` dimensions.
pub fn chi2_feature_map(v: &[f64]) -> Result<Vec<f64>> {
    let l = default_period();
    let k0 = 1.0;
    let k1 = 1.0 / (std::f64::consts::PI * l).cosh();
    let mut out = Vec::with_capacity(v.len() * EXPANSION);
    for (i, &x) in v.iter().enumerate() {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Data(format!(
                "feature map input {i} is {x}; the chi-squared map needs non-negative values"
            )));
        }
        if x == 0.0 {
            out.extend_from_slice(&[0.0; EXPANSION]);
            continue;
        }
        let a = (x * l * k0).sqrt();
        let b = (2.0 * x * l * k1).sqrt();
        let phase = l * x.ln();
        out.push(a);
        out.push(b * phase.cos());
        out.push(b * phase.sin());
    }
    Ok(out)
}

/// The exact additive chi-squared kernel, for reference.
pub fn chi2_kernel(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .filter(|(a, b)| **a + **b > 0.0)
        .map(|(a, b)| 2.0 * a * b / (a + b))
        .sum()
}
