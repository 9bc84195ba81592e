use crate::error::{Error, Result};
use crate::rankers::RankerModel;

/// Mean absolute weight per feature dimension across class models, in
/// standardized units.
pub fn feature_importance(models: &[&RankerModel]) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Data("feature importance needs at least one model".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for m in models {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: m.dim(),
            });
        }
        for (a, w) in acc.iter_mut().zip(m.standardized_weights()) {
            *a += w.abs();
        }
    }
    let n = models.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(w: Vec<f64>) -> RankerModel {
        RankerModel::from_weights(0, w, 0.0)
    }

    #[test]
    fn identical_models() {
        let m = model(vec![-2.0, 0.5]);
        assert_eq!(feature_importance(&[&m, &m]).unwrap(), vec![2.0, 0.5]);
    }

    #[test]
    fn averages_across_classes() {
        let a = model(vec![1.0, 0.0]);
        let b = model(vec![0.0, 1.0]);
        assert_eq!(feature_importance(&[&a, &b]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert!(feature_importance(&[]).is_err());
        let a = model(vec![1.0, 0.0]);
        let b = model(vec![1.0]);
        assert!(matches!(
            feature_importance(&[&a, &b]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
