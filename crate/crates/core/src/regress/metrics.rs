use serde::{Deserialize, Serialize};

/// Validation scores of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Root mean squared error, in tests.
    pub rmse: f64,
    /// Mean absolute percentage error with `max(y, 1)` denominators.
    pub mape: f64,
    pub r2: f64,
}

/// Score predictions against targets. Both slices must be non-empty and of
/// equal length.
///
/// R² is `1 - SS_res / SS_tot`; when the targets are constant (`SS_tot = 0`)
/// it is 1 for a perfect fit and 0 otherwise.
pub fn score(targets: &[f64], predictions: &[f64]) -> Metrics {
    assert_eq!(targets.len(), predictions.len(), "length mismatch");
    assert!(!targets.is_empty(), "no rows to score");
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut ape = 0.0;
    for (&y, &p) in targets.iter().zip(predictions) {
        ss_res += (y - p) * (y - p);
        ss_tot += (y - mean) * (y - mean);
        ape += (y - p).abs() / y.max(1.0);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Metrics {
        rmse: (ss_res / n).sqrt(),
        mape: 100.0 * ape / n,
        r2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let y = [3.0, 5.0, 9.0];
        assert_eq!(score(&y, &y), Metrics { rmse: 0.0, mape: 0.0, r2: 1.0 });
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = [1.0, 2.0, 3.0, 6.0];
        let m = score(&y, &[3.0; 4]);
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn hand_computed_rmse() {
        let m = score(&[1.0, 1.0], &[1.0, 3.0]);
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-12);
        assert!((m.mape - 100.0).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_use_unit_denominator() {
        let m = score(&[0.0, 0.0], &[0.5, 0.0]);
        assert!((m.mape - 25.0).abs() < 1e-12);
        assert_eq!(m.r2, 0.0);
    }
}
