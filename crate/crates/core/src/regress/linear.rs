use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::RegressError;

/// Ridge regression on standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    /// Coefficients on the standardised scale.
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
    /// Training standard deviations; 0 marks a constant column, which is ignored.
    pub stds: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (j, &x) in row.iter().enumerate() {
            if self.stds[j] > 0.0 {
                y += self.coefficients[j] * (x - self.means[j]) / self.stds[j];
            }
        }
        y
    }

    /// `|coefficient| * std` on the original scale, i.e. the standardised magnitude.
    pub fn raw_importance(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.stds)
            .map(|(c, &s)| if s > 0.0 { c.abs() } else { 0.0 })
            .collect()
    }
}

pub fn fit_ridge(rows: &[Vec<f64>], targets: &[f64], ridge: f64) -> Result<LinearModel, RegressError> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let stds: Vec<f64> = (0..p)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 1e-24 {
                var.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let y_mean = targets.iter().sum::<f64>() / n as f64;

    let z = DMatrix::from_fn(n, p, |i, j| {
        if stds[j] > 0.0 {
            (rows[i][j] - means[j]) / stds[j]
        } else {
            0.0
        }
    });
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
    let mut gram = z.transpose() * &z;
    for j in 0..p {
        gram[(j, j)] += if stds[j] > 0.0 { ridge * n as f64 } else { 1.0 };
    }
    let rhs = z.transpose() * y;
    let solved = gram
        .cholesky()
        .ok_or_else(|| RegressError::Numerical("normal equations are not positive definite".into()))?
        .solve(&rhs);
    Ok(LinearModel {
        intercept: y_mean,
        coefficients: solved.iter().copied().collect(),
        means,
        stds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_plane() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64, ((i * 7) % 11) as f64, 5.0])
            .collect();
        let ys: Vec<f64> = rows.iter().map(|r| 3.0 + 2.0 * r[0] - 0.5 * r[1]).collect();
        let model = fit_ridge(&rows, &ys, 1e-10).unwrap();
        for (r, y) in rows.iter().zip(&ys) {
            assert!((model.predict(r) - y).abs() < 1e-6);
        }
        assert_eq!(model.stds[2], 0.0);
        assert_eq!(model.raw_importance()[2], 0.0);
    }
}
