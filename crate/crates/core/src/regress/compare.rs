use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{fit, score, Metrics, ModelKind, ModelSpec, RegressError, RegressionModel};
use crate::features::TrainingMatrix;

/// Anything that maps a feature row to a prediction.
pub trait Predictor: Send + Sync {
    fn predict_row(&self, row: &[f64]) -> f64;
}

impl Predictor for RegressionModel {
    fn predict_row(&self, row: &[f64]) -> f64 {
        RegressionModel::predict_row(self, row)
    }
}

/// A model family the comparison can train. Implement this to add rows for
/// families that do not ship in-tree.
pub trait ModelFitter: Sync {
    fn label(&self) -> String;
    fn fit(&self, train: &TrainingMatrix, seed: u64) -> Result<Box<dyn Predictor>, RegressError>;
}

impl ModelFitter for ModelSpec {
    fn label(&self) -> String {
        self.kind().label().to_string()
    }

    fn fit(&self, train: &TrainingMatrix, seed: u64) -> Result<Box<dyn Predictor>, RegressError> {
        Ok(Box::new(fit(train, *self, seed)?))
    }
}

/// Linear, DecisionTree, RandomForest and GBT with default parameters.
pub fn default_roster() -> Vec<ModelSpec> {
    [
        ModelKind::Linear,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::Gbt,
    ]
    .into_iter()
    .map(ModelSpec::default_for)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Sorted by ascending RMSE.
    pub rows: Vec<ComparisonRow>,
    pub train_rows: usize,
    pub validation_rows: usize,
    /// First validation date.
    pub validation_from: NaiveDate,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Model,RMSE,MAPE,R2\n");
        for row in &self.rows {
            let m = row.metrics;
            out.push_str(&format!("{},{:.4},{:.4},{:.4}\n", row.model, m.rmse, m.mape, m.r2));
        }
        out
    }

    pub fn get(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// Split rows by date: the earliest `train_fraction` of the distinct dates
/// train, the rest validate.
pub fn chronological_split(
    matrix: &TrainingMatrix,
    train_fraction: f64,
) -> Result<(TrainingMatrix, TrainingMatrix), RegressError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(RegressError::InvalidParams(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let dates: Vec<NaiveDate> = matrix
        .keys
        .iter()
        .map(|k| k.date)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if dates.len() < 2 {
        return Err(RegressError::Split(format!("{} distinct dates", dates.len())));
    }
    let n_train = ((dates.len() as f64 * train_fraction).round() as usize).clamp(1, dates.len() - 1);
    let cutoff = dates[n_train];
    let (train, valid): (Vec<usize>, Vec<usize>) =
        (0..matrix.len()).partition(|&i| matrix.keys[i].date < cutoff);
    if train.len() < 2 {
        return Err(RegressError::TooFewRows {
            needed: 2,
            found: train.len(),
        });
    }
    Ok((matrix.subset(&train), matrix.subset(&valid)))
}

/// Train every fitter on the same chronological split and score it on the
/// validation rows.
pub fn compare_with(
    matrix: &TrainingMatrix,
    train_fraction: f64,
    seed: u64,
    fitters: &[&dyn ModelFitter],
) -> Result<ComparisonTable, RegressError> {
    let (train, valid) = chronological_split(matrix, train_fraction)?;
    let mut rows = Vec::with_capacity(fitters.len());
    for fitter in fitters {
        let model = fitter.fit(&train, seed)?;
        let predictions: Vec<f64> = valid.rows.iter().map(|r| model.predict_row(r)).collect();
        rows.push(ComparisonRow {
            model: fitter.label(),
            metrics: score(&valid.targets, &predictions),
        });
    }
    rows.sort_by(|a, b| {
        a.metrics
            .rmse
            .total_cmp(&b.metrics.rmse)
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(ComparisonTable {
        rows,
        train_rows: train.len(),
        validation_rows: valid.len(),
        validation_from: valid.keys.iter().map(|k| k.date).min().expect("validation is non-empty"),
    })
}

/// [`compare_with`] over the [`default_roster`].
pub fn compare_models(
    matrix: &TrainingMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<ComparisonTable, RegressError> {
    let roster = default_roster();
    let fitters: Vec<&dyn ModelFitter> = roster.iter().map(|s| s as &dyn ModelFitter).collect();
    compare_with(matrix, train_fraction, seed, &fitters)
}
