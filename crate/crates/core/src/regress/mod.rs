//! Regression models over feature matrices, their scores and importances.
//!
//! Four model families ship in-tree: ridge [`linear`], a single CART tree,
//! a random forest and squared-loss gradient boosting. All of them are fitted
//! deterministically: a forest derives one ChaCha stream per tree from the
//! model seed, so the fitted model does not depend on the worker count.

mod compare;
mod linear;
mod metrics;
mod tree;

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureError, FeatureSchema, TrainingMatrix};
use crate::ingest::UnitKind;

pub use compare::{
    chronological_split, compare_models, compare_with, default_roster, ComparisonRow,
    ComparisonTable, ModelFitter, Predictor,
};
pub use linear::{fit_ridge, LinearModel};
pub use metrics::{score, Metrics};
pub use tree::{grow_tree, MaxFeatures, Tree, LEAF};

/// Version of the serialized model layout.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("model expects feature schema {expected}, matrix has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("model file format {found} is not supported (expected {expected})")]
    Format { found: u32, expected: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("not enough distinct dates to split: {0}")]
    Split(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 12,
            min_samples_split: 2,
            min_samples_leaf: 3,
        }
    }
}

impl TreeParams {
    /// Grow until leaves are pure or a single row.
    pub fn unlimited() -> Self {
        TreeParams {
            max_depth: usize::MAX,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }

    pub fn validate(&self) -> Result<(), RegressError> {
        if self.max_depth < 1 || self.min_samples_split < 1 || self.min_samples_leaf < 1 {
            return Err(RegressError::InvalidParams(format!(
                "tree parameters must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree: TreeParams,
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            tree: TreeParams {
                max_depth: 16,
                min_samples_split: 2,
                min_samples_leaf: 2,
            },
            n_trees: 100,
            max_features: MaxFeatures::Fraction(0.7),
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub tree: TreeParams,
    pub n_rounds: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn without replacement for each round.
    pub subsample: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            tree: TreeParams {
                max_depth: 8,
                min_samples_split: 2,
                min_samples_leaf: 5,
            },
            n_rounds: 200,
            learning_rate: 0.1,
            subsample: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// Penalty per row on the standardised coefficients.
    pub ridge: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { ridge: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Linear,
    DecisionTree,
    RandomForest,
    #[serde(rename = "GBT")]
    Gbt,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Linear => "Linear",
            ModelKind::DecisionTree => "DecisionTree",
            ModelKind::RandomForest => "RandomForest",
            ModelKind::Gbt => "GBT",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = RegressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "tree" | "decisiontree" => Ok(ModelKind::DecisionTree),
            "forest" | "randomforest" => Ok(ModelKind::RandomForest),
            "gbt" | "boosting" => Ok(ModelKind::Gbt),
            other => Err(RegressError::InvalidParams(format!("unknown model kind `{other}`"))),
        }
    }
}

/// A model family with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum ModelSpec {
    Linear(LinearParams),
    DecisionTree(TreeParams),
    RandomForest(ForestParams),
    #[serde(rename = "GBT")]
    Gbt(GbtParams),
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Linear => ModelSpec::Linear(LinearParams::default()),
            ModelKind::DecisionTree => ModelSpec::DecisionTree(TreeParams::default()),
            ModelKind::RandomForest => ModelSpec::RandomForest(ForestParams::default()),
            ModelKind::Gbt => ModelSpec::Gbt(GbtParams::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Linear(_) => ModelKind::Linear,
            ModelSpec::DecisionTree(_) => ModelKind::DecisionTree,
            ModelSpec::RandomForest(_) => ModelKind::RandomForest,
            ModelSpec::Gbt(_) => ModelKind::Gbt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelBody {
    Linear(LinearModel),
    Tree(Tree),
    Forest { trees: Vec<Tree> },
    Boosted {
        init: f64,
        learning_rate: f64,
        trees: Vec<Tree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub spec: ModelSpec,
    pub unit_kind: Option<UnitKind>,
    pub feature_config: FeatureConfig,
    pub train_from: Option<NaiveDate>,
    pub train_to: Option<NaiveDate>,
    pub rows: usize,
}

/// A fitted model bound to the feature layout it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub schema: FeatureSchema,
    pub schema_hash: String,
    pub meta: TrainingMeta,
    pub body: ModelBody,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: RegressionModel,
}

/// One named weight per feature, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub feature: String,
    pub weight: f64,
}

fn check_rows(matrix: &TrainingMatrix) -> Result<(), RegressError> {
    if matrix.len() < 2 {
        return Err(RegressError::TooFewRows {
            needed: 2,
            found: matrix.len(),
        });
    }
    Ok(())
}

fn wrap(matrix: &TrainingMatrix, spec: ModelSpec, seed: u64, body: ModelBody) -> RegressionModel {
    RegressionModel {
        kind: spec.kind(),
        schema: matrix.schema.clone(),
        schema_hash: matrix.schema.hash(),
        meta: TrainingMeta {
            seed,
            spec,
            unit_kind: matrix.unit_kind,
            feature_config: matrix.config,
            train_from: matrix.keys.iter().map(|k| k.date).min(),
            train_to: matrix.keys.iter().map(|k| k.date).max(),
            rows: matrix.len(),
        },
        body,
    }
}

pub fn fit_tree(matrix: &TrainingMatrix, params: TreeParams) -> Result<RegressionModel, RegressError> {
    check_rows(matrix)?;
    let tree = grow_tree(&matrix.rows, &matrix.targets, params)?;
    Ok(wrap(matrix, ModelSpec::DecisionTree(params), 0, ModelBody::Tree(tree)))
}

pub fn fit_forest(
    matrix: &TrainingMatrix,
    params: ForestParams,
    seed: u64,
) -> Result<RegressionModel, RegressError> {
    check_rows(matrix)?;
    params.tree.validate()?;
    if params.n_trees < 1 {
        return Err(RegressError::InvalidParams("a forest needs at least one tree".into()));
    }
    if let MaxFeatures::Fraction(f) = params.max_features {
        if !(f > 0.0 && f <= 1.0) {
            return Err(RegressError::InvalidParams(format!("feature fraction {f} not in (0, 1]")));
        }
    }
    let n = matrix.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let samples: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            tree::Grower::new(
                &matrix.rows,
                &matrix.targets,
                &samples,
                params.tree,
                params.max_features,
                Some(&mut rng),
            )
            .grow()
        })
        .collect();
    Ok(wrap(matrix, ModelSpec::RandomForest(params), seed, ModelBody::Forest { trees }))
}

pub fn fit_gbt(matrix: &TrainingMatrix, params: GbtParams, seed: u64) -> Result<RegressionModel, RegressError> {
    check_rows(matrix)?;
    params.tree.validate()?;
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(RegressError::InvalidParams(format!(
            "learning rate {} not in (0, 1]",
            params.learning_rate
        )));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(RegressError::InvalidParams(format!(
            "subsample {} not in (0, 1]",
            params.subsample
        )));
    }
    let n = matrix.len();
    let init = matrix.targets.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let mut residuals = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = ((params.subsample * n as f64).round() as usize).clamp(2.min(n), n);
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        for i in 0..n {
            residuals[i] = matrix.targets[i] - fitted[i];
        }
        let samples: Vec<u32> = if take < n {
            let mut s: Vec<u32> = sample(&mut rng, n, take).into_iter().map(|i| i as u32).collect();
            s.sort_unstable();
            s
        } else {
            (0..n as u32).collect()
        };
        let tree = tree::Grower::<ChaCha8Rng>::new(
            &matrix.rows,
            &residuals,
            &samples,
            params.tree,
            MaxFeatures::All,
            None,
        )
        .grow();
        for (f, row) in fitted.iter_mut().zip(&matrix.rows) {
            *f += params.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    let body = ModelBody::Boosted {
        init,
        learning_rate: params.learning_rate,
        trees,
    };
    Ok(wrap(matrix, ModelSpec::Gbt(params), seed, body))
}

pub fn fit_linear(matrix: &TrainingMatrix, params: LinearParams) -> Result<RegressionModel, RegressError> {
    check_rows(matrix)?;
    if params.ridge.is_nan() || params.ridge < 0.0 {
        return Err(RegressError::InvalidParams(format!("ridge {} is negative", params.ridge)));
    }
    let model = fit_ridge(&matrix.rows, &matrix.targets, params.ridge)?;
    Ok(wrap(matrix, ModelSpec::Linear(params), 0, ModelBody::Linear(model)))
}

/// Fit any family from its spec.
pub fn fit(matrix: &TrainingMatrix, spec: ModelSpec, seed: u64) -> Result<RegressionModel, RegressError> {
    match spec {
        ModelSpec::Linear(p) => fit_linear(matrix, p),
        ModelSpec::DecisionTree(p) => fit_tree(matrix, p),
        ModelSpec::RandomForest(p) => fit_forest(matrix, p, seed),
        ModelSpec::Gbt(p) => fit_gbt(matrix, p, seed),
    }
}

impl RegressionModel {
    /// Raw model output for a row laid out by `self.schema`.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.body {
            ModelBody::Linear(m) => m.predict(row),
            ModelBody::Tree(t) => t.predict(row),
            ModelBody::Forest { trees } => {
                trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64
            }
            ModelBody::Boosted {
                init,
                learning_rate,
                trees,
            } => init + learning_rate * trees.iter().map(|t| t.predict(row)).sum::<f64>(),
        }
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), RegressError> {
        let found = schema.hash();
        if found != self.schema_hash {
            return Err(RegressError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn predict(&self, matrix: &TrainingMatrix) -> Result<Vec<f64>, RegressError> {
        self.check_schema(&matrix.schema)?;
        Ok(matrix.rows.iter().map(|r| self.predict_row(r)).collect())
    }

    /// Impurity-decrease importance for tree models, standardised
    /// coefficient magnitude for the linear model. Sums to 1; a model with no
    /// splits spreads the weight evenly.
    pub fn feature_importance(&self) -> Vec<FeatureWeight> {
        let p = self.schema.len();
        let mut raw = vec![0.0; p];
        match &self.body {
            ModelBody::Linear(m) => raw = m.raw_importance(),
            ModelBody::Tree(t) => t.accumulate_gain(&mut raw),
            ModelBody::Forest { trees } | ModelBody::Boosted { trees, .. } => {
                for t in trees {
                    t.accumulate_gain(&mut raw);
                }
            }
        }
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / p as f64; p]
        };
        self.schema
            .names()
            .zip(weights)
            .map(|(name, weight)| FeatureWeight {
                feature: name.to_string(),
                weight,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&file).expect("models always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, RegressError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| RegressError::Malformed(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| RegressError::Malformed("missing format_version".into()))?;
        if found != u64::from(MODEL_FORMAT_VERSION) {
            return Err(RegressError::Format {
                found: found as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| RegressError::Malformed(e.to_string()))?;
        if file.model.schema.hash() != file.model.schema_hash {
            return Err(RegressError::Malformed("schema hash does not match the schema".into()));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegressError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RegressError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Score a model on a matrix with the same schema.
pub fn evaluate(model: &RegressionModel, matrix: &TrainingMatrix) -> Result<Metrics, RegressError> {
    if matrix.is_empty() {
        return Err(RegressError::TooFewRows { needed: 1, found: 0 });
    }
    let predictions = model.predict(matrix)?;
    Ok(score(&matrix.targets, &predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureKind, FeatureSpec, RowKey};

    fn matrix(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> TrainingMatrix {
        let p = rows[0].len();
        let schema = FeatureSchema {
            features: (0..p)
                .map(|j| FeatureSpec {
                    name: format!("x{j}"),
                    kind: FeatureKind::Numeric,
                    units: String::new(),
                })
                .collect(),
        };
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let keys = (0..rows.len())
            .map(|i| RowKey {
                unit_id: "U".into(),
                date: start + chrono::Days::new(i as u64),
            })
            .collect();
        TrainingMatrix::new(schema, rows, targets, keys).unwrap()
    }

    fn wavy(n: usize) -> TrainingMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![i as f64 / 10.0, ((i * 37) % 17) as f64])
            .collect();
        let targets = rows.iter().map(|r| (r[0]).sin() * 10.0 + r[1]).collect();
        matrix(rows, targets)
    }

    #[test]
    fn single_tree_forest_matches_tree() {
        let m = wavy(80);
        let tree = fit_tree(&m, TreeParams::default()).unwrap();
        let forest = fit_forest(
            &m,
            ForestParams {
                tree: TreeParams::default(),
                n_trees: 1,
                max_features: MaxFeatures::All,
                bootstrap: false,
            },
            3,
        )
        .unwrap();
        assert_eq!(tree.predict(&m).unwrap(), forest.predict(&m).unwrap());
    }

    #[test]
    fn boosting_never_increases_training_error() {
        let m = wavy(60);
        let mut last = f64::INFINITY;
        for rounds in 0..8 {
            let params = GbtParams {
                n_rounds: rounds,
                tree: TreeParams { max_depth: 2, ..TreeParams::default() },
                ..GbtParams::default()
            };
            let model = fit_gbt(&m, params, 1).unwrap();
            let rmse = evaluate(&model, &m).unwrap().rmse;
            assert!(rmse <= last + 1e-12);
            last = rmse;
        }
    }

    #[test]
    fn gbt_without_rounds_predicts_the_mean() {
        let m = matrix(vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0, 2.0, 6.0]);
        let params = GbtParams { n_rounds: 0, ..GbtParams::default() };
        let model = fit_gbt(&m, params, 0).unwrap();
        assert_eq!(model.predict_row(&[5.0]), 3.0);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let m = wavy(20);
        let model = fit_tree(&m, TreeParams::default()).unwrap();
        let narrow = m.select(&["x1"]).unwrap();
        assert!(matches!(evaluate(&model, &narrow), Err(RegressError::SchemaMismatch { .. })));
    }

    #[test]
    fn json_round_trip_and_version() {
        let m = wavy(30);
        let model = fit_forest(&m, ForestParams { n_trees: 3, ..ForestParams::default() }, 9).unwrap();
        let text = model.to_json();
        assert_eq!(RegressionModel::from_json(&text).unwrap(), model);
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            RegressionModel::from_json(&bumped),
            Err(RegressError::Format { found: 2, .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        let m = wavy(10);
        assert!(fit_tree(&m, TreeParams { max_depth: 0, ..TreeParams::default() }).is_err());
        let bad_lr = GbtParams { learning_rate: 1.5, ..GbtParams::default() };
        assert!(fit_gbt(&m, bad_lr, 0).is_err());
        let no_trees = ForestParams { n_trees: 0, ..ForestParams::default() };
        assert!(fit_forest(&m, no_trees, 0).is_err());
        let one = matrix(vec![vec![1.0]], vec![1.0]);
        assert!(matches!(
            fit_tree(&one, TreeParams::default()),
            Err(RegressError::TooFewRows { .. })
        ));
    }
}
