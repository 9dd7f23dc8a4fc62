//! Multiclass propensity models for the truncated exposure level.
//!
//! Two interchangeable backends implement P(category = m | X = x): a
//! transparent softmax-linear model with polynomial basis expansion, and
//! gradient-boosted trees. Both produce calibrated probability rows that sum
//! to one; `stabilize_weights` clips away near-zero propensities before they
//! become extreme inverse weights.

mod linear;
mod tree;

pub use linear::{fit as fit_linear_raw, multinomial_loss_and_grad, polynomial_basis, LinearModel, LinearOptions};
pub use tree::{fit as fit_boost_raw, BoostModel, BoostOptions, RegressionTree};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::ExposureCategory;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Which backend fitted a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    MultinomialLinear,
    BoostedTrees,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "multinomial-linear" => Some(ModelKind::MultinomialLinear),
            "boosted" | "boosted-trees" | "trees" => Some(ModelKind::BoostedTrees),
            _ => None,
        }
    }
}

/// Backend options; the variant selects the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelOptions {
    Linear(LinearOptions),
    Boosted(BoostOptions),
}

impl ModelOptions {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelOptions::Linear(_) => ModelKind::MultinomialLinear,
            ModelOptions::Boosted(_) => ModelKind::BoostedTrees,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::MultinomialLinear => ModelOptions::Linear(LinearOptions::default()),
            ModelKind::BoostedTrees => ModelOptions::Boosted(BoostOptions::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedModel {
    Linear(LinearModel),
    Boost(BoostModel),
}

/// Training diagnostics reported alongside every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_loss: f64,
    pub accuracy: f64,
    /// (category, number of training rows).
    pub per_class_support: Vec<(ExposureCategory, usize)>,
    /// Gradient descent converged before hitting the iteration cap (linear only).
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
}

/// A fitted multiclass propensity model bound to its category set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub kind: ModelKind,
    /// Sorted category set; prediction column j corresponds to categories[j].
    pub categories: Vec<ExposureCategory>,
    pub n_raw_features: usize,
    model: FittedModel,
    pub diagnostics: FitDiagnostics,
}

/// Schema version of the serialized model artifact.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Versioned wrapper for persisting fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema_version: u32,
    pub fit: PropensityFit,
}

fn validate_inputs(
    features: &[Vec<f64>],
    categories: &[ExposureCategory],
    category_set: &[ExposureCategory],
) -> Result<()> {
    if features.is_empty() {
        return Err(Error::data("propensity fit needs at least one row"));
    }
    if features.len() != categories.len() {
        return Err(Error::data(format!(
            "feature rows ({}) and category labels ({}) differ in length",
            features.len(),
            categories.len()
        )));
    }
    let width = features[0].len();
    if width == 0 {
        return Err(Error::data("propensity fit needs at least one feature"));
    }
    for (i, row) in features.iter().enumerate() {
        if row.len() != width {
            return Err(Error::data(format!(
                "feature row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("feature row {i} contains a non-finite value")));
        }
    }
    if category_set.len() < 2 {
        return Err(Error::data(
            "propensity fit needs at least two distinct categories",
        ));
    }
    let mut support: BTreeMap<ExposureCategory, usize> =
        category_set.iter().map(|&c| (c, 0)).collect();
    for c in categories {
        match support.get_mut(c) {
            Some(count) => *count += 1,
            None => {
                return Err(Error::data(format!(
                    "row category {c:?} is not in the requested category set"
                )))
            }
        }
    }
    let empty: Vec<String> = support
        .iter()
        .filter(|(_, &n)| n == 0)
        .map(|(c, _)| format!("{c:?}"))
        .collect();
    if !empty.is_empty() {
        return Err(Error::data(format!(
            "categories with zero training rows: {}",
            empty.join(", ")
        )));
    }
    Ok(())
}

/// Distinct categories present in `categories`, sorted.
pub fn observed_category_set(categories: &[ExposureCategory]) -> Vec<ExposureCategory> {
    let mut set: Vec<ExposureCategory> = categories.to_vec();
    set.sort_unstable();
    set.dedup();
    set
}

fn class_indices(
    categories: &[ExposureCategory],
    category_set: &[ExposureCategory],
) -> Vec<usize> {
    categories
        .iter()
        .map(|c| category_set.binary_search(c).expect("validated membership"))
        .collect()
}

fn diagnostics_for(
    predict: &dyn Fn(&[f64]) -> Vec<f64>,
    features: &[Vec<f64>],
    labels: &[usize],
    category_set: &[ExposureCategory],
    converged: Option<bool>,
    iterations: Option<usize>,
) -> FitDiagnostics {
    let mut log_loss = 0.0;
    let mut correct = 0usize;
    let mut support = vec![0usize; category_set.len()];
    for (row, &label) in features.iter().zip(labels) {
        let probs = predict(row);
        log_loss -= probs[label].max(1e-300).ln();
        let arg = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        correct += usize::from(arg == label);
        support[label] += 1;
    }
    let n = labels.len() as f64;
    FitDiagnostics {
        log_loss: log_loss / n,
        accuracy: correct as f64 / n,
        per_class_support: category_set.iter().copied().zip(support).collect(),
        converged,
        iterations,
    }
}

/// Fit the softmax-linear backend.
///
/// The category set is taken from the observed labels; to require specific
/// categories use [`fit_with_category_set`].
pub fn fit_multinomial_linear(
    features: &[Vec<f64>],
    categories: &[ExposureCategory],
    options: &LinearOptions,
) -> Result<PropensityFit> {
    let set = observed_category_set(categories);
    fit_with_category_set(
        features,
        categories,
        &set,
        &ModelOptions::Linear(*options),
    )
}

/// Fit the boosted-trees backend.
pub fn fit_boosted_trees(
    features: &[Vec<f64>],
    categories: &[ExposureCategory],
    options: &BoostOptions,
) -> Result<PropensityFit> {
    let set = observed_category_set(categories);
    fit_with_category_set(
        features,
        categories,
        &set,
        &ModelOptions::Boosted(*options),
    )
}

/// Fit either backend against an explicit category set. Errors if any
/// requested category has zero training rows, listing the empty ones.
pub fn fit_with_category_set(
    features: &[Vec<f64>],
    categories: &[ExposureCategory],
    category_set: &[ExposureCategory],
    options: &ModelOptions,
) -> Result<PropensityFit> {
    let mut set = category_set.to_vec();
    set.sort_unstable();
    set.dedup();
    validate_inputs(features, categories, &set)?;
    let labels = class_indices(categories, &set);
    let n_classes = set.len();
    let n_raw_features = features[0].len();
    match options {
        ModelOptions::Linear(opts) => {
            let model = linear::fit(features, &labels, n_classes, opts)?;
            let diagnostics = diagnostics_for(
                &|r| model.predict_row(r),
                features,
                &labels,
                &set,
                Some(model.converged),
                Some(model.iterations),
            );
            Ok(PropensityFit {
                kind: ModelKind::MultinomialLinear,
                categories: set,
                n_raw_features,
                model: FittedModel::Linear(model),
                diagnostics,
            })
        }
        ModelOptions::Boosted(opts) => {
            let model = tree::fit(features, &labels, n_classes, opts)?;
            let diagnostics = diagnostics_for(
                &|r| model.predict_row(r),
                features,
                &labels,
                &set,
                None,
                None,
            );
            Ok(PropensityFit {
                kind: ModelKind::BoostedTrees,
                categories: set,
                n_raw_features,
                model: FittedModel::Boost(model),
                diagnostics,
            })
        }
    }
}

/// Predicted probability matrix: one row per feature row, one column per
/// category in `fit.categories` order. Rows sum to 1 within 1e-9.
pub fn predict_propensities(fit: &PropensityFit, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(features.len());
    for (i, row) in features.iter().enumerate() {
        if row.len() != fit.n_raw_features {
            return Err(Error::data(format!(
                "prediction row {i} has {} features, model was trained with {}",
                row.len(),
                fit.n_raw_features
            )));
        }
        let probs = match &fit.model {
            FittedModel::Linear(m) => m.predict_row(row),
            FittedModel::Boost(m) => m.predict_row(row),
        };
        out.push(probs);
    }
    Ok(out)
}

/// Clamp each probability into [floor, 1 - floor], then renormalize rows.
///
/// `floor = 0` is the identity. Larger floors never increase the largest
/// inverse weight 1/p.
pub fn stabilize_weights(probabilities: &[Vec<f64>], floor: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..0.5).contains(&floor) {
        return Err(Error::config("stabilization floor must lie in [0, 0.5)"));
    }
    Ok(probabilities
        .iter()
        .map(|row| {
            let clipped: Vec<f64> = row.iter().map(|&p| p.clamp(floor, 1.0 - floor)).collect();
            let total: f64 = clipped.iter().sum();
            clipped.into_iter().map(|p| p / total).collect()
        })
        .collect())
}

/// Cross-validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    /// Held-out metrics of the selected grid point, one entry per fold.
    pub per_fold_accuracy: Vec<f64>,
    pub per_fold_log_loss: Vec<f64>,
    /// Mean held-out log-loss for every grid point, in grid order.
    pub grid_mean_log_loss: Vec<f64>,
    pub selected: ModelOptions,
    pub selected_index: usize,
}

/// Seeded, category-stratified k-fold cross-validation over a hyperparameter
/// grid. Selects by mean held-out log-loss.
pub fn cross_validate(
    features: &[Vec<f64>],
    categories: &[ExposureCategory],
    grid: &[ModelOptions],
    k_folds: usize,
    seed: u64,
) -> Result<CvReport> {
    if k_folds < 2 {
        return Err(Error::config("cross-validation needs k_folds >= 2"));
    }
    if grid.is_empty() {
        return Err(Error::config("cross-validation grid is empty"));
    }
    let set = observed_category_set(categories);
    validate_inputs(features, categories, &set)?;

    // Stratified assignment: shuffle each category's rows, deal them
    // round-robin across folds.
    let mut fold_of = vec![0usize; features.len()];
    let mut rng = stream_rng(seed, "cv-folds");
    for cat in &set {
        let mut rows: Vec<usize> = (0..features.len())
            .filter(|&i| categories[i] == *cat)
            .collect();
        if rows.len() < 2 {
            return Err(Error::data(format!(
                "category {cat:?} has {} row(s); stratified {k_folds}-fold needs at least 2 \
                 per category — consider merging sparse categories",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for (pos, &row) in rows.iter().enumerate() {
            fold_of[row] = pos % k_folds;
        }
    }

    let mut grid_mean_log_loss = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
    for (gi, options) in grid.iter().enumerate() {
        let mut fold_losses = Vec::with_capacity(k_folds);
        let mut fold_accs = Vec::with_capacity(k_folds);
        for fold in 0..k_folds {
            let train_rows: Vec<usize> =
                (0..features.len()).filter(|&i| fold_of[i] != fold).collect();
            let test_rows: Vec<usize> =
                (0..features.len()).filter(|&i| fold_of[i] == fold).collect();
            if test_rows.is_empty() {
                continue;
            }
            let train_f: Vec<Vec<f64>> = train_rows.iter().map(|&i| features[i].clone()).collect();
            let train_c: Vec<ExposureCategory> =
                train_rows.iter().map(|&i| categories[i]).collect();
            let fit = fit_with_category_set(&train_f, &train_c, &set, options)?;
            let mut loss = 0.0;
            let mut correct = 0usize;
            for &i in &test_rows {
                let probs = predict_propensities(&fit, std::slice::from_ref(&features[i]))?;
                let label = set.binary_search(&categories[i]).expect("validated");
                loss -= probs[0][label].max(1e-300).ln();
                let arg = probs[0]
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                    .map(|(j, _)| j)
                    .unwrap_or(0);
                correct += usize::from(arg == label);
            }
            fold_losses.push(loss / test_rows.len() as f64);
            fold_accs.push(correct as f64 / test_rows.len() as f64);
        }
        let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
        grid_mean_log_loss.push(mean_loss);
        let better = best.as_ref().is_none_or(|(_, l, _, _)| mean_loss < *l);
        if better {
            best = Some((gi, mean_loss, fold_accs, fold_losses));
        }
    }
    let (selected_index, _, per_fold_accuracy, per_fold_log_loss) =
        best.expect("grid is nonempty");
    Ok(CvReport {
        folds: k_folds,
        per_fold_accuracy,
        per_fold_log_loss,
        grid_mean_log_loss,
        selected: grid[selected_index],
        selected_index,
    })
}
