//! Treatment-effect estimators.
//!
//! Four estimators are compared throughout: the naive difference-in-means
//! against the whole control group, the same with the control-mixed group
//! removed, and the proposed Hájek inverse-propensity estimator with and
//! without control-mixed units in its analysis population. Per-level
//! estimates contrast the weighted mean outcome at exposure level m against a
//! baseline prediction of the no-treatment outcome, and the overall effect
//! averages levels over the treated players' exposure distribution.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{ExperimentDataset, ExposureCategory, GroupLabel, PlayerRecord};
use crate::error::{Error, Result};
use crate::propensity::{
    fit_with_category_set, observed_category_set, predict_propensities, stabilize_weights,
    ModelOptions, PropensityFit,
};
use crate::sim::true_mu;

/// The four estimator variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Naive,
    NaiveWithoutControlMixed,
    Proposed,
    ProposedWithoutControlMixed,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Naive,
        EstimatorKind::NaiveWithoutControlMixed,
        EstimatorKind::Proposed,
        EstimatorKind::ProposedWithoutControlMixed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::NaiveWithoutControlMixed => "naive-wo-cm",
            EstimatorKind::Proposed => "proposed",
            EstimatorKind::ProposedWithoutControlMixed => "proposed-wo-cm",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Baseline predictor of the no-treatment outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineModel {
    /// The simulator's analytic mu(x); valid for synthetic data.
    KnownMu,
    /// Pre-period outcome plus a linear covariate-dependent increment fitted
    /// on control-control units.
    DidLinear { coefficients: Vec<f64> },
}

/// Which baseline to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    KnownMu,
    DidLinear,
}

impl BaselineMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "known-mu" | "known_mu" | "mu" => Some(BaselineMode::KnownMu),
            "did-linear" | "did_linear" | "did" => Some(BaselineMode::DidLinear),
            _ => None,
        }
    }
}

impl BaselineModel {
    /// Predicted no-treatment outcome for one player.
    pub fn predict(&self, player: &PlayerRecord) -> Result<f64> {
        match self {
            BaselineModel::KnownMu => {
                let x = *player.x.first().ok_or_else(|| {
                    Error::data(format!("player {}: no covariate for known-mu baseline", player.id))
                })?;
                Ok(true_mu(x))
            }
            BaselineModel::DidLinear { coefficients } => {
                let y_pre = player.y_pre.ok_or_else(|| {
                    Error::data(format!(
                        "player {}: did-linear baseline requires a pre-period outcome",
                        player.id
                    ))
                })?;
                if coefficients.len() != player.x.len() + 1 {
                    return Err(Error::data(format!(
                        "player {}: baseline expects {} covariates, found {}",
                        player.id,
                        coefficients.len() - 1,
                        player.x.len()
                    )));
                }
                let mut increment = coefficients[0];
                for (b, x) in coefficients[1..].iter().zip(&player.x) {
                    increment += b * x;
                }
                Ok(y_pre + increment)
            }
        }
    }
}

/// Solve the symmetric positive system `a * x = b` by Gaussian elimination
/// with partial pivoting. `a` is row-major n x n.
fn solve_linear_system(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-10 {
            return Err(Error::Estimation(
                "design matrix is rank deficient (collinear or constant covariates)".to_string(),
            ));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= a[col * n + j] * x[j];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

/// Construct the baseline model.
///
/// `DidLinear` regresses the pre-to-experiment increment `y - y_pre` on the
/// covariates (with intercept) over control-control units only.
pub fn estimate_baseline(dataset: &ExperimentDataset, mode: BaselineMode) -> Result<BaselineModel> {
    match mode {
        BaselineMode::KnownMu => Ok(BaselineModel::KnownMu),
        BaselineMode::DidLinear => {
            for p in &dataset.players {
                if p.y_pre.is_none() {
                    return Err(Error::data(format!(
                        "player {}: did-linear baseline requires y_pre for every unit",
                        p.id
                    )));
                }
            }
            let labels = dataset.labels();
            let cc: Vec<&PlayerRecord> = dataset
                .players
                .iter()
                .filter(|p| labels[&p.id] == GroupLabel::ControlControl)
                .collect();
            let n_features = dataset
                .players
                .first()
                .map(|p| p.x.len())
                .ok_or_else(|| Error::data("dataset has no players"))?;
            let dim = n_features + 1;
            if cc.len() <= dim {
                return Err(Error::data(format!(
                    "did-linear baseline needs more control-control units ({}) than \
                     coefficients ({dim})",
                    cc.len()
                )));
            }
            // Normal equations for OLS of (y - y_pre) on [1, x].
            let mut xtx = vec![0.0; dim * dim];
            let mut xty = vec![0.0; dim];
            for p in &cc {
                let mut row = Vec::with_capacity(dim);
                row.push(1.0);
                row.extend_from_slice(&p.x);
                let target = p.y - p.y_pre.expect("checked above");
                for i in 0..dim {
                    xty[i] += row[i] * target;
                    for j in 0..dim {
                        xtx[i * dim + j] += row[i] * row[j];
                    }
                }
            }
            let coefficients = solve_linear_system(xtx, xty, dim)?;
            Ok(BaselineModel::DidLinear { coefficients })
        }
    }
}

/// Propensity rows aligned to players: id -> probability over `categories`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable {
    pub categories: Vec<ExposureCategory>,
    rows: HashMap<u64, Vec<f64>>,
}

impl PropensityTable {
    /// Bind a probability matrix to player ids. Row i belongs to ids[i].
    pub fn new(
        categories: Vec<ExposureCategory>,
        ids: &[u64],
        probabilities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if ids.len() != probabilities.len() {
            return Err(Error::data(format!(
                "{} ids but {} probability rows",
                ids.len(),
                probabilities.len()
            )));
        }
        let width = categories.len();
        for row in &probabilities {
            if row.len() != width {
                return Err(Error::data(format!(
                    "probability row has {} entries, expected {width}",
                    row.len()
                )));
            }
        }
        Ok(PropensityTable {
            categories,
            rows: ids.iter().copied().zip(probabilities).collect(),
        })
    }

    /// Propensity of player `id` for `category`, if the table covers both.
    pub fn propensity(&self, id: u64, category: ExposureCategory) -> Option<f64> {
        let col = self.categories.binary_search(&category).ok()?;
        self.rows.get(&id).map(|row| row[col])
    }

    pub fn covers(&self, id: u64) -> bool {
        self.rows.contains_key(&id)
    }
}

fn analysis_population(
    dataset: &ExperimentDataset,
    include_control_mixed: bool,
) -> Vec<&PlayerRecord> {
    dataset
        .players
        .iter()
        .filter(|p| p.z == 1 || (include_control_mixed && p.m > 0))
        .collect()
}

/// Fit a propensity model on the analysis population and bind predictions to
/// its players. Categories are the truncated levels with nonzero support in
/// that population; `floor` stabilizes the predicted probabilities.
pub fn fit_population_propensities(
    dataset: &ExperimentDataset,
    include_control_mixed: bool,
    options: &ModelOptions,
    floor: f64,
) -> Result<PropensityTable> {
    Ok(fit_population_model(dataset, include_control_mixed, options, floor)?.1)
}

/// Like [`fit_population_propensities`], also returning the fitted model so
/// callers can persist it.
pub fn fit_population_model(
    dataset: &ExperimentDataset,
    include_control_mixed: bool,
    options: &ModelOptions,
    floor: f64,
) -> Result<(PropensityFit, PropensityTable)> {
    let population = analysis_population(dataset, include_control_mixed);
    if population.is_empty() {
        return Err(Error::data("analysis population is empty"));
    }
    let features: Vec<Vec<f64>> = population.iter().map(|p| p.x.clone()).collect();
    let cats: Vec<ExposureCategory> = population.iter().map(|p| dataset.category_of(p)).collect();
    let set = observed_category_set(&cats);
    let fit: PropensityFit = fit_with_category_set(&features, &cats, &set, options)?;
    let table = bind_fit_to_population(dataset, include_control_mixed, &fit, floor)?;
    Ok((fit, table))
}

/// Predict with an existing fit over the analysis population and stabilize.
/// Lets an estimate run reuse a previously saved model.
pub fn bind_fit_to_population(
    dataset: &ExperimentDataset,
    include_control_mixed: bool,
    fit: &PropensityFit,
    floor: f64,
) -> Result<PropensityTable> {
    let population = analysis_population(dataset, include_control_mixed);
    if population.is_empty() {
        return Err(Error::data("analysis population is empty"));
    }
    let features: Vec<Vec<f64>> = population.iter().map(|p| p.x.clone()).collect();
    let probs = predict_propensities(fit, &features)?;
    let probs = stabilize_weights(&probs, floor)?;
    let ids: Vec<u64> = population.iter().map(|p| p.id).collect();
    PropensityTable::new(fit.categories.clone(), &ids, probs)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for v in values {
        total += v;
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Naive difference-in-means: mean outcome of the treatment group minus mean
/// outcome of the whole control group.
pub fn naive_overall(dataset: &ExperimentDataset) -> Result<f64> {
    let treated = mean(dataset.players.iter().filter(|p| p.z == 1).map(|p| p.y))
        .ok_or_else(|| Error::data("treatment group is empty"))?;
    let control = mean(dataset.players.iter().filter(|p| p.z == 0).map(|p| p.y))
        .ok_or_else(|| Error::data("control group is empty"))?;
    Ok(treated - control)
}

/// Per-level naive estimator: treated units at truncated level `category`
/// against the whole control group. `None` when no treated unit sits at the
/// level.
pub fn naive_per_m(
    dataset: &ExperimentDataset,
    category: ExposureCategory,
) -> Result<Option<f64>> {
    let control = mean(dataset.players.iter().filter(|p| p.z == 0).map(|p| p.y))
        .ok_or_else(|| Error::data("control group is empty"))?;
    let treated_at_m = mean(
        dataset
            .players
            .iter()
            .filter(|p| p.z == 1 && dataset.category_of(p) == category)
            .map(|p| p.y),
    );
    Ok(treated_at_m.map(|t| t - control))
}

/// Per-level naive estimator against the control-control group only.
pub fn naive_without_control_mixed(
    dataset: &ExperimentDataset,
    category: ExposureCategory,
) -> Result<Option<f64>> {
    let cc = mean(
        dataset
            .players
            .iter()
            .filter(|p| p.z == 0 && p.m == 0)
            .map(|p| p.y),
    )
    .ok_or_else(|| Error::data("control-control group is empty"))?;
    let treated_at_m = mean(
        dataset
            .players
            .iter()
            .filter(|p| p.z == 1 && dataset.category_of(p) == category)
            .map(|p| p.y),
    );
    Ok(treated_at_m.map(|t| t - cc))
}

/// Hájek inverse-propensity mean of the outcome at truncated level
/// `category`, over the analysis population (treated plus control-mixed when
/// the flag is on, treated only otherwise).
///
/// Returns `None` when no analysis unit sits at the level. Errors when an
/// analysis unit at the level has no propensity row or a zero propensity.
pub fn hajek_mean(
    dataset: &ExperimentDataset,
    category: ExposureCategory,
    propensities: &PropensityTable,
    include_control_mixed: bool,
) -> Result<Option<f64>> {
    let mut weight_total = 0.0;
    let mut weighted_outcome = 0.0;
    let mut n_units = 0usize;
    for p in analysis_population(dataset, include_control_mixed) {
        if dataset.category_of(p) != category {
            continue;
        }
        let e = propensities.propensity(p.id, category).ok_or_else(|| {
            Error::data(format!(
                "player {}: no propensity available at level {:?}",
                p.id, category
            ))
        })?;
        if e <= 0.0 {
            return Err(Error::estimation(format!(
                "player {}: zero propensity at level {:?}; apply stabilize_weights first",
                p.id, category
            )));
        }
        weight_total += 1.0 / e;
        weighted_outcome += p.y / e;
        n_units += 1;
    }
    if n_units == 0 {
        return Ok(None);
    }
    Ok(Some(weighted_outcome / weight_total))
}

/// Units and effective sample size of the Hájek sum at one level.
pub fn hajek_level_size(
    dataset: &ExperimentDataset,
    category: ExposureCategory,
    propensities: &PropensityTable,
    include_control_mixed: bool,
) -> (usize, f64) {
    let mut n_units = 0usize;
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    for p in analysis_population(dataset, include_control_mixed) {
        if dataset.category_of(p) != category {
            continue;
        }
        if let Some(e) = propensities.propensity(p.id, category) {
            if e > 0.0 {
                let w = 1.0 / e;
                n_units += 1;
                sum_w += w;
                sum_w2 += w * w;
            }
        }
    }
    let ess = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
    (n_units, ess)
}

/// Proposed per-level effect: Hájek mean at the level minus the average
/// baseline prediction over all players.
pub fn estimate_tau_m(
    dataset: &ExperimentDataset,
    category: ExposureCategory,
    propensities: &PropensityTable,
    baseline: &BaselineModel,
    include_control_mixed: bool,
) -> Result<Option<f64>> {
    let hajek = hajek_mean(dataset, category, propensities, include_control_mixed)?;
    let Some(hajek) = hajek else {
        return Ok(None);
    };
    let mut total = 0.0;
    for p in &dataset.players {
        total += baseline.predict(p)?;
    }
    Ok(Some(hajek - total / dataset.players.len() as f64))
}

/// One level of a `TauEstimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub category: ExposureCategory,
    /// `None` marks an undefined level (no analysis units); never zero-filled.
    pub estimate: Option<f64>,
    pub n_units: usize,
    pub effective_sample_size: f64,
    /// Share of treated players at this level.
    pub treated_support: f64,
}

/// Per-level and overall estimates for one estimator variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub kind: EstimatorKind,
    pub levels: Vec<LevelEstimate>,
    pub overall: Option<f64>,
    /// Treated exposure mass (over m > 0) sitting on undefined levels,
    /// renormalized away from the overall estimate.
    pub dropped_weight: f64,
    /// Populated when this variant failed as a whole (other variants of the
    /// same run stay intact).
    pub error: Option<String>,
}

/// Overall effect: per-level estimates averaged under the treated players'
/// truncated exposure distribution over m > 0. Undefined levels contribute
/// zero weight; their mass is reported and the rest renormalized.
pub fn estimate_overall_tau(
    levels: &[LevelEstimate],
    dataset: &ExperimentDataset,
) -> Result<(f64, f64)> {
    let treated: Vec<&PlayerRecord> = dataset.players.iter().filter(|p| p.z == 1).collect();
    let exposed: Vec<&&PlayerRecord> = treated.iter().filter(|p| p.m > 0).collect();
    if exposed.is_empty() {
        return Err(Error::data("no treated players with positive exposure"));
    }
    let mut weight_by_cat: HashMap<ExposureCategory, f64> = HashMap::new();
    for p in &exposed {
        *weight_by_cat.entry(dataset.category_of(p)).or_insert(0.0) +=
            1.0 / exposed.len() as f64;
    }
    let mut total = 0.0;
    let mut covered = 0.0;
    for level in levels {
        if level.category == ExposureCategory(0) {
            continue;
        }
        let Some(weight) = weight_by_cat.get(&level.category) else {
            continue;
        };
        if let Some(est) = level.estimate {
            total += est * weight;
            covered += weight;
        }
    }
    if covered <= 0.0 {
        return Err(Error::estimation(
            "every exposure level with treated support is undefined".to_string(),
        ));
    }
    let dropped = (1.0 - covered).max(0.0);
    let dropped = if dropped < 1e-12 { 0.0 } else { dropped };
    Ok((total / covered, dropped))
}

/// Propensity model settings shared by `run_all_estimators`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub options: ModelOptions,
    /// Stabilization floor applied to predicted probabilities.
    pub epsilon: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            options: ModelOptions::Linear(crate::propensity::LinearOptions::default()),
            epsilon: 0.01,
        }
    }
}

/// All four estimators over the full truncated scale.
///
/// One propensity fit is shared per analysis-population variant: the pooled
/// population for the proposed estimator, treated-only for the variant
/// without control-mixed units. A failure specific to one variant (say, an
/// empty control-control group) marks that variant errored and leaves the
/// others intact; only dataset-wide problems abort the call.
pub fn run_all_estimators(
    dataset: &ExperimentDataset,
    propensity: &PropensityConfig,
    baseline_mode: BaselineMode,
) -> Result<Vec<TauEstimate>> {
    let pooled = fit_population_propensities(dataset, true, &propensity.options, propensity.epsilon);
    let treated_only =
        fit_population_propensities(dataset, false, &propensity.options, propensity.epsilon);
    run_all_inner(dataset, pooled, treated_only, baseline_mode)
}

/// Same computation with prebuilt propensity tables (for example from a
/// saved model artifact), one per analysis-population variant.
pub fn run_all_estimators_with_tables(
    dataset: &ExperimentDataset,
    pooled: PropensityTable,
    treated_only: PropensityTable,
    baseline_mode: BaselineMode,
) -> Result<Vec<TauEstimate>> {
    run_all_inner(dataset, Ok(pooled), Ok(treated_only), baseline_mode)
}

fn run_all_inner(
    dataset: &ExperimentDataset,
    pooled: Result<PropensityTable>,
    treated_only: Result<PropensityTable>,
    baseline_mode: BaselineMode,
) -> Result<Vec<TauEstimate>> {
    if dataset.players.is_empty() {
        return Err(Error::data("dataset has no players"));
    }
    let baseline = estimate_baseline(dataset, baseline_mode);

    let categories = dataset.categories();
    let n_treated = dataset.players.iter().filter(|p| p.z == 1).count().max(1);
    let treated_support = |cat: ExposureCategory| {
        dataset
            .players
            .iter()
            .filter(|p| p.z == 1 && dataset.category_of(p) == cat)
            .count() as f64
            / n_treated as f64
    };
    let treated_count = |cat: ExposureCategory| {
        dataset
            .players
            .iter()
            .filter(|p| p.z == 1 && dataset.category_of(p) == cat)
            .count()
    };
    let empty_levels = || -> Vec<LevelEstimate> {
        categories
            .iter()
            .map(|&cat| LevelEstimate {
                category: cat,
                estimate: None,
                n_units: 0,
                effective_sample_size: 0.0,
                treated_support: treated_support(cat),
            })
            .collect()
    };

    let mut out = Vec::with_capacity(4);
    for kind in EstimatorKind::ALL {
        let computed: Result<Vec<LevelEstimate>> = (|| {
            let mut levels = Vec::with_capacity(categories.len());
            for &cat in &categories {
                let (estimate, n_units, ess) = match kind {
                    EstimatorKind::Naive => {
                        let est = naive_per_m(dataset, cat)?;
                        let n = treated_count(cat);
                        (est, n, n as f64)
                    }
                    EstimatorKind::NaiveWithoutControlMixed => {
                        let est = naive_without_control_mixed(dataset, cat)?;
                        let n = treated_count(cat);
                        (est, n, n as f64)
                    }
                    EstimatorKind::Proposed => {
                        let baseline = baseline.as_ref().map_err(clone_error)?;
                        let table = pooled.as_ref().map_err(clone_error)?;
                        let est = estimate_tau_m(dataset, cat, table, baseline, true)?;
                        let (n, ess) = hajek_level_size(dataset, cat, table, true);
                        (est, n, ess)
                    }
                    EstimatorKind::ProposedWithoutControlMixed => {
                        let baseline = baseline.as_ref().map_err(clone_error)?;
                        let table = treated_only.as_ref().map_err(clone_error)?;
                        let est = estimate_tau_m(dataset, cat, table, baseline, false)?;
                        let (n, ess) = hajek_level_size(dataset, cat, table, false);
                        (est, n, ess)
                    }
                };
                levels.push(LevelEstimate {
                    category: cat,
                    estimate,
                    n_units,
                    effective_sample_size: ess,
                    treated_support: treated_support(cat),
                });
            }
            Ok(levels)
        })();

        match computed {
            Ok(levels) => {
                let (overall, dropped) = match kind {
                    EstimatorKind::Naive => match naive_overall(dataset) {
                        Ok(v) => (Some(v), 0.0),
                        Err(_) => (None, 1.0),
                    },
                    _ => match estimate_overall_tau(&levels, dataset) {
                        Ok((v, d)) => (Some(v), d),
                        Err(_) => (None, 1.0),
                    },
                };
                out.push(TauEstimate {
                    kind,
                    levels,
                    overall,
                    dropped_weight: dropped,
                    error: None,
                });
            }
            Err(e) => out.push(TauEstimate {
                kind,
                levels: empty_levels(),
                overall: None,
                dropped_weight: 1.0,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}

fn clone_error(e: &Error) -> Error {
    Error::Estimation(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GameSession;

    fn player(id: u64, z: u8, m: u32, y: f64, x: f64) -> PlayerRecord {
        PlayerRecord {
            id,
            z,
            x: vec![x],
            m,
            y,
            y_pre: None,
        }
    }

    fn dataset(players: Vec<PlayerRecord>, k: u32) -> ExperimentDataset {
        ExperimentDataset {
            players,
            sessions: Vec::<GameSession>::new(),
            truncation_k: k,
        }
    }

    fn uniform_table(ds: &ExperimentDataset) -> PropensityTable {
        let cats = ds.categories();
        let ids: Vec<u64> = ds.players.iter().map(|p| p.id).collect();
        let row = vec![1.0 / cats.len() as f64; cats.len()];
        PropensityTable::new(cats, &ids, vec![row; ids.len()]).unwrap()
    }

    #[test]
    fn naive_overall_hand_example() {
        let ds = dataset(
            vec![
                player(0, 1, 1, 2.0, 0.5),
                player(1, 1, 1, 4.0, 0.5),
                player(2, 0, 0, 1.0, 0.5),
                player(3, 0, 1, 3.0, 0.5),
            ],
            10,
        );
        assert!((naive_overall(&ds).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn naive_overall_zero_cases() {
        let ds = dataset(
            vec![player(0, 1, 1, 5.0, 0.5), player(1, 0, 0, 5.0, 0.5)],
            10,
        );
        assert_eq!(naive_overall(&ds).unwrap(), 0.0);
        let empty_control = dataset(vec![player(0, 1, 1, 5.0, 0.5)], 10);
        assert!(naive_overall(&empty_control).is_err());
    }

    #[test]
    fn naive_per_m_hand_example() {
        let ds = dataset(
            vec![
                player(0, 1, 2, 3.0, 0.5),
                player(1, 1, 2, 5.0, 0.5),
                player(2, 0, 0, 1.0, 0.5),
                player(3, 0, 0, 1.0, 0.5),
            ],
            10,
        );
        let est = naive_per_m(&ds, ExposureCategory(2)).unwrap().unwrap();
        assert!((est - 3.0).abs() < 1e-12);
        assert!(naive_per_m(&ds, ExposureCategory(7)).unwrap().is_none());
    }

    #[test]
    fn naive_without_cm_hand_example() {
        let ds = dataset(
            vec![
                player(0, 1, 1, 2.0, 0.5),
                player(1, 0, 0, 0.5, 0.5),
                player(2, 0, 3, 9.0, 0.5), // control-mixed, excluded from baseline
            ],
            10,
        );
        let est = naive_without_control_mixed(&ds, ExposureCategory(1))
            .unwrap()
            .unwrap();
        assert!((est - 1.5).abs() < 1e-12);
    }

    #[test]
    fn naive_without_cm_requires_control_control_units() {
        let ds = dataset(
            vec![player(0, 1, 1, 2.0, 0.5), player(1, 0, 2, 1.0, 0.5)],
            10,
        );
        let err = naive_without_control_mixed(&ds, ExposureCategory(1)).unwrap_err();
        assert!(err.to_string().contains("control-control"), "{err}");
    }

    #[test]
    fn hajek_uniform_weights_reduce_to_plain_mean() {
        let ds = dataset(
            vec![
                player(0, 1, 3, 2.0, 0.5),
                player(1, 1, 3, 4.0, 0.5),
                player(2, 0, 3, 9.0, 0.5),
                player(3, 0, 0, 1.0, 0.5),
            ],
            10,
        );
        let table = uniform_table(&ds);
        let got = hajek_mean(&ds, ExposureCategory(3), &table, true)
            .unwrap()
            .unwrap();
        assert!((got - 5.0).abs() < 1e-12);
        // Treated-only variant drops the control-mixed unit.
        let got = hajek_mean(&ds, ExposureCategory(3), &table, false)
            .unwrap()
            .unwrap();
        assert!((got - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hajek_hand_weighted_example() {
        // (y, e) = (2, 0.5), (4, 0.25) -> (4 + 16) / (2 + 4) = 10/3
        let ds = dataset(
            vec![player(0, 1, 2, 2.0, 0.1), player(1, 1, 2, 4.0, 0.9)],
            10,
        );
        let cats = ds.categories();
        let col = 2usize;
        let mut rows = Vec::new();
        for e in [0.5, 0.25] {
            let mut row = vec![(1.0 - e) / (cats.len() - 1) as f64; cats.len()];
            row[col] = e;
            rows.push(row);
        }
        let table = PropensityTable::new(cats, &[0, 1], rows).unwrap();
        let got = hajek_mean(&ds, ExposureCategory(2), &table, true)
            .unwrap()
            .unwrap();
        assert!((got - 10.0 / 3.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn hajek_single_unit_returns_its_outcome() {
        let ds = dataset(vec![player(0, 1, 4, 7.5, 0.3)], 10);
        let table = uniform_table(&ds);
        let got = hajek_mean(&ds, ExposureCategory(4), &table, true)
            .unwrap()
            .unwrap();
        assert!((got - 7.5).abs() < 1e-12);
    }

    #[test]
    fn hajek_scale_invariance() {
        let ds = dataset(
            vec![
                player(0, 1, 2, 2.0, 0.1),
                player(1, 1, 2, 4.0, 0.9),
                player(2, 0, 2, 1.0, 0.4),
            ],
            10,
        );
        let cats = ds.categories();
        let col = 2usize;
        let base = [0.5, 0.25, 0.125];
        let build = |scale: f64| {
            let rows: Vec<Vec<f64>> = base
                .iter()
                .map(|&e| {
                    let mut row = vec![0.0; cats.len()];
                    row[col] = e * scale;
                    row
                })
                .collect();
            PropensityTable::new(cats.clone(), &[0, 1, 2], rows).unwrap()
        };
        let a = hajek_mean(&ds, ExposureCategory(2), &build(1.0), true)
            .unwrap()
            .unwrap();
        let b = hajek_mean(&ds, ExposureCategory(2), &build(3.7), true)
            .unwrap()
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn hajek_zero_propensity_is_an_error() {
        let ds = dataset(vec![player(0, 1, 1, 2.0, 0.5)], 10);
        let cats = ds.categories();
        let rows = vec![vec![0.0; cats.len()]];
        let table = PropensityTable::new(cats, &[0], rows).unwrap();
        let err = hajek_mean(&ds, ExposureCategory(1), &table, true).unwrap_err();
        assert!(err.to_string().contains("stabilize_weights"), "{err}");
    }

    #[test]
    fn tau_m_is_hajek_minus_mean_baseline() {
        // Hájek = 5, mean mu over players = 2 -> tau = 3. Using known-mu with
        // x chosen so mu(x) = 2: x = 1 gives mu = 2.5; use x = 0.8 -> 2.0.
        let ds = dataset(
            vec![player(0, 1, 1, 5.0, 0.8), player(1, 0, 0, 9.0, 0.8)],
            10,
        );
        let table = uniform_table(&ds);
        let got = estimate_tau_m(&ds, ExposureCategory(1), &table, &BaselineModel::KnownMu, true)
            .unwrap()
            .unwrap();
        assert!((got - 3.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn did_baseline_zero_increment_returns_y_pre() {
        let mut players = Vec::new();
        for i in 0..10 {
            let mut p = player(i, 0, 0, 1.0 + i as f64 * 0.1, 0.1 * i as f64);
            p.y_pre = Some(p.y); // increment identically zero
            players.push(p);
        }
        players.push({
            let mut p = player(10, 1, 2, 9.0, 0.5);
            p.y_pre = Some(4.0);
            p
        });
        let ds = dataset(players, 10);
        let baseline = estimate_baseline(&ds, BaselineMode::DidLinear).unwrap();
        let pred = baseline.predict(&ds.players[10]).unwrap();
        assert!((pred - 4.0).abs() < 1e-9, "{pred}");
    }

    #[test]
    fn did_baseline_recovers_linear_increment() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(5, "did");
        let mut players = Vec::new();
        for i in 0..10_000u64 {
            let x: f64 = rng.random();
            let y_pre = 1.0 + rng.random::<f64>();
            let noise = rng.random::<f64>() - 0.5;
            let mut p = player(i, 0, 0, y_pre + 3.0 * x + noise, x);
            p.y_pre = Some(y_pre);
            players.push(p);
        }
        let ds = dataset(players, 10);
        let baseline = estimate_baseline(&ds, BaselineMode::DidLinear).unwrap();
        let BaselineModel::DidLinear { coefficients } = &baseline else {
            panic!("wrong baseline kind");
        };
        assert!((coefficients[1] - 3.0).abs() < 0.1, "{coefficients:?}");
        // Residual mean over the training group is zero for OLS with intercept.
        let labels = ds.labels();
        let mut resid = 0.0;
        let mut count = 0;
        for p in &ds.players {
            if labels[&p.id] == GroupLabel::ControlControl {
                resid += p.y - baseline.predict(p).unwrap();
                count += 1;
            }
        }
        assert!((resid / count as f64).abs() < 1e-9);
    }

    #[test]
    fn did_baseline_missing_y_pre_errors() {
        let ds = dataset(vec![player(0, 0, 0, 1.0, 0.5)], 10);
        assert!(estimate_baseline(&ds, BaselineMode::DidLinear).is_err());
    }

    #[test]
    fn did_baseline_rank_deficiency_errors() {
        let mut players = Vec::new();
        for i in 0..20 {
            let mut p = player(i, 0, 0, 1.0, 0.5); // constant covariate
            p.y_pre = Some(0.5);
            players.push(p);
        }
        let ds = dataset(players, 10);
        let err = estimate_baseline(&ds, BaselineMode::DidLinear).unwrap_err();
        assert!(err.to_string().contains("rank deficient"), "{err}");
    }

    #[test]
    fn missing_control_control_group_disables_only_that_variant() {
        // Every control player is exposed, so the without-control-mixed
        // baseline group is empty; the other three estimators still run.
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(21, "no-cc");
        let players: Vec<PlayerRecord> = (0..60u64)
            .map(|id| {
                let z = u8::from(id % 2 == 0);
                let m = if z == 1 { rng.random_range(0..5) } else { rng.random_range(1..5) };
                player(id, z, m, rng.random::<f64>() * 3.0, rng.random())
            })
            .collect();
        let ds = dataset(players, 10);
        let all = run_all_estimators(&ds, &PropensityConfig::default(), BaselineMode::KnownMu)
            .unwrap();
        for tau in &all {
            match tau.kind {
                EstimatorKind::NaiveWithoutControlMixed => {
                    assert!(tau.error.is_some(), "variant must be flagged errored");
                    assert!(tau.levels.iter().all(|l| l.estimate.is_none()));
                }
                _ => {
                    assert!(tau.error.is_none(), "{:?}: {:?}", tau.kind, tau.error);
                    assert!(tau.overall.is_some());
                }
            }
        }
    }

    #[test]
    fn overall_tau_mixes_levels_by_treated_distribution() {
        let ds = dataset(
            vec![
                player(0, 1, 1, 0.0, 0.5),
                player(1, 1, 2, 0.0, 0.5),
                player(2, 0, 0, 0.0, 0.5),
            ],
            10,
        );
        let levels = vec![
            LevelEstimate {
                category: ExposureCategory(1),
                estimate: Some(1.0),
                n_units: 1,
                effective_sample_size: 1.0,
                treated_support: 0.5,
            },
            LevelEstimate {
                category: ExposureCategory(2),
                estimate: Some(3.0),
                n_units: 1,
                effective_sample_size: 1.0,
                treated_support: 0.5,
            },
        ];
        let (overall, dropped) = estimate_overall_tau(&levels, &ds).unwrap();
        assert!((overall - 2.0).abs() < 1e-12);
        assert_eq!(dropped, 0.0);
    }

    #[test]
    fn overall_tau_degenerate_single_level() {
        let ds = dataset(
            vec![player(0, 1, 1, 0.0, 0.5), player(1, 0, 0, 0.0, 0.5)],
            10,
        );
        let levels = vec![LevelEstimate {
            category: ExposureCategory(1),
            estimate: Some(0.75),
            n_units: 1,
            effective_sample_size: 1.0,
            treated_support: 1.0,
        }];
        let (overall, _) = estimate_overall_tau(&levels, &ds).unwrap();
        assert!((overall - 0.75).abs() < 1e-12);
    }

    #[test]
    fn overall_tau_renormalizes_and_reports_dropped_mass() {
        let ds = dataset(
            vec![
                player(0, 1, 1, 0.0, 0.5),
                player(1, 1, 2, 0.0, 0.5),
                player(2, 0, 0, 0.0, 0.5),
            ],
            10,
        );
        let levels = vec![
            LevelEstimate {
                category: ExposureCategory(1),
                estimate: Some(1.0),
                n_units: 1,
                effective_sample_size: 1.0,
                treated_support: 0.5,
            },
            LevelEstimate {
                category: ExposureCategory(2),
                estimate: None,
                n_units: 0,
                effective_sample_size: 0.0,
                treated_support: 0.5,
            },
        ];
        let (overall, dropped) = estimate_overall_tau(&levels, &ds).unwrap();
        assert!((overall - 1.0).abs() < 1e-12);
        assert!((dropped - 0.5).abs() < 1e-12);
        let all_undefined = vec![LevelEstimate {
            category: ExposureCategory(1),
            estimate: None,
            n_units: 0,
            effective_sample_size: 0.0,
            treated_support: 1.0,
        }];
        assert!(estimate_overall_tau(&all_undefined, &ds).is_err());
    }
}
