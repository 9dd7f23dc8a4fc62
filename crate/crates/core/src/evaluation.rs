//! Monte Carlo replication harness.
//!
//! Generates R independent experiments per configuration, runs all four
//! estimators on each, and aggregates per-level means, nearest-rank 95%
//! percentile intervals, bias, and RMSE against analytic truth. Aggregation
//! is a pure fold over the multiset of replicate results: values are sorted
//! before any reduction, so summaries are invariant to replicate ordering.

use serde::{Deserialize, Serialize};

use crate::domain::{ExposureCategory, GroupLabel};
use crate::error::{Error, Result};
use crate::estimators::{
    run_all_estimators, BaselineMode, EstimatorKind, PropensityConfig, TauEstimate,
};
use crate::rng::replicate_seed;
use crate::sim::{simulate_experiment, true_tau_with_mean, SimulationConfig};

/// Estimator-side settings of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub baseline: BaselineMode,
    pub propensity: PropensityConfig,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            baseline: BaselineMode::KnownMu,
            propensity: PropensityConfig::default(),
        }
    }
}

/// Full description of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Base experiment; its seed field is replaced per replicate.
    pub sim: SimulationConfig,
    pub replicates: u32,
    /// Master seed of the replicate seed schedule.
    pub master_seed: u64,
    pub estimator: EstimatorSettings,
}

impl McConfig {
    pub fn new(sim: SimulationConfig, replicates: u32, master_seed: u64) -> Self {
        McConfig {
            sim,
            replicates,
            master_seed,
            estimator: EstimatorSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("Monte Carlo needs at least one replicate"));
        }
        self.sim.validate()
    }

    fn sim_for_replicate(&self, index: u32) -> SimulationConfig {
        let mut sim = self.sim.clone();
        sim.seed = replicate_seed(self.master_seed, index);
        sim
    }
}

/// Everything recorded about one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: u32,
    pub estimates: Vec<TauEstimate>,
    /// (treatment, control-mixed, control-control) shares of all players.
    pub group_shares: (f64, f64, f64),
    /// Realized mean of the analytic per-exposure effect over pooled analysis
    /// units per category; captures what the truncated top bucket actually
    /// holds in this replicate.
    pub realized_truth: Vec<Option<f64>>,
    /// Count of control-mixed players per category.
    pub control_mixed_histogram: Vec<usize>,
    /// Count of treated players per category.
    pub treated_histogram: Vec<usize>,
}

/// Simulate replicate `index` and run all four estimators on it.
/// Fully determined by (config, index).
pub fn run_replication(config: &McConfig, index: u32) -> Result<ReplicationResult> {
    config.validate()?;
    let sim = config.sim_for_replicate(index);
    let experiment = simulate_experiment(&sim)?;
    let dataset = &experiment.dataset;
    let estimates = run_all_estimators(
        dataset,
        &config.estimator.propensity,
        config.estimator.baseline,
    )?;

    let sizes = dataset.group_sizes();
    let n = sizes.total() as f64;
    let group_shares = (
        sizes.treatment as f64 / n,
        sizes.control_mixed as f64 / n,
        sizes.control_control as f64 / n,
    );

    let categories = dataset.categories();
    let x_mean = sim.covariate_mean();
    let labels = dataset.labels();
    let mut truth_sum = vec![0.0f64; categories.len()];
    let mut truth_n = vec![0usize; categories.len()];
    let mut cm_hist = vec![0usize; categories.len()];
    let mut t_hist = vec![0usize; categories.len()];
    for p in &dataset.players {
        let cat = dataset.category_of(p);
        let idx = cat.0 as usize;
        match labels[&p.id] {
            GroupLabel::Treatment => {
                t_hist[idx] += 1;
                truth_sum[idx] += true_tau_with_mean(p.m, x_mean);
                truth_n[idx] += 1;
            }
            GroupLabel::ControlMixed => {
                cm_hist[idx] += 1;
                truth_sum[idx] += true_tau_with_mean(p.m, x_mean);
                truth_n[idx] += 1;
            }
            GroupLabel::ControlControl => {}
        }
    }
    let realized_truth = truth_sum
        .into_iter()
        .zip(&truth_n)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    Ok(ReplicationResult {
        index,
        estimates,
        group_shares,
        realized_truth,
        control_mixed_histogram: cm_hist,
        treated_histogram: t_hist,
    })
}

/// Nearest-rank percentile of a sorted sample: the value at rank
/// ceil(q * n), 1-indexed.
pub fn nearest_rank_percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as f64;
    let rank = (q * n).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Aggregated cell of the Monte Carlo summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub estimator: EstimatorKind,
    pub category: ExposureCategory,
    /// Fraction of successful replicates where this level was defined.
    pub defined_fraction: f64,
    pub mean_treated_support: f64,
    /// Statistics are withheld (None) when defined_fraction < 0.5.
    pub mean: Option<f64>,
    pub lower_2_5: Option<f64>,
    pub upper_97_5: Option<f64>,
    /// Analytic truth; the top bucket uses the realized-exposure oracle.
    pub truth: f64,
    /// mean - truth, exactly.
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
}

/// Overall-effect summary for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOverallCell {
    pub estimator: EstimatorKind,
    pub defined_fraction: f64,
    pub mean: Option<f64>,
    pub lower_2_5: Option<f64>,
    pub upper_97_5: Option<f64>,
}

/// Monte Carlo summary across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub replicates_requested: u32,
    pub replicates_failed: u32,
    /// (replicate index, error message) for every failed replicate.
    pub failures: Vec<(u32, String)>,
    pub cells: Vec<McCell>,
    pub overall: Vec<McOverallCell>,
    /// Mean (treatment, control-mixed, control-control) shares.
    pub mean_group_shares: (f64, f64, f64),
}

fn sorted(values: &mut [f64]) {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
}

fn mean_of_sorted(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregate already-computed replicate outcomes. Order-independent.
pub fn aggregate(
    config: &McConfig,
    outcomes: &[std::result::Result<ReplicationResult, (u32, String)>],
) -> Result<McSummary> {
    let successes: Vec<&ReplicationResult> =
        outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let mut failures: Vec<(u32, String)> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().err().cloned())
        .collect();
    failures.sort();
    if successes.is_empty() {
        return Err(Error::estimation(format!(
            "all {} replicates failed; first failure: {}",
            outcomes.len(),
            failures
                .first()
                .map(|(i, m)| format!("replicate {i}: {m}"))
                .unwrap_or_default()
        )));
    }
    let n_success = successes.len() as f64;
    let categories: Vec<ExposureCategory> = (0..=config.sim.truncation_k)
        .map(ExposureCategory)
        .collect();
    let x_mean = config.sim.covariate_mean();

    // Truth per category: analytic below the bucket; realized-exposure
    // analytic mean inside the bucket, averaged over replicates.
    let truth_of = |cat: ExposureCategory| -> f64 {
        if cat.is_top_bucket(config.sim.truncation_k) {
            let mut vals: Vec<f64> = successes
                .iter()
                .filter_map(|r| r.realized_truth[cat.0 as usize])
                .collect();
            if vals.is_empty() {
                return true_tau_with_mean(cat.0, x_mean);
            }
            sorted(&mut vals);
            mean_of_sorted(&vals)
        } else {
            true_tau_with_mean(cat.0, x_mean)
        }
    };

    let mut cells = Vec::new();
    for kind in EstimatorKind::ALL {
        for &cat in &categories {
            let mut values: Vec<f64> = Vec::new();
            let mut support: Vec<f64> = Vec::new();
            for r in &successes {
                let estimate = r
                    .estimates
                    .iter()
                    .find(|t| t.kind == kind)
                    .and_then(|t| t.levels.iter().find(|l| l.category == cat))
                    .and_then(|l| l.estimate);
                if let Some(v) = estimate {
                    values.push(v);
                }
                if let Some(l) = r
                    .estimates
                    .iter()
                    .find(|t| t.kind == kind)
                    .and_then(|t| t.levels.iter().find(|l| l.category == cat))
                {
                    support.push(l.treated_support);
                }
            }
            sorted(&mut values);
            sorted(&mut support);
            let defined_fraction = values.len() as f64 / n_success;
            let truth = truth_of(cat);
            let mean_treated_support = if support.is_empty() {
                0.0
            } else {
                mean_of_sorted(&support)
            };
            let (mean, lower, upper, bias, rmse) = if defined_fraction >= 0.5 {
                let m = mean_of_sorted(&values);
                let lo = nearest_rank_percentile(&values, 0.025);
                let hi = nearest_rank_percentile(&values, 0.975);
                let mut sq: Vec<f64> = values.iter().map(|v| (v - truth).powi(2)).collect();
                sorted(&mut sq);
                (
                    Some(m),
                    Some(lo),
                    Some(hi),
                    Some(m - truth),
                    Some(mean_of_sorted(&sq).sqrt()),
                )
            } else {
                (None, None, None, None, None)
            };
            cells.push(McCell {
                estimator: kind,
                category: cat,
                defined_fraction,
                mean_treated_support,
                mean,
                lower_2_5: lower,
                upper_97_5: upper,
                truth,
                bias,
                rmse,
            });
        }
    }

    let mut overall = Vec::new();
    for kind in EstimatorKind::ALL {
        let mut values: Vec<f64> = successes
            .iter()
            .filter_map(|r| {
                r.estimates
                    .iter()
                    .find(|t| t.kind == kind)
                    .and_then(|t| t.overall)
            })
            .collect();
        sorted(&mut values);
        let defined_fraction = values.len() as f64 / n_success;
        let (mean, lower, upper) = if values.is_empty() {
            (None, None, None)
        } else {
            (
                Some(mean_of_sorted(&values)),
                Some(nearest_rank_percentile(&values, 0.025)),
                Some(nearest_rank_percentile(&values, 0.975)),
            )
        };
        overall.push(McOverallCell {
            estimator: kind,
            defined_fraction,
            mean,
            lower_2_5: lower,
            upper_97_5: upper,
        });
    }

    let mut t_shares: Vec<f64> = successes.iter().map(|r| r.group_shares.0).collect();
    let mut cm_shares: Vec<f64> = successes.iter().map(|r| r.group_shares.1).collect();
    let mut cc_shares: Vec<f64> = successes.iter().map(|r| r.group_shares.2).collect();
    sorted(&mut t_shares);
    sorted(&mut cm_shares);
    sorted(&mut cc_shares);

    Ok(McSummary {
        replicates_requested: outcomes.len() as u32,
        replicates_failed: failures.len() as u32,
        failures,
        cells,
        overall,
        mean_group_shares: (
            mean_of_sorted(&t_shares),
            mean_of_sorted(&cm_shares),
            mean_of_sorted(&cc_shares),
        ),
    })
}

/// Run the full Monte Carlo: R replicates, aggregate. Failed replicates are
/// recorded and excluded from summaries; the run aborts only when every
/// replicate fails.
pub fn run_monte_carlo(config: &McConfig) -> Result<McSummary> {
    config.validate()?;
    let outcomes: Vec<std::result::Result<ReplicationResult, (u32, String)>> = (0..config
        .replicates)
        .map(|i| run_replication(config, i).map_err(|e| (i, e.to_string())))
        .collect();
    aggregate(config, &outcomes)
}

/// Per-replicate group shares and exposure histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShareReport {
    /// (treatment, control-mixed, control-control) per replicate.
    pub per_replicate: Vec<(f64, f64, f64)>,
    pub mean_treatment: f64,
    pub mean_control_mixed: f64,
    pub mean_control_control: f64,
    /// Mean count of control-mixed players per category across replicates.
    pub control_mixed_histogram: Vec<f64>,
    /// Mean count of treated players per category across replicates.
    pub treated_histogram: Vec<f64>,
}

/// Simulate R replicates and report group shares only (no estimation).
pub fn group_share_report(config: &McConfig) -> Result<GroupShareReport> {
    config.validate()?;
    let n_cats = config.sim.truncation_k as usize + 1;
    let mut per_replicate = Vec::with_capacity(config.replicates as usize);
    let mut cm_hist = vec![0.0f64; n_cats];
    let mut t_hist = vec![0.0f64; n_cats];
    for index in 0..config.replicates {
        let sim = config.sim_for_replicate(index);
        let experiment = simulate_experiment(&sim)?;
        let dataset = &experiment.dataset;
        let sizes = dataset.group_sizes();
        let n = sizes.total() as f64;
        per_replicate.push((
            sizes.treatment as f64 / n,
            sizes.control_mixed as f64 / n,
            sizes.control_control as f64 / n,
        ));
        for p in &dataset.players {
            let idx = dataset.category_of(p).0 as usize;
            if p.z == 1 {
                t_hist[idx] += 1.0;
            } else if p.m > 0 {
                cm_hist[idx] += 1.0;
            }
        }
    }
    let r = config.replicates as f64;
    for v in cm_hist.iter_mut().chain(t_hist.iter_mut()) {
        *v /= r;
    }
    let mean_of = |f: fn(&(f64, f64, f64)) -> f64| -> f64 {
        per_replicate.iter().map(f).sum::<f64>() / per_replicate.len() as f64
    };
    Ok(GroupShareReport {
        mean_treatment: mean_of(|s| s.0),
        mean_control_mixed: mean_of(|s| s.1),
        mean_control_control: mean_of(|s| s.2),
        per_replicate,
        control_mixed_histogram: cm_hist,
        treated_histogram: t_hist,
    })
}

/// Per-level ranking of estimators by absolute bias and by interval width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRankRow {
    pub category: ExposureCategory,
    /// (estimator, |bias|), ascending; ties keep both entries.
    pub by_abs_bias: Vec<(EstimatorKind, f64)>,
    /// (estimator, 95% interval width), ascending.
    pub by_interval_width: Vec<(EstimatorKind, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasComparison {
    pub rows: Vec<BiasRankRow>,
    /// Fraction of ranked levels where the proposed estimator's |bias| is no
    /// larger than every other estimator's (ties count as best).
    pub proposed_best_fraction: f64,
    /// Fraction of ranked levels where the proposed estimator's |bias| is no
    /// larger than both naive estimators'.
    pub proposed_beats_naives_fraction: f64,
    /// Fraction of ranked levels where the without-control-mixed variant's
    /// interval is at least as wide as the proposed estimator's.
    pub wo_cm_wider_fraction: f64,
}

/// Rank estimators per level; levels enter only when every estimator has
/// defined summary statistics there.
pub fn bias_comparison(summary: &McSummary) -> BiasComparison {
    let categories: Vec<ExposureCategory> = {
        let mut cats: Vec<ExposureCategory> =
            summary.cells.iter().map(|c| c.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    };
    let mut rows = Vec::new();
    let mut proposed_best = 0usize;
    let mut proposed_beats_naives = 0usize;
    let mut wo_cm_wider = 0usize;
    for cat in categories {
        let cell_of = |kind: EstimatorKind| {
            summary
                .cells
                .iter()
                .find(|c| c.estimator == kind && c.category == cat)
        };
        let all: Option<Vec<(EstimatorKind, f64, f64)>> = EstimatorKind::ALL
            .iter()
            .map(|&kind| {
                let cell = cell_of(kind)?;
                let bias = cell.bias?;
                let width = cell.upper_97_5? - cell.lower_2_5?;
                Some((kind, bias.abs(), width))
            })
            .collect();
        let Some(all) = all else {
            continue;
        };
        let mut by_abs_bias: Vec<(EstimatorKind, f64)> =
            all.iter().map(|&(k, b, _)| (k, b)).collect();
        by_abs_bias.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite bias"));
        let mut by_interval_width: Vec<(EstimatorKind, f64)> =
            all.iter().map(|&(k, _, w)| (k, w)).collect();
        by_interval_width.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite width"));

        let proposed_bias = all
            .iter()
            .find(|(k, _, _)| *k == EstimatorKind::Proposed)
            .map(|&(_, b, _)| b)
            .expect("all four present");
        if all
            .iter()
            .all(|&(_, b, _)| proposed_bias <= b + 1e-12)
        {
            proposed_best += 1;
        }
        if all
            .iter()
            .filter(|(k, _, _)| {
                matches!(
                    k,
                    EstimatorKind::Naive | EstimatorKind::NaiveWithoutControlMixed
                )
            })
            .all(|&(_, b, _)| proposed_bias <= b + 1e-12)
        {
            proposed_beats_naives += 1;
        }
        let proposed_width = all
            .iter()
            .find(|(k, _, _)| *k == EstimatorKind::Proposed)
            .map(|&(_, _, w)| w)
            .expect("present");
        let wo_cm_width = all
            .iter()
            .find(|(k, _, _)| *k == EstimatorKind::ProposedWithoutControlMixed)
            .map(|&(_, _, w)| w)
            .expect("present");
        if wo_cm_width >= proposed_width - 1e-12 {
            wo_cm_wider += 1;
        }
        rows.push(BiasRankRow {
            category: cat,
            by_abs_bias,
            by_interval_width,
        });
    }
    let n = rows.len().max(1) as f64;
    BiasComparison {
        proposed_best_fraction: proposed_best as f64 / n,
        proposed_beats_naives_fraction: proposed_beats_naives as f64 / n,
        wo_cm_wider_fraction: wo_cm_wider as f64 / n,
        rows,
    }
}
