//! Synthetic experiment generation.
//!
//! The pipeline draws Bernoulli assignments and Beta covariates, matches
//! players into team sessions game by game, derives exposure counts through
//! the contamination rule, and draws exponential outcomes. One master seed
//! spawns independent named streams (assignment, covariates, matching,
//! outcomes) so components can be resized without perturbing each other.

mod matching;
mod outcome;

pub use matching::{oracle_exposure_frequencies, simulate_matching, MatchingDiagnostics};
pub use outcome::{
    generate_outcomes, lambda_mean, potential_outcome_contrast, true_mu, true_tau,
    true_tau_with_mean,
};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::domain::{ExperimentDataset, PlayerRecord};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Knobs for the matching weight function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingWeights {
    /// Mass of the uniform component in the sampling mixture.
    pub uniform_mass: f64,
    /// Exponent of the activity tilt (weights proportional to x^gamma).
    pub activity_exponent: f64,
    /// Zero-treated games draw only controls with activity below this cutoff.
    pub low_activity_cutoff: f64,
}

impl Default for MatchingWeights {
    fn default() -> Self {
        MatchingWeights {
            uniform_mass: 0.8,
            activity_exponent: 2.0,
            low_activity_cutoff: 0.2,
        }
    }
}

/// Full description of one synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_players: usize,
    /// Probability of initial treatment assignment.
    pub p_treat: f64,
    /// Number of games to generate.
    pub n_games: usize,
    pub team_size: usize,
    /// Distribution of the number of treated slots per game, indices 0..=team_size.
    pub treated_count_probs: Vec<f64>,
    /// Beta shape parameters of the activity covariate.
    pub covariate_params: (f64, f64),
    /// Exposure truncation threshold K.
    pub truncation_k: u32,
    pub seed: u64,
    pub matching: MatchingWeights,
}

impl SimulationConfig {
    /// Baseline configuration; callers override games and slot probabilities.
    pub fn new(seed: u64) -> Self {
        SimulationConfig {
            n_players: 1000,
            p_treat: 0.5,
            n_games: 1000,
            team_size: 5,
            treated_count_probs: vec![0.4, 0.1, 0.1, 0.1, 0.1, 0.2],
            covariate_params: (0.5, 0.5),
            truncation_k: 10,
            seed,
            matching: MatchingWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.team_size == 0 {
            return Err(Error::config("team_size must be >= 1"));
        }
        if self.n_players < self.team_size {
            return Err(Error::config(format!(
                "n_players={} is below team_size={}",
                self.n_players, self.team_size
            )));
        }
        if !(0.0..=1.0).contains(&self.p_treat) {
            return Err(Error::config("p_treat must lie in [0, 1]"));
        }
        if self.treated_count_probs.len() != self.team_size + 1 {
            return Err(Error::config(format!(
                "treated_count_probs must have team_size+1={} entries, got {}",
                self.team_size + 1,
                self.treated_count_probs.len()
            )));
        }
        if self.treated_count_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config("treated_count_probs entries must lie in [0, 1]"));
        }
        let total: f64 = self.treated_count_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "treated_count_probs must sum to 1 (got {total})"
            )));
        }
        let (a, b) = self.covariate_params;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::config("covariate Beta parameters must be positive"));
        }
        if self.truncation_k == 0 {
            return Err(Error::config("truncation threshold K must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.matching.uniform_mass) {
            return Err(Error::config("matching.uniform_mass must lie in [0, 1]"));
        }
        if self.matching.activity_exponent <= 0.0 {
            return Err(Error::config("matching.activity_exponent must be positive"));
        }
        if !(0.0 < self.matching.low_activity_cutoff && self.matching.low_activity_cutoff <= 1.0) {
            return Err(Error::config("matching.low_activity_cutoff must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Mean of the covariate distribution.
    pub fn covariate_mean(&self) -> f64 {
        let (a, b) = self.covariate_params;
        a / (a + b)
    }

    /// Analytic per-level effect under this configuration's covariate law.
    pub fn analytic_tau(&self, m: u32) -> f64 {
        true_tau_with_mean(m, self.covariate_mean())
    }
}

/// The three interference scenarios: games count and per-game treated-slot
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CasePreset {
    I,
    II,
    III,
}

impl CasePreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Some(CasePreset::I),
            "II" | "2" => Some(CasePreset::II),
            "III" | "3" => Some(CasePreset::III),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CasePreset::I => "I",
            CasePreset::II => "II",
            CasePreset::III => "III",
        }
    }

    pub fn n_games(&self) -> usize {
        match self {
            CasePreset::I => 2000,
            CasePreset::II | CasePreset::III => 1000,
        }
    }

    pub fn treated_count_probs(&self) -> Vec<f64> {
        match self {
            CasePreset::I => vec![0.40, 0.10, 0.10, 0.10, 0.10, 0.20],
            CasePreset::II => vec![0.06, 0.02, 0.19, 0.23, 0.34, 0.16],
            CasePreset::III => vec![0.20, 0.34, 0.07, 0.16, 0.06, 0.17],
        }
    }

    /// Full configuration for this scenario under the given seed.
    pub fn config(&self, seed: u64) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(seed);
        cfg.n_games = self.n_games();
        cfg.treated_count_probs = self.treated_count_probs();
        cfg
    }
}

/// I.i.d. Bernoulli(p_treat) assignments.
///
/// A draw leaving either arm empty is an error rather than a silent redraw,
/// keeping the seed-to-data map stable.
pub fn assign_treatments<R: Rng>(config: &SimulationConfig, rng: &mut R) -> Result<Vec<u8>> {
    let z: Vec<u8> = (0..config.n_players)
        .map(|_| u8::from(rng.random::<f64>() < config.p_treat))
        .collect();
    let treated = z.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == z.len() {
        return Err(Error::data(format!(
            "degenerate assignment: {treated} of {} players treated; \
             increase n_players or adjust p_treat",
            z.len()
        )));
    }
    Ok(z)
}

/// I.i.d. Beta covariate draws, one per player.
pub fn draw_covariates<R: Rng>(config: &SimulationConfig, rng: &mut R) -> Result<Vec<f64>> {
    let (a, b) = config.covariate_params;
    let beta = Beta::new(a, b).map_err(|e| Error::config(format!("covariate Beta: {e}")))?;
    Ok((0..config.n_players).map(|_| beta.sample(rng)).collect())
}

/// A generated experiment plus matching diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedExperiment {
    pub dataset: ExperimentDataset,
    pub matching: MatchingDiagnostics,
}

/// End-to-end deterministic generation: assignments, covariates, matching,
/// exposure derivation, outcomes.
pub fn simulate_experiment(config: &SimulationConfig) -> Result<SimulatedExperiment> {
    config.validate()?;
    let seed = config.seed;

    let z = assign_treatments(config, &mut stream_rng(seed, "assignment"))?;
    let x = draw_covariates(config, &mut stream_rng(seed, "covariates"))?;

    let mut players: Vec<PlayerRecord> = (0..config.n_players)
        .map(|i| PlayerRecord {
            id: i as u64,
            z: z[i],
            x: vec![x[i]],
            m: 0,
            y: 0.0,
            y_pre: None,
        })
        .collect();

    let (sessions, diagnostics) =
        simulate_matching(&players, config, &mut stream_rng(seed, "matching"))?;

    let mut sessions = sessions;
    let exposure = crate::domain::count_exposures(&mut sessions, &players)?;
    for p in &mut players {
        p.m = exposure[&p.id];
    }

    let ys = generate_outcomes(&players, &mut stream_rng(seed, "outcomes"))?;
    for (p, y) in players.iter_mut().zip(ys) {
        p.y = y;
    }

    let dataset = ExperimentDataset {
        players,
        sessions,
        truncation_k: config.truncation_k,
    };
    Ok(SimulatedExperiment {
        dataset,
        matching: diagnostics,
    })
}
