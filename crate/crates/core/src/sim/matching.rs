//! Per-game team matching.
//!
//! Each game draws the number of treated slots from a preset distribution,
//! then fills slots by weighted sampling without replacement within the
//! treatment and control pools. Weights mix a uniform component with an
//! activity tilt:
//!
//! `w(i) = uniform_mass / |G| + (1 - uniform_mass) * x_i^gamma / sum_G x^gamma`
//!
//! Games that draw zero treated slots are filled only from low-activity
//! control players (x below a cutoff) with weight proportional to x; when too
//! few controls are eligible the treated-slot count is redrawn.

use rand::Rng;

use crate::domain::{truncate_exposure, ExposureCategory, GameSession, PlayerRecord};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, weighted_sample_without_replacement};

use super::SimulationConfig;

/// How many times a zero-treated game may be redrawn before giving up.
const PURE_CONTROL_RETRY_CAP: u32 = 100;

/// Counters describing fallbacks taken during matching.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchingDiagnostics {
    /// Zero-treated draws redrawn because too few low-activity controls exist.
    pub pure_control_redraws: u32,
}

/// Mixture weights over group members; `xs` holds the activity covariate of
/// each member. Returns an all-positive vector when `uniform_mass > 0`.
fn mixture_weights(xs: &[f64], uniform_mass: f64, exponent: f64) -> Vec<f64> {
    let n = xs.len();
    let tilt_mass = 1.0 - uniform_mass;
    let denom: f64 = xs.iter().map(|&x| x.max(0.0).powf(exponent)).sum();
    xs.iter()
        .map(|&x| {
            let uniform = uniform_mass / n as f64;
            let tilt = if denom > 0.0 {
                tilt_mass * x.max(0.0).powf(exponent) / denom
            } else {
                0.0
            };
            uniform + tilt
        })
        .collect()
}

/// Low-activity weights for zero-treated games: `x * 1{x < cutoff}`.
fn low_activity_weights(xs: &[f64], cutoff: f64) -> Vec<f64> {
    xs.iter()
        .map(|&x| if x < cutoff && x > 0.0 { x } else { 0.0 })
        .collect()
}

fn draw_treated_count<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Simulate the full game log for one experiment.
///
/// `players` must carry assignments and covariates; exposure counts are not
/// needed. Sessions are produced in game order with ids 0..n_games.
pub fn simulate_matching<R: Rng>(
    players: &[PlayerRecord],
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<(Vec<GameSession>, MatchingDiagnostics)> {
    let treated_idx: Vec<usize> = (0..players.len()).filter(|&i| players[i].z == 1).collect();
    let control_idx: Vec<usize> = (0..players.len()).filter(|&i| players[i].z == 0).collect();
    if treated_idx.len() < config.team_size || control_idx.len() < config.team_size {
        return Err(Error::data(format!(
            "matching needs at least team_size={} players in each arm (treated={}, control={})",
            config.team_size,
            treated_idx.len(),
            control_idx.len()
        )));
    }
    let x_of = |i: usize| -> f64 { players[i].x.first().copied().unwrap_or(0.0) };
    let treated_x: Vec<f64> = treated_idx.iter().map(|&i| x_of(i)).collect();
    let control_x: Vec<f64> = control_idx.iter().map(|&i| x_of(i)).collect();

    let w = &config.matching;
    let treated_weights = mixture_weights(&treated_x, w.uniform_mass, w.activity_exponent);
    let control_weights = mixture_weights(&control_x, w.uniform_mass, w.activity_exponent);
    let pure_control_weights = low_activity_weights(&control_x, w.low_activity_cutoff);
    let eligible_pure = pure_control_weights.iter().filter(|&&v| v > 0.0).count();

    let mut diagnostics = MatchingDiagnostics::default();
    let mut sessions = Vec::with_capacity(config.n_games);

    for game in 0..config.n_games {
        let mut n_treated = draw_treated_count(&config.treated_count_probs, rng);
        if n_treated == 0 && eligible_pure < config.team_size {
            // Not enough low-activity controls for an all-control game.
            let mut retries = 0;
            while n_treated == 0 {
                retries += 1;
                if retries > PURE_CONTROL_RETRY_CAP {
                    return Err(Error::data(format!(
                        "game {game}: only {eligible_pure} control players have activity \
                         below {} but {} are needed, and redrawing the treated-slot count \
                         kept yielding zero",
                        w.low_activity_cutoff, config.team_size
                    )));
                }
                diagnostics.pure_control_redraws += 1;
                n_treated = draw_treated_count(&config.treated_count_probs, rng);
            }
        }

        let mut roster = Vec::with_capacity(config.team_size);
        if n_treated == 0 {
            let picks =
                weighted_sample_without_replacement(&pure_control_weights, config.team_size, rng)?;
            roster.extend(picks.into_iter().map(|i| players[control_idx[i]].id));
        } else {
            let n_treated = n_treated.min(config.team_size);
            let picks = weighted_sample_without_replacement(&treated_weights, n_treated, rng)?;
            roster.extend(picks.into_iter().map(|i| players[treated_idx[i]].id));
            let n_control = config.team_size - n_treated;
            if n_control > 0 {
                let picks =
                    weighted_sample_without_replacement(&control_weights, n_control, rng)?;
                roster.extend(picks.into_iter().map(|i| players[control_idx[i]].id));
            }
        }
        sessions.push(GameSession {
            session_id: game as u64,
            roster,
            treated: false,
        });
    }
    Ok((sessions, diagnostics))
}

/// Empirical per-player exposure-category frequencies obtained by re-running
/// the matching process many times with fresh streams, holding assignments
/// and covariates fixed.
///
/// Row order follows `players`; columns follow the truncated scale
/// `0..=truncation_k`. Frequencies for a player sum to 1 over columns.
pub fn oracle_exposure_frequencies(
    players: &[PlayerRecord],
    config: &SimulationConfig,
    runs: u32,
    oracle_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if runs == 0 {
        return Err(Error::config("oracle needs at least one matching run"));
    }
    let k = config.truncation_k;
    let n_cols = k as usize + 1;
    let mut counts = vec![vec![0u32; n_cols]; players.len()];
    let mut work: Vec<PlayerRecord> = players.to_vec();
    for run in 0..runs {
        let mut rng = stream_rng(oracle_seed, &format!("oracle-matching-{run}"));
        let (mut sessions, _) = simulate_matching(players, config, &mut rng)?;
        let exposure = crate::domain::count_exposures(&mut sessions, players)?;
        for (row, p) in work.iter_mut().enumerate() {
            p.m = exposure[&p.id];
            let ExposureCategory(c) = truncate_exposure(p.m, k)?;
            counts[row][c as usize] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| f64::from(c) / f64::from(runs)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::CasePreset;

    fn toy_players(n: usize, treated_share: f64, seed: u64) -> Vec<PlayerRecord> {
        use rand::Rng;
        let mut rng = stream_rng(seed, "toy-players");
        (0..n as u64)
            .map(|id| PlayerRecord {
                id,
                z: u8::from(rng.random::<f64>() < treated_share),
                x: vec![rng.random::<f64>()],
                m: 0,
                y: 0.0,
                y_pre: None,
            })
            .collect()
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let xs = vec![0.1, 0.4, 0.9, 0.6];
        let w = mixture_weights(&xs, 0.8, 2.0);
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn case_presets_produce_requested_game_count() {
        let config = CasePreset::I.config(42);
        let players = toy_players(1000, 0.5, 3);
        let mut rng = stream_rng(42, "matching");
        let (sessions, _) = simulate_matching(&players, &config, &mut rng).unwrap();
        assert_eq!(sessions.len(), 2000);
        for s in &sessions {
            assert_eq!(s.roster.len(), 5);
            let mut ids = s.roster.clone();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 5, "roster members must be distinct");
        }
    }

    #[test]
    fn zero_treated_games_use_low_activity_controls() {
        let config = CasePreset::I.config(7);
        let players = toy_players(1000, 0.5, 11);
        let mut rng = stream_rng(7, "matching");
        let (sessions, _) = simulate_matching(&players, &config, &mut rng).unwrap();
        let by_id: std::collections::HashMap<u64, &PlayerRecord> =
            players.iter().map(|p| (p.id, p)).collect();
        let mut saw_pure_control = false;
        for s in &sessions {
            let any_treated = s.roster.iter().any(|id| by_id[id].z == 1);
            if !any_treated {
                saw_pure_control = true;
                for id in &s.roster {
                    let p = by_id[id];
                    assert_eq!(p.z, 0);
                    assert!(p.x[0] < 0.2, "x={} should be below cutoff", p.x[0]);
                }
            }
        }
        assert!(saw_pure_control, "case I draws 40% zero-treated games");
    }

    #[test]
    fn matching_is_deterministic_given_stream() {
        let config = CasePreset::II.config(5);
        let players = toy_players(1000, 0.5, 13);
        let mut r1 = stream_rng(5, "matching");
        let mut r2 = stream_rng(5, "matching");
        let (s1, _) = simulate_matching(&players, &config, &mut r1).unwrap();
        let (s2, _) = simulate_matching(&players, &config, &mut r2).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn redraw_fallback_triggers_when_few_low_activity_controls() {
        // All controls have x >= cutoff, so zero-treated draws must be redrawn.
        let mut players = toy_players(40, 0.5, 17);
        for p in players.iter_mut() {
            if p.z == 0 {
                p.x[0] = 0.5 + 0.4 * p.x[0];
            }
        }
        let mut config = CasePreset::I.config(3);
        config.n_players = 40;
        config.n_games = 50;
        let mut rng = stream_rng(3, "matching");
        let (sessions, diag) = simulate_matching(&players, &config, &mut rng).unwrap();
        assert_eq!(sessions.len(), 50);
        assert!(diag.pure_control_redraws > 0);
        let by_id: std::collections::HashMap<u64, u8> =
            players.iter().map(|p| (p.id, p.z)).collect();
        for s in &sessions {
            assert!(s.roster.iter().any(|id| by_id[id] == 1));
        }
    }

    #[test]
    fn oracle_frequencies_are_distributions() {
        let mut config = CasePreset::III.config(2);
        config.n_games = 60;
        config.n_players = 60;
        let players = toy_players(60, 0.5, 19);
        let freqs = oracle_exposure_frequencies(&players, &config, 40, 99).unwrap();
        assert_eq!(freqs.len(), players.len());
        for row in &freqs {
            assert_eq!(row.len(), config.truncation_k as usize + 1);
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
