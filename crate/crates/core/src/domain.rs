//! Core data model: players, game sessions, the contamination rule, group
//! classification, and exposure truncation.
//!
//! A session is treated iff at least one roster member was initially assigned
//! to treatment; every member of a treated session receives the treatment in
//! that session. A player's exposure count `m` is the number of treated
//! sessions they appear in. All operations here are pure functions over
//! immutable inputs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRecord {
    /// Unique unit identifier.
    pub id: u64,
    /// Initial assignment: 1 = treatment, 0 = control.
    pub z: u8,
    /// Covariate vector (single feature in simulation, several in ingestion).
    pub x: Vec<f64>,
    /// Number of treated sessions the player appears in (derived).
    pub m: u32,
    /// Observed outcome, nonnegative.
    pub y: f64,
    /// Optional pre-experiment outcome.
    pub y_pre: Option<f64>,
}

impl PlayerRecord {
    pub fn validate(&self) -> Result<()> {
        if self.z > 1 {
            return Err(Error::data(format!("player {}: z must be 0 or 1", self.id)));
        }
        if !(self.y.is_finite() && self.y >= 0.0) {
            return Err(Error::data(format!(
                "player {}: outcome must be a nonnegative finite number",
                self.id
            )));
        }
        if let Some(p) = self.y_pre {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::data(format!(
                    "player {}: pre-period outcome must be nonnegative",
                    self.id
                )));
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("player {}: non-finite covariate", self.id)));
        }
        Ok(())
    }
}

/// One ephemeral team roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSession {
    pub session_id: u64,
    /// Distinct player ids, one per slot.
    pub roster: Vec<u64>,
    /// True iff at least one roster member has z = 1 (derived).
    pub treated: bool,
}

/// Receipt group of a player after the experiment ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupLabel {
    /// z = 1.
    Treatment,
    /// z = 0 and m > 0.
    ControlMixed,
    /// z = 0 and m = 0.
    ControlControl,
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupLabel::Treatment => "treatment",
            GroupLabel::ControlMixed => "control-mixed",
            GroupLabel::ControlControl => "control-control",
        };
        f.write_str(s)
    }
}

/// Truncated exposure level: raw counts below the threshold map to
/// themselves, everything at or above maps to the single top bucket.
///
/// The inner value never exceeds the truncation threshold K, and a value of
/// exactly K denotes the bucket "K+". `Ord` therefore gives the natural
/// ordering with the top bucket as maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExposureCategory(pub u32);

impl ExposureCategory {
    /// Human-readable label, e.g. "3" or "10+" given threshold `k`.
    pub fn label(&self, k: u32) -> String {
        if self.0 >= k {
            format!("{k}+")
        } else {
            format!("{}", self.0)
        }
    }

    pub fn is_top_bucket(&self, k: u32) -> bool {
        self.0 >= k
    }
}

/// Map a raw exposure count to its truncated category.
pub fn truncate_exposure(m: u32, k: u32) -> Result<ExposureCategory> {
    if k == 0 {
        return Err(Error::config("truncation threshold K must be >= 1"));
    }
    Ok(ExposureCategory(m.min(k)))
}

/// All categories of the truncated scale 0, 1, ..., K-1, K+.
pub fn all_categories(k: u32) -> Vec<ExposureCategory> {
    (0..=k).map(ExposureCategory).collect()
}

/// Derive session treatment flags and per-player exposure counts.
///
/// Returns the exposure table (player id -> m). Players appearing in no
/// session get m = 0. Errors on a roster id missing from `players` (naming
/// the session) and on a duplicate id within one roster.
pub fn count_exposures(
    sessions: &mut [GameSession],
    players: &[PlayerRecord],
) -> Result<BTreeMap<u64, u32>> {
    let z_by_id: HashMap<u64, u8> = players.iter().map(|p| (p.id, p.z)).collect();
    let mut exposure: BTreeMap<u64, u32> = players.iter().map(|p| (p.id, 0u32)).collect();

    for session in sessions.iter_mut() {
        let mut seen: HashSet<u64> = HashSet::with_capacity(session.roster.len());
        let mut any_treated = false;
        for &pid in &session.roster {
            if !seen.insert(pid) {
                return Err(Error::data(format!(
                    "session {}: player {} appears twice in the roster",
                    session.session_id, pid
                )));
            }
            match z_by_id.get(&pid) {
                Some(&z) => any_treated |= z == 1,
                None => {
                    return Err(Error::data(format!(
                        "session {}: roster references unknown player {}",
                        session.session_id, pid
                    )))
                }
            }
        }
        session.treated = any_treated;
        if any_treated {
            for &pid in &session.roster {
                *exposure.get_mut(&pid).expect("id checked above") += 1;
            }
        }
    }
    Ok(exposure)
}

/// Group sizes alongside the classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSizes {
    pub treatment: usize,
    pub control_mixed: usize,
    pub control_control: usize,
}

impl GroupSizes {
    pub fn total(&self) -> usize {
        self.treatment + self.control_mixed + self.control_control
    }
}

/// Classify every player into its receipt group. Requires exposures to be
/// already counted (`m` populated). Total on valid players.
pub fn classify_groups(players: &[PlayerRecord]) -> (BTreeMap<u64, GroupLabel>, GroupSizes) {
    let mut labels = BTreeMap::new();
    let mut sizes = GroupSizes {
        treatment: 0,
        control_mixed: 0,
        control_control: 0,
    };
    for p in players {
        let label = if p.z == 1 {
            sizes.treatment += 1;
            GroupLabel::Treatment
        } else if p.m > 0 {
            sizes.control_mixed += 1;
            GroupLabel::ControlMixed
        } else {
            sizes.control_control += 1;
            GroupLabel::ControlControl
        };
        labels.insert(p.id, label);
    }
    (labels, sizes)
}

/// A fully assembled experiment: players with derived exposures plus the
/// session log that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDataset {
    pub players: Vec<PlayerRecord>,
    pub sessions: Vec<GameSession>,
    /// Truncation threshold used when categorizing exposures.
    pub truncation_k: u32,
}

impl ExperimentDataset {
    /// Build a dataset, deriving session flags and exposure counts from the
    /// session log. Any pre-populated `m` values are overwritten.
    pub fn assemble(
        mut players: Vec<PlayerRecord>,
        mut sessions: Vec<GameSession>,
        truncation_k: u32,
    ) -> Result<Self> {
        if truncation_k == 0 {
            return Err(Error::config("truncation threshold K must be >= 1"));
        }
        for p in &players {
            p.validate()?;
        }
        let exposure = count_exposures(&mut sessions, &players)?;
        for p in &mut players {
            p.m = exposure[&p.id];
        }
        Ok(ExperimentDataset {
            players,
            sessions,
            truncation_k,
        })
    }

    pub fn group_sizes(&self) -> GroupSizes {
        classify_groups(&self.players).1
    }

    pub fn labels(&self) -> BTreeMap<u64, GroupLabel> {
        classify_groups(&self.players).0
    }

    /// Truncated category of player `p` under this dataset's threshold.
    pub fn category_of(&self, p: &PlayerRecord) -> ExposureCategory {
        truncate_exposure(p.m, self.truncation_k).expect("K validated at assembly")
    }

    pub fn categories(&self) -> Vec<ExposureCategory> {
        all_categories(self.truncation_k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn player(id: u64, z: u8) -> PlayerRecord {
        PlayerRecord {
            id,
            z,
            x: vec![0.5],
            m: 0,
            y: 1.0,
            y_pre: None,
        }
    }

    fn session(id: u64, roster: &[u64]) -> GameSession {
        GameSession {
            session_id: id,
            roster: roster.to_vec(),
            treated: false,
        }
    }

    #[test]
    fn all_control_session_is_untreated() {
        let players: Vec<_> = (0..5).map(|i| player(i, 0)).collect();
        let mut sessions = vec![session(0, &[0, 1, 2, 3, 4])];
        let exposure = count_exposures(&mut sessions, &players).unwrap();
        assert!(!sessions[0].treated);
        assert!(exposure.values().all(|&m| m == 0));
    }

    #[test]
    fn single_treated_member_contaminates_whole_roster() {
        let mut players: Vec<_> = (0..5).map(|i| player(i, 0)).collect();
        players[2].z = 1;
        let mut sessions = vec![session(0, &[0, 1, 2, 3, 4])];
        let exposure = count_exposures(&mut sessions, &players).unwrap();
        assert!(sessions[0].treated);
        assert!(exposure.values().all(|&m| m == 1));
    }

    #[test]
    fn exposure_counts_only_treated_sessions() {
        // Player 0 is control; joins 3 treated sessions and 2 all-control ones.
        let mut players: Vec<_> = (0..6).map(|i| player(i, 0)).collect();
        players[5].z = 1;
        let mut sessions = vec![
            session(0, &[0, 1, 2, 3, 5]),
            session(1, &[0, 1, 2, 4, 5]),
            session(2, &[0, 2, 3, 4, 5]),
            session(3, &[0, 1, 2, 3, 4]),
            session(4, &[0, 1, 2, 3, 4]),
        ];
        let exposure = count_exposures(&mut sessions, &players).unwrap();
        assert_eq!(exposure[&0], 3);
        assert_eq!(exposure[&4], 2); // in sessions 1, 2 (treated) and 3, 4 (not)
    }

    #[test]
    fn unknown_roster_id_errors_with_session() {
        let players: Vec<_> = (0..4).map(|i| player(i, 0)).collect();
        let mut sessions = vec![session(7, &[0, 1, 2, 99])];
        let err = count_exposures(&mut sessions, &players).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("session 7"), "{msg}");
        assert!(msg.contains("99"), "{msg}");
    }

    #[test]
    fn duplicate_roster_id_errors() {
        let players: Vec<_> = (0..4).map(|i| player(i, 0)).collect();
        let mut sessions = vec![session(3, &[0, 1, 1, 2])];
        let err = count_exposures(&mut sessions, &players).unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
    }

    #[test]
    fn classification_follows_definitions() {
        let mut p1 = player(1, 1);
        p1.m = 7;
        let p2 = player(2, 0); // m = 0
        let mut p3 = player(3, 0);
        p3.m = 2;
        let (labels, sizes) = classify_groups(&[p1, p2, p3]);
        assert_eq!(labels[&1], GroupLabel::Treatment);
        assert_eq!(labels[&2], GroupLabel::ControlControl);
        assert_eq!(labels[&3], GroupLabel::ControlMixed);
        assert_eq!(sizes.total(), 3);
        assert_eq!(sizes.treatment, 1);
        assert_eq!(sizes.control_mixed, 1);
        assert_eq!(sizes.control_control, 1);
    }

    #[test]
    fn truncation_maps_below_threshold_to_itself() {
        assert_eq!(truncate_exposure(3, 10).unwrap(), ExposureCategory(3));
        assert_eq!(truncate_exposure(15, 10).unwrap(), ExposureCategory(10));
        assert_eq!(truncate_exposure(25, 21).unwrap(), ExposureCategory(21));
        assert_eq!(ExposureCategory(10).label(10), "10+");
        assert_eq!(ExposureCategory(3).label(10), "3");
    }

    #[test]
    fn truncation_rejects_zero_threshold() {
        assert!(truncate_exposure(3, 0).is_err());
    }

    /// Brute-force reference: direct double loop over (player, session).
    fn brute_force_exposures(
        sessions: &[GameSession],
        players: &[PlayerRecord],
    ) -> BTreeMap<u64, u32> {
        let mut out: BTreeMap<u64, u32> = players.iter().map(|p| (p.id, 0)).collect();
        for p in players {
            for s in sessions {
                if !s.roster.contains(&p.id) {
                    continue;
                }
                let any_treated = s
                    .roster
                    .iter()
                    .any(|pid| players.iter().any(|q| q.id == *pid && q.z == 1));
                if any_treated {
                    *out.get_mut(&p.id).unwrap() += 1;
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn count_matches_brute_force(
            n_players in 2usize..20,
            n_sessions in 0usize..10,
            seed in 0u64..10_000,
        ) {
            use rand::seq::SliceRandom;
            use rand::Rng;
            let mut rng = crate::rng::stream_rng(seed, "domain-prop");
            let players: Vec<_> = (0..n_players as u64)
                .map(|i| {
                    let z = u8::from(rng.random::<f64>() < 0.5);
                    player(i, z)
                })
                .collect();
            let mut sessions = Vec::new();
            for sid in 0..n_sessions as u64 {
                let roster_size = rng.random_range(1..=n_players.min(5));
                let mut ids: Vec<u64> = (0..n_players as u64).collect();
                ids.shuffle(&mut rng);
                sessions.push(session(sid, &ids[..roster_size]));
            }
            let got = count_exposures(&mut sessions, &players).unwrap();
            let want = brute_force_exposures(&sessions, &players);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn partition_covers_everyone(
            n in 1usize..50,
            seed in 0u64..10_000,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream_rng(seed, "partition-prop");
            let players: Vec<_> = (0..n as u64)
                .map(|i| {
                    let mut p = player(i, u8::from(rng.random::<f64>() < 0.4));
                    p.m = rng.random_range(0..6);
                    if p.z == 1 && p.m == 0 {
                        // treated players may legitimately have m = 0 (no sessions)
                    }
                    p
                })
                .collect();
            let (labels, sizes) = classify_groups(&players);
            prop_assert_eq!(labels.len(), n);
            prop_assert_eq!(sizes.total(), n);
        }

        #[test]
        fn truncation_is_monotone(m1 in 0u32..60, m2 in 0u32..60, k in 1u32..25) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            let a = truncate_exposure(lo, k).unwrap();
            let b = truncate_exposure(hi, k).unwrap();
            prop_assert!(a <= b);
        }
    }
}
