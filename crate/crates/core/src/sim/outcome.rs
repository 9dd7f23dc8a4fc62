//! Outcome model and analytic ground truth.
//!
//! Outcomes are exponential with mean
//! `lambda(m, x) = 0.5*sqrt(m) + 2x + 0.5*x*1{x > 0.5} + 0.5*sqrt(m)*x`,
//! so they increase in both the exposure count and the activity covariate.
//! "Exponential(1/lambda)" is read as rate 1/lambda, i.e. mean lambda.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::domain::PlayerRecord;
use crate::error::{Error, Result};

/// Mean outcome at exposure count `m` and covariate `x`.
///
/// The indicator is strict: exactly 0.5 does not activate the kink.
pub fn lambda_mean(m: u32, x: f64) -> f64 {
    let sm = f64::from(m).sqrt();
    let kink = if x > 0.5 { 0.5 * x } else { 0.0 };
    0.5 * sm + 2.0 * x + kink + 0.5 * sm * x
}

/// Expected outcome under no exposure: `lambda(0, x)`.
pub fn true_mu(x: f64) -> f64 {
    lambda_mean(0, x)
}

/// Analytic per-level effect when X ~ Beta with mean `x_mean`:
/// `tau(m) = E[lambda(m, X) - lambda(0, X)] = 0.5*sqrt(m)*(1 + E[X])`.
pub fn true_tau_with_mean(m: u32, x_mean: f64) -> f64 {
    0.5 * f64::from(m).sqrt() * (1.0 + x_mean)
}

/// Analytic per-level effect under the default covariate law Beta(0.5, 0.5):
/// `tau(m) = 0.75*sqrt(m)`.
pub fn true_tau(m: u32) -> f64 {
    true_tau_with_mean(m, 0.5)
}

/// Draw one outcome per player from Exponential(mean = lambda(m, x)).
///
/// Uses the first covariate as the activity feature. Consumes exactly one
/// draw per player, in player order.
pub fn generate_outcomes<R: Rng>(players: &[PlayerRecord], rng: &mut R) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(players.len());
    for p in players {
        let x = *p.x.first().ok_or_else(|| {
            Error::data(format!("player {}: no covariate for outcome model", p.id))
        })?;
        let mean = lambda_mean(p.m, x);
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::data(format!(
                "player {}: outcome mean {mean} is not positive (m={}, x={x})",
                p.id, p.m
            )));
        }
        let dist = Exp::new(1.0 / mean)
            .map_err(|e| Error::estimation(format!("exponential rate invalid: {e}")))?;
        out.push(dist.sample(rng));
    }
    Ok(out)
}

/// Brute-force potential-outcome contrast: average of
/// `lambda(m, x) - lambda(0, x)` over the supplied covariates.
pub fn potential_outcome_contrast(m: u32, xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let sum: f64 = xs.iter().map(|&x| lambda_mean(m, x) - lambda_mean(0, x)).sum();
    sum / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn lambda_hand_values() {
        // m=0, x=0.5: indicator inactive at the boundary -> 2*0.5 = 1.0
        assert!((lambda_mean(0, 0.5) - 1.0).abs() < 1e-15);
        // m=4, x=0.25: 0.5*2 + 0.5 + 0 + 0.5*2*0.25 = 1.75
        assert!((lambda_mean(4, 0.25) - 1.75).abs() < 1e-15);
        // kink active above 0.5
        assert!((lambda_mean(0, 0.75) - (1.5 + 0.375)).abs() < 1e-15);
    }

    #[test]
    fn mu_hand_values() {
        assert!((true_mu(0.25) - 0.5).abs() < 1e-15);
        assert!((true_mu(0.75) - 1.875).abs() < 1e-15);
        assert_eq!(true_mu(0.0), 0.0);
    }

    #[test]
    fn tau_hand_values() {
        assert_eq!(true_tau(0), 0.0);
        assert!((true_tau(1) - 0.75).abs() < 1e-12);
        assert!((true_tau(4) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tau_is_concave_increasing() {
        let mut prev_gap = f64::INFINITY;
        for m in 0..20 {
            let gap = true_tau(m + 1) - true_tau(m);
            assert!(gap > 0.0);
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn outcome_means_match_lambda() {
        let mut rng = stream_rng(11, "outcome-test");
        let n = 1_000_000usize;
        // m=0, x=0.5 -> mean 1.0; m=4, x=0.25 -> mean 1.75
        for (m, x, want) in [(0u32, 0.5, 1.0), (4, 0.25, 1.75)] {
            let players: Vec<_> = (0..n as u64)
                .map(|id| PlayerRecord {
                    id,
                    z: 0,
                    x: vec![x],
                    m,
                    y: 0.0,
                    y_pre: None,
                })
                .collect();
            let ys = generate_outcomes(&players, &mut rng).unwrap();
            assert!(ys.iter().all(|&y| y > 0.0));
            let mean = ys.iter().sum::<f64>() / n as f64;
            assert!((mean - want).abs() < 0.01, "m={m} x={x}: mean={mean}");
        }
    }

    #[test]
    fn zero_mean_is_rejected() {
        let players = vec![PlayerRecord {
            id: 0,
            z: 0,
            x: vec![0.0],
            m: 0,
            y: 0.0,
            y_pre: None,
        }];
        let mut rng = stream_rng(1, "z");
        assert!(generate_outcomes(&players, &mut rng).is_err());
    }
}
