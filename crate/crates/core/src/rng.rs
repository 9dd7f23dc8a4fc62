//! Seed-stream derivation and weighted sampling.
//!
//! A single master seed spawns independent named sub-streams so that, for
//! example, changing the number of games never perturbs the covariate draws.
//! Replicates get their own derived seeds and are fully independent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// FNV-1a over the stream name; stable, dependency-free.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for a named sub-stream of `master`.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a(name.as_bytes()))
}

/// RNG for a named sub-stream of `master`.
pub fn stream_rng(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, name))
}

/// Seed for replicate `index` of a Monte Carlo run under `master`.
pub fn replicate_seed(master: u64, index: u32) -> u64 {
    splitmix64(stream_seed(master, "replicate") ^ u64::from(index).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Draw `k` distinct indices with probability proportional to `weights`,
/// without replacement (Efraimidis–Spirakis exponential keys).
///
/// Zero-weight entries are never selected. Exactly one uniform variate is
/// consumed per entry regardless of its weight, so the stream position after
/// the call depends only on `weights.len()`.
pub fn weighted_sample_without_replacement<R: Rng>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut positive = 0usize;
    let mut total = 0.0f64;
    for (i, &w) in weights.iter().enumerate() {
        let u: f64 = rng.random::<f64>();
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::data(format!(
                "sampling weight {w} at index {i} is negative or non-finite"
            )));
        }
        if w > 0.0 {
            positive += 1;
            total += w;
            // Exponential key E/w via inverse CDF; smaller key = chosen earlier.
            let e = -(1.0 - u).ln();
            keyed.push((e / w, i));
        }
    }
    if total <= 0.0 {
        return Err(Error::data("total sampling weight is zero".to_string()));
    }
    if positive < k {
        return Err(Error::data(format!(
            "cannot sample {k} distinct items: only {positive} have positive weight"
        )));
    }
    // Partial selection of the k smallest keys, then an ordered prefix so the
    // output is stable.
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).expect("keys are finite")
        });
        keyed.truncate(k);
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("keys are finite"));
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = stream_rng(7, "covariates");
        let mut b = stream_rng(7, "covariates");
        let mut c = stream_rng(7, "matching");
        let xa: f64 = a.random();
        let xb: f64 = b.random();
        let xc: f64 = c.random();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn replicate_seeds_distinct() {
        let seeds: Vec<u64> = (0..100).map(|i| replicate_seed(42, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }

    #[test]
    fn sample_respects_zero_weights() {
        let mut rng = stream_rng(1, "t");
        let w = vec![0.0, 1.0, 0.0, 1.0, 1.0];
        for _ in 0..50 {
            let picks = weighted_sample_without_replacement(&w, 3, &mut rng).unwrap();
            assert_eq!(picks.len(), 3);
            for &i in &picks {
                assert!(w[i] > 0.0);
            }
        }
    }

    #[test]
    fn sample_errors_when_not_enough_support() {
        let mut rng = stream_rng(1, "t");
        let w = vec![0.0, 1.0];
        assert!(weighted_sample_without_replacement(&w, 2, &mut rng).is_err());
        assert!(weighted_sample_without_replacement(&[0.0, 0.0], 1, &mut rng).is_err());
    }

    #[test]
    fn sample_frequencies_track_weights() {
        let mut rng = stream_rng(9, "freq");
        let w = vec![1.0, 2.0, 4.0];
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            let picks = weighted_sample_without_replacement(&w, 1, &mut rng).unwrap();
            counts[picks[0]] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        let p2 = counts[2] as f64 / n as f64;
        assert!((p0 - 1.0 / 7.0).abs() < 0.01, "p0={p0}");
        assert!((p2 - 4.0 / 7.0).abs() < 0.01, "p2={p2}");
    }
}
