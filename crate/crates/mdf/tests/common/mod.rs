//! Shared helpers for the integration suites: seeded instance generators
//! and a Kolmogorov-Smirnov distance for distribution checks.

#![allow(dead_code)] // each suite uses its own subset

use mdf::normal::{std_normal_quantile, std_normal_sf};
use mdf::pvalues::{TestBattery, TestRecord};
use mdf::sizefam::SizeFamily;
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Battery of `m` tests: each is null with probability 0.6 (uniform p) or a
/// 2.5-sigma shift alternative (one-sided p).
pub fn random_battery(r: &mut ChaCha8Rng, m: usize) -> TestBattery {
    let records = (0..m)
        .map(|i| {
            let p = if r.gen_bool(0.4) {
                let z = std_normal_quantile(r.sample::<f64, _>(Open01)) + 2.5;
                std_normal_sf(z)
            } else {
                r.sample::<f64, _>(Open01)
            };
            TestRecord {
                id: format!("t{:05}", i + 1),
                p,
                z: None,
            }
        })
        .collect();
    TestBattery::new(records).expect("generated battery is valid")
}

/// Positive exponents summing to 1.
pub fn random_weights(r: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| r.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn random_weighted_family(r: &mut ChaCha8Rng, m: usize) -> SizeFamily {
    SizeFamily::weighted(&random_weights(r, m)).expect("weights are in (0, 1]")
}

/// Two-sided KS distance of `sorted` against the uniform on [0, 1].
pub fn ks_uniform_distance(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Asymptotic KS critical value at level 0.001.
pub fn ks_critical_001(n: usize) -> f64 {
    1.9495 / (n as f64).sqrt()
}
