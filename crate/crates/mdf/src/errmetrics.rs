//! Error accounting for a single decision and rate estimation across
//! replicates.
//!
//! Conventions: the false discovery proportion is 0 when nothing is rejected,
//! and the missed proportion is 0 when there are no alternatives, so both are
//! always well-defined.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procedures::ProcedureOutcome;

/// Which tests are truly null and which carry an effect. The two sets must
/// partition the battery's ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub null_set: BTreeSet<String>,
    pub alt_set: BTreeSet<String>,
}

impl GroundTruth {
    pub fn new(null_set: BTreeSet<String>, alt_set: BTreeSet<String>) -> Result<Self> {
        if let Some(shared) = null_set.intersection(&alt_set).next() {
            return Err(Error::IdMismatch(format!(
                "'{shared}' appears in both the null and alternative sets"
            )));
        }
        if null_set.is_empty() && alt_set.is_empty() {
            return Err(Error::IdMismatch("ground truth is empty".into()));
        }
        Ok(GroundTruth { null_set, alt_set })
    }

    pub fn len(&self) -> usize {
        self.null_set.len() + self.alt_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.null_set.contains(id) || self.alt_set.contains(id)
    }
}

/// Error tallies of one decision against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCounts {
    /// False rejections.
    pub s0: usize,
    /// Total rejections.
    pub s: usize,
    /// False discovery proportion s0/s, 0 when s = 0.
    pub fdp: f64,
    /// Fraction of alternatives not rejected, 0 when there are none.
    pub missed_prop: f64,
}

pub fn count_errors(outcome: &ProcedureOutcome, truth: &GroundTruth) -> Result<ErrorCounts> {
    count_rejections(&outcome.rejected, truth)
}

pub fn count_rejections(rejected: &BTreeSet<String>, truth: &GroundTruth) -> Result<ErrorCounts> {
    for id in rejected {
        if !truth.contains(id) {
            return Err(Error::IdMismatch(format!(
                "rejected id '{id}' is not in the ground truth"
            )));
        }
    }
    let s0 = rejected.intersection(&truth.null_set).count();
    let s = rejected.len();
    let fdp = if s == 0 { 0.0 } else { s0 as f64 / s as f64 };
    let discovered = rejected.intersection(&truth.alt_set).count();
    let n_alt = truth.alt_set.len();
    let missed_prop = if n_alt == 0 {
        0.0
    } else {
        (n_alt - discovered) as f64 / n_alt as f64
    };
    Ok(ErrorCounts {
        s0,
        s,
        fdp,
        missed_prop,
    })
}

/// Monte Carlo rate estimates with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimates {
    pub fwer_hat: f64,
    pub fdr_hat: f64,
    pub mdr_hat: f64,
    pub se_fwer: f64,
    pub se_fdr: f64,
    pub se_mdr: f64,
    pub replicates: usize,
}

/// Means and standard errors of the per-replicate error indicators:
/// I{s0 >= 1} for the family-wise rate, fdp for the false discovery rate,
/// missed_prop for the missed discovery rate. Two-pass accumulation keeps
/// the result independent of summation quirks; standard errors use the
/// n-1 sample variance.
pub fn estimate_rates(counts: &[ErrorCounts]) -> Result<RateEstimates> {
    if counts.is_empty() {
        return Err(Error::Config("no replicates to summarize".into()));
    }
    let n = counts.len();
    let fwer: Vec<f64> = counts.iter().map(|c| (c.s0 >= 1) as u8 as f64).collect();
    let fdp: Vec<f64> = counts.iter().map(|c| c.fdp).collect();
    let missed: Vec<f64> = counts.iter().map(|c| c.missed_prop).collect();
    let (fwer_hat, se_fwer) = mean_se(&fwer);
    let (fdr_hat, se_fdr) = mean_se(&fdp);
    let (mdr_hat, se_mdr) = mean_se(&missed);
    Ok(RateEstimates {
        fwer_hat,
        fdr_hat,
        mdr_hat,
        se_fwer,
        se_fdr,
        se_mdr,
        replicates: n,
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn worked_example() {
        let truth = GroundTruth::new(ids(&["t1", "t2", "t3"]), ids(&["t4", "t5"])).unwrap();
        let counts = count_rejections(&ids(&["t3", "t4"]), &truth).unwrap();
        assert_eq!(counts.s0, 1);
        assert_eq!(counts.s, 2);
        assert_eq!(counts.fdp, 0.5);
        assert_eq!(counts.missed_prop, 0.5);
    }

    #[test]
    fn empty_rejection_conventions() {
        let truth = GroundTruth::new(ids(&["a"]), ids(&["b"])).unwrap();
        let counts = count_rejections(&BTreeSet::new(), &truth).unwrap();
        assert_eq!(counts.fdp, 0.0);
        assert_eq!(counts.missed_prop, 1.0);

        // All-null truth: missed proportion defaults to 0.
        let truth = GroundTruth::new(ids(&["a", "b"]), BTreeSet::new()).unwrap();
        let counts = count_rejections(&ids(&["a"]), &truth).unwrap();
        assert_eq!(counts.fdp, 1.0);
        assert_eq!(counts.missed_prop, 0.0);
    }

    #[test]
    fn truth_validation() {
        assert!(GroundTruth::new(ids(&["a"]), ids(&["a"])).is_err());
        assert!(GroundTruth::new(BTreeSet::new(), BTreeSet::new()).is_err());
        let truth = GroundTruth::new(ids(&["a"]), ids(&["b"])).unwrap();
        assert!(count_rejections(&ids(&["zzz"]), &truth).is_err());
    }

    #[test]
    fn all_null_identity_fwer_equals_fdr() {
        // Under an all-null truth fdp is the rejection indicator, so the two
        // rate estimates coincide replicate by replicate.
        let truth = GroundTruth::new(ids(&["a", "b", "c"]), BTreeSet::new()).unwrap();
        let counts: Vec<ErrorCounts> = [ids(&[]), ids(&["a"]), ids(&["a", "b"]), ids(&[])]
            .iter()
            .map(|r| count_rejections(r, &truth).unwrap())
            .collect();
        let rates = estimate_rates(&counts).unwrap();
        assert_eq!(rates.fwer_hat, rates.fdr_hat);
        assert_eq!(rates.se_fwer, rates.se_fdr);
        assert_eq!(rates.fwer_hat, 0.5);
    }

    #[test]
    fn rate_estimates_match_hand_computation() {
        let truth = GroundTruth::new(ids(&["n1"]), ids(&["a1"])).unwrap();
        let counts: Vec<ErrorCounts> = [ids(&["n1", "a1"]), ids(&["a1"])]
            .iter()
            .map(|r| count_rejections(r, &truth).unwrap())
            .collect();
        let rates = estimate_rates(&counts).unwrap();
        assert_eq!(rates.fwer_hat, 0.5);
        assert_eq!(rates.fdr_hat, 0.25);
        assert_eq!(rates.mdr_hat, 0.0);
        // SE of {1, 0}: sd = sqrt(0.5)/... var = 0.5, se = sqrt(0.5/2) = 0.5.
        assert!((rates.se_fwer - 0.5).abs() <= 1e-15);
        assert_eq!(rates.replicates, 2);
        assert!(estimate_rates(&[]).is_err());
    }
}
