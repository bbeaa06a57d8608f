//! Multiple decision procedures.
//!
//! Two budget-scan procedures over generalized p-values:
//!
//! * the step-down scan (`reject_dagger`), which spends the budget until the
//!   survival product of the not-yet-rejected tests drops below 1 - q and
//!   controls the family-wise error rate at q;
//! * the step-up scan (`reject_star`), which finds the largest budget whose
//!   total spent size stays within q times the rejection count and controls
//!   the false discovery rate at q.
//!
//! Each has two equivalent routes: a crossing-time threshold on the budget
//! axis (`alpha_dagger` / `alpha_star`) and an anti-rank cutoff
//! (`j_dagger` / `j_star`). They must select identical rejection sets; the
//! crossing-time route is bisected to 1e-12 and always returns a point where
//! its defining inequality still holds, so the agreement is exact.
//!
//! All comparisons run on the log-survival scale ln(1 - alpha), where the
//! budget axis keeps full resolution arbitrarily close to alpha = 1; the
//! plain-scale thresholds in outcomes are derived from it for reporting.
//! The `*_ln_surv` variants of the crossing times expose that scale.
//!
//! `holm_sidak_stepdown` and `bh_stepup` are the classical references the
//! scans collapse to under an equal-allocation family.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pvalues::{anti_ranks, generalized_pvalues, GeneralizedPValues, TestBattery};
use crate::sizefam::SizeFamily;

const BISECT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    Dagger,
    Star,
    HolmSidak,
    Bh,
}

impl Procedure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Procedure::Dagger => "dagger",
            Procedure::Star => "star",
            Procedure::HolmSidak => "holm-sidak",
            Procedure::Bh => "bh",
        }
    }
}

impl std::str::FromStr for Procedure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dagger" => Ok(Procedure::Dagger),
            "star" => Ok(Procedure::Star),
            "holm-sidak" => Ok(Procedure::HolmSidak),
            "bh" => Ok(Procedure::Bh),
            other => Err(Error::Config(format!(
                "unknown procedure '{other}' (expected dagger|star|holm-sidak|bh)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureOutcome {
    pub procedure: Procedure,
    pub q: f64,
    /// Number of rejections.
    #[serde(rename = "J")]
    pub j: usize,
    /// Budget level at which the decision is taken. For the reference
    /// procedures this is on the ordinary p-value scale instead.
    pub alpha_threshold: f64,
    /// Half-open interval [a_(J), a_(J+1)) of ordered (generalized) p-values
    /// containing the threshold, with a_(0) = 0 and a_(M+1) = 1.
    pub alpha_interval: (f64, f64),
    pub rejected: BTreeSet<String>,
    /// Per-test sizes A_m(alpha_threshold) in battery order; empty for the
    /// reference procedures, which use no size family.
    pub sizes_at_threshold: Vec<f64>,
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(Error::Domain(format!("q out of [0,1]: {q}")));
    }
    Ok(())
}

/// log prod_{r >= from} (1 - A_(r)(alpha)) over anti-rank positions at
/// ls = ln(1 - alpha); the survival product of the tests still in play at
/// step `from`.
fn tail_log_product(gp: &GeneralizedPValues, family: &SizeFamily, from: usize, ls: f64) -> f64 {
    gp.antirank[from..]
        .iter()
        .map(|&m| family.member(m).ln_surv_size(ls))
        .sum()
}

/// Step-down rejection count: the largest k such that for every j <= k the
/// survival product of tests j..M at the j-th ordered generalized p-value
/// stays at or above 1 - q.
pub fn j_dagger(gp: &GeneralizedPValues, family: &SizeFamily, q: f64) -> Result<usize> {
    check_q(q)?;
    check_lengths(gp, family)?;
    let log_target = (-q).ln_1p();
    for j in 0..gp.len() {
        if tail_log_product(gp, family, j, gp.ordered_ln_surv(j)) < log_target {
            return Ok(j);
        }
    }
    Ok(gp.len())
}

/// Step-up rejection count: the largest k such that the total size spent at
/// the k-th ordered generalized p-value is at most q * k.
pub fn j_star(gp: &GeneralizedPValues, family: &SizeFamily, q: f64) -> Result<usize> {
    check_q(q)?;
    check_lengths(gp, family)?;
    for k in (1..=gp.len()).rev() {
        if family.total_size_ln_surv(gp.ordered_ln_surv(k - 1)) <= q * k as f64 {
            return Ok(k);
        }
    }
    Ok(0)
}

/// Walks `start` toward -inf by doubling until `holds` fails, giving the
/// bisections below a finite bracket when a piece extends to alpha = 1
/// (log-survival -inf). The caller guarantees a crossing exists.
fn finite_fail_point(start: f64, holds: impl Fn(f64) -> bool) -> f64 {
    let mut t = if start < -1.0 { 2.0 * start } else { -1.0 };
    while holds(t) {
        t *= 2.0;
        debug_assert!(t.is_finite(), "no crossing found while doubling");
    }
    t
}

/// Crossing time of the step-down procedure on the log-survival scale: the
/// largest ls = ln(1 - alpha) at which the survival product of the
/// still-active tests drops below 1 - q (alpha increases as ls decreases).
///
/// The product is piecewise continuous between consecutive ordered
/// generalized p-values (a rejected test leaves the product just past its
/// own alpha), so each piece is scanned for a crossing and the first one is
/// bisected to 1e-12. Returns -inf (alpha = 1) when the product never
/// crosses, in which case every test is rejected. The crossing can never
/// undershoot alpha = q (the product is bounded below by 1 - alpha), so the
/// result is clamped at ln(1 - q).
pub fn alpha_dagger_ln_surv(gp: &GeneralizedPValues, family: &SizeFamily, q: f64) -> Result<f64> {
    check_q(q)?;
    check_lengths(gp, family)?;
    let log_target = (-q).ln_1p();
    let mut piece_left = 0.0f64; // ls at alpha = 0
    for j in 0..gp.len() {
        let piece_right = gp.ordered_ln_surv(j);
        let crossed = |ls: f64| tail_log_product(gp, family, j, ls) < log_target;
        if crossed(piece_right) {
            // hi (closer to 0) keeps the product at or above target, lo is
            // past the crossing.
            let mut hi = piece_left;
            let mut lo = if piece_right.is_finite() {
                piece_right
            } else {
                finite_fail_point(piece_left, |ls| !crossed(ls))
            };
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if crossed(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(hi.min(log_target));
        }
        piece_left = piece_right;
    }
    Ok(f64::NEG_INFINITY)
}

/// [`alpha_dagger_ln_surv`] reported on the plain scale.
pub fn alpha_dagger(gp: &GeneralizedPValues, family: &SizeFamily, q: f64) -> Result<f64> {
    Ok(-alpha_dagger_ln_surv(gp, family, q)?.exp_m1())
}

/// Crossing time of the step-up procedure on the log-survival scale: the
/// smallest ls = ln(1 - alpha) at which the total spent size stays within
/// q times the number of tests at or below alpha. Scans pieces from the
/// top; within the first admissible piece the boundary is bisected to
/// 1e-12, returning a point where the inequality still holds so the result
/// stays inside [a_(J), a_(J+1)) on the alpha scale.
pub fn alpha_star_ln_surv(gp: &GeneralizedPValues, family: &SizeFamily, q: f64) -> Result<f64> {
    check_q(q)?;
    check_lengths(gp, family)?;
    let m = gp.len();
    for k in (1..=m).rev() {
        let left = gp.ordered_ln_surv(k - 1);
        let budget = q * k as f64;
        let admissible = |ls: f64| family.total_size_ln_surv(ls) <= budget;
        if admissible(left) {
            let right = if k == m {
                f64::NEG_INFINITY // alpha = 1
            } else {
                gp.ordered_ln_surv(k)
            };
            if right.is_finite() && admissible(right) {
                // Whole piece admissible; only reachable on the last piece
                // (and only for families that do not exhaust the budget).
                return Ok(right);
            }
            if !right.is_finite() && family.total_size(1.0) <= budget {
                return Ok(f64::NEG_INFINITY);
            }
            // hi (closer to 0) stays admissible, lo overspends.
            let mut hi = left;
            let mut lo = if right.is_finite() {
                right
            } else {
                finite_fail_point(left, admissible)
            };
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if admissible(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
    }
    Ok(0.0)
}

/// [`alpha_star_ln_surv`] reported on the plain scale.
pub fn alpha_star(gp: &GeneralizedPValues, family: &SizeFamily, q: f64) -> Result<f64> {
    Ok(-alpha_star_ln_surv(gp, family, q)?.exp_m1())
}

/// Tests whose generalized p-value is at or below the threshold given as
/// ls = ln(1 - alpha); the direct per-test threshold route.
pub fn threshold_rejections(gp: &GeneralizedPValues, ls: f64) -> Vec<usize> {
    (0..gp.len()).filter(|&m| gp.ln_surv[m] >= ls).collect()
}

pub fn reject_dagger(
    battery: &TestBattery,
    family: &SizeFamily,
    q: f64,
) -> Result<ProcedureOutcome> {
    let gp = generalized_pvalues(battery, family)?;
    let j = j_dagger(&gp, family, q)?;
    let ls = alpha_dagger_ln_surv(&gp, family, q)?;
    Ok(build_outcome(
        Procedure::Dagger,
        battery,
        family,
        &gp,
        q,
        j,
        ls,
    ))
}

pub fn reject_star(battery: &TestBattery, family: &SizeFamily, q: f64) -> Result<ProcedureOutcome> {
    let gp = generalized_pvalues(battery, family)?;
    let j = j_star(&gp, family, q)?;
    let ls = alpha_star_ln_surv(&gp, family, q)?;
    Ok(build_outcome(
        Procedure::Star,
        battery,
        family,
        &gp,
        q,
        j,
        ls,
    ))
}

fn build_outcome(
    procedure: Procedure,
    battery: &TestBattery,
    family: &SizeFamily,
    gp: &GeneralizedPValues,
    q: f64,
    j: usize,
    ls: f64,
) -> ProcedureOutcome {
    let m = gp.len();
    let interval = (
        if j == 0 { 0.0 } else { gp.ordered(j - 1) },
        if j == m { 1.0 } else { gp.ordered(j) },
    );
    let rejected: BTreeSet<String> = gp.antirank[..j]
        .iter()
        .map(|&idx| battery.records()[idx].id.clone())
        .collect();
    debug_assert_eq!(
        threshold_rejections(gp, ls).len(),
        j,
        "threshold and anti-rank routes disagree"
    );
    let sizes_at_threshold = (0..m).map(|idx| family.evaluate_ln_surv(idx, ls)).collect();
    ProcedureOutcome {
        procedure,
        q,
        j,
        alpha_threshold: -ls.exp_m1(),
        alpha_interval: interval,
        rejected,
        sizes_at_threshold,
    }
}

fn check_lengths(gp: &GeneralizedPValues, family: &SizeFamily) -> Result<()> {
    if gp.is_empty() {
        return Err(Error::EmptyBattery);
    }
    if gp.len() != family.len() {
        return Err(Error::LengthMismatch {
            battery: gp.len(),
            family: family.len(),
        });
    }
    Ok(())
}

fn check_pvalues(pvalues: &[f64]) -> Result<()> {
    if pvalues.is_empty() {
        return Err(Error::EmptyBattery);
    }
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::Domain(format!("p-value out of [0,1]: {p}")));
        }
    }
    Ok(())
}

/// Classical step-down on ordinary p-values: reject the j smallest while
/// P_(j) <= 1 - (1-q)^(1/(M-j+1)). Identical to the step-down scan under an
/// equal-allocation family.
pub fn holm_sidak_stepdown(pvalues: &[f64], q: f64) -> Result<usize> {
    check_q(q)?;
    check_pvalues(pvalues)?;
    let m = pvalues.len();
    let order = anti_ranks(pvalues);
    for j in 0..m {
        let c = -(((-q).ln_1p()) / (m - j) as f64).exp_m1();
        if pvalues[order[j]] > c {
            return Ok(j);
        }
    }
    Ok(m)
}

/// Classical step-up on ordinary p-values: the largest k with
/// P_(k) <= q * k / M. Identical to the step-up scan under an
/// equal-allocation family.
pub fn bh_stepup(pvalues: &[f64], q: f64) -> Result<usize> {
    check_q(q)?;
    check_pvalues(pvalues)?;
    let m = pvalues.len();
    let order = anti_ranks(pvalues);
    for k in (1..=m).rev() {
        if pvalues[order[k - 1]] <= q * k as f64 / m as f64 {
            return Ok(k);
        }
    }
    Ok(0)
}

/// Outcome wrapper for the reference procedures. Threshold and interval are
/// on the ordinary p-value scale.
pub fn reject_reference(
    battery: &TestBattery,
    procedure: Procedure,
    q: f64,
) -> Result<ProcedureOutcome> {
    let pvalues = battery.pvalues();
    let m = pvalues.len();
    let j = match procedure {
        Procedure::HolmSidak => holm_sidak_stepdown(&pvalues, q)?,
        Procedure::Bh => bh_stepup(&pvalues, q)?,
        other => {
            return Err(Error::Config(format!(
                "reject_reference only handles the classical procedures, got {}",
                other.as_str()
            )))
        }
    };
    let order = anti_ranks(&pvalues);
    let threshold = if j == 0 {
        0.0
    } else {
        match procedure {
            Procedure::HolmSidak => -(((-q).ln_1p()) / (m - j + 1) as f64).exp_m1(),
            Procedure::Bh => q * j as f64 / m as f64,
            _ => unreachable!(),
        }
    };
    let interval = (
        if j == 0 { 0.0 } else { pvalues[order[j - 1]] },
        if j == m { 1.0 } else { pvalues[order[j]] },
    );
    let rejected: BTreeSet<String> = order[..j]
        .iter()
        .map(|&idx| battery.records()[idx].id.clone())
        .collect();
    Ok(ProcedureOutcome {
        procedure,
        q,
        j,
        alpha_threshold: threshold,
        alpha_interval: interval,
        rejected,
        sizes_at_threshold: Vec::new(),
    })
}

/// Run any of the four procedures. The family is ignored by the reference
/// procedures.
pub fn run_procedure(
    battery: &TestBattery,
    family: &SizeFamily,
    procedure: Procedure,
    q: f64,
) -> Result<ProcedureOutcome> {
    match procedure {
        Procedure::Dagger => reject_dagger(battery, family, q),
        Procedure::Star => reject_star(battery, family, q),
        Procedure::HolmSidak | Procedure::Bh => reject_reference(battery, procedure, q),
    }
}
