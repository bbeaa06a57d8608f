//! Per-test size functions and families of them.
//!
//! A size function maps a family-wise budget `alpha` in [0,1] to the level
//! spent on one test. A family is one size function per test. The conditions
//!.checked by [`validate_family`] are:
//!
//! * A1 — endpoints: A(0) = 0 and A(1) = 1;
//! * A2 — strictly increasing (checked on a grid);
//! * A3 — product bound: prod_m (1 - A_m(alpha)) >= 1 - alpha;
//! * A4 — balance, per subset size k: k * max_m A_m(alpha) <= sum_m A_m(alpha).
//!
//! A4 as checked here is the worst-case form over all subsets of size k; the
//! exact form for a known null set is [`check_a4_exact`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-allocation size: 1 - (1-alpha)^(1/m).
pub fn sidak_size(alpha: f64, m: u32) -> f64 {
    weighted_size(alpha, 1.0 / m as f64)
}

/// Linear allocation alpha/m. Note A(1) = 1/m, so this family does not reach
/// 1 at the right endpoint and fails the A1 check by design.
pub fn bonferroni_size(alpha: f64, m: u32) -> f64 {
    alpha / m as f64
}

/// Geometric allocation 1 - (1-alpha)^w for a weight w in (0, 1].
/// Computed as -expm1(w * ln1p(-alpha)) so values near alpha = 0 keep full
/// relative precision.
pub fn weighted_size(alpha: f64, w: f64) -> f64 {
    -((-alpha).ln_1p() * w).exp_m1()
}

/// One test's size function.
#[derive(Debug, Clone, PartialEq)]
pub enum SizeFunction {
    Sidak {
        m: u32,
    },
    Bonferroni {
        m: u32,
    },
    Weighted {
        weight: f64,
    },
    /// Monotone piecewise-linear interpolation through `knots`; knot alphas
    /// are strictly increasing with endpoints pinned to (0,0) and (1,1).
    Tabulated {
        knots: Vec<(f64, f64)>,
    },
}

impl SizeFunction {
    pub fn evaluate(&self, alpha: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&alpha), "alpha out of [0,1]: {alpha}");
        match self {
            SizeFunction::Sidak { m } => sidak_size(alpha, *m),
            SizeFunction::Bonferroni { m } => bonferroni_size(alpha, *m),
            SizeFunction::Weighted { weight } => weighted_size(alpha, *weight),
            SizeFunction::Tabulated { knots } => interpolate(knots, alpha),
        }
    }

    /// Inverse: the alpha at which this function reaches `u`. Closed form for
    /// the analytic kinds, bisection to an interval of 1e-14 for tabulated.
    pub fn invert(&self, u: f64) -> Result<f64> {
        Ok(-self.invert_ln_surv(u)?.exp_m1())
    }

    /// Inverse on the log-survival scale: ln(1 - invert(u)). The geometric
    /// kinds are exact here even when invert(u) rounds to 1, which is what
    /// the step procedures compare on.
    pub fn invert_ln_surv(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("size value out of [0,1]: {u}")));
        }
        match self {
            SizeFunction::Sidak { m } => Ok((-u).ln_1p() * *m as f64),
            SizeFunction::Bonferroni { m } => {
                let cap = 1.0 / *m as f64;
                if u > cap {
                    return Err(Error::Domain(format!(
                        "size value {u} exceeds the range cap 1/{m} of the linear allocation"
                    )));
                }
                Ok((-(u * *m as f64)).ln_1p())
            }
            SizeFunction::Weighted { weight } => Ok((-u).ln_1p() / *weight),
            SizeFunction::Tabulated { knots } => {
                let mut lo = 0.0f64;
                let mut hi = 1.0f64;
                while hi - lo > 1e-14 {
                    let mid = 0.5 * (lo + hi);
                    if interpolate(knots, mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok((-0.5 * (lo + hi)).ln_1p())
            }
        }
    }

    /// ln(1 - evaluate(alpha)) for ls = ln(1 - alpha). Exact for the
    /// geometric kinds; the tabulated kind goes through plain interpolation,
    /// whose resolution is set by its knots anyway.
    pub fn ln_surv_size(&self, ls: f64) -> f64 {
        debug_assert!(ls <= 0.0, "log-survival must be <= 0: {ls}");
        match self {
            SizeFunction::Sidak { m } => ls / *m as f64,
            SizeFunction::Weighted { weight } => ls * *weight,
            SizeFunction::Bonferroni { .. } | SizeFunction::Tabulated { .. } => {
                (-self.evaluate(-ls.exp_m1())).ln_1p()
            }
        }
    }

    /// evaluate(alpha) for ls = ln(1 - alpha), keeping the survival scale
    /// until the final rounding.
    pub fn evaluate_ln_surv(&self, ls: f64) -> f64 {
        -self.ln_surv_size(ls).exp_m1()
    }
}

fn interpolate(knots: &[(f64, f64)], alpha: f64) -> f64 {
    let n = knots.len();
    if alpha <= knots[0].0 {
        return knots[0].1;
    }
    if alpha >= knots[n - 1].0 {
        return knots[n - 1].1;
    }
    // First knot strictly above alpha; the segment [hi-1, hi] brackets it.
    let hi = knots.partition_point(|&(a, _)| a <= alpha);
    let (a0, v0) = knots[hi - 1];
    let (a1, v1) = knots[hi];
    let t = (alpha - a0) / (a1 - a0);
    v0 + t * (v1 - v0)
}

/// One size function per test, all of the same kind.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeFamily {
    members: Vec<SizeFunction>,
}

impl SizeFamily {
    pub fn sidak(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidFamily("family size must be >= 1".into()));
        }
        Ok(SizeFamily {
            members: (0..m).map(|_| SizeFunction::Sidak { m }).collect(),
        })
    }

    pub fn bonferroni(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidFamily("family size must be >= 1".into()));
        }
        Ok(SizeFamily {
            members: (0..m).map(|_| SizeFunction::Bonferroni { m }).collect(),
        })
    }

    pub fn weighted(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidFamily("weights must be nonempty".into()));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidFamily(format!(
                    "weight[{i}] = {w} outside (0, 1]"
                )));
            }
        }
        Ok(SizeFamily {
            members: weights
                .iter()
                .map(|&w| SizeFunction::Weighted { weight: w })
                .collect(),
        })
    }

    /// Tabulated family on a shared alpha grid: `rows[i][m]` is component m's
    /// size at `alphas[i]`. The grid must start at 0, end at 1, and each
    /// component's first/last values must be 0 and 1.
    pub fn tabulated(alphas: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if alphas.len() < 2 || alphas.len() != rows.len() {
            return Err(Error::InvalidFamily(
                "tabulated family needs one value row per grid point (>= 2)".into(),
            ));
        }
        if alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(Error::InvalidFamily(
                "tabulated grid must span [0, 1] exactly".into(),
            ));
        }
        if alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidFamily(
                "tabulated grid must be strictly increasing".into(),
            ));
        }
        let m = rows[0].len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidFamily(
                "tabulated rows must share a common nonzero width".into(),
            ));
        }
        for c in 0..m {
            if rows[0][c] != 0.0 || rows[rows.len() - 1][c] != 1.0 {
                return Err(Error::InvalidFamily(format!(
                    "component {c} must be pinned to 0 at alpha=0 and 1 at alpha=1"
                )));
            }
            if rows.iter().any(|r| !(0.0..=1.0).contains(&r[c])) {
                return Err(Error::InvalidFamily(format!(
                    "component {c} has values outside [0,1]"
                )));
            }
            if rows.windows(2).any(|w| w[1][c] < w[0][c]) {
                return Err(Error::InvalidFamily(format!(
                    "component {c} values must be nondecreasing"
                )));
            }
        }
        let members = (0..m)
            .map(|c| SizeFunction::Tabulated {
                knots: alphas
                    .iter()
                    .zip(rows.iter())
                    .map(|(&a, r)| (a, r[c]))
                    .collect(),
            })
            .collect();
        Ok(SizeFamily { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, m: usize) -> &SizeFunction {
        &self.members[m]
    }

    pub fn members(&self) -> &[SizeFunction] {
        &self.members
    }

    pub fn evaluate(&self, m: usize, alpha: f64) -> f64 {
        self.members[m].evaluate(alpha)
    }

    /// Sum of all component sizes at `alpha`.
    pub fn total_size(&self, alpha: f64) -> f64 {
        self.members.iter().map(|f| f.evaluate(alpha)).sum()
    }

    pub fn evaluate_ln_surv(&self, m: usize, ls: f64) -> f64 {
        self.members[m].evaluate_ln_surv(ls)
    }

    /// Sum of all component sizes at alpha = -expm1(ls).
    pub fn total_size_ln_surv(&self, ls: f64) -> f64 {
        self.members.iter().map(|f| f.evaluate_ln_surv(ls)).sum()
    }

    pub fn to_spec(&self) -> FamilySpec {
        let m = self.members.len() as u32;
        match &self.members[0] {
            SizeFunction::Sidak { .. } => FamilySpec::Sidak { m },
            SizeFunction::Bonferroni { .. } => FamilySpec::Bonferroni { m },
            SizeFunction::Weighted { .. } => FamilySpec::Weighted {
                m: Some(m),
                weights: self
                    .members
                    .iter()
                    .map(|f| match f {
                        SizeFunction::Weighted { weight } => *weight,
                        _ => unreachable!("families are homogeneous"),
                    })
                    .collect(),
            },
            SizeFunction::Tabulated { knots } => {
                let alphas: Vec<f64> = knots.iter().map(|&(a, _)| a).collect();
                let knots = alphas
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let row = self
                            .members
                            .iter()
                            .map(|f| match f {
                                SizeFunction::Tabulated { knots } => knots[i].1,
                                _ => unreachable!("families are homogeneous"),
                            })
                            .collect();
                        (a, row)
                    })
                    .collect();
                FamilySpec::Tabulated { m: Some(m), knots }
            }
        }
    }

    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        match spec {
            FamilySpec::Sidak { m } => SizeFamily::sidak(*m),
            FamilySpec::Bonferroni { m } => SizeFamily::bonferroni(*m),
            FamilySpec::Weighted { m, weights } => {
                if let Some(m) = m {
                    if *m as usize != weights.len() {
                        return Err(Error::InvalidFamily(format!(
                            "M = {m} disagrees with {} weights",
                            weights.len()
                        )));
                    }
                }
                SizeFamily::weighted(weights)
            }
            FamilySpec::Tabulated { m, knots } => {
                let alphas: Vec<f64> = knots.iter().map(|(a, _)| *a).collect();
                let rows: Vec<Vec<f64>> = knots.iter().map(|(_, r)| r.clone()).collect();
                let fam = SizeFamily::tabulated(alphas, rows)?;
                if let Some(m) = m {
                    if *m as usize != fam.len() {
                        return Err(Error::InvalidFamily(format!(
                            "M = {m} disagrees with {} components",
                            fam.len()
                        )));
                    }
                }
                Ok(fam)
            }
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: FamilySpec = serde_json::from_str(s)?;
        SizeFamily::from_spec(&spec)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_spec())?)
    }
}

/// Serialized form of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FamilySpec {
    Sidak {
        #[serde(rename = "M")]
        m: u32,
    },
    Bonferroni {
        #[serde(rename = "M")]
        m: u32,
    },
    Weighted {
        #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
        m: Option<u32>,
        weights: Vec<f64>,
    },
    Tabulated {
        #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
        m: Option<u32>,
        /// Shared grid: each entry is (alpha, per-component sizes at alpha).
        knots: Vec<(f64, Vec<f64>)>,
    },
}

/// Largest recorded violation of one condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub alpha: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub a1_pass: bool,
    pub a2_pass: bool,
    pub a3_pass: bool,
    /// Worst-case balance condition per subset size k = 1..=k_max.
    pub a4_pass_by_k: BTreeMap<u32, bool>,
    pub worst_violation: Option<Violation>,
}

impl ValidationReport {
    /// A1-A3 together; what the decision procedures require of a family.
    pub fn core_pass(&self) -> bool {
        self.a1_pass && self.a2_pass && self.a3_pass
    }

    pub fn failed_conditions(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.a1_pass {
            out.push("A1".to_string());
        }
        if !self.a2_pass {
            out.push("A2".to_string());
        }
        if !self.a3_pass {
            out.push("A3".to_string());
        }
        for (k, pass) in &self.a4_pass_by_k {
            if !pass {
                out.push(format!("A4(k={k})"));
            }
        }
        out
    }
}

/// Check A1-A4 on a uniform grid of `grid_size` points over [0, 1].
///
/// Violations are reported, not raised; `worst_violation` keeps the largest
/// excess seen across all conditions.
pub fn validate_family(
    family: &SizeFamily,
    grid_size: usize,
    k_max: u32,
    tol: f64,
) -> ValidationReport {
    assert!(grid_size >= 2, "grid must contain the endpoints");
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();
    validate_family_at(family, &grid, k_max, tol)
}

/// The natural evaluation grid for a family: its knots for tabulated
/// families (between knots a piecewise-linear component concedes the product
/// bound by the chord error, so its contract lives on the knots), None for
/// analytic kinds.
pub fn knot_grid(family: &SizeFamily) -> Option<Vec<f64>> {
    match &family.members()[0] {
        SizeFunction::Tabulated { knots } => Some(knots.iter().map(|&(a, _)| a).collect()),
        _ => None,
    }
}

/// [`validate_family`] on an explicit grid; the grid must contain 0 and 1.
pub fn validate_family_at(
    family: &SizeFamily,
    grid: &[f64],
    k_max: u32,
    tol: f64,
) -> ValidationReport {
    assert!(grid.len() >= 2, "grid must contain the endpoints");
    assert_eq!(grid[0], 0.0, "grid must start at 0");
    assert_eq!(*grid.last().unwrap(), 1.0, "grid must end at 1");
    assert!(
        (1..=family.len() as u32).contains(&k_max),
        "k_max must be in 1..=M"
    );

    let mut worst: Option<Violation> = None;
    let mut record = |condition: &str, alpha: f64, magnitude: f64| {
        if worst.as_ref().is_none_or(|w| magnitude > w.magnitude) {
            worst = Some(Violation {
                condition: condition.to_string(),
                alpha,
                magnitude,
            });
        }
    };

    let mut a1_pass = true;
    for f in family.members() {
        let at0 = f.evaluate(0.0).abs();
        let at1 = (f.evaluate(1.0) - 1.0).abs();
        if at0 > tol {
            a1_pass = false;
            record("A1", 0.0, at0);
        }
        if at1 > tol {
            a1_pass = false;
            record("A1", 1.0, at1);
        }
    }

    let mut a2_pass = true;
    for f in family.members() {
        let mut prev = f.evaluate(grid[0]);
        for &alpha in &grid[1..] {
            let cur = f.evaluate(alpha);
            if cur <= prev {
                a2_pass = false;
                record("A2", alpha, prev - cur);
            }
            prev = cur;
        }
    }

    let mut a3_pass = true;
    let mut a4_pass_by_k: BTreeMap<u32, bool> = (1..=k_max).map(|k| (k, true)).collect();
    for &alpha in grid {
        let sizes: Vec<f64> = family.members().iter().map(|f| f.evaluate(alpha)).collect();

        // Product in log space; exp(-inf) = 0 handles components at 1.
        let log_prod: f64 = sizes.iter().map(|&a| (-a).ln_1p()).sum();
        let prod = log_prod.exp();
        if prod < 1.0 - alpha - tol {
            a3_pass = false;
            record("A3", alpha, (1.0 - alpha) - prod);
        }

        let max = sizes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = sizes.iter().sum();
        for k in 1..=k_max {
            if k as f64 * max > sum + tol {
                a4_pass_by_k.insert(k, false);
                record(&format!("A4(k={k})"), alpha, k as f64 * max - sum);
            }
        }
    }

    ValidationReport {
        a1_pass,
        a2_pass,
        a3_pass,
        a4_pass_by_k,
        worst_violation: worst,
    }
}

/// Exact balance condition for a known null index set:
/// |nulls| * max_{m in nulls} A_m(alpha) <= sum_{all m} A_m(alpha).
/// Returns the worst violation on the grid, or None when the condition holds.
pub fn check_a4_exact(
    family: &SizeFamily,
    null_indices: &[usize],
    grid_size: usize,
    tol: f64,
) -> Option<Violation> {
    assert!(grid_size >= 2);
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();
    check_a4_exact_at(family, null_indices, &grid, tol)
}

/// [`check_a4_exact`] on an explicit grid. For piecewise-linear families the
/// knot grid is exhaustive: max over components is convex on each segment, so
/// a bound holding at both knots holds along the chord between them.
pub fn check_a4_exact_at(
    family: &SizeFamily,
    null_indices: &[usize],
    grid: &[f64],
    tol: f64,
) -> Option<Violation> {
    if null_indices.is_empty() {
        return None;
    }
    let k = null_indices.len() as f64;
    let mut worst: Option<Violation> = None;
    for &alpha in grid {
        let max_null = null_indices
            .iter()
            .map(|&m| family.evaluate(m, alpha))
            .fold(f64::NEG_INFINITY, f64::max);
        let sum = family.total_size(alpha);
        let excess = k * max_null - sum;
        if excess > tol && worst.as_ref().is_none_or(|w| excess > w.magnitude) {
            worst = Some(Violation {
                condition: format!("A4(m0={})", null_indices.len()),
                alpha,
                magnitude: excess,
            });
        }
    }
    worst
}
