//! Power-optimal exponent allocation for weighted size functions.
//!
//! Given per-test detection curves (one-sided normal shift alternatives with
//! known effects), split the exponent budget `sum w_m = 1` so that the summed
//! detection probability at a joint level `alpha` is maximal. Because each
//! component's payoff is concave in its exponent, the optimum is a
//! water-filling point: every component with positive exponent has the same
//! marginal payoff, and every component left at zero has a smaller one. The
//! solver brackets that common marginal ("price") and bisects; the inner
//! solve for one component is itself a bisection in log-exponent space so
//! that exponents spanning hundreds of orders of magnitude keep full
//! relative precision.
//!
//! [`build_optimal_family`] runs the solver over an alpha grid and assembles
//! a tabulated size family, repairing any non-monotone wiggle with a pooled
//! isotonic pass before pinning the (0, 0) and (1, 1) endpoints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_quantile};
use crate::sizefam::{weighted_size, SizeFamily};

/// Largest effect size accepted by [`RocModel`]; beyond this the detection
/// curve is 1 at every representable size and the allocation is vacuous.
pub const MAX_THETA: f64 = 100.0;

/// Stationarity tolerance certified by [`optimize_weights_at_alpha`].
pub const KKT_TOL: f64 = 1e-8;

/// Largest pointwise move the isotonic repair may apply to a component.
pub const REPAIR_BUDGET: f64 = 1e-3;

/// How much of the product identity the repaired table may concede.
pub const PRODUCT_SLACK: f64 = 1e-9;

const STRICT_EPS: f64 = 1e-13;
const INNER_ITERS: usize = 64;
const OUTER_ITERS: usize = 128;
const SUM_BREAK: f64 = 1e-13;
const SUM_FAIL: f64 = 1e-9;

/// Detection probability of a size-`a` one-sided test against a standard
/// normal shifted by `theta`: Phi(Phi^{-1}(a) + theta), with the conventions
/// pi(0) = 0 and pi(1) = 1.
pub fn roc_normal_shift(a: f64, theta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&a));
    if a <= 0.0 {
        return 0.0;
    }
    if a >= 1.0 {
        return 1.0;
    }
    std_normal_cdf(std_normal_quantile(a) + theta)
}

/// Per-test detection curves, one effect size per battery component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocModel {
    thetas: Vec<f64>,
}

impl RocModel {
    /// One-sided normal shift curves with the given effects (all >= 0).
    pub fn normal_shift(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Config("effect list must be nonempty".into()));
        }
        for &t in &thetas {
            if !t.is_finite() || !(0.0..=MAX_THETA).contains(&t) {
                return Err(Error::Config(format!(
                    "effects must be finite in [0, {MAX_THETA}], got {t}"
                )));
            }
        }
        Ok(Self { thetas })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Detection probability of component `m` at per-test size `a`.
    pub fn power(&self, m: usize, a: f64) -> f64 {
        roc_normal_shift(a, self.thetas[m])
    }

    /// d power / d size for component `m`: exp(-theta x - theta^2/2) at
    /// x = Phi^{-1}(a). Infinite at a = 0, zero at a = 1 (for theta > 0).
    pub fn power_gradient(&self, m: usize, a: f64) -> f64 {
        let theta = self.thetas[m];
        if theta == 0.0 {
            return 1.0;
        }
        let x = std_normal_quantile(a);
        (-theta * x - 0.5 * theta * theta).exp()
    }
}

/// Exponent split produced by [`optimize_weights_at_alpha`].
///
/// Invariants on success: `weights` sum to 1 within 1e-10, each lies in
/// [0, 1], and `kkt_residual <= KKT_TOL`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSolution {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub total_power: f64,
    pub kkt_residual: f64,
}

/// ln of the marginal payoff d/dw pi(A(w)) for one component, where
/// A(w) = 1 - (1-alpha)^w. Working in logs keeps deep-tail evaluations
/// (payoff gradients up to e^700) comparable without overflow. Returns +inf
/// as w -> 0 when theta > 0.
fn ln_marginal_gain(theta: f64, alpha: f64, neg_l: f64, w: f64) -> f64 {
    let base = neg_l.ln() - w * neg_l;
    if theta == 0.0 {
        return base;
    }
    let a = weighted_size(alpha, w);
    let x = std_normal_quantile(a);
    base + (-theta * x - 0.5 * theta * theta)
}

/// Exponent at which the component's marginal payoff equals the price,
/// capped to [0, 1]. Returns exactly 0 when the crossing lies below
/// `w_floor`, i.e. below floating-point resolution of the size map.
fn weight_at_price(theta: f64, alpha: f64, neg_l: f64, w_floor: f64, ln_price: f64) -> f64 {
    if ln_marginal_gain(theta, alpha, neg_l, 1.0) >= ln_price {
        return 1.0;
    }
    if ln_marginal_gain(theta, alpha, neg_l, w_floor) <= ln_price {
        return 0.0;
    }
    // marginal gain is strictly decreasing in w, so bisect in ln w
    let (mut t_lo, mut t_hi) = (w_floor.ln(), 0.0f64);
    for _ in 0..INNER_ITERS {
        let t = 0.5 * (t_lo + t_hi);
        if ln_marginal_gain(theta, alpha, neg_l, t.exp()) > ln_price {
            t_lo = t;
        } else {
            t_hi = t;
        }
    }
    (0.5 * (t_lo + t_hi)).exp()
}

/// Maximize `sum_m pi_m(A_m(w_m))` over the simplex `sum w_m = 1`, where
/// `A_m(w) = 1 - (1-alpha)^w`. Exact water-filling: bisect the common
/// marginal payoff until the exponents fill the budget.
pub fn optimize_weights_at_alpha(roc: &RocModel, alpha: f64) -> Result<WeightSolution> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "joint level must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let m_count = roc.len();
    let neg_l = -(-alpha).ln_1p();
    // Smallest exponent whose size stays a normal float for this alpha.
    let w_floor = (1e-290 / neg_l).min(1e-6);

    if m_count == 1 {
        return Ok(WeightSolution {
            alpha,
            weights: vec![1.0],
            total_power: roc.power(0, alpha),
            kkt_residual: 0.0,
        });
    }

    let thetas = roc.thetas();
    let weights_at = |ln_price: f64| -> Vec<f64> {
        thetas
            .iter()
            .map(|&t| weight_at_price(t, alpha, neg_l, w_floor, ln_price))
            .collect()
    };

    // At ln_hi every exponent is <= 1/M (sum <= 1); at ln_lo all cap at 1.
    let ln_hi = thetas
        .iter()
        .map(|&t| ln_marginal_gain(t, alpha, neg_l, 1.0 / m_count as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let ln_lo = thetas
        .iter()
        .map(|&t| ln_marginal_gain(t, alpha, neg_l, 1.0))
        .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (ln_lo - 1.0, ln_hi + 1.0);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iterations = 0;
    for _ in 0..OUTER_ITERS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let ws = weights_at(mid);
        let sum: f64 = ws.iter().sum();
        let gap = (sum - 1.0).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, ws));
        }
        if gap <= SUM_BREAK {
            break;
        }
        if sum > 1.0 {
            lo = mid; // budget overspent: raise the price
        } else {
            hi = mid;
        }
    }
    let (gap, mut weights) = best.expect("at least one bisection step runs");

    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }

    // Stationarity check at the normalized point: interior components share
    // a common marginal payoff; zeroed ones must not beat it even with the
    // smallest representable allocation, and capped ones must not fall
    // below it. Normalization can pull a capped weight a few ulps under
    // 1.0, so the cap face is matched with slack.
    let is_cap = |w: f64| w >= 1.0 - 1e-9;
    let grads: Vec<f64> = weights
        .iter()
        .zip(thetas)
        .map(|(&w, &t)| ln_marginal_gain(t, alpha, neg_l, if w > 0.0 { w } else { w_floor }).exp())
        .collect();
    let interior: Vec<f64> = weights
        .iter()
        .zip(&grads)
        .filter(|(&w, _)| w > 0.0 && !is_cap(w))
        .map(|(_, &g)| g)
        .collect();
    let price = if interior.is_empty() {
        // every component pinned to a box face: any price between the
        // zeroed gains and the capped gains certifies the point
        let hi_zero = weights
            .iter()
            .zip(&grads)
            .filter(|(&w, _)| w == 0.0)
            .map(|(_, &g)| g)
            .fold(f64::NEG_INFINITY, f64::max);
        let lo_cap = weights
            .iter()
            .zip(&grads)
            .filter(|(&w, _)| is_cap(w))
            .map(|(_, &g)| g)
            .fold(f64::INFINITY, f64::min);
        match (hi_zero.is_finite(), lo_cap.is_finite()) {
            (true, true) => 0.5 * (hi_zero + lo_cap),
            (true, false) => hi_zero,
            _ => lo_cap,
        }
    } else {
        interior.iter().sum::<f64>() / interior.len() as f64
    };
    let mut residual = 0.0f64;
    for (&w, &g) in weights.iter().zip(&grads) {
        let dev = if w == 0.0 {
            (g - price).max(0.0)
        } else if is_cap(w) {
            (price - g).max(0.0)
        } else {
            (g - price).abs()
        };
        residual = residual.max(dev);
    }

    let total_power = weights
        .iter()
        .enumerate()
        .map(|(m, &w)| roc.power(m, weighted_size(alpha, w)))
        .sum();

    if gap > SUM_FAIL || residual > KKT_TOL {
        return Err(Error::NoConvergence {
            iterations,
            residual,
            weights,
        });
    }
    Ok(WeightSolution {
        alpha,
        weights,
        total_power,
        kkt_residual: residual,
    })
}

/// Uniform grid of `points` interior levels: k/(points+1), k = 1..=points.
pub fn uniform_interior_grid(points: usize) -> Vec<f64> {
    let denom = (points + 1) as f64;
    (1..=points).map(|k| k as f64 / denom).collect()
}

/// Pool-adjacent-violators fit: the closest (least-squares) nondecreasing
/// sequence to `values`.
fn pava_nondecreasing(values: &[f64]) -> Vec<f64> {
    let mut means: Vec<f64> = Vec::with_capacity(values.len());
    let mut counts: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values {
        let mut mean = v;
        let mut count = 1usize;
        while let Some(&last) = means.last() {
            if last <= mean {
                break;
            }
            let c = counts.pop().unwrap();
            let m = means.pop().unwrap();
            mean = (m * c as f64 + mean * count as f64) / (c + count) as f64;
            count += c;
        }
        means.push(mean);
        counts.push(count);
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, c) in means.iter().zip(&counts) {
        out.extend(std::iter::repeat_n(*m, *c));
    }
    out
}

/// Build a tabulated size family whose exponents are power-optimal at every
/// grid level. The grid must be strictly increasing with at least 16 points
/// inside [1e-9, 1 - 1e-9]; endpoints (0, 0) and (1, 1) are appended. Each
/// component column is made strictly increasing (isotonic repair within
/// [`REPAIR_BUDGET`], then a strictness nudge), and the repaired table must
/// keep the product of survivals within [`PRODUCT_SLACK`] of 1 - alpha.
pub fn build_optimal_family(roc: &RocModel, grid: &[f64]) -> Result<SizeFamily> {
    if grid.len() < 16 {
        return Err(Error::Config(format!(
            "level grid needs at least 16 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|&a| !(1e-9..=1.0 - 1e-9).contains(&a)) {
        return Err(Error::Config(
            "level grid points must lie in [1e-9, 1 - 1e-9]".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "level grid must be strictly increasing".into(),
        ));
    }

    let solutions: Vec<WeightSolution> = grid
        .par_iter()
        .map(|&a| optimize_weights_at_alpha(roc, a))
        .collect::<Result<Vec<_>>>()?;

    let m_count = roc.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; m_count];
    for (i, sol) in solutions.iter().enumerate() {
        for (m, col) in columns.iter_mut().enumerate() {
            col[i] = weighted_size(grid[i], sol.weights[m]);
        }
    }

    // The solver's exponents sit on the simplex, so the survival product
    // equals 1 - alpha up to rounding before any repair.
    for (i, &alpha) in grid.iter().enumerate() {
        let log_prod: f64 = columns.iter().map(|col| (-col[i]).ln_1p()).sum();
        let drift = (log_prod.exp() - (1.0 - alpha)).abs();
        debug_assert!(
            drift <= 1e-8,
            "solver left the simplex at {alpha}: {drift:e}"
        );
    }

    for (m, col) in columns.iter_mut().enumerate() {
        let repaired = pava_nondecreasing(col);
        let moved = col
            .iter()
            .zip(&repaired)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved > REPAIR_BUDGET {
            return Err(Error::RepairBudget {
                component: m,
                moved,
                budget: REPAIR_BUDGET,
            });
        }
        *col = repaired;
        let mut prev = 0.0; // the pinned (0, 0) knot
        for v in col.iter_mut() {
            *v = v.max(prev + STRICT_EPS);
            prev = *v;
        }
        let last = *col.last().unwrap();
        if last >= 1.0 {
            return Err(Error::RepairInfeasible {
                alpha: *grid.last().unwrap(),
                slack: last - 1.0,
            });
        }
    }

    for (i, &alpha) in grid.iter().enumerate() {
        let log_prod: f64 = columns.iter().map(|col| (-col[i]).ln_1p()).sum();
        let slack = (1.0 - alpha) - log_prod.exp();
        if slack > PRODUCT_SLACK {
            return Err(Error::RepairInfeasible { alpha, slack });
        }
    }

    let mut alphas = Vec::with_capacity(grid.len() + 2);
    alphas.push(0.0);
    alphas.extend_from_slice(grid);
    alphas.push(1.0);
    let mut rows = Vec::with_capacity(alphas.len());
    rows.push(vec![0.0; m_count]);
    for i in 0..grid.len() {
        rows.push(columns.iter().map(|col| col[i]).collect());
    }
    rows.push(vec![1.0; m_count]);
    SizeFamily::tabulated(alphas, rows)
}
