//! Acceptance gate: one test per shipped guarantee, each printing a single
//! `ACCEPTANCE n: PASS/FAIL` line (visible with `--nocapture`).

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::*;
use mdf::errmetrics::ErrorCounts;
use mdf::optsize::{
    build_optimal_family, optimize_weights_at_alpha, uniform_interior_grid, RocModel,
};
use mdf::procedures::{
    alpha_dagger_ln_surv, alpha_star_ln_surv, j_dagger, j_star, run_procedure,
    threshold_rejections, Procedure,
};
use mdf::pvalues::generalized_pvalues;
use mdf::simlab::{run_experiment, run_experiment_with_counts, SimConfig, Tail};
use mdf::sizefam::{validate_family, weighted_size, FamilySpec, SizeFamily};
use rand::Rng;

fn verdict(n: u32, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance criterion {n} failed: {detail}");
}

#[allow(clippy::too_many_arguments)]
fn sim_config(
    m: u32,
    m0: u32,
    effects: Vec<f64>,
    alt_correlation: f64,
    q: f64,
    procedure: Procedure,
    size_family: FamilySpec,
    replicates: usize,
    seed: u64,
) -> SimConfig {
    SimConfig {
        m,
        m0,
        effects,
        alt_correlation,
        tail: Tail::OneSided,
        q,
        procedure,
        size_family,
        replicates,
        seed,
        k_sigma: 3.0,
    }
}

#[test]
fn c1_budget_routes_match_closed_form_references() {
    let start = Instant::now();
    let mut r = rng(0xC1);
    let mut mismatches = 0u32;
    for _ in 0..1000 {
        let m = r.gen_range(1..=50);
        let battery = random_battery(&mut r, m);
        let q = r.gen_range(0.001..0.999);
        let family = SizeFamily::sidak(m as u32).unwrap();

        let dagger = run_procedure(&battery, &family, Procedure::Dagger, q).unwrap();
        let stepdown = run_procedure(&battery, &family, Procedure::HolmSidak, q).unwrap();
        if dagger.rejected != stepdown.rejected {
            mismatches += 1;
        }

        let star = run_procedure(&battery, &family, Procedure::Star, q).unwrap();
        let stepup = run_procedure(&battery, &family, Procedure::Bh, q).unwrap();
        if star.rejected != stepup.rejected {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        mismatches == 0 && secs < 10.0,
        &format!(
            "1000 reciprocal-exponent instances, step-down and step-up match their \
             closed forms exactly ({mismatches} mismatches, {secs:.2}s)"
        ),
    );
}

#[test]
fn c2_threshold_scan_agrees_with_count_route() {
    let start = Instant::now();
    let mut r = rng(0xC2);
    let mut mismatches = 0u32;
    for _ in 0..1000 {
        let m = r.gen_range(1..=40);
        let battery = random_battery(&mut r, m);
        let family = random_weighted_family(&mut r, m);
        let q = r.gen_range(0.001..0.999);
        let gp = generalized_pvalues(&battery, &family).unwrap();

        // route one: bisect the budget crossing, reject by threshold
        // route two: count the crossing index, reject the anti-rank prefix
        let ids = |idx: &[usize]| -> BTreeSet<&str> {
            idx.iter()
                .map(|&i| battery.records()[i].id.as_str())
                .collect()
        };
        let ls_dag = alpha_dagger_ln_surv(&gp, &family, q).unwrap();
        let by_threshold = threshold_rejections(&gp, ls_dag);
        let j_dag = j_dagger(&gp, &family, q).unwrap();
        if ids(&by_threshold) != ids(&gp.antirank[..j_dag]) {
            mismatches += 1;
        }

        let ls_st = alpha_star_ln_surv(&gp, &family, q).unwrap();
        let by_threshold = threshold_rejections(&gp, ls_st);
        let j_st = j_star(&gp, &family, q).unwrap();
        if ids(&by_threshold) != ids(&gp.antirank[..j_st]) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        mismatches == 0 && secs < 30.0,
        &format!(
            "1000 random weighted families, threshold-scan and count routes give \
             identical rejection sets ({mismatches} mismatches, {secs:.2}s)"
        ),
    );
}

#[test]
fn c3_step_down_holds_the_familywise_rate() {
    let start = Instant::now();
    // Under the global null the step-down rule spends the budget exactly.
    let global = sim_config(
        20,
        20,
        vec![],
        0.0,
        0.05,
        Procedure::Dagger,
        FamilySpec::Sidak { m: 20 },
        20000,
        1103,
    );
    let g = run_experiment(&global).unwrap();
    let g_gap = (g.rates.fwer_hat - 0.05).abs();
    let g_ok = g_gap <= 3.0 * g.rates.se_fwer;

    let mixed = sim_config(
        20,
        10,
        vec![2.0; 10],
        0.0,
        0.05,
        Procedure::Dagger,
        FamilySpec::Sidak { m: 20 },
        20000,
        1104,
    );
    let x = run_experiment(&mixed).unwrap();
    let x_ok = x.rates.fwer_hat <= 0.05 + 3.0 * x.rates.se_fwer;

    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        g_ok && x_ok && secs < 120.0,
        &format!(
            "family-wise rate: global null {:.4} (within 3 SE = {:.4} of 0.05), \
             mixed m0=10 {:.4} <= bound ({secs:.1}s)",
            g.rates.fwer_hat,
            3.0 * g.rates.se_fwer,
            x.rates.fwer_hat
        ),
    );
}

#[test]
fn c4_step_up_holds_the_false_discovery_rate() {
    let start = Instant::now();
    let base = sim_config(
        20,
        15,
        vec![2.0; 5],
        0.0,
        0.05,
        Procedure::Star,
        FamilySpec::Sidak { m: 20 },
        20000,
        2203,
    );
    let s = run_experiment(&base).unwrap();
    // under independence the step-up rule spends q * m0 / M
    let ident_ok = (s.rates.fdr_hat - 0.0375).abs() <= 3.0 * s.rates.se_fdr;
    let bound_ok = s.rates.fdr_hat <= 0.05 + 3.0 * s.rates.se_fdr;

    // the closed-form step-up reference must estimate the same rate
    let mut as_reference = base.clone();
    as_reference.procedure = Procedure::Bh;
    let b = run_experiment(&as_reference).unwrap();
    let ref_ok = s.rates.fdr_hat == b.rates.fdr_hat;

    let mut correlated = base.clone();
    correlated.alt_correlation = 0.5;
    correlated.seed = 2204;
    let c = run_experiment(&correlated).unwrap();
    let corr_ok = c.rates.fdr_hat <= 0.05 + 3.0 * c.rates.se_fdr;

    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        ident_ok && bound_ok && ref_ok && corr_ok && secs < 180.0,
        &format!(
            "discovery rate {:.4} vs identity 0.0375 (3 SE = {:.4}), reference \
             agrees exactly, correlated-alternative rate {:.4} <= bound ({secs:.1}s)",
            s.rates.fdr_hat,
            3.0 * s.rates.se_fdr,
            c.rates.fdr_hat
        ),
    );
}

#[test]
fn c5_crossing_time_invariants() {
    let start = Instant::now();
    let mut r = rng(0xC5);
    let mut violations = 0u32;
    for case in 0..10_000 {
        let m = r.gen_range(1..=30);
        let battery = random_battery(&mut r, m);
        let family = if case % 3 == 0 {
            SizeFamily::sidak(m as u32).unwrap()
        } else {
            random_weighted_family(&mut r, m)
        };
        let q = r.gen_range(0.001..0.999);
        let gp = generalized_pvalues(&battery, &family).unwrap();

        // alpha >= q reads ln(1-alpha) <= ln(1-q) on the exact scale.
        let ls_dag = alpha_dagger_ln_surv(&gp, &family, q).unwrap();
        if ls_dag > (-q).ln_1p() {
            violations += 1;
        }

        let j = j_star(&gp, &family, q).unwrap();
        let ls_st = alpha_star_ln_surv(&gp, &family, q).unwrap();
        if j > m {
            violations += 1;
        }
        // [a_(J), a_(J+1)) on the alpha scale is (ls_(J+1), ls_(J)] here.
        let hi = if j == 0 {
            0.0
        } else {
            gp.ordered_ln_surv(j - 1)
        };
        let lo = if j == m {
            f64::NEG_INFINITY
        } else {
            gp.ordered_ln_surv(j)
        };
        if !(ls_st <= hi && ls_st > lo) {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        violations == 0 && secs < 10.0,
        &format!(
            "10000 cases: step-down crossing >= q, step-up crossing inside its \
             order-statistic window, counts in range ({violations} violations, {secs:.2}s)"
        ),
    );
}

#[test]
fn c6_rejections_nest_as_the_budget_grows() {
    let start = Instant::now();
    let mut r = rng(0xC6);
    let mut violations = 0u32;
    for _ in 0..1000 {
        let m = r.gen_range(1..=25);
        let battery = random_battery(&mut r, m);
        let family = random_weighted_family(&mut r, m);
        let mut qs: Vec<f64> = (0..10).map(|_| r.gen_range(0.001..0.999)).collect();
        qs.sort_by(|a, b| a.partial_cmp(b).unwrap());

        for procedure in [Procedure::Dagger, Procedure::Star] {
            let mut prev: Option<BTreeSet<String>> = None;
            for &q in &qs {
                let out = run_procedure(&battery, &family, procedure, q).unwrap();
                if let Some(p) = &prev {
                    if !p.is_subset(&out.rejected) {
                        violations += 1;
                    }
                }
                prev = Some(out.rejected);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        6,
        violations == 0,
        &format!(
            "1000 instances x 10 sorted budgets: rejection sets nest for both \
             procedures ({violations} violations, {secs:.2}s)"
        ),
    );
}

/// Exhaustive simplex search at 1e-3 resolution; the independent check on
/// the water-filling solver.
fn grid_search_objective(roc: &RocModel, alpha: f64) -> f64 {
    let power = |m: usize, w: f64| roc.power(m, weighted_size(alpha, w));
    let mut best = f64::NEG_INFINITY;
    match roc.len() {
        2 => {
            for i in 0..=1000 {
                let w = i as f64 / 1000.0;
                best = best.max(power(0, w) + power(1, 1.0 - w));
            }
        }
        3 => {
            for i in 0..=1000u32 {
                let w0 = i as f64 / 1000.0;
                let p0 = power(0, w0);
                for j in 0..=(1000 - i) {
                    let w1 = j as f64 / 1000.0;
                    let w2 = (1000 - i - j) as f64 / 1000.0;
                    best = best.max(p0 + power(1, w1) + power(2, w2));
                }
            }
        }
        n => panic!("oracle supports 2 or 3 components, got {n}"),
    }
    best
}

#[test]
fn c7_allocator_is_optimal_and_buys_real_power() {
    let start = Instant::now();
    let mut r = rng(0xC7);

    // exhaustive-search agreement
    let mut worst_gap = 0.0_f64;
    for case in 0..20 {
        let m = if case % 2 == 0 { 2 } else { 3 };
        let thetas: Vec<f64> = (0..m).map(|_| r.gen_range(0.4..3.5)).collect();
        let alpha = r.gen_range(0.03..0.25);
        let roc = RocModel::normal_shift(thetas).unwrap();
        let sol = optimize_weights_at_alpha(&roc, alpha).unwrap();
        let oracle = grid_search_objective(&roc, alpha);
        worst_gap = worst_gap.max((sol.total_power - oracle).abs());
    }
    let oracle_ok = worst_gap <= 1e-5;

    // symmetry
    let roc_eq = RocModel::normal_shift(vec![1.8; 3]).unwrap();
    let sol_eq = optimize_weights_at_alpha(&roc_eq, 0.05).unwrap();
    let sym_ok = sol_eq.weights.iter().all(|w| (w - 1.0 / 3.0).abs() <= 1e-6);

    // Monte Carlo power margin of the tailored family over the
    // reciprocal-exponent split, paired on identical draws
    let roc = RocModel::normal_shift(vec![3.0, 0.5]).unwrap();
    let tailored = build_optimal_family(&roc, &uniform_interior_grid(999)).unwrap();
    let base = sim_config(
        2,
        0,
        vec![3.0, 0.5],
        0.0,
        0.05,
        Procedure::Star,
        tailored.to_spec(),
        20000,
        3301,
    );
    let (_, counts_opt) = run_experiment_with_counts(&base).unwrap();
    let mut with_sidak = base.clone();
    with_sidak.size_family = FamilySpec::Sidak { m: 2 };
    let (_, counts_sid) = run_experiment_with_counts(&with_sidak).unwrap();
    let margin = paired_margin(&counts_opt, &counts_sid);
    let power_ok = margin > 3.0;

    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        oracle_ok && sym_ok && power_ok && secs < 300.0,
        &format!(
            "20 cases within {worst_gap:.2e} of the exhaustive search, equal effects \
             split evenly, tailored family beats the even split by {margin:.1} SE \
             on paired draws ({secs:.1}s)"
        ),
    );
}

/// Mean of the paired true-discovery differences in units of its SE.
fn paired_margin(a: &[ErrorCounts], b: &[ErrorCounts]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.s - x.s0) as f64 - (y.s - y.s0) as f64)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    mean / (var / n).sqrt()
}

#[test]
fn c8_size_function_contracts() {
    let start = Instant::now();
    let mut ok = true;
    let mut notes: Vec<String> = Vec::new();

    // inversion round trip across kinds
    let mut r = rng(0xC8);
    let fams = [
        SizeFamily::sidak(7).unwrap(),
        random_weighted_family(&mut r, 7),
        SizeFamily::bonferroni(7).unwrap(),
    ];
    let mut worst = 0.0_f64;
    for fam in &fams {
        for _ in 0..200 {
            let alpha = r.gen_range(1e-6..1.0);
            for m in 0..fam.len() {
                let u = fam.evaluate(m, alpha);
                let back = fam.members()[m].invert(u).unwrap();
                worst = worst.max((back - alpha).abs());
            }
        }
    }
    if worst > 1e-10 {
        ok = false;
    }
    notes.push(format!("round-trip {worst:.1e}"));

    // the reciprocal-exponent family is the equal-weight special case
    let mut consistency = 0.0_f64;
    for m in [1u32, 4, 11] {
        let sid = SizeFamily::sidak(m).unwrap();
        let w = SizeFamily::weighted(&vec![1.0 / m as f64; m as usize]).unwrap();
        for k in 0..=100 {
            let alpha = k as f64 / 100.0;
            consistency = consistency.max((sid.evaluate(0, alpha) - w.evaluate(0, alpha)).abs());
        }
    }
    if consistency > 1e-14 {
        ok = false;
    }
    notes.push(format!("equal-weight consistency {consistency:.1e}"));

    // the validator names the linear family's endpoint failure
    let bonf = validate_family(&SizeFamily::bonferroni(4).unwrap(), 101, 4, 1e-9);
    if bonf.a1_pass || !bonf.a2_pass || !bonf.a3_pass {
        ok = false;
    }
    notes.push("linear family flagged on A1 only".into());

    // and the unbalanced-exponent failure at the full subset size
    let skew = SizeFamily::weighted(&[0.7, 0.3]).unwrap();
    let rep = validate_family(&skew, 101, 2, 1e-9);
    if rep.a4_pass_by_k[&2] || !rep.a4_pass_by_k[&1] || !rep.core_pass() {
        ok = false;
    }
    notes.push("unbalanced exponents flagged at k = M".into());

    let secs = start.elapsed().as_secs_f64();
    verdict(
        8,
        ok && secs < 5.0,
        &format!("{} ({secs:.2}s)", notes.join("; ")),
    );
}

#[test]
fn c9_results_are_identical_across_worker_counts() {
    let start = Instant::now();
    let config = sim_config(
        20,
        15,
        vec![2.0; 5],
        0.3,
        0.05,
        Procedure::Star,
        FamilySpec::Sidak { m: 20 },
        2000,
        4407,
    );
    let run_with = |threads: usize| -> String {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let result = run_experiment(&config).unwrap();
                serde_json::to_string_pretty(&result).unwrap()
            })
    };
    let single = run_with(1);
    let pooled = run_with(4);
    let again = run_with(4);
    let ok = single == pooled && pooled == again;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        9,
        ok,
        &format!(
            "serialized results byte-identical across 1 and 4 workers and across \
             repeat runs ({secs:.2}s)"
        ),
    );
}
