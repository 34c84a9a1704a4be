//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use chmech_core::che::{che_requester_search, che_run, poisson_pmf, CheConfig};
use chmech_core::mech_opt::{mechanism_from_masses, solve_fixed_set, FixedSetSolution, Provenance};
use chmech_core::ne::ne_solve;
use chmech_core::oracles::integer_br_dynamics;
use chmech_core::{LogUtility, Mechanism, Population, SolverConfig, TaskCatalog, TaskSet};
use chmech_lab::experiments::{
    alg1_points, fig3_row, fig5_base, fig6_base, homogeneous_control_row, max_gap, reward_catalog, run_fig6,
    table_rows, TABLE_TAUS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > limit {
        o.pass = false;
    }
    o.detail = format!("{} [{:.2?} of {:?}]", o.detail, took, limit);
    o
}

fn c1_saturation() -> Outcome {
    timed(Duration::from_secs(1), || {
        let cat = reward_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::homogeneous(100.0, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let sol = solve_fixed_set(&cat, &pop, &util, TaskSet::EMPTY, &cfg).unwrap();
        let nm = mechanism_from_masses(&cat, &pop, &util, TaskSet::EMPTY, &sol.masses, Provenance::FixedSet).unwrap();
        // Unconstrained stationarity: R = c (u/c - 1/q) = 30 - 2.
        let expect = 2.0 * (30.0 / 2.0 - 1.0);
        let r1 = nm.mechanism.rewards[0];
        check((r1 - expect).abs() <= 1e-6, format!("R1 = {r1:.12}, expected {expect}"))
    })
}

/// Worst optimality-condition violation of a fixed-set solution under
/// `U_m(x) = u_m ln(1 + x)`, evaluated from the closed-form marginal.
fn kkt_residual(pairs: &[(f64, f64)], pop: &Population, sol: &FixedSetSolution) -> f64 {
    let mut worst = 0.0f64;
    let (mut total, mut high) = (0.0, 0.0);
    for (m, (&(u, c), &n)) in pairs.iter().zip(&sol.masses).enumerate() {
        let in_set = sol.high_set.contains(m);
        let q = if in_set { pop.q_high() } else { pop.q_low() };
        let price = c + sol.mu_total + if in_set { sol.nu_high } else { 0.0 };
        let marginal = q * u / (1.0 + q * n);
        worst = worst.max(if n > 0.0 { (marginal - price).abs() } else { marginal - price }).max(-n);
        total += n;
        if in_set {
            high += n;
        }
    }
    worst
        .max(total - pop.n_total())
        .max(high - pop.n_high())
        .max((sol.mu_total * (pop.n_total() - total)).abs())
        .max((sol.nu_high * (pop.n_high() - high)).abs())
        .max(-sol.mu_total)
        .max(-sol.nu_high)
}

fn c2_kkt_suite() -> Outcome {
    timed(Duration::from_secs(10), || {
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let m = rng.random_range(2..=6);
            let pairs: Vec<(f64, f64)> =
                (0..m).map(|_| (rng.random_range(1.0..50.0), rng.random_range(0.5..5.0))).collect();
            let cat = TaskCatalog::from_pairs(&pairs).unwrap();
            let util = LogUtility::from_catalog(&cat);
            let n = rng.random_range(1.0..100.0);
            let pop = Population::new(n, n * rng.random_range(0.0..1.0), 2.0, 1.0).unwrap();
            let set = TaskSet::from_bits(rng.random_range(0..1u64 << m));
            let sol = solve_fixed_set(&cat, &pop, &util, set, &cfg).unwrap();
            worst = worst.max(kkt_residual(&pairs, &pop, &sol));
        }
        check(worst <= 1e-8, format!("worst KKT residual {worst:.3e}"))
    })
}

fn c3_integer_oracle() -> Outcome {
    timed(Duration::from_secs(30), || {
        let cfg = SolverConfig::default();
        let mut worst = 0.0f64;
        let mut failures = 0;
        let mut worst_case = 0;
        for i in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
            let m = rng.random_range(1..=3);
            let costs: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..3.0)).collect();
            let cat = TaskCatalog::new(costs.iter().map(|&c| chmech_core::Task { u: 1.0, c }).collect()).unwrap();
            let n = rng.random_range(5..=30) as f64;
            let n_high = if i % 2 == 0 { 0.0 } else { rng.random_range(1..=n as usize) as f64 };
            let pop = Population::new(n, n_high, 2.0, 1.0).unwrap();
            let rewards: Vec<f64> = costs.iter().map(|&c| rng.random_range(c..40.0)).collect();
            let quality: Vec<f64> =
                (0..m).map(|_| if n_high > 0.0 && rng.random_bool(0.5) { 2.0 } else { 1.0 }).collect();
            let mech = Mechanism::new(rewards, quality).unwrap();
            let ne = ne_solve(&cat, &pop, &mech, &cfg).unwrap().totals();
            match integer_br_dynamics(&cat, &pop, &mech, None, i, &cfg) {
                Ok(p) => {
                    for (c, k) in ne.iter().zip(p.totals()) {
                        let gap = (c - k as f64).abs();
                        if gap > worst {
                            worst = gap;
                            worst_case = i;
                        }
                    }
                }
                Err(_) => failures += 1,
            }
        }
        check(
            worst <= 1.0 && failures == 0,
            format!("worst per-task gap {worst:.4} workers (instance {worst_case}), {failures} unconverged runs"),
        )
    })
}

fn c4_grasp() -> Outcome {
    timed(Duration::from_secs(120), || {
        let cfg = SolverConfig::default();
        let seeds: Vec<u64> = (0..10).collect();
        let small = alg1_points(&[5, 10], &[0.5], &seeds, None, &cfg).unwrap();
        let large = alg1_points(&[20], &[0.5], &seeds, Some(500), &cfg).unwrap();
        let min_small = small.iter().map(|p| p.ratio()).fold(f64::INFINITY, f64::min);
        let min_large = large.iter().map(|p| p.ratio()).fold(f64::INFINITY, f64::min);
        let never_above = small.iter().chain(&large).all(|p| p.grasp <= p.exhaustive + 1e-9);
        check(
            min_small >= 0.98 && min_large >= 0.97 && never_above,
            format!("worst ratio M<=10: {min_small:.5}, M=20: {min_large:.5}"),
        )
    })
}

fn c5_homogeneous_convergence() -> Outcome {
    timed(Duration::from_secs(10), || {
        let cfg = SolverConfig::default();
        let row = homogeneous_control_row();
        let ne: f64 = ne_solve(&row.catalog, &row.pop, &row.mech, &cfg).unwrap().totals().iter().sum();
        let gaps: Vec<f64> = TABLE_TAUS.iter().map(|&t| max_gap(&row, t, false, &cfg).unwrap()).collect();
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        let ratio = gaps[4] / gaps[0];
        check(
            decreasing && ratio <= 0.1,
            format!("gaps {gaps:.4?}, last/first {ratio:.4}, NE participation {ne:.3} of {}", row.pop.n_total()),
        )
    })
}

fn c6_tables() -> Outcome {
    let cfg = SolverConfig::default();
    let rows = table_rows();
    let first = max_gap(&rows[0], 5.0, false, &cfg).unwrap();
    let near = (first - 3.8772).abs() <= 0.15 * 3.8772;
    let mut broken = Vec::new();
    for row in &rows {
        let gaps: Vec<f64> = TABLE_TAUS.iter().map(|&t| max_gap(row, t, false, &cfg).unwrap()).collect();
        if !gaps.windows(2).all(|w| w[1] < w[0]) {
            broken.push(format!("{} {gaps:.4?}", row.label));
        }
    }
    check(
        near && broken.is_empty(),
        format!("row 1 at tau=5: {first:.4} (target 3.8772); non-monotone rows: [{}]", broken.join("; ")),
    )
}

fn c7_high_participation() -> Outcome {
    let cfg = SolverConfig::default();
    let mut configs = table_rows();
    configs.push(fig3_row());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..40 {
        let mech = Mechanism::new(
            (0..4).map(|_| rng.random_range(5.0..60.0)).collect(),
            (0..4).map(|_| if rng.random_bool(0.4) { 2.0 } else { 1.0 }).collect(),
        )
        .unwrap();
        let mut row = fig3_row();
        row.label = format!("random{i}");
        row.pop = Population::new(rng.random_range(10.0..60.0), 0.0, 2.0, 1.0).unwrap();
        row.pop = row.pop.with_n_high(row.pop.n_total() * rng.random_range(0.1..0.6)).unwrap();
        row.mech = mech;
        configs.push(row);
    }
    let mut tested = 0;
    let mut worst = 0.0f64;
    for row in &configs {
        let ne = ne_solve(&row.catalog, &row.pop, &row.mech, &cfg).unwrap();
        if (ne.totals().iter().sum::<f64>() - row.pop.n_total()).abs() > 1e-9 {
            continue;
        }
        tested += 1;
        for tau in [1.0, 2.5, 5.0, 10.0, 20.0, 40.0, 80.0] {
            let out = che_run(&row.catalog, &row.pop, &row.mech, &CheConfig::new(tau, &cfg).unwrap(), &cfg).unwrap();
            for rec in &out.trace {
                worst = worst.max((rec.e_high.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    check(
        tested > 0 && worst <= 1e-12,
        format!("{tested} full-participation configs, worst |sum e_high - 1| = {worst:.3e}"),
    )
}

fn c8_quality_regimes() -> Outcome {
    let cfg = SolverConfig::default();
    let base = fig5_base();
    let util = LogUtility::from_catalog(&base.catalog);
    let che = CheConfig::new(1.5, &cfg).unwrap();
    let mut got = Vec::new();
    let mut pass = true;
    for (nh, want) in [
        (1.0, TaskSet::EMPTY),
        (2.0, TaskSet::EMPTY),
        (3.0, TaskSet::EMPTY),
        (4.0, TaskSet::EMPTY.with(2)),
        (20.0, TaskSet::full(3)),
    ] {
        let pop = base.pop.with_n_high(nh).unwrap();
        let res = che_requester_search(&base.catalog, &pop, &util, &che, &cfg).unwrap();
        pass &= res.high_set == want;
        got.push(format!("N_H={nh}: {} (want {want})", res.high_set));
    }
    check(pass, got.join(", "))
}

fn c9_profit_divergence() -> Outcome {
    let cfg = SolverConfig::default();
    let n_values: Vec<f64> = (5..=20).map(|i| 5.0 * i as f64).collect();
    let t = run_fig6(&fig6_base(), 5.0, &n_values, &cfg).unwrap();
    let fr = t.series("profit_fr");
    let br = t.series("profit_br");
    // FR saturates once the pool covers the unconstrained optimum (80/3).
    let sat: Vec<f64> = fr.iter().filter(|p| p.0 >= 30.0).map(|p| p.1).collect();
    let constant = sat.iter().all(|&v| (v - sat[0]).abs() <= 1e-9 * sat[0].abs());
    let increasing = br.windows(2).all(|w| w[1].1 > w[0].1);
    let dominates = fr.iter().zip(&br).all(|(f, b)| b.1 - f.1 >= 0.0);
    check(
        constant && increasing && dominates,
        format!(
            "FR constant for N>=30: {constant}; BR strictly increasing over 25..100: {increasing}; BR >= FR: {dominates}; BR(100) = {:.3}, FR(100) = {:.3}",
            br.last().unwrap().1,
            fr.last().unwrap().1
        ),
    )
}

fn c10_poisson() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mode_ok = true;
    for _ in 0..50 {
        let tau: f64 = rng.random_range(0.5..200.0);
        let k = tau.floor() as usize;
        let fk = poisson_pmf(k, tau);
        let max = (0..k + 100).map(|j| poisson_pmf(j, tau)).fold(0.0, f64::max);
        // Independent log-space evaluation of the mode value.
        let ln_fact: f64 = (1..=k).map(|j| (j as f64).ln()).sum();
        let direct = (k as f64 * tau.ln() - tau - ln_fact).exp();
        mode_ok &= fk >= max * (1.0 - 1e-12) && (fk - direct).abs() <= 1e-10 * direct;
    }
    let mut bound_ok = true;
    let mut peaks = Vec::new();
    for tau in [10.0, 100.0, 1000.0, 10000.0] {
        let p = poisson_pmf(tau as usize, tau);
        bound_ok &= p <= 1.1 / (2.0 * std::f64::consts::PI * tau).sqrt();
        peaks.push(format!("{p:.5}"));
    }
    check(mode_ok && bound_ok, format!("mode at floor(tau): {mode_ok}; peaks {}", peaks.join(", ")))
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.json");
    std::fs::write(
        &scen,
        r#"{"tasks":[{"u":30,"c":2},{"u":12,"c":1},{"u":8,"c":3}],
            "population":{"n":20,"n_high":6,"q_high":2,"q_low":1},
            "mechanism":{"rewards":[20,9,6],"quality_reqs":[2,1,1]}}"#,
    )
    .unwrap();
    let s = scen.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["ne", "--scenario", s],
        vec!["ne", "--scenario", s, "--verify"],
        vec!["opt", "--scenario", s, "--method", "grasp", "--alpha", "0.7"],
        vec!["opt", "--scenario", s, "--method", "exhaustive"],
        vec!["che", "--scenario", s, "--tau", "3"],
        vec!["oracle", "--scenario", s],
        vec!["experiment", "--name", "tables_1_2"],
        vec!["experiment", "--name", "fig5_heterogeneous_vs_NH", "--sweep", "4,8"],
        vec!["experiment", "--name", "fig6_profit_vs_N", "--sweep", "20,60", "--jobs", "2"],
    ];
    let mut bad = Vec::new();
    for (i, args) in cases.iter().enumerate() {
        let mut outs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("o{i}_{rep}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_chmech"))
                .args(args)
                .args(["--seed", "42", "--out", out.to_str().unwrap()])
                .status()
                .unwrap();
            outs.push((status.success(), std::fs::read(&out).unwrap_or_default()));
        }
        if !(outs[0].0 && outs[1].0 && !outs[0].1.is_empty() && outs[0].1 == outs[1].1) {
            bad.push(args.join(" "));
        }
    }
    check(bad.is_empty(), format!("{} invocations, differing or failing: {bad:?}", cases.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("saturation reward", c1_saturation),
        ("fixed-set KKT suite", c2_kkt_suite),
        ("integer best-response agreement", c3_integer_oracle),
        ("GRASP near-optimality", c4_grasp),
        ("homogeneous CHE convergence", c5_homogeneous_convergence),
        ("convergence tables", c6_tables),
        ("high-class participation", c7_high_participation),
        ("quality-differentiation regimes", c8_quality_regimes),
        ("profit divergence", c9_profit_divergence),
        ("Poisson level properties", c10_poisson),
        ("CLI determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
