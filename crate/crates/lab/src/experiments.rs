//! Numerical studies: reward and profit sweeps, quality regimes,
//! convergence of the bounded-rational model and the set-search benchmark.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chmech_core::che::{che_requester_search, che_run, CheConfig};
use chmech_core::mech_opt::{exhaustive_set_search, grasp_search, mechanism_from_masses, solve_fixed_set, Provenance};
use chmech_core::ne::ne_solve;
use chmech_core::scenario::Scenario;
use chmech_core::{LogUtility, Mechanism, Population, SolverConfig, TaskCatalog, TaskSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::table::ResultTable;
use crate::LabError;

type Result<T> = std::result::Result<T, LabError>;

/// Catalog and pool a runner sweeps around.
#[derive(Debug, Clone, PartialEq)]
pub struct Base {
    pub catalog: TaskCatalog,
    pub pop: Population,
}

impl Base {
    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        Ok(Self { catalog: s.catalog()?, pop: s.population()? })
    }
}

/// Three-task catalog used by the reward and quality studies.
pub fn reward_catalog() -> TaskCatalog {
    TaskCatalog::from_pairs(&[(30.0, 2.0), (12.0, 1.0), (8.0, 3.0)]).expect("static catalog")
}

pub fn fig4_base() -> Base {
    Base { catalog: reward_catalog(), pop: Population::homogeneous(100.0, 1.0).expect("static pool") }
}

pub fn fig5_base() -> Base {
    Base { catalog: reward_catalog(), pop: Population::new(20.0, 0.0, 2.0, 1.0).expect("static pool") }
}

pub fn fig6_base() -> Base {
    fig4_base()
}

fn par_points<T, F>(points: &[f64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(f64) -> Result<T> + Sync,
{
    points.par_iter().map(|&p| f(p)).collect()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// FR and CHE-optimal reward of task 1 against the pool size.
pub fn run_fig4(base: &Base, taus: &[f64], n_values: &[f64], cfg: &SolverConfig) -> Result<ResultTable> {
    let util = LogUtility::from_catalog(&base.catalog);
    let parts = par_points(n_values, |n| {
        let pop = base.pop.with_n_total(n)?;
        let mut t = ResultTable::new("n");
        let sol = solve_fixed_set(&base.catalog, &pop, &util, TaskSet::EMPTY, cfg)?;
        let fr = mechanism_from_masses(&base.catalog, &pop, &util, TaskSet::EMPTY, &sol.masses, Provenance::FixedSet)?;
        t.push(n, "fr_reward_1", fr.mechanism.rewards[0]);
        for &tau in taus {
            let che = CheConfig::new(tau, cfg)?;
            let res = che_requester_search(&base.catalog, &pop, &util, &che, cfg)?;
            t.push(n, format!("che_reward_1_tau{tau}"), res.mechanism.rewards[0]);
        }
        Ok(t)
    })?;
    Ok(merge("n", parts))
}

/// Quality flags under both models and the CHE reward of task 1 against
/// the number of high-capability workers.
pub fn run_fig5(base: &Base, tau: f64, nh_values: &[f64], cfg: &SolverConfig) -> Result<ResultTable> {
    let util = LogUtility::from_catalog(&base.catalog);
    let m_count = base.catalog.len();
    let parts = par_points(nh_values, |nh| {
        let pop = base.pop.with_n_high(nh)?;
        let mut t = ResultTable::new("n_high");
        let fr = exhaustive_set_search(&base.catalog, &pop, &util, cfg)?;
        let che = CheConfig::new(tau, cfg)?;
        let br = che_requester_search(&base.catalog, &pop, &util, &che, cfg)?;
        for m in 0..m_count {
            t.push(nh, format!("fr_high_{}", m + 1), flag(fr.high_set.contains(m)));
            t.push(nh, format!("che_high_{}", m + 1), flag(br.high_set.contains(m)));
        }
        t.push(nh, "fr_reward_1", fr.mechanism.rewards[0]);
        t.push(nh, "che_reward_1", br.mechanism.rewards[0]);
        t.push(nh, "fr_profit", fr.profit);
        t.push(nh, "che_profit", br.profit);
        Ok(t)
    })?;
    Ok(merge("n_high", parts))
}

/// Worker counts under the FR-optimal mechanism, and the optimal profits
/// of both models, against the pool size.
pub fn run_fig6(base: &Base, tau: f64, n_values: &[f64], cfg: &SolverConfig) -> Result<ResultTable> {
    let util = LogUtility::from_catalog(&base.catalog);
    let m_count = base.catalog.len();
    let parts = par_points(n_values, |n| {
        let pop = base.pop.with_n_total(n)?;
        let mut t = ResultTable::new("n");
        let che = CheConfig::new(tau, cfg)?;
        let fr = grasp_search(&base.catalog, &pop, &util, cfg)?;
        let same = che_run(&base.catalog, &pop, &fr.mechanism, &che, cfg)?.totals();
        for m in 0..m_count {
            t.push(n, format!("fr_count_{}", m + 1), fr.masses[m]);
            t.push(n, format!("che_count_{}", m + 1), same[m]);
        }
        let br = che_requester_search(&base.catalog, &pop, &util, &che, cfg)?;
        t.push(n, "profit_fr", fr.profit);
        t.push(n, "profit_br", br.profit);
        Ok(t)
    })?;
    Ok(merge("n", parts))
}

/// A fixed mechanism whose CHE outcome is compared with its NE.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub label: String,
    pub catalog: TaskCatalog,
    pub pop: Population,
    pub mech: Mechanism,
}

impl ConvergenceRow {
    fn table(label: &str, rewards: [f64; 4], high: [bool; 4], n: f64, n_high: f64) -> Self {
        let catalog = TaskCatalog::from_pairs(&[(1.0, 1.0), (1.0, 2.0), (1.0, 1.5), (1.0, 2.0)]).expect("static catalog");
        let pop = Population::new(n, n_high, 2.0, 1.0).expect("static pool");
        let set: TaskSet = (0..4).filter(|&m| high[m]).collect();
        let mech = Mechanism::from_high_set(rewards.to_vec(), set, &pop).expect("static mechanism");
        Self { label: label.to_string(), catalog, pop, mech }
    }
}

/// Mechanisms of the two convergence tables; three rows each.
pub fn table_rows() -> Vec<ConvergenceRow> {
    let t = true;
    let f = false;
    vec![
        ConvergenceRow::table("t1_row1", [5.0, 20.0, 15.0, 10.0], [t, f, f, f], 50.0, 15.0),
        ConvergenceRow::table("t1_row2", [12.0, 18.0, 15.0, 8.0], [t, f, f, t], 50.0, 15.0),
        ConvergenceRow::table("t1_row3", [20.0, 14.0, 17.0, 6.0], [f, f, t, f], 50.0, 15.0),
        ConvergenceRow::table("t2_row1", [50.0, 30.0, 15.0, 20.0], [t, f, f, f], 200.0, 40.0),
        ConvergenceRow::table("t2_row2", [42.0, 25.0, 15.0, 18.0], [t, t, f, f], 200.0, 40.0),
        ConvergenceRow::table("t2_row3", [26.0, 16.0, 32.0, 18.0], [t, f, f, t], 200.0, 40.0),
    ]
}

/// Mixed-quality mechanism of the convergence figure.
pub fn fig3_row() -> ConvergenceRow {
    ConvergenceRow::table("fig3", [15.0, 20.0, 20.0, 30.0], [false, true, true, false], 100.0, 30.0)
}

/// Homogeneous pool with every worker participating at the NE.
pub fn homogeneous_control_row() -> ConvergenceRow {
    let mut row = ConvergenceRow::table("homogeneous_control", [15.0, 20.0, 20.0, 30.0], [false; 4], 100.0, 0.0);
    row.pop = Population::homogeneous(100.0, 1.0).expect("static pool");
    row
}

pub const TABLE_TAUS: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];

/// Largest per-task gap between CHE and NE totals; `normalized` divides
/// the CHE masses by the covered Poisson mass first.
pub fn max_gap(row: &ConvergenceRow, tau: f64, normalized: bool, cfg: &SolverConfig) -> Result<f64> {
    let ne = ne_solve(&row.catalog, &row.pop, &row.mech, cfg)?.totals();
    let out = che_run(&row.catalog, &row.pop, &row.mech, &CheConfig::new(tau, cfg)?, cfg)?;
    let scale = if normalized { out.tf_final } else { 1.0 };
    Ok(out
        .totals()
        .iter()
        .zip(&ne)
        .map(|(c, n)| (c / scale - n).abs())
        .fold(0.0, f64::max))
}

/// Raw and normalized CHE-vs-NE gaps per row and `tau`.
pub fn run_convergence(rows: &[ConvergenceRow], taus: &[f64], cfg: &SolverConfig) -> Result<ResultTable> {
    let parts = par_points(taus, |tau| {
        let mut t = ResultTable::new("tau");
        for row in rows {
            t.push(tau, row.label.clone(), max_gap(row, tau, false, cfg)?);
            t.push(tau, format!("{}_normalized", row.label), max_gap(row, tau, true, cfg)?);
        }
        Ok(t)
    })?;
    Ok(merge("tau", parts))
}

/// Random benchmark instance for the set-search comparison.
pub fn alg1_instance(m: usize, seed: u64) -> Result<(TaskCatalog, Population)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    rng.set_stream(m as u64);
    let pairs: Vec<(f64, f64)> =
        (0..m).map(|_| (rng.random_range(1.0..50.0), rng.random_range(0.5..5.0))).collect();
    let n = rng.random_range(2.0 * m as f64..8.0 * m as f64);
    let n_high = n * rng.random_range(0.1..0.5);
    Ok((TaskCatalog::from_pairs(&pairs)?, Population::new(n, n_high, 2.0, 1.0)?))
}

/// Restart budget: the standard `20 M`, or 500 for the largest catalogs.
pub fn alg1_budget(m: usize) -> usize {
    if m >= 20 {
        500
    } else {
        20 * m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alg1Point {
    pub m: usize,
    pub seed: u64,
    pub alpha: f64,
    pub grasp: f64,
    pub exhaustive: f64,
}

impl Alg1Point {
    pub fn ratio(&self) -> f64 {
        if self.exhaustive == 0.0 {
            1.0
        } else {
            self.grasp / self.exhaustive
        }
    }
}

/// GRASP and exhaustive profits for every `(M, seed, alpha)`. The
/// exhaustive baseline is computed once per instance.
pub fn alg1_points(
    m_values: &[usize],
    alphas: &[f64],
    seeds: &[u64],
    max_iter: Option<usize>,
    cfg: &SolverConfig,
) -> Result<Vec<Alg1Point>> {
    let cases: Vec<(usize, u64)> = m_values.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let per_case: Vec<Vec<Alg1Point>> = cases
        .par_iter()
        .map(|&(m, seed)| {
            let (catalog, pop) = alg1_instance(m, seed)?;
            let util = LogUtility::from_catalog(&catalog);
            let exhaustive = exhaustive_set_search(&catalog, &pop, &util, cfg)?.profit;
            alphas
                .iter()
                .map(|&alpha| {
                    let run = SolverConfig {
                        grasp_alpha: alpha,
                        grasp_max_iter: Some(max_iter.unwrap_or_else(|| alg1_budget(m))),
                        rng_seed: seed,
                        ..*cfg
                    };
                    let grasp = grasp_search(&catalog, &pop, &util, &run)?.profit;
                    Ok(Alg1Point { m, seed, alpha, grasp, exhaustive })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Mean and worst GRASP/exhaustive profit ratio per `(M, alpha)`.
pub fn run_alg1_eval(
    m_values: &[usize],
    alphas: &[f64],
    seeds: &[u64],
    max_iter: Option<usize>,
    cfg: &SolverConfig,
) -> Result<ResultTable> {
    let points = alg1_points(m_values, alphas, seeds, max_iter, cfg)?;
    let mut t = ResultTable::new("alpha");
    for &m in m_values {
        for &alpha in alphas {
            let ratios: Vec<f64> =
                points.iter().filter(|p| p.m == m && p.alpha == alpha).map(Alg1Point::ratio).collect();
            let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            t.push(alpha, format!("ratio_mean_m{m}"), mean);
            t.push(alpha, format!("ratio_min_m{m}"), min);
        }
    }
    t.sort();
    Ok(t)
}

fn merge(axis: &str, parts: Vec<ResultTable>) -> ResultTable {
    let mut t = ResultTable::new(axis);
    for p in parts {
        t.extend(p);
    }
    t.sort();
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    Fig4RewardVsN,
    Fig5HeterogeneousVsNh,
    Fig6ProfitVsN,
    Fig3Convergence,
    Tables12,
    Alg1Eval,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::Fig4RewardVsN,
        ExperimentName::Fig5HeterogeneousVsNh,
        ExperimentName::Fig6ProfitVsN,
        ExperimentName::Fig3Convergence,
        ExperimentName::Tables12,
        ExperimentName::Alg1Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Fig4RewardVsN => "fig4_reward_vs_N",
            ExperimentName::Fig5HeterogeneousVsNh => "fig5_heterogeneous_vs_NH",
            ExperimentName::Fig6ProfitVsN => "fig6_profit_vs_N",
            ExperimentName::Fig3Convergence => "fig3_convergence",
            ExperimentName::Tables12 => "tables_1_2",
            ExperimentName::Alg1Eval => "alg1_eval",
        }
    }

    /// Default sweep of the runner's axis.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            ExperimentName::Fig4RewardVsN => (1..=30).map(|i| 10.0 * i as f64).collect(),
            ExperimentName::Fig5HeterogeneousVsNh => (0..=20).map(f64::from).collect(),
            ExperimentName::Fig6ProfitVsN => (2..=20).map(|i| 5.0 * i as f64).collect(),
            ExperimentName::Fig3Convergence => vec![1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 40.0, 60.0, 80.0],
            ExperimentName::Tables12 => TABLE_TAUS.to_vec(),
            ExperimentName::Alg1Eval => (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| LabError::Usage(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    /// Axis values; the runner's default when `None`.
    pub sweep: Option<Vec<f64>>,
    /// Replaces the built-in catalog and pool.
    pub base: Option<Scenario>,
    pub out: Option<PathBuf>,
    /// Restart budget override for the set-search benchmark.
    pub max_iter: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(name: ExperimentName) -> Self {
        Self { name, sweep: None, base: None, out: None, max_iter: None }
    }

    pub fn run(&self, cfg: &SolverConfig) -> Result<ResultTable> {
        let sweep = self.sweep.clone().unwrap_or_else(|| self.name.default_sweep());
        if sweep.is_empty() {
            return Err(LabError::Usage("sweep must not be empty".into()));
        }
        let base = |default: Base| -> Result<Base> {
            match &self.base {
                Some(s) => Base::from_scenario(s),
                None => Ok(default),
            }
        };
        match self.name {
            ExperimentName::Fig4RewardVsN => run_fig4(&base(fig4_base())?, &[1.0, 1.5, 2.0], &sweep, cfg),
            ExperimentName::Fig5HeterogeneousVsNh => run_fig5(&base(fig5_base())?, 1.5, &sweep, cfg),
            ExperimentName::Fig6ProfitVsN => run_fig6(&base(fig6_base())?, 5.0, &sweep, cfg),
            ExperimentName::Fig3Convergence | ExperimentName::Tables12 => {
                let rows = match (&self.base, self.name) {
                    (Some(s), _) => vec![ConvergenceRow {
                        label: "scenario".into(),
                        catalog: s.catalog()?,
                        pop: s.population()?,
                        mech: s.require_mechanism()?,
                    }],
                    (None, ExperimentName::Fig3Convergence) => vec![fig3_row()],
                    (None, _) => {
                        let mut rows = table_rows();
                        rows.push(homogeneous_control_row());
                        rows
                    }
                };
                run_convergence(&rows, &sweep, cfg)
            }
            ExperimentName::Alg1Eval => {
                let seeds: Vec<u64> = (0..10).collect();
                run_alg1_eval(&[5, 10, 20], &sweep, &seeds, self.max_iter, cfg)
            }
        }
    }
}
