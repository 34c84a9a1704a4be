//! Requester-side optimization under full rationality.
//!
//! For a fixed high-quality task set the requester picks target masses
//! `N_m` maximizing `sum U_m(q_m N_m) - c_m N_m` subject to the total
//! supply and the high-class supply on the high set. Rewards `R_m = c_m N_m`
//! then make those masses an equilibrium with zero worker surplus.
//! The set itself is found by enumeration or by randomized greedy search.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{Mechanism, Population, SolverConfig, TaskCatalog, TaskSet, UtilityModel};
use crate::roots::smallest_level;

/// Largest catalog accepted by [`exhaustive_set_search`].
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedSetSolution {
    pub high_set: TaskSet,
    pub masses: Vec<f64>,
    pub mu_total: f64,
    pub nu_high: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Exhaustive,
    Grasp,
    HomogeneousClosedForm,
    FixedSet,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Exhaustive => "exhaustive",
            Provenance::Grasp => "grasp",
            Provenance::HomogeneousClosedForm => "homogeneous-closed-form",
            Provenance::FixedSet => "fixed-set",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearOptMechanism {
    pub mechanism: Mechanism,
    pub high_set: TaskSet,
    pub masses: Vec<f64>,
    pub profit: f64,
    pub provenance: Provenance,
}

/// Shared data for repeated fixed-set solves on one instance.
struct Problem<'a> {
    catalog: &'a TaskCatalog,
    util: &'a dyn UtilityModel,
    pop: &'a Population,
    tol: f64,
}

struct Levels {
    /// Price level the high set alone would clear at.
    high_level: f64,
    mu: f64,
}

impl<'a> Problem<'a> {
    fn q(&self, set: TaskSet, m: usize) -> f64 {
        if set.contains(m) {
            self.pop.q_high()
        } else {
            self.pop.q_low()
        }
    }

    /// Mass at which the marginal value `q U'(q N)` falls to `price`.
    fn demand(&self, set: TaskSet, m: usize, price: f64) -> f64 {
        let q = self.q(set, m);
        self.util.inverse_derivative(m, price / q) / q
    }

    fn price_ceiling(&self, set: TaskSet) -> f64 {
        (0..self.catalog.len())
            .map(|m| self.q(set, m) * self.util.derivative(m, 0.0) - self.catalog.cost(m))
            .fold(0.0, f64::max)
    }

    fn levels(&self, set: TaskSet) -> Result<Levels> {
        let m_count = self.catalog.len();
        let cost = |m: usize| self.catalog.cost(m);
        let hint = self.price_ceiling(set);
        let high_level = if set.is_empty() {
            0.0
        } else {
            let d = |s: f64| set.iter().map(|m| self.demand(set, m, cost(m) + s)).sum::<f64>();
            smallest_level(d, self.pop.n_high(), hint, self.tol, "high-set multiplier")?
        };
        let total = |mu: f64| {
            (0..m_count)
                .map(|m| {
                    let extra = if set.contains(m) { mu.max(high_level) } else { mu };
                    self.demand(set, m, cost(m) + extra)
                })
                .sum::<f64>()
        };
        let mu = smallest_level(total, self.pop.n_total(), hint, self.tol, "total-supply multiplier")?;
        Ok(Levels { high_level, mu })
    }

    fn mass(&self, set: TaskSet, lv: &Levels, m: usize) -> f64 {
        let extra = if set.contains(m) { lv.mu.max(lv.high_level) } else { lv.mu };
        self.demand(set, m, self.catalog.cost(m) + extra)
    }

    fn profit_of(&self, set: TaskSet, lv: &Levels) -> f64 {
        (0..self.catalog.len())
            .map(|m| {
                let n = self.mass(set, lv, m);
                self.util.value(m, self.q(set, m) * n) - self.catalog.cost(m) * n
            })
            .sum()
    }

    fn profit(&self, set: TaskSet) -> Result<f64> {
        let lv = self.levels(set)?;
        Ok(self.profit_of(set, &lv))
    }

    fn solve(&self, set: TaskSet) -> Result<FixedSetSolution> {
        let lv = self.levels(set)?;
        let masses = (0..self.catalog.len()).map(|m| self.mass(set, &lv, m)).collect();
        Ok(FixedSetSolution {
            high_set: set,
            masses,
            mu_total: lv.mu,
            nu_high: (lv.high_level - lv.mu).max(0.0),
            profit: self.profit_of(set, &lv),
        })
    }
}

fn check_set(catalog: &TaskCatalog, pop: &Population, high_set: TaskSet) -> Result<()> {
    if !high_set.is_subset(TaskSet::full(catalog.len())) {
        return invalid("high set refers to a task outside the catalog");
    }
    if pop.n_high() <= 0.0 && !high_set.is_empty() {
        return invalid("a nonempty high set needs high-capability workers");
    }
    Ok(())
}

pub fn solve_fixed_set(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    high_set: TaskSet,
    cfg: &SolverConfig,
) -> Result<FixedSetSolution> {
    cfg.validate()?;
    check_set(catalog, pop, high_set)?;
    Problem { catalog, util, pop, tol: cfg.bisection_tol }.solve(high_set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub slackness_total: f64,
    pub slackness_high: f64,
    pub feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.slackness_total)
            .max(self.slackness_high)
            .max(self.feasibility)
    }
}

/// Optimality conditions of a fixed-set solution, evaluated directly from
/// the utility derivative.
pub fn fixed_set_kkt_residuals(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    sol: &FixedSetSolution,
) -> KktResiduals {
    let set = sol.high_set;
    let mut stationarity = 0.0f64;
    let mut min_mass = 0.0f64;
    for (m, &n) in sol.masses.iter().enumerate() {
        let q = if set.contains(m) { pop.q_high() } else { pop.q_low() };
        let price = catalog.cost(m) + sol.mu_total + if set.contains(m) { sol.nu_high } else { 0.0 };
        let marginal = q * util.derivative(m, q * n);
        let r = if n > 0.0 { (marginal - price).abs() } else { (marginal - price).max(0.0) };
        stationarity = stationarity.max(r);
        min_mass = min_mass.min(n);
    }
    let total: f64 = sol.masses.iter().sum();
    let high: f64 = set.iter().map(|m| sol.masses[m]).sum();
    KktResiduals {
        stationarity,
        slackness_total: (sol.mu_total * (pop.n_total() - total)).abs(),
        slackness_high: (sol.nu_high * (pop.n_high() - high)).abs(),
        feasibility: [total - pop.n_total(), high - pop.n_high(), -min_mass, -sol.mu_total, -sol.nu_high]
            .into_iter()
            .fold(0.0, f64::max),
    }
}

/// Rewards that make `masses` an equilibrium with zero worker surplus:
/// `R_m = c_m N_m`, strict requirements on `high_set`.
pub fn mechanism_from_masses(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    high_set: TaskSet,
    masses: &[f64],
    provenance: Provenance,
) -> Result<NearOptMechanism> {
    if masses.len() != catalog.len() {
        return invalid("one mass per task expected");
    }
    check_set(catalog, pop, high_set)?;
    let rewards = masses.iter().enumerate().map(|(m, &n)| catalog.cost(m) * n).collect();
    let mechanism = Mechanism::from_high_set(rewards, high_set, pop)?;
    let profit = crate::model::requester_profit(&mechanism, masses, util);
    Ok(NearOptMechanism { mechanism, high_set, masses: masses.to_vec(), profit, provenance })
}

fn finish(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    set: TaskSet,
    cfg: &SolverConfig,
    provenance: Provenance,
) -> Result<NearOptMechanism> {
    let sol = solve_fixed_set(catalog, pop, util, set, cfg)?;
    mechanism_from_masses(catalog, pop, util, set, &sol.masses, provenance)
}

/// Lexicographic comparison of the sorted index lists of two sets.
fn lex_less(a: TaskSet, b: TaskSet) -> bool {
    a.to_vec() < b.to_vec()
}

pub fn exhaustive_set_search(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    cfg: &SolverConfig,
) -> Result<NearOptMechanism> {
    cfg.validate()?;
    let m_count = catalog.len();
    if m_count > EXHAUSTIVE_LIMIT {
        return Err(Error::Guard(format!(
            "exhaustive search over {m_count} tasks exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    if pop.n_high() <= 0.0 {
        return finish(catalog, pop, util, TaskSet::EMPTY, cfg, Provenance::HomogeneousClosedForm);
    }
    let problem = Problem { catalog, util, pop, tol: cfg.bisection_tol };
    let profits = (0..1u64 << m_count)
        .map(|bits| problem.profit(TaskSet::from_bits(bits)))
        .collect::<Result<Vec<f64>>>()?;
    let best = profits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = best - cfg.tie_tol * (1.0 + best.abs());
    let mut chosen: Option<TaskSet> = None;
    for (bits, &p) in profits.iter().enumerate() {
        if p < floor {
            continue;
        }
        let set = TaskSet::from_bits(bits as u64);
        chosen = match chosen {
            Some(c) if c.len() < set.len() || (c.len() == set.len() && !lex_less(set, c)) => Some(c),
            _ => Some(set),
        };
    }
    let set = chosen.unwrap_or(TaskSet::EMPTY);
    finish(catalog, pop, util, set, cfg, Provenance::Exhaustive)
}

/// Randomized greedy construction of the high set, restarted
/// `max_iter` times.
pub fn grasp_search(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    cfg: &SolverConfig,
) -> Result<NearOptMechanism> {
    cfg.validate()?;
    if pop.n_high() <= 0.0 {
        return finish(catalog, pop, util, TaskSet::EMPTY, cfg, Provenance::HomogeneousClosedForm);
    }
    let m_count = catalog.len();
    let alpha = cfg.grasp_alpha;
    let problem = Problem { catalog, util, pop, tol: cfg.bisection_tol };
    let mut cache: HashMap<TaskSet, f64> = HashMap::new();
    let mut eval = |set: TaskSet| -> Result<f64> {
        if let Some(&p) = cache.get(&set) {
            return Ok(p);
        }
        let p = problem.profit(set)?;
        cache.insert(set, p);
        Ok(p)
    };

    let mut best: Option<(TaskSet, f64)> = None;
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(m_count);
    for restart in 0..cfg.max_iter(m_count) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(restart as u64);
        let mut current = TaskSet::EMPTY;
        let mut profit = eval(current)?;
        for _ in 0..m_count {
            candidates.clear();
            for j in (0..m_count).filter(|&j| !current.contains(j)) {
                candidates.push((j, eval(current.with(j))?));
            }
            if candidates.is_empty() {
                break;
            }
            let p_high = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let p_low = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let threshold = (p_low + alpha * (p_high - p_low)).min(p_high);
            candidates.retain(|c| c.1 >= threshold);
            let (j, p) = candidates[rng.random_range(0..candidates.len())];
            if p >= profit {
                current = current.with(j);
                profit = p;
            } else {
                break;
            }
        }
        if best.is_none_or(|(_, bp)| profit > bp) {
            best = Some((current, profit));
        }
    }
    let (set, _) = best.unwrap_or((TaskSet::EMPTY, 0.0));
    finish(catalog, pop, util, set, cfg, Provenance::Grasp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogUtility;
    use proptest::prelude::*;

    fn fig_catalog() -> TaskCatalog {
        TaskCatalog::from_pairs(&[(30.0, 2.0), (12.0, 1.0), (8.0, 3.0)]).unwrap()
    }

    #[test]
    fn unconstrained_closed_form() {
        let cat = fig_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::homogeneous(100.0, 1.0).unwrap();
        let sol = solve_fixed_set(&cat, &pop, &util, TaskSet::EMPTY, &SolverConfig::default()).unwrap();
        for (got, want) in sol.masses.iter().zip([14.0, 11.0, 5.0 / 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!((sol.mu_total, sol.nu_high), (0.0, 0.0));
        let nm = mechanism_from_masses(&cat, &pop, &util, TaskSet::EMPTY, &sol.masses, Provenance::FixedSet).unwrap();
        assert!((nm.mechanism.rewards[0] - 28.0).abs() < 1e-9);
        assert!((nm.mechanism.rewards[1] - 11.0).abs() < 1e-9);
        assert!((nm.mechanism.rewards[2] - 5.0).abs() < 1e-9);
        assert!((nm.profit - sol.profit).abs() < 1e-9);
    }

    #[test]
    fn binding_total() {
        let cat = fig_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::homogeneous(10.0, 1.0).unwrap();
        let sol = solve_fixed_set(&cat, &pop, &util, TaskSet::EMPTY, &SolverConfig::default()).unwrap();
        assert!(sol.mu_total > 0.0);
        assert!((sol.masses.iter().sum::<f64>() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn single_high_task() {
        let cat = TaskCatalog::from_pairs(&[(30.0, 2.0)]).unwrap();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::new(100.0, 100.0, 2.0, 1.0).unwrap();
        let set = TaskSet::EMPTY.with(0);
        let sol = solve_fixed_set(&cat, &pop, &util, set, &SolverConfig::default()).unwrap();
        assert!((sol.masses[0] - 14.5).abs() < 1e-12);
        let nm = mechanism_from_masses(&cat, &pop, &util, set, &sol.masses, Provenance::FixedSet).unwrap();
        assert!((nm.mechanism.rewards[0] - 29.0).abs() < 1e-9);
        assert_eq!(nm.mechanism.quality_reqs[0], 2.0);
    }

    #[test]
    fn zero_masses_give_zero_rewards() {
        let cat = fig_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::homogeneous(10.0, 1.0).unwrap();
        let nm = mechanism_from_masses(&cat, &pop, &util, TaskSet::EMPTY, &[0.0; 3], Provenance::FixedSet).unwrap();
        assert_eq!(nm.mechanism.rewards, vec![0.0; 3]);
    }

    #[test]
    fn rejects_high_set_without_high_workers() {
        let cat = fig_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::homogeneous(10.0, 1.0).unwrap();
        let r = solve_fixed_set(&cat, &pop, &util, TaskSet::EMPTY.with(0), &SolverConfig::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn homogeneous_search_is_closed_form() {
        let cat = fig_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::homogeneous(20.0, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let ex = exhaustive_set_search(&cat, &pop, &util, &cfg).unwrap();
        assert!(ex.high_set.is_empty());
        assert_eq!(ex.provenance, Provenance::HomogeneousClosedForm);
        let gr = grasp_search(&cat, &pop, &util, &cfg).unwrap();
        assert_eq!(gr.high_set, ex.high_set);
    }

    #[test]
    fn full_high_pool_takes_every_task() {
        let cat = fig_catalog();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::new(20.0, 20.0, 2.0, 1.0).unwrap();
        let ex = exhaustive_set_search(&cat, &pop, &util, &SolverConfig::default()).unwrap();
        assert_eq!(ex.high_set, TaskSet::full(3));
    }

    #[test]
    fn exhaustive_guard() {
        let pairs: Vec<(f64, f64)> = (0..21).map(|i| (10.0 + i as f64, 1.0)).collect();
        let cat = TaskCatalog::from_pairs(&pairs).unwrap();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::new(50.0, 10.0, 2.0, 1.0).unwrap();
        let r = exhaustive_set_search(&cat, &pop, &util, &SolverConfig::default());
        assert!(matches!(r, Err(Error::Guard(_))));
    }

    #[test]
    fn single_task_grasp_matches_exhaustive() {
        let cat = TaskCatalog::from_pairs(&[(20.0, 1.0)]).unwrap();
        let util = LogUtility::from_catalog(&cat);
        for nh in [0.5, 3.0, 10.0] {
            let pop = Population::new(10.0, nh, 2.0, 1.0).unwrap();
            let cfg = SolverConfig::default();
            let ex = exhaustive_set_search(&cat, &pop, &util, &cfg).unwrap();
            let gr = grasp_search(&cat, &pop, &util, &cfg).unwrap();
            assert_eq!(ex.high_set, gr.high_set);
            assert!((ex.profit - gr.profit).abs() < 1e-12);
        }
    }

    #[test]
    fn grasp_is_seed_deterministic() {
        let cat = TaskCatalog::from_pairs(&[(30.0, 2.0), (12.0, 1.0), (8.0, 3.0), (25.0, 1.5), (9.0, 0.7)]).unwrap();
        let util = LogUtility::from_catalog(&cat);
        let pop = Population::new(20.0, 6.0, 2.0, 1.0).unwrap();
        let cfg = SolverConfig { rng_seed: 7, grasp_alpha: 0.8, ..Default::default() };
        let a = grasp_search(&cat, &pop, &util, &cfg).unwrap();
        let b = grasp_search(&cat, &pop, &util, &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn kkt_holds_on_random_sets(
            tasks in proptest::collection::vec((1.0f64..50.0, 0.5f64..5.0), 2..7),
            n in 1.0f64..100.0,
            frac in 0.0f64..1.0,
            bits in 0u64..64,
        ) {
            let cat = TaskCatalog::from_pairs(&tasks).unwrap();
            let util = LogUtility::from_catalog(&cat);
            let pop = Population::new(n, n * frac, 2.0, 1.0).unwrap();
            let set = TaskSet::from_bits(bits & TaskSet::full(cat.len()).bits());
            let set = if pop.n_high() > 0.0 { set } else { TaskSet::EMPTY };
            let sol = solve_fixed_set(&cat, &pop, &util, set, &SolverConfig::default()).unwrap();
            let res = fixed_set_kkt_residuals(&cat, &pop, &util, &sol);
            prop_assert!(res.max() <= 1e-8, "{:?}", res);
        }

        #[test]
        fn profit_non_decreasing_in_capacity(
            tasks in proptest::collection::vec((1.0f64..50.0, 0.5f64..5.0), 2..6),
            n in 1.0f64..60.0,
            frac in 0.05f64..0.9,
            grow in 0.0f64..20.0,
            bits in 0u64..32,
        ) {
            let cat = TaskCatalog::from_pairs(&tasks).unwrap();
            let util = LogUtility::from_catalog(&cat);
            let cfg = SolverConfig::default();
            let set = TaskSet::from_bits(bits & TaskSet::full(cat.len()).bits());
            let base = Population::new(n, n * frac, 2.0, 1.0).unwrap();
            let more_total = Population::new(n + grow, n * frac, 2.0, 1.0).unwrap();
            let more_high = Population::new(n + grow, (n * frac + grow).min(n + grow), 2.0, 1.0).unwrap();
            let p0 = solve_fixed_set(&cat, &base, &util, set, &cfg).unwrap().profit;
            let p1 = solve_fixed_set(&cat, &more_total, &util, set, &cfg).unwrap().profit;
            let p2 = solve_fixed_set(&cat, &more_high, &util, set, &cfg).unwrap().profit;
            prop_assert!(p1 >= p0 - 1e-9);
            prop_assert!(p2 >= p1 - 1e-9);
        }
    }
}
