//! Cognitive-hierarchy task selection.
//!
//! Workers are spread over Poisson levels. Level 0 picks uniformly among
//! the tasks it may take. Level `k+1` believes the population consists of
//! levels `0..=k` in their true relative proportions and best-responds to
//! the masses those levels have deposited so far. Levels are processed
//! until the covered Poisson mass exceeds `1 - eps`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::model::{requester_profit, Mechanism, Population, SolverConfig, TaskCatalog, TaskSet, UtilityModel};

/// Largest catalog accepted by [`che_requester_search`].
pub const SEARCH_LIMIT: usize = 6;

/// Poisson probability of level `k`.
pub fn poisson_pmf(k: usize, tau: f64) -> f64 {
    if tau <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    if k > 20 || tau > 700.0 {
        (kf * tau.ln() - tau - ln_gamma(kf + 1.0)).exp()
    } else {
        let mut p = (-tau).exp();
        for j in 1..=k {
            p *= tau / j as f64;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheConfig {
    pub tau: f64,
    pub eps: f64,
    pub level_cap: usize,
}

impl CheConfig {
    /// `eps` and `level_cap` taken from the solver configuration.
    pub fn new(tau: f64, cfg: &SolverConfig) -> Result<Self> {
        let c = Self { tau, eps: cfg.che_eps, level_cap: cfg.level_cap(tau) };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid("tau must be > 0");
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return invalid("eps must lie in (0, 1)");
        }
        if self.level_cap == 0 {
            return invalid("level_cap must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheStatus {
    Converged,
    LevelCapReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub f_k: f64,
    /// Cumulative Poisson mass through this level.
    pub tf: f64,
    pub e_high: Vec<f64>,
    pub e_low: Vec<f64>,
    /// Payoffs this level believed when choosing; `R - c` at level 0.
    pub payoffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheOutcome {
    pub n_high_per_task: Vec<f64>,
    pub n_low_per_task: Vec<f64>,
    pub tf_final: f64,
    pub levels: usize,
    pub status: CheStatus,
    pub trace: Vec<LevelRecord>,
}

impl CheOutcome {
    pub fn totals(&self) -> Vec<f64> {
        self.n_high_per_task
            .iter()
            .zip(&self.n_low_per_task)
            .map(|(h, l)| h + l)
            .collect()
    }
}

struct Sim {
    n_high: Vec<f64>,
    n_low: Vec<f64>,
    tf: f64,
    levels: usize,
    status: CheStatus,
}

/// Uniform split over the argmax set, or nothing if the best payoff is
/// negative.
fn best_response(payoffs: &[f64], reach: TaskSet, tie_tol: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|e| *e = 0.0);
    let best = reach.iter().map(|m| payoffs[m]).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= 0.0) {
        return;
    }
    let floor = best - tie_tol * (1.0 + best.abs());
    let winners = reach.iter().filter(|&m| payoffs[m] >= floor).count();
    let share = 1.0 / winners as f64;
    for m in reach.iter().filter(|&m| payoffs[m] >= floor) {
        out[m] = share;
    }
}

fn spread(reach: TaskSet, out: &mut [f64]) {
    out.iter_mut().for_each(|e| *e = 0.0);
    if reach.is_empty() {
        return;
    }
    let share = 1.0 / reach.len() as f64;
    for m in reach.iter() {
        out[m] = share;
    }
}

fn simulate(
    catalog: &TaskCatalog,
    pop: &Population,
    mech: &Mechanism,
    che: &CheConfig,
    tie_tol: f64,
    mut trace: Option<&mut Vec<LevelRecord>>,
) -> Sim {
    let m_count = catalog.len();
    let r = &mech.rewards;
    let active: TaskSet = (0..m_count).filter(|&m| r[m] >= catalog.cost(m)).collect();
    let high_only = TaskSet::from_bits(mech.high_set(pop).bits() & active.bits());
    let shared = TaskSet::from_bits(mech.low_set(pop).bits() & active.bits());
    let reach_high = TaskSet::from_bits(high_only.bits() | shared.bits());

    let mut e_high = vec![0.0; m_count];
    let mut e_low = vec![0.0; m_count];
    spread(reach_high, &mut e_high);
    spread(shared, &mut e_low);
    let mut payoffs: Vec<f64> = (0..m_count).map(|m| r[m] - catalog.cost(m)).collect();

    let mut sim = Sim {
        n_high: vec![0.0; m_count],
        n_low: vec![0.0; m_count],
        tf: 0.0,
        levels: 0,
        status: CheStatus::LevelCapReached,
    };
    let (nh, nl) = (pop.n_high(), pop.n_low());
    for k in 0..che.level_cap {
        let f = poisson_pmf(k, che.tau);
        for m in 0..m_count {
            sim.n_high[m] += nh * f * e_high[m];
            sim.n_low[m] += nl * f * e_low[m];
        }
        sim.tf += f;
        sim.levels = k + 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LevelRecord {
                level: k,
                f_k: f,
                tf: sim.tf,
                e_high: e_high.clone(),
                e_low: e_low.clone(),
                payoffs: payoffs.clone(),
            });
        }
        if sim.tf > 1.0 - che.eps {
            sim.status = CheStatus::Converged;
            break;
        }
        for m in 0..m_count {
            let believed = if high_only.contains(m) {
                sim.n_high[m] / sim.tf
            } else {
                (sim.n_high[m] + sim.n_low[m]) / sim.tf
            };
            payoffs[m] = if believed > 0.0 { r[m] / believed - catalog.cost(m) } else { r[m] - catalog.cost(m) };
        }
        best_response(&payoffs, reach_high, tie_tol, &mut e_high);
        best_response(&payoffs, shared, tie_tol, &mut e_low);
    }
    sim
}

pub fn che_run(
    catalog: &TaskCatalog,
    pop: &Population,
    mech: &Mechanism,
    che: &CheConfig,
    cfg: &SolverConfig,
) -> Result<CheOutcome> {
    mech.validate(catalog, pop)?;
    che.validate()?;
    let mut trace = Vec::new();
    let sim = simulate(catalog, pop, mech, che, cfg.tie_tol, Some(&mut trace));
    Ok(CheOutcome {
        n_high_per_task: sim.n_high,
        n_low_per_task: sim.n_low,
        tf_final: sim.tf,
        levels: sim.levels,
        status: sim.status,
        trace,
    })
}

/// Restart and sweep budget for [`che_requester_search_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheSearchOptions {
    /// Starting points per quality vector; the first is `R = c`, the rest
    /// are drawn uniformly from the reward box.
    pub starts: usize,
    pub sweeps: usize,
    /// Upper bound on profit pieces visited by one coordinate scan.
    pub max_pieces: usize,
}

impl Default for CheSearchOptions {
    fn default() -> Self {
        Self { starts: 16, sweeps: 20, max_pieces: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheSearchResult {
    pub mechanism: Mechanism,
    pub high_set: TaskSet,
    pub profit: f64,
    pub outcome: CheOutcome,
}

pub fn che_requester_search(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    che: &CheConfig,
    cfg: &SolverConfig,
) -> Result<CheSearchResult> {
    che_requester_search_with(catalog, pop, util, che, cfg, &CheSearchOptions::default())
}

/// Best rewards for every quality vector by cyclic coordinate ascent over
/// `[c_m, 2 c_m N]`.
///
/// With the other rewards fixed, every level's choice is piecewise constant
/// in `R_m`, so the profit falls with slope -1 between the rewards at which
/// some level changes its choice. Each coordinate step walks those
/// breakpoints in order and keeps the best one.
pub fn che_requester_search_with(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    che: &CheConfig,
    cfg: &SolverConfig,
    opts: &CheSearchOptions,
) -> Result<CheSearchResult> {
    che.validate()?;
    cfg.validate()?;
    let m_count = catalog.len();
    if m_count > SEARCH_LIMIT {
        return Err(Error::Guard(format!(
            "reward search over {m_count} tasks exceeds the limit of {SEARCH_LIMIT}"
        )));
    }
    let lo: Vec<f64> = (0..m_count).map(|m| catalog.cost(m)).collect();
    let hi: Vec<f64> = (0..m_count)
        .map(|m| (2.0 * catalog.cost(m) * pop.n_total()).max(lo[m] + 1.0))
        .collect();
    let sets: Vec<TaskSet> = if pop.n_high() > 0.0 {
        (0..1u64 << m_count).map(TaskSet::from_bits).collect()
    } else {
        vec![TaskSet::EMPTY]
    };

    let mut best: Option<(TaskSet, Vec<f64>, f64)> = None;
    for set in sets {
        let quality: Vec<f64> =
            (0..m_count).map(|m| if set.contains(m) { pop.q_high() } else { pop.q_low() }).collect();
        let scan = Scan {
            catalog,
            pop,
            util,
            che,
            tie_tol: cfg.tie_tol,
            quality: &quality,
            reach_high: TaskSet::full(m_count),
            shared: TaskSet::from_bits(TaskSet::full(m_count).bits() & !set.bits()),
            max_pieces: opts.max_pieces,
        };
        for start in 0..opts.starts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(set.bits() * opts.starts as u64 + start as u64);
            let mut rewards: Vec<f64> = if start == 0 {
                lo.clone()
            } else {
                (0..m_count).map(|m| rng.random_range(lo[m]..=hi[m])).collect()
            };
            let mut value = scan.run(&rewards).0;
            for _ in 0..opts.sweeps {
                let before = value;
                for m in 0..m_count {
                    let (x, v) = scan.coordinate(&mut rewards, m, hi[m]);
                    if v > value {
                        rewards[m] = x;
                        value = v;
                    }
                }
                if value <= before {
                    break;
                }
            }
            if best.as_ref().is_none_or(|b| value > b.2) {
                best = Some((set, rewards, value));
            }
        }
    }
    let (set, rewards, value) = best.expect("at least one quality vector is searched");
    let mechanism = Mechanism::from_high_set(rewards, set, pop)?;
    let outcome = che_run(catalog, pop, &mechanism, che, cfg)?;
    Ok(CheSearchResult { mechanism, high_set: set, profit: value, outcome })
}

/// Relative step taken past a breakpoint so the new choice is strict.
const PAST: f64 = 1e-7;

struct Scan<'a> {
    catalog: &'a TaskCatalog,
    pop: &'a Population,
    util: &'a dyn UtilityModel,
    che: &'a CheConfig,
    tie_tol: f64,
    quality: &'a [f64],
    reach_high: TaskSet,
    shared: TaskSet,
    max_pieces: usize,
}

impl Scan<'_> {
    fn run(&self, rewards: &[f64]) -> (f64, Vec<LevelRecord>) {
        let mech = Mechanism { rewards: rewards.to_vec(), quality_reqs: self.quality.to_vec() };
        let mut trace = Vec::new();
        let sim = simulate(self.catalog, self.pop, &mech, self.che, self.tie_tol, Some(&mut trace));
        let totals: Vec<f64> = sim.n_high.iter().zip(&sim.n_low).map(|(h, l)| h + l).collect();
        (requester_profit(&mech, &totals, self.util), trace)
    }

    /// Smallest reward above `r` at which some level's payoff for task `m`
    /// reaches zero or another task's payoff.
    fn next_breakpoint(&self, trace: &[LevelRecord], m: usize, r: f64) -> Option<f64> {
        let c = self.catalog.cost(m);
        let mut next = f64::INFINITY;
        for rec in trace.iter().skip(1) {
            let p = &rec.payoffs;
            // Believed mass on m; zero belief prices the task at R - c.
            let mass = r / (p[m] + c);
            for reach in [self.reach_high, self.shared] {
                if !reach.contains(m) {
                    continue;
                }
                let targets = std::iter::once(0.0).chain(reach.iter().filter(|&j| j != m).map(|j| p[j]));
                for v in targets.filter(|&v| v > p[m]) {
                    let at = (v + c) * mass;
                    if at > r * (1.0 + 1e-12) {
                        next = next.min(at);
                    }
                }
            }
        }
        next.is_finite().then_some(next)
    }

    /// Best reward for coordinate `m` in `[c_m, hi]`; leaves `x[m]` unchanged.
    fn coordinate(&self, x: &mut [f64], m: usize, hi: f64) -> (f64, f64) {
        let keep = x[m];
        let mut eval = |v: f64, best: &mut (f64, f64)| {
            x[m] = v;
            let (val, trace) = self.run(x);
            if val > best.1 {
                *best = (v, val);
            }
            trace
        };
        let mut best = (keep, f64::NEG_INFINITY);
        eval(keep, &mut best);
        let mut r = self.catalog.cost(m);
        let mut trace = eval(r, &mut best);
        for _ in 0..self.max_pieces {
            let Some(b) = self.next_breakpoint(&trace, m, r).filter(|&b| b <= hi) else {
                break;
            };
            eval(b, &mut best);
            r = b * (1.0 + PAST);
            trace = eval(r, &mut best);
        }
        x[m] = keep;
        best
    }
}
