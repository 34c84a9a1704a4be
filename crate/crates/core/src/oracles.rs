//! Brute-force references for testing the analytic solvers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::model::{eligible_tasks, Mechanism, Population, SolverConfig, TaskCatalog, TaskSet, UtilityModel};

pub const MAX_INTEGER_WORKERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegerProfile {
    pub choices: Vec<Option<usize>>,
    pub is_high: Vec<bool>,
    pub counts_high: Vec<usize>,
    pub counts_low: Vec<usize>,
    pub rounds: usize,
}

impl IntegerProfile {
    pub fn totals(&self) -> Vec<usize> {
        self.counts_high.iter().zip(&self.counts_low).map(|(h, l)| h + l).collect()
    }
}

fn whole(x: f64, what: &str) -> Result<usize> {
    if x.fract() != 0.0 || x < 0.0 {
        return invalid(format!("{what} must be a whole number of workers"));
    }
    Ok(x as usize)
}

/// Value of task `m` to a worker, given the counts and the worker's current choice.
fn join_payoff(mech: &Mechanism, catalog: &TaskCatalog, counts: &[usize], current: Option<usize>, m: usize) -> f64 {
    let others = counts[m] - usize::from(current == Some(m));
    mech.rewards[m] / (others + 1) as f64 - catalog.cost(m)
}

/// Sequential best-response dynamics of the finite game. Each round visits
/// every worker once in a fresh random order; stops after a round without
/// switches.
pub fn integer_br_dynamics(
    catalog: &TaskCatalog,
    pop: &Population,
    mech: &Mechanism,
    max_rounds: Option<usize>,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<IntegerProfile> {
    mech.validate(catalog, pop)?;
    let n = whole(pop.n_total(), "n_total")?;
    let n_high = whole(pop.n_high(), "n_high")?;
    if n > MAX_INTEGER_WORKERS {
        return Err(Error::Guard(format!("{n} workers exceeds the limit of {MAX_INTEGER_WORKERS}")));
    }
    let m_count = catalog.len();
    let max_rounds = max_rounds.unwrap_or(10 * n.max(1) * m_count);
    let is_high: Vec<bool> = (0..n).map(|w| w < n_high).collect();
    let reach_high = eligible_tasks(pop.q_high(), mech);
    let reach_low = eligible_tasks(pop.q_low(), mech);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut choices: Vec<Option<usize>> = vec![None; n];
    let mut counts = vec![0usize; m_count];
    let mut order: Vec<usize> = (0..n).collect();
    let mut ties: Vec<usize> = Vec::with_capacity(m_count);
    let tol = cfg.tie_tol;

    for round in 1..=max_rounds {
        order.shuffle(&mut rng);
        let mut switched = false;
        for &w in &order {
            let current = choices[w];
            let reach = if is_high[w] { reach_high } else { reach_low };
            let now = current.map_or(0.0, |m| join_payoff(mech, catalog, &counts, current, m));
            let best = reach
                .iter()
                .map(|m| join_payoff(mech, catalog, &counts, current, m))
                .fold(f64::NEG_INFINITY, f64::max);
            let (target, value) = if best >= 0.0 {
                let floor = best - tol * (1.0 + best.abs());
                ties.clear();
                ties.extend(reach.iter().filter(|&m| join_payoff(mech, catalog, &counts, current, m) >= floor));
                (Some(ties[rng.random_range(0..ties.len())]), best)
            } else {
                (None, 0.0)
            };
            // Joining at zero payoff is a best response; moves between
            // tasks must be strict improvements.
            let joins = current.is_none() && target.is_some();
            if target != current && (joins || value > now + tol * (1.0 + now.abs())) {
                if let Some(m) = current {
                    counts[m] -= 1;
                }
                if let Some(m) = target {
                    counts[m] += 1;
                }
                choices[w] = target;
                switched = true;
            }
        }
        if !switched {
            let mut counts_high = vec![0; m_count];
            let mut counts_low = vec![0; m_count];
            for (w, c) in choices.iter().enumerate() {
                if let Some(m) = *c {
                    if is_high[w] {
                        counts_high[m] += 1;
                    } else {
                        counts_low[m] += 1;
                    }
                }
            }
            return Ok(IntegerProfile { choices, is_high, counts_high, counts_low, rounds: round });
        }
    }
    Err(Error::NonConvergence { what: "best-response dynamics", iterations: max_rounds })
}

/// Largest payoff gain any single worker could obtain by switching.
pub fn max_deviation_gain(catalog: &TaskCatalog, pop: &Population, mech: &Mechanism, profile: &IntegerProfile) -> f64 {
    let counts = profile.totals();
    let reach_high = eligible_tasks(pop.q_high(), mech);
    let reach_low = eligible_tasks(pop.q_low(), mech);
    let mut gain = f64::NEG_INFINITY;
    for (w, &current) in profile.choices.iter().enumerate() {
        let reach = if profile.is_high[w] { reach_high } else { reach_low };
        let now = current.map_or(0.0, |m| join_payoff(mech, catalog, &counts, current, m));
        let best = reach
            .iter()
            .map(|m| join_payoff(mech, catalog, &counts, current, m))
            .fold(0.0f64, f64::max);
        gain = gain.max(best - now);
    }
    gain.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub masses: Vec<f64>,
    pub profit: f64,
}

struct Region<'a> {
    catalog: &'a TaskCatalog,
    util: &'a dyn UtilityModel,
    pop: &'a Population,
    high_set: TaskSet,
}

impl Region<'_> {
    fn q(&self, m: usize) -> f64 {
        if self.high_set.contains(m) {
            self.pop.q_high()
        } else {
            self.pop.q_low()
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(m, &n)| self.util.value(m, self.q(m) * n) - self.catalog.cost(m) * n)
            .sum()
    }

    fn high_mass(&self, x: &[f64]) -> f64 {
        self.high_set.iter().map(|m| x[m]).sum()
    }

    fn feasible(&self, x: &[f64]) -> bool {
        let slack = 1e-12 * (1.0 + self.pop.n_total());
        x.iter().all(|&v| v >= 0.0)
            && x.iter().sum::<f64>() <= self.pop.n_total() + slack
            && self.high_mass(x) <= self.pop.n_high() + slack
    }

    fn upper(&self, m: usize) -> f64 {
        if self.high_set.contains(m) {
            self.pop.n_high().min(self.pop.n_total())
        } else {
            self.pop.n_total()
        }
    }
}

fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, resolution: f64) -> (f64, f64) {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > resolution * 1e-3 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    [(a, f(a)), (b, f(b)), (c, fc), (d, fd)]
        .into_iter()
        .fold((a, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best })
}

/// Coarse-to-fine grid over all masses; 11 points per axis, zooming onto
/// the best feasible point until the spacing reaches `resolution`.
fn zoom_grid(region: &Region, resolution: f64) -> Vec<f64> {
    const POINTS: usize = 11;
    let m_count = region.catalog.len();
    let ub: Vec<f64> = (0..m_count).map(|m| region.upper(m)).collect();
    let mut lo = vec![0.0; m_count];
    let mut hi = ub.clone();
    let mut best = vec![0.0; m_count];
    let mut best_v = region.value(&best);
    let mut x = vec![0.0; m_count];
    loop {
        let step: Vec<f64> = (0..m_count).map(|m| (hi[m] - lo[m]) / (POINTS - 1) as f64).collect();
        for idx in 0..POINTS.pow(m_count as u32) {
            let mut rest = idx;
            for m in 0..m_count {
                x[m] = (lo[m] + (rest % POINTS) as f64 * step[m]).min(ub[m]);
                rest /= POINTS;
            }
            if region.feasible(&x) {
                let v = region.value(&x);
                if v > best_v {
                    best_v = v;
                    best.copy_from_slice(&x);
                }
            }
        }
        if step.iter().all(|&s| s <= resolution) {
            return best;
        }
        for m in 0..m_count {
            lo[m] = (best[m] - 2.0 * step[m]).max(0.0);
            hi[m] = (best[m] + 2.0 * step[m]).min(ub[m]);
        }
    }
}

/// Coordinate and pairwise-transfer golden-section ascent from random
/// feasible starts.
fn coordinate_ascent(region: &Region, resolution: f64) -> Vec<f64> {
    let m_count = region.catalog.len();
    let n = region.pop.n_total();
    let nh = region.pop.n_high();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = vec![0.0; m_count];
    let mut best_v = region.value(&best);
    for _ in 0..10 {
        let mut x: Vec<f64> = (0..m_count).map(|m| rng.random::<f64>() * region.upper(m)).collect();
        let total: f64 = x.iter().sum();
        if total > n {
            x.iter_mut().for_each(|v| *v *= n / total);
        }
        let high = region.high_mass(&x);
        if high > nh {
            for m in region.high_set.iter() {
                x[m] *= nh / high;
            }
        }
        let mut value = region.value(&x);
        for _ in 0..500 {
            let before = value;
            for m in 0..m_count {
                let others: f64 = x.iter().sum::<f64>() - x[m];
                let mut cap = n - others;
                if region.high_set.contains(m) {
                    cap = cap.min(nh - (region.high_mass(&x) - x[m]));
                }
                let cap = cap.max(0.0);
                let mut trial = x.clone();
                let (t, v) = golden_max(
                    |t| {
                        trial[m] = t;
                        region.value(&trial)
                    },
                    0.0,
                    cap,
                    resolution,
                );
                if v > value {
                    x[m] = t;
                    value = v;
                }
            }
            for i in 0..m_count {
                for j in 0..m_count {
                    if i == j {
                        continue;
                    }
                    let free_high = (nh - region.high_mass(&x)).max(0.0);
                    let (hi_i, hi_j) = (region.high_set.contains(i), region.high_set.contains(j));
                    let mut lo_t = -x[i];
                    let mut hi_t = x[j];
                    if hi_i && !hi_j {
                        hi_t = hi_t.min(free_high);
                    }
                    if hi_j && !hi_i {
                        lo_t = lo_t.max(-free_high);
                    }
                    if hi_t - lo_t <= 0.0 {
                        continue;
                    }
                    let mut trial = x.clone();
                    let (t, v) = golden_max(
                        |t| {
                            trial[i] = x[i] + t;
                            trial[j] = x[j] - t;
                            region.value(&trial)
                        },
                        lo_t,
                        hi_t,
                        resolution,
                    );
                    if v > value {
                        x[i] = (x[i] + t).max(0.0);
                        x[j] = (x[j] - t).max(0.0);
                        value = region.value(&x);
                    }
                }
            }
            if value - before <= 1e-12 * (1.0 + value.abs()) {
                break;
            }
        }
        if value > best_v && region.feasible(&x) {
            best_v = value;
            best = x;
        }
    }
    best
}

/// Direct numerical maximization of the fixed-set requester problem,
/// independent of the multiplier-based solver.
pub fn grid_oracle_fixed_set(
    catalog: &TaskCatalog,
    pop: &Population,
    util: &dyn UtilityModel,
    high_set: TaskSet,
    resolution: f64,
) -> Result<OracleSolution> {
    if !(resolution > 0.0) {
        return invalid("resolution must be > 0");
    }
    if !high_set.is_subset(TaskSet::full(catalog.len())) {
        return invalid("high set refers to a task outside the catalog");
    }
    let region = Region { catalog, util, pop, high_set };
    let masses = match catalog.len() {
        1 => vec![golden_max(|t| region.value(&[t]), 0.0, region.upper(0), resolution).0],
        2 | 3 => zoom_grid(&region, resolution),
        _ => coordinate_ascent(&region, resolution),
    };
    let profit = region.value(&masses);
    Ok(OracleSolution { masses, profit })
}
