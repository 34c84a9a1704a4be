//! Continuum Nash equilibrium of the task-selection game.
//!
//! High-capability workers may take any task; low-capability workers only
//! the tasks in the low set. At equilibrium every used task pays its class
//! the common multiplier `lambda`, so each class water-fills
//! `R_m / (c_m + lambda)` against its supply.
//!
//! The solver first water-fills each class on its exclusive tasks. If the
//! high class then earns at least as much as the low class, nobody from the
//! high class wants a shared task and the classes separate. Otherwise both
//! classes pool on a single multiplier and low workers fill the shared tasks
//! first, high workers taking the remainder.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Mechanism, Population, SolverConfig, TaskCatalog, TaskSet};
use crate::roots::smallest_level;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeAllocation {
    pub n_high_per_task: Vec<f64>,
    pub n_low_per_task: Vec<f64>,
    pub lambda_high: f64,
    pub lambda_low: f64,
}

impl NeAllocation {
    pub fn zeros(m: usize) -> Self {
        Self {
            n_high_per_task: vec![0.0; m],
            n_low_per_task: vec![0.0; m],
            lambda_high: 0.0,
            lambda_low: 0.0,
        }
    }

    pub fn totals(&self) -> Vec<f64> {
        self.n_high_per_task
            .iter()
            .zip(&self.n_low_per_task)
            .map(|(h, l)| h + l)
            .collect()
    }
}

fn demand(r: f64, c: f64, lambda: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if c + lambda <= 0.0 {
        f64::INFINITY
    } else {
        r / (c + lambda)
    }
}

/// Tasks workers will ever touch: positive reward covering the cost.
fn active_tasks(catalog: &TaskCatalog, mech: &Mechanism) -> TaskSet {
    (0..mech.len())
        .filter(|&m| mech.rewards[m] > 0.0 && mech.rewards[m] >= catalog.cost(m))
        .collect()
}

/// Smallest multiplier at which the class demand on `tasks` fits `supply`.
fn water_level(catalog: &TaskCatalog, mech: &Mechanism, tasks: TaskSet, supply: f64, cfg: &SolverConfig) -> Result<f64> {
    let total = |l: f64| tasks.iter().map(|m| demand(mech.rewards[m], catalog.cost(m), l)).sum::<f64>();
    let hint = tasks.iter().map(|m| mech.rewards[m]).sum::<f64>() / supply.max(f64::MIN_POSITIVE);
    smallest_level(total, supply, hint, cfg.bisection_tol, "ne water level")
}

pub fn ne_solve(catalog: &TaskCatalog, pop: &Population, mech: &Mechanism, cfg: &SolverConfig) -> Result<NeAllocation> {
    mech.validate(catalog, pop)?;
    cfg.validate()?;
    let m_count = catalog.len();
    let active = active_tasks(catalog, mech);
    let high_only = TaskSet::from_bits(mech.high_set(pop).bits() & active.bits());
    let shared = TaskSet::from_bits(mech.low_set(pop).bits() & active.bits());
    let (nh, nl) = (pop.n_high(), pop.n_low());
    let mut out = NeAllocation::zeros(m_count);
    let r = &mech.rewards;

    if nh <= 0.0 && nl <= 0.0 {
        return Ok(out);
    }
    if nh <= 0.0 {
        let l2 = water_level(catalog, mech, shared, nl, cfg)?;
        for m in shared.iter() {
            out.n_low_per_task[m] = demand(r[m], catalog.cost(m), l2);
        }
        out.lambda_low = l2;
        out.lambda_high = l2;
        return Ok(out);
    }

    let l1 = water_level(catalog, mech, high_only, nh, cfg)?;
    let l2 = if nl > 0.0 { Some(water_level(catalog, mech, shared, nl, cfg)?) } else { None };

    match l2 {
        Some(l2) if l1 >= l2 => {
            for m in high_only.iter() {
                out.n_high_per_task[m] = demand(r[m], catalog.cost(m), l1);
            }
            for m in shared.iter() {
                out.n_low_per_task[m] = demand(r[m], catalog.cost(m), l2);
            }
            out.lambda_high = l1;
            out.lambda_low = l2;
        }
        _ => {
            let all = TaskSet::from_bits(high_only.bits() | shared.bits());
            let lam = water_level(catalog, mech, all, pop.n_total(), cfg)?;
            for m in high_only.iter() {
                out.n_high_per_task[m] = demand(r[m], catalog.cost(m), lam);
            }
            let shared_demand: f64 = shared.iter().map(|m| demand(r[m], catalog.cost(m), lam)).sum();
            let low_share = if shared_demand > 0.0 { (nl / shared_demand).min(1.0) } else { 0.0 };
            for m in shared.iter() {
                let t = demand(r[m], catalog.cost(m), lam);
                out.n_low_per_task[m] = t * low_share;
                out.n_high_per_task[m] = (t - out.n_low_per_task[m]).max(0.0);
            }
            out.lambda_high = lam;
            out.lambda_low = lam;
        }
    }
    Ok(out)
}

/// Maximum residual per equilibrium condition group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeResiduals {
    /// High-class masses against `max(0, R/(c+l1) - N_L)`.
    pub high_stationarity: f64,
    /// `|l1 (N_H - sum N_H,m)| / (1 + l1)`.
    pub high_slackness: f64,
    /// Low-class mass on high-only tasks.
    pub low_on_high_tasks: f64,
    /// Low-class masses on shared tasks against `max(0, R/(c+l2) - N_H)`.
    pub low_stationarity: f64,
    pub low_slackness: f64,
    /// Negative multipliers, negative masses and supply overruns.
    pub feasibility: f64,
    /// Best single-worker switch payoff minus the worst current payoff,
    /// maximized over both classes.
    pub deviation_margin: f64,
}

impl NeResiduals {
    pub fn max_condition(&self) -> f64 {
        [
            self.high_stationarity,
            self.high_slackness,
            self.low_on_high_tasks,
            self.low_stationarity,
            self.low_slackness,
            self.feasibility,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_condition() <= tol && self.deviation_margin <= tol
    }

    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("high_stationarity", self.high_stationarity),
            ("high_slackness", self.high_slackness),
            ("low_on_high_tasks", self.low_on_high_tasks),
            ("low_stationarity", self.low_stationarity),
            ("low_slackness", self.low_slackness),
            ("feasibility", self.feasibility),
            ("deviation_margin", self.deviation_margin),
        ]
    }
}

/// Checks a candidate allocation. Never fails; shape mismatches show up as
/// infinite residuals.
pub fn verify_ne(
    catalog: &TaskCatalog,
    pop: &Population,
    mech: &Mechanism,
    alloc: &NeAllocation,
    cfg: &SolverConfig,
) -> NeResiduals {
    let m_count = catalog.len();
    if alloc.n_high_per_task.len() != m_count || alloc.n_low_per_task.len() != m_count || mech.len() != m_count {
        let inf = f64::INFINITY;
        return NeResiduals {
            high_stationarity: inf,
            high_slackness: inf,
            low_on_high_tasks: inf,
            low_stationarity: inf,
            low_slackness: inf,
            feasibility: inf,
            deviation_margin: inf,
        };
    }
    let active = active_tasks(catalog, mech);
    let high_only = mech.high_set(pop);
    let shared = mech.low_set(pop);
    let (h, l) = (&alloc.n_high_per_task, &alloc.n_low_per_task);
    let (l1, l2) = (alloc.lambda_high, alloc.lambda_low);
    let r = &mech.rewards;
    let has_high = pop.n_high() > 0.0;
    let has_low = pop.n_low() > 0.0;

    let mut res = NeResiduals {
        high_stationarity: 0.0,
        high_slackness: 0.0,
        low_on_high_tasks: 0.0,
        low_stationarity: 0.0,
        low_slackness: 0.0,
        feasibility: 0.0,
        deviation_margin: f64::NEG_INFINITY,
    };

    for m in 0..m_count {
        let c = catalog.cost(m);
        if !active.contains(m) {
            res.high_stationarity = res.high_stationarity.max(h[m].abs());
            res.low_stationarity = res.low_stationarity.max(l[m].abs());
            continue;
        }
        if has_high && (high_only.contains(m) || shared.contains(m)) {
            let target = (demand(r[m], c, l1) - l[m]).max(0.0);
            res.high_stationarity = res.high_stationarity.max((h[m] - target).abs());
        }
        if high_only.contains(m) {
            res.low_on_high_tasks = res.low_on_high_tasks.max(l[m].abs());
        } else if has_low && shared.contains(m) {
            let target = (demand(r[m], c, l2) - h[m]).max(0.0);
            res.low_stationarity = res.low_stationarity.max((l[m] - target).abs());
        }
    }

    let sum_h: f64 = h.iter().sum();
    let sum_l: f64 = l.iter().sum();
    if has_high {
        res.high_slackness = (l1 * (pop.n_high() - sum_h)).abs() / (1.0 + l1.abs());
    }
    if has_low {
        res.low_slackness = (l2 * (pop.n_low() - sum_l)).abs() / (1.0 + l2.abs());
    }
    let min_mass = h.iter().chain(l.iter()).fold(0.0f64, |a, &x| a.min(x));
    res.feasibility = [-l1, -l2, sum_h - pop.n_high(), sum_l - pop.n_low(), -min_mass, 0.0]
        .into_iter()
        .fold(0.0f64, f64::max);

    // Unilateral deviations of an infinitesimal worker.
    let totals = alloc.totals();
    let payoff = |m: usize| -> f64 {
        let c = catalog.cost(m);
        if r[m] == 0.0 {
            -c
        } else if totals[m] <= 0.0 {
            f64::INFINITY
        } else {
            r[m] / totals[m] - c
        }
    };
    let tol = cfg.mass_tol;
    let mut margin = f64::NEG_INFINITY;
    for (present, masses, supply, reach) in [
        (has_high, h, pop.n_high(), TaskSet::from_bits(high_only.bits() | shared.bits())),
        (has_low, l, pop.n_low(), shared),
    ] {
        if !present {
            continue;
        }
        let used: f64 = masses.iter().sum();
        let mut current = if used < supply - tol { 0.0 } else { f64::INFINITY };
        for m in 0..m_count {
            if masses[m] > tol {
                current = current.min(payoff(m));
            }
        }
        if !current.is_finite() {
            current = 0.0;
        }
        let best = reach
            .iter()
            .filter(|&m| active.contains(m))
            .map(|m| payoff(m))
            .fold(0.0f64, f64::max);
        margin = margin.max(best - current);
    }
    res.deviation_margin = margin.max(0.0);
    res
}
