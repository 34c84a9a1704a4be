//! Domain types: tasks, worker population, mechanisms, utility families and
//! solver configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Upper bound on catalog size; task sets are stored as 64-bit masks.
pub const MAX_TASKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    /// Utility coefficient `u`.
    pub u: f64,
    /// Completion cost `c`.
    pub c: f64,
}

/// Ordered task list. Indices are 0-based in the API and 1-based in output.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCatalog {
    tasks: Vec<Task>,
}

impl TaskCatalog {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        if tasks.is_empty() {
            return invalid("catalog needs at least one task");
        }
        if tasks.len() > MAX_TASKS {
            return invalid(format!("catalog has {} tasks, limit is {MAX_TASKS}", tasks.len()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if !(t.u > 0.0 && t.u.is_finite()) {
                return invalid(format!("task {}: utility coefficient must be > 0", i + 1));
            }
            if !(t.c >= 0.0 && t.c.is_finite()) {
                return invalid(format!("task {}: cost must be >= 0", i + 1));
            }
        }
        Ok(Self { tasks })
    }

    /// Build from `(u, c)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(u, c)| Task { u, c }).collect())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn cost(&self, m: usize) -> f64 {
        self.tasks[m].c
    }

    pub fn utility_coeff(&self, m: usize) -> f64 {
        self.tasks[m].u
    }

    pub fn costs(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.c).collect()
    }
}

/// Worker masses and the two quality capabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Population {
    n_total: f64,
    n_high: f64,
    q_high: f64,
    q_low: f64,
}

impl Population {
    pub fn new(n_total: f64, n_high: f64, q_high: f64, q_low: f64) -> Result<Self> {
        if !(n_total >= 0.0 && n_total.is_finite()) {
            return invalid("n_total must be a finite mass >= 0");
        }
        if !(n_high >= 0.0 && n_high <= n_total) {
            return invalid("n_high must lie in [0, n_total]");
        }
        if !(q_low > 0.0 && q_low.is_finite() && q_high.is_finite()) {
            return invalid("quality capabilities must be finite and > 0");
        }
        if !(q_low < q_high) {
            return invalid("q_low must be strictly below q_high; use n_high = 0 for a homogeneous pool");
        }
        Ok(Self { n_total, n_high, q_high, q_low })
    }

    /// Homogeneous pool of capability `q`. The (unused) high capability is
    /// set to `2q`.
    pub fn homogeneous(n_total: f64, q: f64) -> Result<Self> {
        Self::new(n_total, 0.0, 2.0 * q, q)
    }

    pub fn n_total(&self) -> f64 {
        self.n_total
    }

    pub fn n_high(&self) -> f64 {
        self.n_high
    }

    pub fn n_low(&self) -> f64 {
        self.n_total - self.n_high
    }

    pub fn q_high(&self) -> f64 {
        self.q_high
    }

    pub fn q_low(&self) -> f64 {
        self.q_low
    }

    pub fn with_n_total(&self, n_total: f64) -> Result<Self> {
        Self::new(n_total, self.n_high.min(n_total), self.q_high, self.q_low)
    }

    pub fn with_n_high(&self, n_high: f64) -> Result<Self> {
        Self::new(self.n_total, n_high, self.q_high, self.q_low)
    }
}

/// A set of task indices backed by a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct TaskSet(u64);

impl TaskSet {
    pub const EMPTY: TaskSet = TaskSet(0);

    pub fn from_bits(bits: u64) -> Self {
        TaskSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// All of `0..m`.
    pub fn full(m: usize) -> Self {
        if m >= 64 {
            TaskSet(u64::MAX)
        } else {
            TaskSet((1u64 << m) - 1)
        }
    }

    pub fn contains(self, m: usize) -> bool {
        m < 64 && self.0 >> m & 1 == 1
    }

    pub fn with(self, m: usize) -> Self {
        TaskSet(self.0 | 1u64 << m)
    }

    pub fn without(self, m: usize) -> Self {
        TaskSet(self.0 & !(1u64 << m))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: TaskSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&m| self.contains(m))
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl FromIterator<usize> for TaskSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter().fold(TaskSet::EMPTY, TaskSet::with)
    }
}

/// Prints 1-based ids, e.g. `{1,3}`.
impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.iter().map(|m| (m + 1).to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// Stage-I decision: rewards and quality requirements.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    pub rewards: Vec<f64>,
    pub quality_reqs: Vec<f64>,
}

impl Mechanism {
    pub fn new(rewards: Vec<f64>, quality_reqs: Vec<f64>) -> Result<Self> {
        if rewards.len() != quality_reqs.len() {
            return invalid("rewards and quality_reqs differ in length");
        }
        if rewards.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return invalid("rewards must be finite and >= 0");
        }
        if quality_reqs.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
            return invalid("quality requirements must be finite and >= 0");
        }
        Ok(Self { rewards, quality_reqs })
    }

    /// Quality requirement `q_high` on `high_set`, `q_low` elsewhere.
    pub fn from_high_set(rewards: Vec<f64>, high_set: TaskSet, pop: &Population) -> Result<Self> {
        let q = (0..rewards.len())
            .map(|m| if high_set.contains(m) { pop.q_high() } else { pop.q_low() })
            .collect();
        Self::new(rewards, q)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Check shape against the catalog and requirements against the pool.
    pub fn validate(&self, catalog: &TaskCatalog, pop: &Population) -> Result<()> {
        if self.len() != catalog.len() {
            return invalid(format!("mechanism has {} tasks, catalog has {}", self.len(), catalog.len()));
        }
        if let Some(m) = self.quality_reqs.iter().position(|&q| q > pop.q_high()) {
            return invalid(format!("task {}: quality requirement exceeds q_high, nobody is eligible", m + 1));
        }
        Ok(())
    }

    /// Tasks only high-capability workers may take.
    pub fn high_set(&self, pop: &Population) -> TaskSet {
        (0..self.len())
            .filter(|&m| self.quality_reqs[m] > pop.q_low() && self.quality_reqs[m] <= pop.q_high())
            .collect()
    }

    /// Tasks open to both classes.
    pub fn low_set(&self, pop: &Population) -> TaskSet {
        (0..self.len()).filter(|&m| self.quality_reqs[m] <= pop.q_low()).collect()
    }
}

pub fn eligible_tasks(q: f64, mech: &Mechanism) -> TaskSet {
    (0..mech.len()).filter(|&m| q >= mech.quality_reqs[m]).collect()
}

/// Payoff of a worker with capability `q` choosing `choice` while
/// `n_on_task` workers, the chooser included, share that task.
pub fn worker_payoff(
    choice: Option<usize>,
    n_on_task: f64,
    mech: &Mechanism,
    catalog: &TaskCatalog,
    q: f64,
) -> Result<f64> {
    let Some(m) = choice else {
        return Ok(0.0);
    };
    if m >= mech.len() || m >= catalog.len() {
        return invalid(format!("task index {m} out of range"));
    }
    if !(n_on_task >= 1.0) {
        return invalid("a selected task has at least one worker on it");
    }
    let c = catalog.cost(m);
    if q >= mech.quality_reqs[m] {
        Ok(mech.rewards[m] / n_on_task - c)
    } else {
        Ok(-c)
    }
}

/// Requester profit `sum_m U_m(Q_m N_m) - R_m`.
pub fn requester_profit(mech: &Mechanism, alloc: &[f64], util: &dyn UtilityModel) -> f64 {
    (0..mech.len())
        .map(|m| util.value(m, mech.quality_reqs[m] * alloc[m]) - mech.rewards[m])
        .sum()
}

/// Per-task increasing concave utility of delivered quality-weighted work.
pub trait UtilityModel: Send + Sync {
    fn family(&self) -> &str;
    fn value(&self, task: usize, x: f64) -> f64;
    fn derivative(&self, task: usize, x: f64) -> f64;
    /// Smallest `x >= 0` with `U'(x) <= t`; infinite for `t <= 0`.
    fn inverse_derivative(&self, task: usize, t: f64) -> f64;
}

/// `U_m(x) = u_m ln(1 + x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogUtility {
    coeffs: Vec<f64>,
}

impl LogUtility {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn from_catalog(catalog: &TaskCatalog) -> Self {
        Self::new(catalog.tasks().iter().map(|t| t.u).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

impl UtilityModel for LogUtility {
    fn family(&self) -> &str {
        "log"
    }

    fn value(&self, task: usize, x: f64) -> f64 {
        self.coeffs[task] * x.ln_1p()
    }

    fn derivative(&self, task: usize, x: f64) -> f64 {
        self.coeffs[task] / (1.0 + x)
    }

    fn inverse_derivative(&self, task: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return f64::INFINITY;
        }
        (self.coeffs[task] / t - 1.0).max(0.0)
    }
}

/// Numerical tolerances and search parameters shared by all solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub bisection_tol: f64,
    pub mass_tol: f64,
    /// Relative tolerance for argmax-set membership.
    pub tie_tol: f64,
    pub che_eps: f64,
    /// `None` means `max(1000, ceil(tau + 20 sqrt(tau)))`.
    pub che_level_cap: Option<usize>,
    pub grasp_alpha: f64,
    /// `None` means `20 M`.
    pub grasp_max_iter: Option<usize>,
    pub rng_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            bisection_tol: 1e-10,
            mass_tol: 1e-8,
            tie_tol: 1e-9,
            che_eps: 1e-3,
            che_level_cap: None,
            grasp_alpha: 0.5,
            grasp_max_iter: None,
            rng_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bisection_tol", self.bisection_tol),
            ("mass_tol", self.mass_tol),
            ("tie_tol", self.tie_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be > 0"));
            }
        }
        if !(self.che_eps > 0.0 && self.che_eps < 1.0) {
            return invalid("che_eps must lie in (0, 1)");
        }
        if self.che_level_cap == Some(0) {
            return invalid("che_level_cap must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.grasp_alpha) {
            return invalid("grasp_alpha must lie in [0, 1]");
        }
        if self.grasp_max_iter == Some(0) {
            return invalid("grasp_max_iter must be >= 1");
        }
        Ok(())
    }

    pub fn level_cap(&self, tau: f64) -> usize {
        self.che_level_cap
            .unwrap_or_else(|| 1000usize.max((tau + 20.0 * tau.sqrt()).ceil() as usize))
    }

    pub fn max_iter(&self, m: usize) -> usize {
        self.grasp_max_iter.unwrap_or(20 * m)
    }
}
