use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use chmech_core::che::{che_run, CheConfig, CheStatus};
use chmech_core::mech_opt::{exhaustive_set_search, grasp_search, mechanism_from_masses, solve_fixed_set, Provenance};
use chmech_core::ne::{ne_solve, verify_ne};
use chmech_core::oracles::integer_br_dynamics;
use chmech_core::scenario::Scenario;
use chmech_core::{Error as CoreError, LogUtility, SolverConfig, TaskSet};

use crate::experiments::{ExperimentName, ExperimentSpec};
use crate::table::{fmt_num, wide_csv};
use crate::LabError;

#[derive(Debug, Parser)]
#[command(name = "chmech", version, about = "Equilibria and optimal mechanisms for two-class crowdsourcing games")]
pub struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,

    /// RNG seed; overrides the scenario's solver seed.
    #[arg(long, global = true, env = "CHMECH_SEED")]
    pub seed: Option<u64>,

    /// Output CSV path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exhaustive,
    Grasp,
    FixedSet,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Continuum Nash equilibrium of the scenario's mechanism.
    Ne {
        /// Report equilibrium residuals instead of masses. Checks the
        /// scenario's allocation block when present.
        #[arg(long)]
        verify: bool,
        /// Also write the scenario with the solved allocation attached.
        #[arg(long)]
        emit_scenario: Option<PathBuf>,
    },
    /// Requester-optimal mechanism under full rationality.
    Opt {
        #[arg(long, value_enum, default_value_t = Method::Exhaustive)]
        method: Method,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// 1-based task ids for `--method fixed-set`.
        #[arg(long, value_delimiter = ',')]
        high_set: Vec<usize>,
    },
    /// Cognitive-hierarchy outcome of the scenario's mechanism.
    Che {
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        eps: Option<f64>,
        /// Per-level trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Integer best-response dynamics of the scenario's mechanism.
    Oracle {
        #[arg(long)]
        max_rounds: Option<usize>,
    },
    /// Run a numerical study.
    Experiment {
        #[arg(long)]
        name: String,
        /// Comma-separated axis values replacing the default sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Restart budget for `alg1_eval`.
        #[arg(long)]
        max_iter: Option<usize>,
    },
}

type Result<T> = std::result::Result<T, LabError>;

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| LabError::Write { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(cli: &Cli) -> Result<Option<Scenario>> {
    cli.scenario.as_ref().map(|p| Scenario::from_path(p).map_err(LabError::from)).transpose()
}

fn need(s: Option<Scenario>) -> Result<Scenario> {
    s.ok_or_else(|| LabError::Usage("this command needs --scenario".into()))
}

fn config(cli: &Cli, s: Option<&Scenario>) -> SolverConfig {
    let mut cfg = s.map(Scenario::solver).unwrap_or_default();
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    cfg
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| LabError::Usage(e.to_string()))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let scenario = load(cli)?;
    let cfg = config(cli, scenario.as_ref());
    cfg.validate()?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Ne { verify, emit_scenario } => cmd_ne(need(scenario)?, &cfg, *verify, emit_scenario.as_deref(), out),
        Command::Opt { method, alpha, max_iter, high_set } => {
            let mut cfg = cfg;
            if let Some(a) = alpha {
                cfg.grasp_alpha = *a;
            }
            if max_iter.is_some() {
                cfg.grasp_max_iter = *max_iter;
            }
            cfg.validate()?;
            cmd_opt(need(scenario)?, &cfg, *method, high_set, out)
        }
        Command::Che { tau, eps, trace } => {
            let mut cfg = cfg;
            if let Some(e) = eps {
                cfg.che_eps = *e;
            }
            cfg.validate()?;
            cmd_che(need(scenario)?, &cfg, *tau, trace.as_deref(), out)
        }
        Command::Oracle { max_rounds } => cmd_oracle(need(scenario)?, &cfg, *max_rounds, out),
        Command::Experiment { name, sweep, max_iter } => {
            let mut spec = ExperimentSpec::new(name.parse::<ExperimentName>()?);
            spec.sweep = (!sweep.is_empty()).then(|| sweep.clone());
            spec.base = scenario;
            spec.out = cli.out.clone();
            spec.max_iter = *max_iter;
            let table = spec.run(&cfg)?;
            write_out(out, &table.to_csv())
        }
    }
}

fn cmd_ne(s: Scenario, cfg: &SolverConfig, verify: bool, emit: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (cat, pop, mech) = (s.catalog()?, s.population()?, s.require_mechanism()?);
    if verify {
        let alloc = match s.allocation() {
            Some(a) => a,
            None => ne_solve(&cat, &pop, &mech, cfg)?,
        };
        let res = verify_ne(&cat, &pop, &mech, &alloc, cfg);
        let rows: Vec<Vec<String>> = res.named().iter().map(|(k, v)| vec![k.to_string(), fmt_num(*v)]).collect();
        return write_out(out, &wide_csv(&["condition", "residual"], &rows));
    }
    let alloc = ne_solve(&cat, &pop, &mech, cfg)?;
    let totals = alloc.totals();
    let rows: Vec<Vec<String>> = (0..cat.len())
        .map(|m| {
            vec![
                (m + 1).to_string(),
                fmt_num(mech.quality_reqs[m]),
                fmt_num(mech.rewards[m]),
                fmt_num(alloc.n_high_per_task[m]),
                fmt_num(alloc.n_low_per_task[m]),
                fmt_num(totals[m]),
                fmt_num(alloc.lambda_high),
                fmt_num(alloc.lambda_low),
            ]
        })
        .collect();
    if let Some(path) = emit {
        let mut with = s.clone();
        with.set_allocation(&alloc);
        let json = with.to_json()?;
        std::fs::write(path, json).map_err(|source| LabError::Write { path: path.to_path_buf(), source })?;
    }
    let header = ["task", "quality_req", "reward", "n_high", "n_low", "n_total", "lambda_high", "lambda_low"];
    write_out(out, &wide_csv(&header, &rows))
}

fn cmd_opt(s: Scenario, cfg: &SolverConfig, method: Method, high_set: &[usize], out: Option<&Path>) -> Result<()> {
    let (cat, pop) = (s.catalog()?, s.population()?);
    let util = LogUtility::from_catalog(&cat);
    let res = match method {
        Method::Exhaustive => exhaustive_set_search(&cat, &pop, &util, cfg)?,
        Method::Grasp => grasp_search(&cat, &pop, &util, cfg)?,
        Method::FixedSet => {
            if high_set.iter().any(|&id| id == 0 || id > cat.len()) {
                return Err(LabError::Usage(format!("--high-set ids must lie in 1..={}", cat.len())));
            }
            let set: TaskSet = high_set.iter().map(|id| id - 1).collect();
            let sol = solve_fixed_set(&cat, &pop, &util, set, cfg)?;
            mechanism_from_masses(&cat, &pop, &util, set, &sol.masses, Provenance::FixedSet)?
        }
    };
    let rows: Vec<Vec<String>> = (0..cat.len())
        .map(|m| {
            vec![
                (m + 1).to_string(),
                u8::from(res.high_set.contains(m)).to_string(),
                fmt_num(res.mechanism.quality_reqs[m]),
                fmt_num(res.mechanism.rewards[m]),
                fmt_num(res.masses[m]),
                fmt_num(res.profit),
                res.provenance.to_string(),
            ]
        })
        .collect();
    let header = ["task", "high", "quality_req", "reward", "mass", "profit", "provenance"];
    write_out(out, &wide_csv(&header, &rows))
}

fn cmd_che(s: Scenario, cfg: &SolverConfig, tau: f64, trace: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (cat, pop, mech) = (s.catalog()?, s.population()?, s.require_mechanism()?);
    let che = CheConfig::new(tau, cfg)?;
    let res = che_run(&cat, &pop, &mech, &che, cfg)?;
    let totals = res.totals();
    let rows: Vec<Vec<String>> = (0..cat.len())
        .map(|m| {
            vec![
                (m + 1).to_string(),
                fmt_num(res.n_high_per_task[m]),
                fmt_num(res.n_low_per_task[m]),
                fmt_num(totals[m]),
                fmt_num(res.tf_final),
                res.levels.to_string(),
            ]
        })
        .collect();
    write_out(out, &wide_csv(&["task", "n_high", "n_low", "n_total", "tf_final", "levels"], &rows))?;
    if let Some(path) = trace {
        let mut rows = Vec::new();
        for rec in &res.trace {
            for m in 0..cat.len() {
                rows.push(vec![
                    rec.level.to_string(),
                    fmt_num(rec.f_k),
                    fmt_num(rec.tf),
                    (m + 1).to_string(),
                    fmt_num(rec.e_high[m]),
                    fmt_num(rec.e_low[m]),
                    fmt_num(rec.payoffs[m]),
                ]);
            }
        }
        let text = wide_csv(&["level", "f_k", "tf", "task", "e_high", "e_low", "E_payoff"], &rows);
        std::fs::write(path, text).map_err(|source| LabError::Write { path: path.to_path_buf(), source })?;
    }
    if res.status == CheStatus::LevelCapReached {
        return Err(CoreError::NonConvergence { what: "cognitive-hierarchy levels", iterations: res.levels }.into());
    }
    Ok(())
}

fn cmd_oracle(s: Scenario, cfg: &SolverConfig, max_rounds: Option<usize>, out: Option<&Path>) -> Result<()> {
    let (cat, pop, mech) = (s.catalog()?, s.population()?, s.require_mechanism()?);
    let p = integer_br_dynamics(&cat, &pop, &mech, max_rounds, cfg.rng_seed, cfg)?;
    let totals = p.totals();
    let rows: Vec<Vec<String>> = (0..cat.len())
        .map(|m| {
            vec![
                (m + 1).to_string(),
                p.counts_high[m].to_string(),
                p.counts_low[m].to_string(),
                totals[m].to_string(),
                p.rounds.to_string(),
            ]
        })
        .collect();
    write_out(out, &wide_csv(&["task", "count_high", "count_low", "count_total", "rounds"], &rows))
}
