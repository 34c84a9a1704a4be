//! JSON scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Mechanism, Population, SolverConfig, Task, TaskCatalog};
use crate::ne::NeAllocation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: f64,
    pub n_high: f64,
    pub q_high: f64,
    pub q_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub rewards: Vec<f64>,
    pub quality_reqs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationBlock {
    pub n_high: Vec<f64>,
    pub n_low: Vec<f64>,
    pub lambda_high: f64,
    pub lambda_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub tasks: Vec<Task>,
    pub population: PopulationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationBlock>,
}

impl Scenario {
    pub fn new(catalog: &TaskCatalog, pop: &Population) -> Self {
        Self {
            tasks: catalog.tasks().to_vec(),
            population: PopulationSpec {
                n: pop.n_total(),
                n_high: pop.n_high(),
                q_high: pop.q_high(),
                q_low: pop.q_low(),
            },
            mechanism: None,
            solver: None,
            allocation: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every block; called by the parsers.
    pub fn validate(&self) -> Result<()> {
        let cat = self.catalog()?;
        let pop = self.population()?;
        if let Some(mech) = self.mechanism()? {
            mech.validate(&cat, &pop)?;
        }
        self.solver().validate()?;
        if let Some(a) = &self.allocation {
            if a.n_high.len() != cat.len() || a.n_low.len() != cat.len() {
                return invalid("allocation vectors must have one entry per task");
            }
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<TaskCatalog> {
        TaskCatalog::new(self.tasks.clone())
    }

    pub fn population(&self) -> Result<Population> {
        let p = &self.population;
        Population::new(p.n, p.n_high, p.q_high, p.q_low)
    }

    pub fn mechanism(&self) -> Result<Option<Mechanism>> {
        self.mechanism
            .as_ref()
            .map(|m| Mechanism::new(m.rewards.clone(), m.quality_reqs.clone()))
            .transpose()
    }

    pub fn require_mechanism(&self) -> Result<Mechanism> {
        match self.mechanism()? {
            Some(m) => Ok(m),
            None => invalid("scenario has no mechanism block"),
        }
    }

    pub fn solver(&self) -> SolverConfig {
        self.solver.unwrap_or_default()
    }

    pub fn set_mechanism(&mut self, mech: &Mechanism) {
        self.mechanism = Some(MechanismSpec {
            rewards: mech.rewards.clone(),
            quality_reqs: mech.quality_reqs.clone(),
        });
    }

    pub fn set_allocation(&mut self, alloc: &NeAllocation) {
        self.allocation = Some(AllocationBlock {
            n_high: alloc.n_high_per_task.clone(),
            n_low: alloc.n_low_per_task.clone(),
            lambda_high: alloc.lambda_high,
            lambda_low: alloc.lambda_low,
        });
    }

    pub fn allocation(&self) -> Option<NeAllocation> {
        self.allocation.as_ref().map(|a| NeAllocation {
            n_high_per_task: a.n_high.clone(),
            n_low_per_task: a.n_low.clone(),
            lambda_high: a.lambda_high,
            lambda_low: a.lambda_low,
        })
    }
}
