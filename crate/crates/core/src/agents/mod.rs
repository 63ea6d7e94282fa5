//! Type-partitioned confidence agents.
//!
//! # Checkpoint layout
//!
//! ```text
//! magic b"AGNT" | u32 version | u32 hash length | config hash bytes
//! | u32 d_s | u32 hidden | f64 kappa
//! | u32 #entity types | u32 agent index per entity type
//! | u32 #relation types | u32 agent index per relation type
//! | u32 #entity agents | u32 #relation agents
//! | params of every entity agent, then every relation agent, as f64
//! ```

pub mod beta;
pub mod policy;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use beta::Beta;
pub use policy::{ActionSample, Forward, PolicyConfig, PolicyParams};

use crate::binio::{Reader, Writer};
use crate::corpus::{Instance, TypeId, TypeOntology};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"AGNT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Entity,
    Relation,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            Self::Entity => "entity",
            Self::Relation => "relation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState<T> {
    pub values: Vec<T>,
    pub view: View,
}

/// `s ‖ (t_extracted + t_ds)/2`
pub fn build_state<T: Real>(s: &[T], extracted: &[T], ds: &[T], view: View) -> Result<AgentState<T>> {
    if extracted.len() != ds.len() {
        return Err(Error::Dimension {
            context: "build_state type vectors",
            expected: extracted.len(),
            got: ds.len(),
        });
    }
    let half = T::of(0.5);
    let mut values = Vec::with_capacity(s.len() + ds.len());
    values.extend_from_slice(s);
    values.extend(extracted.iter().zip(ds).map(|(&a, &b)| (a + b) * half));
    Ok(AgentState { values, view })
}

/// Agent index of every type id, per view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeAssignment {
    pub entity: Vec<usize>,
    pub relation: Vec<usize>,
}

/// Contiguous blocks of `⌈num/n⌉` id-sorted types per agent. Trailing agents
/// can end up with no types when the ceiling overshoots.
pub fn partition(num_types: usize, n_agents: usize) -> Result<Vec<usize>> {
    if n_agents == 0 {
        return Err(Error::Config("agent count must be at least 1".into()));
    }
    if n_agents > num_types {
        return Err(Error::Config(format!("{n_agents} agents for only {num_types} types")));
    }
    let block = num_types.div_ceil(n_agents);
    Ok((0..num_types).map(|t| t / block).collect())
}

pub fn partition_types(
    ontology: &TypeOntology,
    n_entity_agents: usize,
    n_relation_agents: usize,
) -> Result<TypeAssignment> {
    Ok(TypeAssignment {
        entity: partition(ontology.num_entity_types(), n_entity_agents)?,
        relation: partition(ontology.num_relation_types(), n_relation_agents)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub entity_agents: usize,
    pub relation_agents: usize,
    pub policy: PolicyConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            entity_agents: 2,
            relation_agents: 2,
            policy: PolicyConfig::default(),
        }
    }
}

/// Agent picked for each of the three evaluations of a sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub relation: usize,
    pub head: usize,
    pub tail: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentGroup<T> {
    pub entity_agents: Vec<PolicyParams<T>>,
    pub relation_agents: Vec<PolicyParams<T>>,
    pub assignment: TypeAssignment,
    /// Hex digest of the run configuration that produced these agents.
    pub config_hash: String,
}

impl<T: Real> AgentGroup<T> {
    /// Independent parameters per agent, each seeded from `seed`.
    pub fn new(ontology: &TypeOntology, d_s: usize, cfg: &AgentConfig, seed: u64) -> Result<Self> {
        let assignment = partition_types(ontology, cfg.entity_agents, cfg.relation_agents)?;
        let make = |view: u64, n: usize| {
            (0..n)
                .map(|i| PolicyParams::new(d_s, &cfg.policy, rng::derive_seed(seed, (view << 32) | i as u64)))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            entity_agents: make(1, cfg.entity_agents)?,
            relation_agents: make(2, cfg.relation_agents)?,
            assignment,
            config_hash: String::new(),
        })
    }

    pub fn agents(&self, view: View) -> &[PolicyParams<T>] {
        match view {
            View::Entity => &self.entity_agents,
            View::Relation => &self.relation_agents,
        }
    }

    pub fn agents_mut(&mut self, view: View) -> &mut [PolicyParams<T>] {
        match view {
            View::Entity => &mut self.entity_agents,
            View::Relation => &mut self.relation_agents,
        }
    }

    pub fn agent_for(&self, view: View, type_id: TypeId) -> Result<usize> {
        let table = match view {
            View::Entity => &self.assignment.entity,
            View::Relation => &self.assignment.relation,
        };
        table.get(type_id).copied().ok_or(Error::UnmappedType {
            id: type_id,
            view: view.name(),
        })
    }

    /// Agents chosen by the DS relation and the DS head and tail types.
    pub fn select_agents(&self, instance: &Instance) -> Result<Selection> {
        Ok(Selection {
            relation: self.agent_for(View::Relation, instance.ds_relation)?,
            head: self.agent_for(View::Entity, instance.head.ds_type)?,
            tail: self.agent_for(View::Entity, instance.tail.ds_type)?,
        })
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let first = self
            .entity_agents
            .first()
            .or(self.relation_agents.first())
            .ok_or_else(|| Error::Checkpoint("agent group has no agents".into()))?;
        let mut w = Writer(w);
        w.magic(MAGIC, VERSION)?;
        w.u32(self.config_hash.len() as u32)?;
        w.0.write_all(self.config_hash.as_bytes())?;
        w.u32(first.input_dim() as u32)?;
        w.u32(first.hidden_dim() as u32)?;
        w.f64(first.kappa())?;
        for table in [&self.assignment.entity, &self.assignment.relation] {
            w.u32(table.len() as u32)?;
            for &a in table {
                w.u32(a as u32)?;
            }
        }
        w.u32(self.entity_agents.len() as u32)?;
        w.u32(self.relation_agents.len() as u32)?;
        for a in self.entity_agents.iter().chain(&self.relation_agents) {
            w.reals(a.params())?;
        }
        w.0.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(MAGIC, VERSION)?;
        let len = r.dim(1 << 10)?;
        let mut hash = vec![0u8; len];
        r.0.read_exact(&mut hash)?;
        let config_hash = String::from_utf8(hash).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let d_s = r.dim(1 << 20)?;
        let hidden = r.dim(1 << 16)?;
        let kappa = r.f64()?;
        let cfg = PolicyConfig { hidden, kappa };
        let mut tables = Vec::new();
        for _ in 0..2 {
            let n = r.dim(1 << 20)?;
            tables.push(
                (0..n)
                    .map(|_| r.u32().map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let ne = r.dim(1 << 16)?;
        let nr = r.dim(1 << 16)?;
        for (table, n) in tables.iter().zip([ne, nr]) {
            if table.iter().any(|&a| a >= n) {
                return Err(Error::Checkpoint("type assigned to a missing agent".into()));
            }
        }
        let mut load = |n: usize| -> Result<Vec<PolicyParams<T>>> {
            (0..n)
                .map(|_| {
                    let mut p = PolicyParams::zeros(d_s, &cfg);
                    let len = p.params().len();
                    p.params_mut().copy_from_slice(&r.reals(len)?);
                    Ok(p)
                })
                .collect()
        };
        let entity_agents = load(ne)?;
        let relation_agents = load(nr)?;
        r.expect_eof()?;
        let relation = tables.pop().expect("two tables");
        let entity = tables.pop().expect("two tables");
        Ok(Self {
            entity_agents,
            relation_agents,
            assignment: TypeAssignment { entity, relation },
            config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
