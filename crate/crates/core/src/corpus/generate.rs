//! Template-grammar corpus generator.
//!
//! Vocabulary layout (token ids):
//!
//! ```text
//! [0, E·names)                 entity names, `names_per_entity_type` per entity type
//! [E·names, E·names + R·trig)  relation trigger tokens, `triggers_per_relation` per relation
//! [.., vocab_size)             filler tokens
//! ```
//!
//! A positive sentence of relation `r` reads
//! `filler* HEAD filler* (trigger_r)* filler* TAIL filler*`, with head/tail types
//! drawn from the relation's type signature. A `None` sentence uses random
//! entity types and may contain a decoy trigger of a random relation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Instance, Mention, Span, TypeId, TypeOntology};
use crate::error::{Error, Result};
use crate::rng;

const MIN_FILLER_VOCAB: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Entity types, not counting `NONE`.
    pub num_entity_types: usize,
    /// Relation types, not counting `NONE`.
    pub num_relation_types: usize,
    pub num_instances: usize,
    pub vocab_size: usize,
    /// Fraction of instances whose gold relation is `NONE`.
    pub none_fraction: f64,
    pub names_per_entity_type: usize,
    pub triggers_per_relation: usize,
    /// Positions between the mentions that may hold a trigger token.
    pub trigger_slots: usize,
    /// Probability that each trigger slot of a positive sentence is filled.
    pub trigger_prob: f64,
    /// Probability that a positive mention takes its signature type.
    pub signature_purity: f64,
    /// Probability that a `None` sentence contains one decoy trigger.
    pub decoy_rate: f64,
    pub min_filler: usize,
    pub max_filler: usize,
    pub max_mention_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_entity_types: 12,
            num_relation_types: 8,
            num_instances: 5000,
            vocab_size: 1000,
            none_fraction: 0.35,
            names_per_entity_type: 8,
            triggers_per_relation: 4,
            trigger_slots: 2,
            trigger_prob: 0.6,
            signature_purity: 0.9,
            decoy_rate: 0.15,
            min_filler: 6,
            max_filler: 12,
            max_mention_len: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_entity_types == 0 || self.num_relation_types == 0 {
            return bad("generator needs at least one entity type and one relation type");
        }
        if self.num_instances == 0 {
            return bad("generator needs at least one instance");
        }
        if self.names_per_entity_type == 0 || self.triggers_per_relation == 0 {
            return bad("names_per_entity_type and triggers_per_relation must be positive");
        }
        if self.max_mention_len == 0 || self.min_filler > self.max_filler {
            return bad("max_mention_len must be positive and min_filler <= max_filler");
        }
        for (name, p) in [
            ("none_fraction", self.none_fraction),
            ("trigger_prob", self.trigger_prob),
            ("signature_purity", self.signature_purity),
            ("decoy_rate", self.decoy_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0, 1]")));
            }
        }
        let needed = self.required_vocab();
        if self.vocab_size < needed {
            return Err(Error::Config(format!(
                "vocab_size {} smaller than the {needed} tokens the grammar needs",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn required_vocab(&self) -> usize {
        self.num_entity_types * self.names_per_entity_type
            + self.num_relation_types * self.triggers_per_relation
            + MIN_FILLER_VOCAB
    }

    fn trigger_base(&self) -> usize {
        self.num_entity_types * self.names_per_entity_type
    }

    fn filler_base(&self) -> usize {
        self.trigger_base() + self.num_relation_types * self.triggers_per_relation
    }

    /// Token id of name `k` of (1-based) entity type `e`.
    pub fn name_token(&self, e: TypeId, k: usize) -> u32 {
        ((e - 1) * self.names_per_entity_type + k) as u32
    }

    /// Token id of trigger `k` of (1-based) relation `r`.
    pub fn trigger_token(&self, r: TypeId, k: usize) -> u32 {
        (self.trigger_base() + (r - 1) * self.triggers_per_relation + k) as u32
    }
}

/// Head/tail entity types characteristic of a relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSignature {
    pub relation: TypeId,
    pub head: TypeId,
    pub tail: TypeId,
}

/// Relation signatures drawn for `(cfg, seed)`; index `r - 1` holds relation `r`.
pub fn relation_signatures(cfg: &GeneratorConfig, seed: u64) -> Vec<RelationSignature> {
    let mut rng = rng::stream(seed, 0x5167);
    let e = cfg.num_entity_types;
    let mut used = std::collections::HashSet::new();
    (1..=cfg.num_relation_types)
        .map(|r| {
            let mut pair = (0, 0);
            for _ in 0..64 {
                pair = (rng.random_range(1..=e), rng.random_range(1..=e));
                if used.insert(pair) {
                    break;
                }
            }
            RelationSignature {
                relation: r,
                head: pair.0,
                tail: pair.1,
            }
        })
        .collect()
}

/// Generates a noise-free corpus: DS labels equal gold labels everywhere.
pub fn generate_corpus(cfg: &GeneratorConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let ontology = TypeOntology::synthetic(cfg.num_entity_types, cfg.num_relation_types);
    let signatures = relation_signatures(cfg, seed);
    let mut rng = rng::stream(seed, 0x6E6E);
    let filler_base = cfg.filler_base();
    let n_filler = cfg.vocab_size - filler_base;

    let mut instances = Vec::with_capacity(cfg.num_instances);
    for id in 0..cfg.num_instances {
        let positive = rng.random::<f64>() >= cfg.none_fraction;
        let (relation, head_type, tail_type) = if positive {
            let sig = signatures[rng.random_range(0..cfg.num_relation_types)];
            let head = if rng.random::<f64>() < cfg.signature_purity {
                sig.head
            } else {
                rng.random_range(1..=cfg.num_entity_types)
            };
            let tail = if rng.random::<f64>() < cfg.signature_purity {
                sig.tail
            } else {
                rng.random_range(1..=cfg.num_entity_types)
            };
            (sig.relation, head, tail)
        } else {
            (
                ontology.none_relation_id,
                rng.random_range(1..=cfg.num_entity_types),
                rng.random_range(1..=cfg.num_entity_types),
            )
        };

        let filler = |rng: &mut rng::StableRng| (filler_base + rng.random_range(0..n_filler)) as u32;
        let n_fill = rng.random_range(cfg.min_filler..=cfg.max_filler);
        let left = rng.random_range(0..=n_fill / 3);
        let middle_fill = 1 + rng.random_range(0..=(n_fill - left).saturating_sub(1) / 2);
        let right = n_fill.saturating_sub(left + middle_fill);

        let mut middle: Vec<u32> = (0..middle_fill).map(|_| filler(&mut rng)).collect();
        if positive {
            for _ in 0..cfg.trigger_slots {
                if rng.random::<f64>() < cfg.trigger_prob {
                    let tok = cfg.trigger_token(relation, rng.random_range(0..cfg.triggers_per_relation));
                    let at = rng.random_range(0..=middle.len());
                    middle.insert(at, tok);
                }
            }
        } else if rng.random::<f64>() < cfg.decoy_rate {
            let r = rng.random_range(1..=cfg.num_relation_types);
            let tok = cfg.trigger_token(r, rng.random_range(0..cfg.triggers_per_relation));
            let at = rng.random_range(0..=middle.len());
            middle.insert(at, tok);
        }

        let mention = |rng: &mut rng::StableRng, e: TypeId| -> Vec<u32> {
            let len = rng.random_range(1..=cfg.max_mention_len);
            (0..len)
                .map(|_| cfg.name_token(e, rng.random_range(0..cfg.names_per_entity_type)))
                .collect()
        };
        let head_tokens = mention(&mut rng, head_type);
        let tail_tokens = mention(&mut rng, tail_type);

        let mut tokens: Vec<u32> = (0..left).map(|_| filler(&mut rng)).collect();
        let head_span = Span::new(tokens.len(), tokens.len() + head_tokens.len());
        tokens.extend(head_tokens);
        tokens.extend(middle);
        let tail_span = Span::new(tokens.len(), tokens.len() + tail_tokens.len());
        tokens.extend(tail_tokens);
        tokens.extend((0..right).map(|_| filler(&mut rng)));

        instances.push(Instance::new(
            id as u64,
            tokens,
            Mention::new(head_span, head_type, Some(head_type)),
            Mention::new(tail_span, tail_type, Some(tail_type)),
            relation,
            Some(relation),
        ));
    }
    Corpus::new(ontology, cfg.vocab_size, instances)
}
