//! Distant-supervision corpora: data model, synthetic generation, noise
//! injection and the line-delimited file format.
//!
//! Gold labels live in private fields. Training code receives corpora passed
//! through [`Corpus::without_gold`], so nothing on a training path can read them.

mod generate;
mod io;
mod noise;

pub use generate::{generate_corpus, GeneratorConfig, RelationSignature};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, CORPUS_FORMAT_VERSION};
pub use noise::{inject_noise, noise_stats, NoiseSpec, NoiseStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense type index into [`TypeOntology`] lists.
pub type TypeId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeOntology {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
    pub none_entity_id: TypeId,
    pub none_relation_id: TypeId,
}

impl TypeOntology {
    pub fn new(
        entity_types: Vec<String>,
        relation_types: Vec<String>,
        none_entity_id: TypeId,
        none_relation_id: TypeId,
    ) -> Result<Self> {
        let o = Self {
            entity_types,
            relation_types,
            none_entity_id,
            none_relation_id,
        };
        o.validate()?;
        Ok(o)
    }

    /// `NONE` at id 0 followed by `E1..En` / `R1..Rm`.
    pub fn synthetic(num_entity_types: usize, num_relation_types: usize) -> Self {
        let entity_types = std::iter::once("NONE".to_string())
            .chain((1..=num_entity_types).map(|i| format!("E{i}")))
            .collect();
        let relation_types = std::iter::once("NONE".to_string())
            .chain((1..=num_relation_types).map(|i| format!("R{i}")))
            .collect();
        Self {
            entity_types,
            relation_types,
            none_entity_id: 0,
            none_relation_id: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn unique(names: &[String], what: &str) -> Result<()> {
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if !seen.insert(n) {
                    return Err(Error::Config(format!("duplicate {what} type name `{n}`")));
                }
            }
            Ok(())
        }
        if self.entity_types.len() < 2 || self.relation_types.len() < 2 {
            return Err(Error::Config(
                "ontology needs at least one non-None entity and relation type".into(),
            ));
        }
        if self.none_entity_id >= self.entity_types.len() {
            return Err(Error::Config("none_entity_id outside entity_types".into()));
        }
        if self.none_relation_id >= self.relation_types.len() {
            return Err(Error::Config("none_relation_id outside relation_types".into()));
        }
        unique(&self.entity_types, "entity")?;
        unique(&self.relation_types, "relation")
    }

    #[inline]
    pub fn num_entity_types(&self) -> usize {
        self.entity_types.len()
    }

    #[inline]
    pub fn num_relation_types(&self) -> usize {
        self.relation_types.len()
    }

    pub fn positive_relations(&self) -> impl Iterator<Item = TypeId> + '_ {
        (0..self.relation_types.len()).filter(move |&r| r != self.none_relation_id)
    }

    pub fn positive_entities(&self) -> impl Iterator<Item = TypeId> + '_ {
        (0..self.entity_types.len()).filter(move |&e| e != self.none_entity_id)
    }
}

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mention {
    pub span: Span,
    pub ds_type: TypeId,
    gold_type: Option<TypeId>,
    pub current_type: TypeId,
}

impl Mention {
    /// A mention whose current label starts at the DS label.
    pub fn new(span: Span, ds_type: TypeId, gold_type: Option<TypeId>) -> Self {
        Self {
            span,
            ds_type,
            gold_type,
            current_type: ds_type,
        }
    }

    /// Evaluation-only accessor.
    pub fn gold_type(&self) -> Option<TypeId> {
        self.gold_type
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub head: Mention,
    pub tail: Mention,
    pub ds_relation: TypeId,
    gold_relation: Option<TypeId>,
    pub current_relation: TypeId,
    pub confidence: f64,
}

impl Instance {
    pub fn new(
        id: u64,
        tokens: Vec<u32>,
        head: Mention,
        tail: Mention,
        ds_relation: TypeId,
        gold_relation: Option<TypeId>,
    ) -> Self {
        Self {
            id,
            tokens,
            head,
            tail,
            ds_relation,
            gold_relation,
            current_relation: ds_relation,
            confidence: 1.0,
        }
    }

    /// Evaluation-only accessor.
    pub fn gold_relation(&self) -> Option<TypeId> {
        self.gold_relation
    }

    pub fn has_gold(&self) -> bool {
        self.gold_relation.is_some()
    }

    /// Resets the current labels (and confidence) to the DS labels.
    pub fn reset_current(&mut self) {
        self.current_relation = self.ds_relation;
        self.head.current_type = self.head.ds_type;
        self.tail.current_type = self.tail.ds_type;
        self.confidence = 1.0;
    }

    /// Copy with every gold field cleared.
    pub fn without_gold(&self) -> Instance {
        let mut c = self.clone();
        c.gold_relation = None;
        c.head.gold_type = None;
        c.tail.gold_type = None;
        c
    }

    /// Overwrites gold labels. Used by tests that check gold labels never
    /// influence training.
    pub fn set_gold(&mut self, relation: Option<TypeId>, head: Option<TypeId>, tail: Option<TypeId>) {
        self.gold_relation = relation;
        self.head.gold_type = head;
        self.tail.gold_type = tail;
    }

    fn validate(&self, ontology: &TypeOntology) -> std::result::Result<(), (String, String)> {
        let n = self.tokens.len();
        for (name, m) in [("head", &self.head), ("tail", &self.tail)] {
            if m.span.start >= m.span.end || m.span.end > n {
                return Err((
                    format!("{name}.span"),
                    format!("span {:?} invalid for {n} tokens", (m.span.start, m.span.end)),
                ));
            }
            let ne = ontology.num_entity_types();
            for (field, v) in [
                ("ds_type", Some(m.ds_type)),
                ("current_type", Some(m.current_type)),
                ("gold_type", m.gold_type),
            ] {
                if let Some(v) = v {
                    if v >= ne {
                        return Err((
                            format!("{name}.{field}"),
                            format!("entity type id {v} out of range (0..{ne})"),
                        ));
                    }
                }
            }
        }
        if self.head.span.overlaps(&self.tail.span) {
            return Err(("tail.span".into(), "head and tail spans overlap".into()));
        }
        let nr = ontology.num_relation_types();
        for (field, v) in [
            ("ds_relation", Some(self.ds_relation)),
            ("current_relation", Some(self.current_relation)),
            ("gold.relation", self.gold_relation),
        ] {
            if let Some(v) = v {
                if v >= nr {
                    return Err((field.into(), format!("relation type id {v} out of range (0..{nr})")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(("confidence".into(), format!("{} not in [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

/// Mention counts over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub relation_mentions: usize,
    pub entity_mentions: usize,
    pub ds_positive_relations: usize,
    pub ds_none_relations: usize,
}

impl CorpusStats {
    fn compute(ontology: &TypeOntology, instances: &[Instance]) -> Self {
        let positives = instances
            .iter()
            .filter(|i| i.ds_relation != ontology.none_relation_id)
            .count();
        Self {
            relation_mentions: instances.len(),
            entity_mentions: 2 * instances.len(),
            ds_positive_relations: positives,
            ds_none_relations: instances.len() - positives,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    ontology: TypeOntology,
    instances: Vec<Instance>,
    vocab_size: usize,
    stats: CorpusStats,
    noise: Option<NoiseSpec>,
}

impl Corpus {
    pub fn new(ontology: TypeOntology, vocab_size: usize, instances: Vec<Instance>) -> Result<Self> {
        Self::with_noise(ontology, vocab_size, instances, None)
    }

    pub(crate) fn with_noise(
        ontology: TypeOntology,
        vocab_size: usize,
        instances: Vec<Instance>,
        noise: Option<NoiseSpec>,
    ) -> Result<Self> {
        ontology.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        let mut ids = std::collections::HashSet::with_capacity(instances.len());
        for (pos, inst) in instances.iter().enumerate() {
            if let Err((field, message)) = inst.validate(&ontology) {
                return Err(Error::Parse {
                    line: pos + 2,
                    field,
                    message,
                });
            }
            if let Some(t) = inst.tokens.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::Parse {
                    line: pos + 2,
                    field: "tokens".into(),
                    message: format!("token {t} outside vocabulary of {vocab_size}"),
                });
            }
            if !ids.insert(inst.id) {
                return Err(Error::Parse {
                    line: pos + 2,
                    field: "id".into(),
                    message: format!("duplicate instance id {}", inst.id),
                });
            }
        }
        let stats = CorpusStats::compute(&ontology, &instances);
        Ok(Self {
            ontology,
            instances,
            vocab_size,
            stats,
            noise,
        })
    }

    pub fn ontology(&self) -> &TypeOntology {
        &self.ontology
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// The noise spec this corpus was produced with, if any.
    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// The training view: identical corpus with every gold label removed.
    pub fn without_gold(&self) -> Corpus {
        Corpus {
            ontology: self.ontology.clone(),
            instances: self.instances.iter().map(Instance::without_gold).collect(),
            vocab_size: self.vocab_size,
            stats: self.stats,
            noise: self.noise.clone(),
        }
    }

    /// Replaces the instance list, re-validating invariants.
    pub fn with_instances(&self, instances: Vec<Instance>) -> Result<Corpus> {
        Self::with_noise(self.ontology.clone(), self.vocab_size, instances, self.noise.clone())
    }

    /// Splits off the last `ceil(len * test_fraction)` instances as a test partition.
    pub fn split_test(&self, test_fraction: f64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction {test_fraction} must be in [0, 1)"
            )));
        }
        self.split_test_count((self.len() as f64 * test_fraction).ceil() as usize)
    }

    /// Like [`Corpus::split_test`] with an exact test size; the last
    /// `n_test` instances (all of them if fewer) become the test split.
    pub fn split_test_count(&self, n_test: usize) -> Result<(Corpus, Corpus)> {
        let cut = self.len() - n_test.min(self.len());
        let train = self.with_instances(self.instances[..cut].to_vec())?;
        let test = self.with_instances(self.instances[cut..].to_vec())?;
        Ok((train, test))
    }
}
