//! Distant-supervision noise: false negatives, false positives and entity
//! type confusions, applied once to a gold-labelled corpus.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, TypeId};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub entity_noise_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn clean(seed: u64) -> Self {
        Self {
            fp_rate: 0.0,
            fn_rate: 0.0,
            entity_noise_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("fp_rate", self.fp_rate),
            ("fn_rate", self.fn_rate),
            ("entity_noise_rate", self.entity_noise_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Returns a noised copy of `corpus`. Gold labels are untouched and current
/// labels are reset to the new DS labels.
///
/// Every instance consumes the same six uniform draws, so the noise applied
/// to one instance does not depend on the labels of earlier ones.
pub fn inject_noise(corpus: &Corpus, spec: &NoiseSpec) -> Result<Corpus> {
    spec.validate()?;
    if corpus.noise.is_some() {
        return Err(Error::AlreadyNoised);
    }
    let ontology = corpus.ontology();
    let none_rel = ontology.none_relation_id;
    let relations: Vec<TypeId> = ontology.positive_relations().collect();
    let entities: Vec<TypeId> = ontology.positive_entities().collect();
    let mut rng = rng::stream(spec.seed, 0x4015E);

    let pick = |u: f64, n: usize| ((u * n as f64) as usize).min(n - 1);

    let instances = corpus
        .instances()
        .iter()
        .map(|orig| {
            let mut inst = orig.clone();
            let draws: [f64; 6] = std::array::from_fn(|_| rng.random::<f64>());

            if inst.ds_relation != none_rel {
                if draws[0] < spec.fn_rate {
                    inst.ds_relation = none_rel;
                }
            } else if draws[0] < spec.fp_rate {
                inst.ds_relation = relations[pick(draws[1], relations.len())];
            }

            for (mention, (u, v)) in [&mut inst.head, &mut inst.tail]
                .into_iter()
                .zip([(draws[2], draws[3]), (draws[4], draws[5])])
            {
                if u < spec.entity_noise_rate {
                    let others: Vec<TypeId> = entities.iter().copied().filter(|&e| e != mention.ds_type).collect();
                    if !others.is_empty() {
                        mention.ds_type = others[pick(v, others.len())];
                    }
                }
            }
            inst.reset_current();
            inst
        })
        .collect();

    Corpus::with_noise(ontology.clone(), corpus.vocab_size(), instances, Some(spec.clone()))
}

/// Flip counts of DS labels against gold labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub gold_positive: usize,
    pub gold_none: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub relation_confusions: usize,
    pub entity_mentions: usize,
    pub entity_flips: usize,
    pub fn_fraction: f64,
    pub fp_fraction: f64,
    pub entity_flip_fraction: f64,
}

/// Measures realised noise. Instances without gold labels are skipped.
pub fn noise_stats(corpus: &Corpus) -> NoiseStats {
    let none = corpus.ontology().none_relation_id;
    let mut s = NoiseStats::default();
    for inst in corpus.instances() {
        let Some(gold) = inst.gold_relation() else {
            continue;
        };
        if gold == none {
            s.gold_none += 1;
            if inst.ds_relation != none {
                s.false_positives += 1;
            }
        } else {
            s.gold_positive += 1;
            if inst.ds_relation == none {
                s.false_negatives += 1;
            } else if inst.ds_relation != gold {
                s.relation_confusions += 1;
            }
        }
        for m in [&inst.head, &inst.tail] {
            if let Some(g) = m.gold_type() {
                s.entity_mentions += 1;
                if g != m.ds_type {
                    s.entity_flips += 1;
                }
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    s.fn_fraction = frac(s.false_negatives, s.gold_positive);
    s.fp_fraction = frac(s.false_positives, s.gold_none);
    s.entity_flip_fraction = frac(s.entity_flips, s.entity_mentions);
    s
}
