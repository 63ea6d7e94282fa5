use rand::seq::SliceRandom;
use rand::Rng;

use super::config::TrainConfig;
use super::encode::{encode_all, Encoded};
use crate::agents::{build_state, AgentGroup, View};
use crate::corpus::{Corpus, Instance, TypeId};
use crate::embeddings::{transe_pretrain_with_history, KgEmbeddings, KgTriple};
use crate::error::{Error, Result};
use crate::extractors::{ExtractorKind, ExtractorModel, LossConfig, TrainExample};
use crate::metrics::build_validation_set;
use crate::rng;
use crate::scalar::{sigmoid, Real};

/// Everything the training loop starts from; reusable across modes that
/// share a seed and configuration.
#[derive(Clone, Debug)]
pub struct Pretrained<T> {
    pub entity: ExtractorModel<T>,
    pub relation: ExtractorModel<T>,
    pub kg: KgEmbeddings<T>,
    pub validation: Corpus,
    pub agents: AgentGroup<T>,
    pub history: PretrainHistory,
    pub(crate) encoded: Vec<Encoded<T>>,
    pub(crate) train_ids: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainHistory {
    pub extractor_loss: Vec<f64>,
    pub policy_loss: Vec<f64>,
    pub transe_loss: Vec<f64>,
}

impl<T: Real> Pretrained<T> {
    /// Reassembles pre-training results (for example loaded from disk) for
    /// the training corpus they were built from. Features are recomputed.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        train: &Corpus,
        cfg: &TrainConfig,
        entity: ExtractorModel<T>,
        relation: ExtractorModel<T>,
        kg: KgEmbeddings<T>,
        validation: Corpus,
        agents: AgentGroup<T>,
        history: PretrainHistory,
    ) -> Result<Self> {
        let features = &cfg.extractor.features;
        for m in [&entity, &relation] {
            if m.feature_config() != features {
                return Err(Error::Config(format!(
                    "{:?} extractor was trained with features {:?}, config has {:?}",
                    m.kind(),
                    m.feature_config(),
                    features
                )));
            }
        }
        if entity.kind() != ExtractorKind::Entity || relation.kind() != ExtractorKind::Relation {
            return Err(Error::Config("extractor kinds swapped".into()));
        }
        let train = train.without_gold();
        let ids: std::collections::HashSet<u64> = train.instances().iter().map(|i| i.id).collect();
        if let Some(v) = validation.instances().iter().find(|v| !ids.contains(&v.id)) {
            return Err(Error::Config(format!(
                "validation instance {} is not in the training corpus",
                v.id
            )));
        }
        Ok(Self {
            encoded: encode_all(train.instances(), features)?,
            train_ids: train.instances().iter().map(|i| i.id).collect(),
            entity,
            relation,
            kg,
            validation: validation.without_gold(),
            agents,
            history,
        })
    }
}

/// Stream tags for the seeded RNGs of pre-training.
const S_EXTRACTOR_ORDER: u64 = 0x51;
const S_VALIDATION: u64 = 0x52;
const S_TRANSE: u64 = 0x53;
const S_AGENTS: u64 = 0x54;
const S_POLICY: u64 = 0x55;
const S_INIT_E: u64 = 0x56;
const S_INIT_R: u64 = 0x57;

pub(crate) fn seed_for(seed: u64, tag: u64) -> u64 {
    rng::derive_seed(seed, tag)
}

/// Trains both extractors on DS labels with confidence 1.
pub fn pretrain_extractors<T: Real>(
    train: &Corpus,
    cfg: &TrainConfig,
) -> Result<(ExtractorModel<T>, ExtractorModel<T>, Vec<f64>)> {
    let train = train.without_gold();
    let encoded = encode_all(train.instances(), &cfg.extractor.features)?;
    pretrain_extractors_encoded(&train, &encoded, cfg)
}

pub(crate) fn pretrain_extractors_encoded<T: Real>(
    train: &Corpus,
    encoded: &[Encoded<T>],
    cfg: &TrainConfig,
) -> Result<(ExtractorModel<T>, ExtractorModel<T>, Vec<f64>)> {
    let ont = train.ontology();
    let mut entity = ExtractorModel::new(ExtractorKind::Entity, ont, &cfg.extractor, seed_for(cfg.seed, S_INIT_E))?;
    let mut relation = ExtractorModel::new(
        ExtractorKind::Relation,
        ont,
        &cfg.extractor,
        seed_for(cfg.seed, S_INIT_R),
    )?;
    let n = train.len();
    let batches = n.div_ceil(cfg.batch_size);
    let loss_cfg = LossConfig {
        period: cfg.pretrain.extractor_epochs * batches,
        lr_max: cfg.pretrain.extractor_lr_max,
        ..cfg.loss.clone()
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(cfg.seed, S_EXTRACTOR_ORDER);
    let mut history = Vec::with_capacity(cfg.pretrain.extractor_epochs);
    let mut step = 0;
    let one = T::one();
    for epoch in 0..cfg.pretrain.extractor_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut rel = Vec::with_capacity(chunk.len());
            let mut ent = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                let (inst, e) = (&train.instances()[i], &encoded[i]);
                rel.push(TrainExample {
                    input: &e.relation,
                    label: inst.ds_relation,
                    confidence: one,
                });
                ent.push(TrainExample {
                    input: &e.head,
                    label: inst.head.ds_type,
                    confidence: one,
                });
                ent.push(TrainExample {
                    input: &e.tail,
                    label: inst.tail.ds_type,
                    confidence: one,
                });
            }
            let lr_loss = relation.train_step(&rel, &loss_cfg, step)?;
            let le_loss = entity.train_step(&ent, &loss_cfg, step)?;
            total += (lr_loss + le_loss).to_f64_lossy();
            step += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::debug!("extractor pre-training epoch {epoch}: mean loss {mean:.4}");
        history.push(mean);
    }
    Ok((entity, relation, history))
}

/// One supervised confidence example.
struct PolicyExample<T> {
    view: View,
    agent: usize,
    state: Vec<T>,
    target: T,
}

fn corrupt(rng: &mut rng::StableRng, n: usize, keep: TypeId) -> TypeId {
    let mut t = rng.random_range(0..n - 1);
    if t >= keep {
        t += 1;
    }
    t
}

/// Supervised policy pre-training on a validation corpus (see
/// [`pretrain_policies_encoded`]).
pub fn pretrain_policies<T: Real>(
    agents: &mut AgentGroup<T>,
    entity: &ExtractorModel<T>,
    relation: &ExtractorModel<T>,
    validation: &Corpus,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let encoded = encode_all(validation.instances(), entity.feature_config())?;
    pretrain_policies_encoded(
        agents,
        entity,
        relation,
        validation.instances(),
        &encoded,
        cfg.pretrain.policy_epochs,
        cfg.pretrain.policy_lr,
        cfg.pretrain.negatives_per_positive,
        seed_for(cfg.seed, S_POLICY),
    )
}

/// Binary cross-entropy pre-training of every agent. Validation instances are
/// positives; negatives replace the DS type with a random wrong type. Each
/// example goes to the agent owning its (possibly corrupted) DS type. Returns
/// the mean loss per epoch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pretrain_policies_encoded<T: Real>(
    agents: &mut AgentGroup<T>,
    entity: &ExtractorModel<T>,
    relation: &ExtractorModel<T>,
    validation: &[Instance],
    encoded: &[Encoded<T>],
    epochs: usize,
    lr: f64,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if validation.is_empty() {
        return Err(Error::Empty(
            "policy pre-training needs a non-empty validation set".into(),
        ));
    }
    if validation.len() != encoded.len() {
        return Err(Error::LengthMismatch {
            left: validation.len(),
            right: encoded.len(),
        });
    }
    let mut rng = rng::stream(seed, S_POLICY);
    let mut examples = Vec::new();
    let (ne, nr) = (entity.num_classes(), relation.num_classes());
    for (inst, e) in validation.iter().zip(encoded) {
        let rel_pred = relation.classify(&e.relation)?.label;
        let mut push = |view: View, ds: TypeId, pred: TypeId, target: f64| -> Result<()> {
            let model = if view == View::Entity { entity } else { relation };
            let state = build_state(&e.sentence, model.type_vector(pred), model.type_vector(ds), view)?.values;
            examples.push(PolicyExample {
                view,
                agent: agents.agent_for(view, ds)?,
                state,
                target: T::of(target),
            });
            Ok(())
        };
        push(View::Relation, inst.ds_relation, rel_pred, 1.0)?;
        for _ in 0..negatives_per_positive {
            push(View::Relation, corrupt(&mut rng, nr, inst.ds_relation), rel_pred, 0.0)?;
        }
        for (m, x) in [(&inst.head, &e.head), (&inst.tail, &e.tail)] {
            let pred = entity.classify(x)?.label;
            push(View::Entity, m.ds_type, pred, 1.0)?;
            for _ in 0..negatives_per_positive {
                push(View::Entity, corrupt(&mut rng, ne, m.ds_type), pred, 0.0)?;
            }
        }
    }

    let mut history = Vec::with_capacity(epochs);
    let lr = T::of(lr);
    let eps = 1e-12;
    for epoch in 0..epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in examples.chunks(64) {
            // Gradients per agent, applied after the minibatch.
            let mut grads: Vec<Vec<Option<Vec<T>>>> = [View::Entity, View::Relation]
                .iter()
                .map(|&v| vec![None; agents.agents(v).len()])
                .collect();
            let n = T::of_usize(chunk.len());
            for ex in chunk {
                let vi = (ex.view == View::Relation) as usize;
                let policy = &agents.agents(ex.view)[ex.agent];
                let f = policy.forward(&ex.state)?;
                let c = sigmoid(f.logit).to_f64_lossy();
                let y = ex.target.to_f64_lossy();
                total += -(y * (c + eps).ln() + (1.0 - y) * (1.0 - c + eps).ln());
                let g = grads[vi][ex.agent].get_or_insert_with(|| vec![T::zero(); policy.params().len()]);
                policy.backward(&f, (f.mean - ex.target) / n, T::zero(), g);
            }
            for (vi, view) in [View::Entity, View::Relation].into_iter().enumerate() {
                for (a, g) in grads[vi].iter().enumerate() {
                    if let Some(g) = g {
                        let p = &mut agents.agents_mut(view)[a];
                        for (w, d) in p.params_mut().iter_mut().zip(g) {
                            *w -= lr * *d;
                        }
                        if !p.is_finite() {
                            return Err(Error::NonFinite("policy pre-training".into()));
                        }
                    }
                }
            }
        }
        let mean = total / examples.len() as f64;
        log::debug!("policy pre-training epoch {epoch}: mean BCE {mean:.4}");
        history.push(mean);
    }
    Ok(history)
}

/// DS triples of the training corpus with a non-None relation.
pub fn ds_triples(train: &Corpus) -> Vec<KgTriple> {
    let none = train.ontology().none_relation_id;
    train
        .instances()
        .iter()
        .filter(|i| i.ds_relation != none)
        .map(|i| KgTriple {
            head: i.head.ds_type,
            relation: i.ds_relation,
            tail: i.tail.ds_type,
        })
        .collect()
}

/// Extractors, validation set, TransE and agents, in that order.
pub fn pretrain<T: Real>(train: &Corpus, cfg: &TrainConfig) -> Result<Pretrained<T>> {
    cfg.validate()?;
    let train = train.without_gold();
    if train.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    let ont = train.ontology();
    let encoded = encode_all(train.instances(), &cfg.extractor.features)?;
    let (entity, relation, extractor_loss) = pretrain_extractors_encoded(&train, &encoded, cfg)?;

    let index: std::collections::HashMap<u64, usize> =
        train.instances().iter().enumerate().map(|(i, x)| (x.id, i)).collect();
    let validation = build_validation_set(
        &train,
        |inst| Ok(relation.classify(&encoded[index[&inst.id]].relation)?.label),
        cfg.validation_fraction,
        seed_for(cfg.seed, S_VALIDATION),
    )?;
    log::info!("validation set: {} of {} instances", validation.len(), train.len());

    let (kg, transe_loss) = transe_pretrain_with_history(
        &ds_triples(&train),
        ont.num_entity_types(),
        ont.num_relation_types(),
        &cfg.transe,
        seed_for(cfg.seed, S_TRANSE),
    )?;

    let mut agents = AgentGroup::new(
        ont,
        cfg.extractor.features.d_s,
        &cfg.agents,
        seed_for(cfg.seed, S_AGENTS),
    )?;
    agents.config_hash = cfg.hash();
    let val_encoded: Vec<Encoded<T>> = validation
        .instances()
        .iter()
        .map(|i| encoded[index[&i.id]].clone())
        .collect();
    let policy_loss = pretrain_policies_encoded(
        &mut agents,
        &entity,
        &relation,
        validation.instances(),
        &val_encoded,
        cfg.pretrain.policy_epochs,
        cfg.pretrain.policy_lr,
        cfg.pretrain.negatives_per_positive,
        seed_for(cfg.seed, S_POLICY),
    )?;

    Ok(Pretrained {
        entity,
        relation,
        kg,
        validation,
        agents,
        history: PretrainHistory {
            extractor_loss,
            policy_loss,
            transe_loss: transe_loss.iter().map(|v| v.to_f64_lossy()).collect(),
        },
        train_ids: train.instances().iter().map(|i| i.id).collect(),
        encoded,
    })
}
