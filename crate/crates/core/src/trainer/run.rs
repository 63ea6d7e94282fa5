use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::encode::{encode_all, Encoded};
use super::pretrain::Pretrained;
use crate::agents::{build_state, AgentGroup, View};
use crate::consensus::{consensus, relabel, relabel_stats, AuditRecord, PredictedLabels, RelabelStats};
use crate::corpus::{Corpus, Instance, TypeId};
use crate::error::{Error, Result};
use crate::extractors::{cosine_lr, ExtractorModel, LossConfig, TrainExample};
use crate::metrics::{entity_scores, relation_prf, EvalReport, LabelView};
use crate::rl::{compute_rewards, curriculum_step, ppo_update, CurriculumQueue, RewardComponents, TrajectoryRecord};
use crate::rng;
use crate::scalar::Real;

/// Steps of one training batch, in the order they run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Predict,
    State,
    Act,
    Consensus,
    Relabel,
    Train,
    Validate,
    Reward,
    AgentUpdate,
}

/// Hooks into the training loop.
pub trait PhaseObserver {
    /// Called as each phase of a batch starts.
    fn on_phase(&mut self, _epoch: usize, _batch: usize, _phase: Phase) {}

    /// Called for every agent evaluation once its reward is known, with the
    /// validation scores the reward was computed from.
    fn on_reward(&mut self, _view: View, _reward: &RewardComponents, _validation: &EvalReport) {}
}

pub struct NoObserver;

impl PhaseObserver for NoObserver {}

/// Records every phase; handy for ordering checks.
#[derive(Default)]
pub struct PhaseLog(pub Vec<(usize, usize, Phase)>);

impl PhaseObserver for PhaseLog {
    fn on_phase(&mut self, epoch: usize, batch: usize, phase: Phase) {
        self.0.push((epoch, batch, phase));
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub epoch: usize,
    pub best_entity_f1: f64,
    pub best_relation_f1: f64,
    pub best_entity_epoch: usize,
    pub best_relation_epoch: usize,
    /// Best (entity micro F1, relation F1) after each epoch, starting with the
    /// pre-trained models.
    pub best_history: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub test: EvalReport,
    /// Validation scores after the last batch of the epoch.
    pub validation: EvalReport,
    pub relabel: RelabelStats,
    pub mean_reward_entity: f64,
    pub mean_reward_relation: f64,
    pub mean_extractor_loss: f64,
    /// Largest consensus confidence among divergent votes, if any.
    pub max_divergent_confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestReport {
    pub entity_micro_f1: f64,
    pub relation_f1: f64,
    pub entity_epoch: usize,
    pub relation_epoch: usize,
    /// Best entity and best relation extractor evaluated together.
    pub test: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardCurves {
    pub entity: Vec<f64>,
    pub relation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub epochs: usize,
    pub train_instances: usize,
    pub validation_instances: usize,
    pub test_instances: usize,
    pub pretrained_test: EvalReport,
    pub per_epoch: Vec<EpochReport>,
    pub reward_curves: RewardCurves,
    pub best: BestReport,
    /// DS labels versus the final re-labeled training set.
    pub relabel: RelabelStats,
}

/// Per-epoch, per-agent RL telemetry line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub epoch: usize,
    pub view: View,
    pub agent: usize,
    pub evaluations: usize,
    pub trained: usize,
    pub mean_reward: f64,
    pub kl: f64,
    pub kl_coef: f64,
    pub queue_len: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub best_entity: ExtractorModel<T>,
    pub best_relation: ExtractorModel<T>,
    pub final_entity: ExtractorModel<T>,
    pub final_relation: ExtractorModel<T>,
    pub agents: AgentGroup<T>,
    pub state: RunState,
    pub report: RunReport,
    pub audit: Vec<AuditRecord>,
    pub telemetry: Vec<TelemetryRecord>,
    /// Final training instances with their re-labeled current labels; gold
    /// fields are empty.
    pub relabeled: Vec<Instance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Labeler {
    Agents(Mode),
    /// DS labels with confidence 1.
    Baseline,
}

// Stream tags for the training loop.
const S_ORDER: u64 = 0x71;
const S_ACT: u64 = 0x72;
const S_PPO: u64 = 0x73;

/// Extractor-task scores over cached inputs.
pub(crate) fn evaluate_encoded<T: Real>(
    entity: &ExtractorModel<T>,
    relation: &ExtractorModel<T>,
    instances: &[Instance],
    encoded: &[Encoded<T>],
    view: LabelView,
    none_relation: TypeId,
    none_entity: TypeId,
) -> Result<EvalReport> {
    let mut rp = Vec::with_capacity(instances.len());
    let mut rg = Vec::with_capacity(instances.len());
    let mut ep = Vec::with_capacity(2 * instances.len());
    let mut eg = Vec::with_capacity(2 * instances.len());
    for (i, e) in instances.iter().zip(encoded) {
        let (r, h, t) = match view {
            LabelView::Ds => (i.ds_relation, i.head.ds_type, i.tail.ds_type),
            LabelView::Current => (i.current_relation, i.head.current_type, i.tail.current_type),
            LabelView::Gold => match (i.gold_relation(), i.head.gold_type(), i.tail.gold_type()) {
                (Some(r), Some(h), Some(t)) => (r, h, t),
                _ => return Err(Error::Empty(format!("instance {} has no gold labels", i.id))),
            },
        };
        rp.push(relation.classify(&e.relation)?.label);
        rg.push(r);
        ep.push(entity.classify(&e.head)?.label);
        ep.push(entity.classify(&e.tail)?.label);
        eg.extend([h, t]);
    }
    Ok(EvalReport::new(
        entity_scores(&ep, &eg, none_entity)?,
        relation_prf(&rp, &rg, none_relation)?,
    ))
}

/// One agent evaluation within a batch.
struct Evaluation<T> {
    view: View,
    agent: usize,
    /// Position within the batch.
    slot: usize,
    record: TrajectoryRecord<T>,
}

/// Iterative re-training of extractors and agents in the configured mode.
pub fn run_training<T: Real>(
    pre: &Pretrained<T>,
    train: &Corpus,
    test: &Corpus,
    cfg: &TrainConfig,
    observer: &mut dyn PhaseObserver,
) -> Result<RunOutput<T>> {
    run_loop(pre, train, test, cfg, Labeler::Agents(cfg.mode), observer)
}

/// The same loop with DS labels at confidence 1 and no agents.
pub fn run_no_agent_baseline<T: Real>(
    pre: &Pretrained<T>,
    train: &Corpus,
    test: &Corpus,
    cfg: &TrainConfig,
) -> Result<RunOutput<T>> {
    run_loop(pre, train, test, cfg, Labeler::Baseline, &mut NoObserver)
}

fn run_loop<T: Real>(
    pre: &Pretrained<T>,
    train: &Corpus,
    test: &Corpus,
    cfg: &TrainConfig,
    labeler: Labeler,
    obs: &mut dyn PhaseObserver,
) -> Result<RunOutput<T>> {
    cfg.validate()?;
    // Gold labels never enter the training path.
    let train = train.without_gold();
    let ids: Vec<u64> = train.instances().iter().map(|i| i.id).collect();
    if ids != pre.train_ids {
        return Err(Error::Config(
            "pre-trained state belongs to a different training corpus".into(),
        ));
    }
    let ont = train.ontology().clone();
    let (none_r, none_e) = (ont.none_relation_id, ont.none_entity_id);
    let mut instances = train.into_instances();
    for i in &mut instances {
        i.reset_current();
    }
    let original = instances.clone();
    let encoded = &pre.encoded;
    let test_encoded = encode_all(test.instances(), &cfg.extractor.features)?;
    let val_instances = pre.validation.instances();
    let id_index: std::collections::HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let val_encoded: Vec<Encoded<T>> = val_instances.iter().map(|i| encoded[id_index[&i.id]].clone()).collect();
    let config_hash = cfg.hash();

    let mut entity = pre.entity.clone();
    let mut relation = pre.relation.clone();
    let mut agents = pre.agents.clone();
    agents.config_hash = config_hash.clone();
    let mut kl_coef: [Vec<f64>; 2] = [
        vec![cfg.ppo.kl_init_coef; agents.entity_agents.len()],
        vec![cfg.ppo.kl_init_coef; agents.relation_agents.len()],
    ];
    let vidx = |v: View| (v == View::Relation) as usize;

    let eval_test = |e: &ExtractorModel<T>, r: &ExtractorModel<T>| {
        evaluate_encoded(e, r, test.instances(), &test_encoded, LabelView::Gold, none_r, none_e)
    };
    let pretrained_test = eval_test(&entity, &relation)?;
    let mut best_entity = entity.clone();
    let mut best_relation = relation.clone();
    let mut state = RunState {
        epoch: 0,
        best_entity_f1: pretrained_test.micro_f1,
        best_relation_f1: pretrained_test.f1,
        best_entity_epoch: 0,
        best_relation_epoch: 0,
        best_history: vec![(pretrained_test.micro_f1, pretrained_test.f1)],
    };

    let n = instances.len();
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = rng::stream(cfg.seed, S_ORDER);
    let mut act_rng = rng::stream(cfg.seed, S_ACT);
    let mut ppo_rng = rng::stream(cfg.seed, S_PPO);
    let agent_period = cfg.epochs * n_batches;
    let mut agent_step = 0usize;
    let mut global_step = 0usize;

    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut audit = Vec::new();
    let mut telemetry = Vec::new();
    let mut last_stats = RelabelStats {
        unchanged: n,
        ..RelabelStats::default()
    };
    let mut divergent = vec![false; n];

    for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        if cfg.reset_extractors_each_epoch {
            entity = pre.entity.clone();
            relation = pre.relation.clone();
        }
        let loss_cfg = LossConfig {
            period: if cfg.reset_extractors_each_epoch {
                n_batches
            } else {
                agent_period
            },
            ..cfg.loss.clone()
        };
        let mut queues: [Vec<CurriculumQueue<Evaluation<T>>>; 2] = [View::Entity, View::Relation].map(|v| {
            (0..agents.agents(v).len())
                .map(|_| CurriculumQueue::new(cfg.queue.capacity, cfg.queue.threshold))
                .collect()
        });
        // (evaluations, trained, reward sum, kl sum, updates) per agent
        let mut agent_acc: [Vec<(usize, usize, f64, f64, usize)>; 2] =
            [View::Entity, View::Relation].map(|v| vec![(0, 0, 0.0, 0.0, 0); agents.agents(v).len()]);
        let mut reward_sum = [0.0, 0.0];
        let mut reward_count = [0usize, 0];
        let mut loss_sum = 0.0;
        let mut validation = EvalReport::default();
        let mut confidences = vec![1.0; n];
        divergent.iter_mut().for_each(|d| *d = false);

        order.shuffle(&mut order_rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            obs.on_phase(epoch, b, Phase::Predict);
            let mut preds = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let e = &encoded[i];
                preds.push((
                    relation.classify(&e.relation)?.label,
                    entity.classify(&e.head)?.label,
                    entity.classify(&e.tail)?.label,
                ));
            }

            // Loss weights per instance: (relation, head, tail).
            let mut weights = vec![(1.0, 1.0, 1.0); chunk.len()];
            let mut evals: Vec<Evaluation<T>> = Vec::new();
            if let Labeler::Agents(mode) = labeler {
                obs.on_phase(epoch, b, Phase::State);
                let mut states = Vec::with_capacity(chunk.len());
                for (&i, &(pr, ph, pt)) in chunk.iter().zip(&preds) {
                    let inst = &instances[i];
                    let s = &encoded[i].sentence;
                    let rs = build_state(
                        s,
                        relation.type_vector(pr),
                        relation.type_vector(inst.ds_relation),
                        View::Relation,
                    )?;
                    let hs = build_state(
                        s,
                        entity.type_vector(ph),
                        entity.type_vector(inst.head.ds_type),
                        View::Entity,
                    )?;
                    let ts = build_state(
                        s,
                        entity.type_vector(pt),
                        entity.type_vector(inst.tail.ds_type),
                        View::Entity,
                    )?;
                    states.push([rs, hs, ts]);
                }

                obs.on_phase(epoch, b, Phase::Act);
                let mut votes = Vec::with_capacity(chunk.len());
                for (slot, (&i, st)) in chunk.iter().zip(states).enumerate() {
                    let sel = agents.select_agents(&instances[i])?;
                    let mut cs = [0.0; 3];
                    for (k, (s, agent)) in st.into_iter().zip([sel.relation, sel.head, sel.tail]).enumerate() {
                        let policy = &agents.agents(s.view)[agent];
                        let a = policy.sample_action(&s.values, &mut act_rng, false)?;
                        cs[k] = a.confidence;
                        evals.push(Evaluation {
                            view: s.view,
                            agent,
                            slot,
                            record: TrajectoryRecord {
                                state: s.values,
                                action: a.confidence,
                                log_prob_old: a.log_prob,
                                alpha_old: a.alpha,
                                beta_old: a.beta,
                                value_estimate: a.value_estimate,
                                reward: 0.0,
                                advantage: 0.0,
                                return_target: 0.0,
                            },
                        });
                    }
                    votes.push(cs);
                }

                obs.on_phase(epoch, b, Phase::Consensus);
                let outcomes = match mode {
                    Mode::Separate => None,
                    _ => Some(
                        votes
                            .iter()
                            .map(|c| consensus(c[0], c[1], c[2]))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                };

                obs.on_phase(epoch, b, Phase::Relabel);
                for (slot, &i) in chunk.iter().enumerate() {
                    let (pr, ph, pt) = preds[slot];
                    let predicted = PredictedLabels {
                        relation: pr,
                        head: ph,
                        tail: pt,
                    };
                    match &outcomes {
                        Some(outs) => {
                            let o = &outs[slot];
                            instances[i] = relabel(&instances[i], o, predicted, none_r);
                            weights[slot] = (o.confidence, o.confidence, o.confidence);
                            divergent[i] = o.divergent;
                        }
                        None => {
                            let [cr, ch, ct] = votes[slot];
                            let inst = &mut instances[i];
                            let pick = |c: f64, pred: TypeId, fallback: TypeId| {
                                if c > 0.5 {
                                    (pred, c)
                                } else {
                                    (fallback, 1.0 - c)
                                }
                            };
                            // Same rule as `relabel`: accepting a None extraction keeps the label.
                            let accepted = if pr == none_r { inst.current_relation } else { pr };
                            let (r, wr) = pick(cr, accepted, none_r);
                            let (h, wh) = pick(ch, ph, inst.head.ds_type);
                            let (t, wt) = pick(ct, pt, inst.tail.ds_type);
                            inst.current_relation = r;
                            inst.head.current_type = h;
                            inst.tail.current_type = t;
                            inst.confidence = wr;
                            weights[slot] = (wr, wh, wt);
                        }
                    }
                    confidences[i] = instances[i].confidence;
                }
            }

            obs.on_phase(epoch, b, Phase::Train);
            let step = if cfg.reset_extractors_each_epoch {
                b
            } else {
                global_step
            };
            let mut rel_ex = Vec::with_capacity(chunk.len());
            let mut ent_ex = Vec::with_capacity(2 * chunk.len());
            for (slot, &i) in chunk.iter().enumerate() {
                let (inst, e) = (&instances[i], &encoded[i]);
                let (wr, wh, wt) = weights[slot];
                rel_ex.push(TrainExample {
                    input: &e.relation,
                    label: inst.current_relation,
                    confidence: T::of(wr),
                });
                ent_ex.push(TrainExample {
                    input: &e.head,
                    label: inst.head.current_type,
                    confidence: T::of(wh),
                });
                ent_ex.push(TrainExample {
                    input: &e.tail,
                    label: inst.tail.current_type,
                    confidence: T::of(wt),
                });
            }
            let l1 = relation.train_step(&rel_ex, &loss_cfg, step)?;
            let l2 = entity.train_step(&ent_ex, &loss_cfg, step)?;
            loss_sum += (l1 + l2).to_f64_lossy();
            global_step += 1;

            let Labeler::Agents(mode) = labeler else {
                continue;
            };

            obs.on_phase(epoch, b, Phase::Validate);
            validation = evaluate_encoded(
                &entity,
                &relation,
                val_instances,
                &val_encoded,
                LabelView::Ds,
                none_r,
                none_e,
            )?;

            obs.on_phase(epoch, b, Phase::Reward);
            let batch_insts: Vec<Instance> = chunk.iter().map(|&i| instances[i].clone()).collect();
            let rewards = compute_rewards(
                &batch_insts,
                validation.micro_f1,
                validation.f1,
                &pre.kg,
                &cfg.reward,
                none_r,
            )?;
            for ev in &mut evals {
                let rc = match ev.view {
                    View::Entity => &rewards[ev.slot].entity,
                    View::Relation => &rewards[ev.slot].relation,
                };
                obs.on_reward(ev.view, rc, &validation);
                let r = rc.reward;
                ev.record.finish(r);
                reward_sum[vidx(ev.view)] += r;
                reward_count[vidx(ev.view)] += 1;
                let acc = &mut agent_acc[vidx(ev.view)][ev.agent];
                acc.0 += 1;
                acc.2 += r;
            }

            obs.on_phase(epoch, b, Phase::AgentUpdate);
            let mut pending: [Vec<Vec<TrajectoryRecord<T>>>; 2] =
                [View::Entity, View::Relation].map(|v| vec![Vec::new(); agents.agents(v).len()]);
            for ev in evals {
                let (v, a) = (vidx(ev.view), ev.agent);
                match mode {
                    Mode::Curriculum => {
                        let r_c = ev.record.reward;
                        let sink = &mut pending;
                        curriculum_step(&mut queues[v][a], ev, r_c, |e| {
                            sink[vidx(e.view)][e.agent].push(e.record)
                        });
                    }
                    Mode::Joint | Mode::Separate => pending[v][a].push(ev.record),
                }
            }
            let lr = cosine_lr(cfg.ppo.lr_min, cfg.ppo.lr_max, agent_step, agent_period);
            agent_step += 1;
            for view in [View::Entity, View::Relation] {
                let v = vidx(view);
                for (a, recs) in pending[v].iter().enumerate() {
                    if recs.is_empty() {
                        continue;
                    }
                    let policy = &mut agents.agents_mut(view)[a];
                    let stats = ppo_update(policy, recs, &cfg.ppo, kl_coef[v][a], lr, &mut ppo_rng)?;
                    kl_coef[v][a] = stats.kl_coef;
                    let acc = &mut agent_acc[v][a];
                    acc.1 += recs.len();
                    acc.3 += stats.kl;
                    acc.4 += 1;
                }
            }
        }

        // End of epoch: held-out evaluation and best-model tracking.
        let test_report = eval_test(&entity, &relation)?;
        if test_report.micro_f1 > state.best_entity_f1 {
            state.best_entity_f1 = test_report.micro_f1;
            state.best_entity_epoch = epoch;
            best_entity = entity.clone();
        }
        if test_report.f1 > state.best_relation_f1 {
            state.best_relation_f1 = test_report.f1;
            state.best_relation_epoch = epoch;
            best_relation = relation.clone();
        }
        state.best_history.push((state.best_entity_f1, state.best_relation_f1));

        let stats = relabel_stats(&original, &instances, Some(&divergent), none_r)?;
        last_stats = stats;
        let max_div = (0..n)
            .filter(|&i| divergent[i])
            .map(|i| confidences[i])
            .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));
        for (i, (o, c)) in original.iter().zip(&instances).enumerate() {
            let old = [o.current_relation, o.head.current_type, o.tail.current_type];
            let new = [c.current_relation, c.head.current_type, c.tail.current_type];
            if old != new {
                audit.push(AuditRecord {
                    epoch,
                    id: c.id,
                    old,
                    new,
                    confidence: c.confidence,
                    divergent: divergent[i],
                });
            }
        }
        let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        for view in [View::Entity, View::Relation] {
            let v = vidx(view);
            for (a, acc) in agent_acc[v].iter().enumerate() {
                telemetry.push(TelemetryRecord {
                    epoch,
                    view,
                    agent: a,
                    evaluations: acc.0,
                    trained: acc.1,
                    mean_reward: mean(acc.2, acc.0),
                    kl: mean(acc.3, acc.4),
                    kl_coef: kl_coef[v][a],
                    queue_len: queues[v][a].len(),
                });
            }
        }
        let report = EpochReport {
            epoch,
            test: test_report,
            validation,
            relabel: stats,
            mean_reward_entity: mean(reward_sum[0], reward_count[0]),
            mean_reward_relation: mean(reward_sum[1], reward_count[1]),
            mean_extractor_loss: loss_sum / n_batches.max(1) as f64,
            max_divergent_confidence: max_div,
        };
        log::info!(
            "epoch {epoch}: test micro-F1 {:.4} relation F1 {:.4}, N->P {} P->N {}",
            report.test.micro_f1,
            report.test.f1,
            stats.n_to_p,
            stats.p_to_n
        );
        per_epoch.push(report);
    }

    let best_test = eval_test(&best_entity, &best_relation)?;
    let report = RunReport {
        mode: match labeler {
            Labeler::Agents(m) => m.name().to_string(),
            Labeler::Baseline => "baseline".to_string(),
        },
        seed: cfg.seed,
        config_hash,
        epochs: cfg.epochs,
        train_instances: n,
        validation_instances: val_instances.len(),
        test_instances: test.len(),
        pretrained_test,
        reward_curves: RewardCurves {
            entity: per_epoch.iter().map(|e| e.mean_reward_entity).collect(),
            relation: per_epoch.iter().map(|e| e.mean_reward_relation).collect(),
        },
        per_epoch,
        best: BestReport {
            entity_micro_f1: state.best_entity_f1,
            relation_f1: state.best_relation_f1,
            entity_epoch: state.best_entity_epoch,
            relation_epoch: state.best_relation_epoch,
            test: best_test,
        },
        relabel: last_stats,
    };
    Ok(RunOutput {
        best_entity,
        best_relation,
        final_entity: entity,
        final_relation: relation,
        agents,
        state,
        report,
        audit,
        telemetry,
        relabeled: instances,
    })
}
