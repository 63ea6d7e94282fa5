//! End-to-end trainer checks on a small noised corpus.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use relabel_rl::agents::View;
use relabel_rl::corpus::{generate_corpus, inject_noise, Corpus, GeneratorConfig, NoiseSpec};
use relabel_rl::metrics::EvalReport;
use relabel_rl::rl::RewardComponents;
use relabel_rl::trainer::{
    emit_report, load_pretrained, pretrain, run_no_agent_baseline, run_training, save_pretrained, Mode, NoObserver,
    Phase, PhaseObserver, Pretrained, TrainConfig,
};

struct Data {
    train: Corpus,
    test: Corpus,
    cfg: TrainConfig,
    pre: Pretrained<f64>,
}

fn small_cfg() -> TrainConfig {
    let mut cfg = TrainConfig {
        seed: 3,
        epochs: 2,
        ..TrainConfig::default()
    };
    cfg.pretrain.extractor_epochs = 4;
    cfg.pretrain.policy_epochs = 4;
    cfg.transe.epochs = 10;
    cfg
}

fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let gen = GeneratorConfig {
            num_instances: 650,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&gen, 3).unwrap();
        let (train, test) = corpus.split_test_count(150).unwrap();
        let train = inject_noise(
            &train,
            &NoiseSpec {
                fp_rate: 0.1,
                fn_rate: 0.3,
                entity_noise_rate: 0.05,
                seed: 3,
            },
        )
        .unwrap();
        let cfg = small_cfg();
        let pre = pretrain::<f64>(&train, &cfg).unwrap();
        Data { train, test, cfg, pre }
    })
}

fn with_mode(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        ..data().cfg.clone()
    }
}

#[derive(Default)]
struct Recorder {
    phases: Vec<(usize, usize, Phase)>,
    rewards: Vec<(View, RewardComponents, EvalReport)>,
}

impl PhaseObserver for Recorder {
    fn on_phase(&mut self, epoch: usize, batch: usize, phase: Phase) {
        self.phases.push((epoch, batch, phase));
    }

    fn on_reward(&mut self, view: View, reward: &RewardComponents, validation: &EvalReport) {
        self.rewards.push((view, *reward, *validation));
    }
}

#[test]
fn batch_phases_run_in_order() {
    use Phase::*;
    let d = data();
    for mode in [Mode::Curriculum, Mode::Joint, Mode::Separate] {
        let mut rec = Recorder::default();
        run_training(&d.pre, &d.train, &d.test, &with_mode(mode), &mut rec).unwrap();
        let mut by_batch: BTreeMap<(usize, usize), Vec<Phase>> = BTreeMap::new();
        for (e, b, p) in &rec.phases {
            by_batch.entry((*e, *b)).or_default().push(*p);
        }
        let n_batches = d.train.len().div_ceil(d.cfg.batch_size);
        assert_eq!(by_batch.len(), d.cfg.epochs * n_batches, "{mode:?}");
        for (k, seq) in &by_batch {
            assert_eq!(
                seq,
                &[
                    Predict,
                    State,
                    Act,
                    Consensus,
                    Relabel,
                    Train,
                    Validate,
                    Reward,
                    AgentUpdate
                ],
                "{mode:?} batch {k:?}"
            );
        }
        // Three evaluations per sentence per epoch.
        assert_eq!(rec.rewards.len(), 3 * d.train.len() * d.cfg.epochs, "{mode:?}");
    }
}

#[test]
fn each_view_is_rewarded_with_its_own_task_f1() {
    let d = data();
    for mode in [Mode::Separate, Mode::Curriculum] {
        let mut rec = Recorder::default();
        let cfg = with_mode(mode);
        run_training(&d.pre, &d.train, &d.test, &cfg, &mut rec).unwrap();
        let mut seen = [false; 2];
        for (view, r, val) in &rec.rewards {
            let own = match view {
                View::Entity => val.micro_f1,
                View::Relation => val.f1,
            };
            assert_eq!(r.f1_local, own, "{mode:?} {view:?}");
            assert_eq!(r.reward, cfg.reward.alpha * own - r.g_score);
            seen[(*view == View::Relation) as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }
}

#[test]
fn baseline_keeps_distant_labels() {
    let d = data();
    let out = run_no_agent_baseline(&d.pre, &d.train, &d.test, &d.cfg).unwrap();
    assert_eq!(out.report.mode, "baseline");
    assert_eq!(out.report.relabel.unchanged, d.train.len());
    assert!(out.audit.is_empty());
    for (a, b) in out.relabeled.iter().zip(d.train.instances()) {
        assert_eq!(
            (a.current_relation, a.head.current_type, a.tail.current_type),
            (b.ds_relation, b.head.ds_type, b.tail.ds_type)
        );
    }
}

#[test]
fn scrambled_gold_leaves_training_bit_identical() {
    let d = data();
    let ont = d.train.ontology();
    let (ne, nr) = (ont.num_entity_types(), ont.num_relation_types());
    let scrambled: Vec<_> = d
        .train
        .instances()
        .iter()
        .enumerate()
        .map(|(k, i)| {
            let mut i = i.clone();
            i.set_gold(Some((k * 7 + 3) % nr), Some((k * 5 + 1) % ne), None);
            i
        })
        .collect();
    let scrambled = d.train.with_instances(scrambled).unwrap();
    let cfg = with_mode(Mode::Curriculum);
    let pre2 = pretrain::<f64>(&scrambled, &cfg).unwrap();
    assert_eq!(pre2.entity, d.pre.entity);
    assert_eq!(pre2.relation, d.pre.relation);
    assert_eq!(pre2.agents, d.pre.agents);
    assert_eq!(pre2.kg, d.pre.kg);
    let a = run_training(&d.pre, &d.train, &d.test, &cfg, &mut NoObserver).unwrap();
    let b = run_training(&pre2, &scrambled, &d.test, &cfg, &mut NoObserver).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
    assert_eq!(a.final_relation, b.final_relation);
    assert_eq!(a.agents, b.agents);
    assert_eq!(a.relabeled, b.relabeled);
}

#[test]
fn identical_runs_write_identical_artifacts() {
    let d = data();
    let cfg = with_mode(Mode::Joint);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let out = run_training(&d.pre, &d.train, &d.test, &cfg, &mut NoObserver).unwrap();
        emit_report(dir.path(), &cfg, &out).unwrap();
    }
    for f in [
        "report.json",
        "config.json",
        "relabel_audit.jsonl",
        "rl_telemetry.jsonl",
        "checkpoints/entity.bin",
        "checkpoints/relation.bin",
        "checkpoints/agents.bin",
    ] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn zero_epochs_return_the_pretrained_models() {
    let d = data();
    let cfg = TrainConfig {
        epochs: 0,
        ..d.cfg.clone()
    };
    let out = run_training(&d.pre, &d.train, &d.test, &cfg, &mut NoObserver).unwrap();
    assert_eq!(out.best_entity, d.pre.entity);
    assert_eq!(out.best_relation, d.pre.relation);
    assert_eq!(out.agents.entity_agents, d.pre.agents.entity_agents);
    assert_eq!(out.agents.relation_agents, d.pre.agents.relation_agents);
    assert!(out.report.per_epoch.is_empty());
    assert_eq!(out.report.best.relation_f1, out.report.pretrained_test.f1);
    assert_eq!(out.report.relabel.unchanged, d.train.len());
}

#[test]
fn best_model_is_the_maximum_over_epochs() {
    let d = data();
    let out = run_training(&d.pre, &d.train, &d.test, &with_mode(Mode::Curriculum), &mut NoObserver).unwrap();
    let r = &out.report;
    let max_rel = r
        .per_epoch
        .iter()
        .map(|e| e.test.f1)
        .fold(r.pretrained_test.f1, f64::max);
    let max_ent = r
        .per_epoch
        .iter()
        .map(|e| e.test.micro_f1)
        .fold(r.pretrained_test.micro_f1, f64::max);
    assert_eq!(r.best.relation_f1, max_rel);
    assert_eq!(r.best.entity_micro_f1, max_ent);
    assert_eq!(
        r.best.test.f1, max_rel,
        "the stored best relation model reproduces its score"
    );
    assert_eq!(out.state.best_history.len(), r.per_epoch.len() + 1);
}

#[test]
fn saved_pretraining_reproduces_the_run() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    save_pretrained(dir.path(), &d.cfg, &d.pre).unwrap();
    let loaded = load_pretrained::<f64>(dir.path(), &d.train, &d.cfg).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..d.cfg.clone()
    };
    let a = run_training(&d.pre, &d.train, &d.test, &cfg, &mut NoObserver).unwrap();
    let b = run_training(&loaded, &d.train, &d.test, &cfg, &mut NoObserver).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );

    let err = load_pretrained::<f64>(dir.path().join("missing"), &d.train, &d.cfg).unwrap_err();
    assert!(err.to_string().contains("run `pretrain`"), "{err}");
    let other = d.train.with_instances(d.train.instances()[1..].to_vec()).unwrap();
    assert!(load_pretrained::<f64>(dir.path(), &other, &d.cfg).is_err());
}

#[test]
fn single_precision_pipeline_runs() {
    let d = data();
    let mut cfg = TrainConfig {
        epochs: 1,
        ..d.cfg.clone()
    };
    cfg.pretrain.extractor_epochs = 2;
    let pre = pretrain::<f32>(&d.train, &cfg).unwrap();
    let out = run_training(&pre, &d.train, &d.test, &cfg, &mut NoObserver).unwrap();
    assert_eq!(out.report.per_epoch.len(), 1);
    assert!(out.report.best.relation_f1.is_finite());
}
