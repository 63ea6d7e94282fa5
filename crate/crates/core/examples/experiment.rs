//! Runs the full pipeline on a noised synthetic corpus and prints the
//! headline numbers for every mode and the no-agent baseline.
//!
//! `cargo run --release -p relabel-rl --example experiment -- [seed] [epochs]`
//!
//! `MODES=curriculum,joint` picks the modes; `SET="ppo.lr_max=0.005;queue.threshold=1.5"`
//! overrides config fields.

use std::time::Instant;

use relabel_rl::corpus::{generate_corpus, inject_noise, GeneratorConfig, NoiseSpec};
use relabel_rl::trainer::{pretrain, run_no_agent_baseline, run_training, Mode, NoObserver, TrainConfig};

fn main() -> relabel_rl::Result<()> {
    env_logger::init();
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let seed = args.first().copied().unwrap_or(1);
    let epochs = args.get(1).copied().unwrap_or(10) as usize;
    let gen = GeneratorConfig {
        num_instances: 5500,
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&gen, seed)?;
    let (train, test) = corpus.split_test(500.0 / 5500.0)?;
    let noisy = inject_noise(
        &train,
        &NoiseSpec {
            fp_rate: 0.1,
            fn_rate: 0.3,
            entity_noise_rate: 0.0,
            seed,
        },
    )?;
    let mut cfg_json = serde_json::to_value(TrainConfig {
        seed,
        epochs,
        ..TrainConfig::default()
    })?;
    // SET="a.b=1;c=2" overrides config fields.
    for kv in std::env::var("SET")
        .unwrap_or_default()
        .split(';')
        .filter(|s| !s.is_empty())
    {
        let (k, v) = kv.split_once('=').expect("key=value");
        let mut node = &mut cfg_json;
        for part in k.split('.') {
            node = node.get_mut(part).expect("known key");
        }
        *node = serde_json::from_str(v).expect("json value");
    }
    let cfg: TrainConfig = serde_json::from_value(cfg_json)?;
    let modes: Vec<Mode> = match std::env::var("MODES") {
        Ok(m) => m
            .split(',')
            .map(|x| serde_json::from_str(&format!("\"{x}\"")).unwrap())
            .collect(),
        Err(_) => vec![Mode::Curriculum, Mode::Joint, Mode::Separate],
    };
    let t = Instant::now();
    let pre = pretrain::<f64>(&noisy, &cfg)?;
    println!(
        "pretrain {:.1}s  val {}  ext loss {:?}",
        t.elapsed().as_secs_f64(),
        pre.validation.len(),
        pre.history.extractor_loss.last()
    );
    let noisy_acc = {
        let ok = noisy
            .instances()
            .iter()
            .filter(|i| i.gold_relation() == Some(i.ds_relation))
            .count();
        ok as f64 / noisy.len() as f64
    };
    let t = Instant::now();
    let base = run_no_agent_baseline(&pre, &noisy, &test, &cfg)?;
    println!(
        "baseline  {:.1}s pretrained F1 {:.4}  best F1 {:.4}  micro {:.4}",
        t.elapsed().as_secs_f64(),
        base.report.pretrained_test.f1,
        base.report.best.relation_f1,
        base.report.best.entity_micro_f1
    );
    for mode in modes {
        let t = Instant::now();
        let c = TrainConfig { mode, ..cfg.clone() };
        let out = run_training(&pre, &noisy, &test, &c, &mut NoObserver)?;
        let acc = relabel_rl::metrics::label_accuracy(noisy.instances(), &out.relabeled)?;
        let r = &out.report;
        println!(
            "{:<10} {:.1}s best F1 {:.4} micro {:.4} | label acc {:.4} (noisy {:.4}) | N->P {} P->N {} same {} | max div C {:?}",
            mode.name(),
            t.elapsed().as_secs_f64(),
            r.best.relation_f1,
            r.best.entity_micro_f1,
            acc,
            noisy_acc,
            r.relabel.n_to_p,
            r.relabel.p_to_n,
            r.relabel.relabeled_same_polarity,
            r.per_epoch.last().and_then(|e| e.max_divergent_confidence)
        );
        for e in &r.per_epoch {
            println!(
                "   ep {:2} test F1 {:.4} micro {:.4} val F1 {:.4} rew e {:.3} r {:.3} N->P {} P->N {} div {}",
                e.epoch,
                e.test.f1,
                e.test.micro_f1,
                e.validation.f1,
                e.mean_reward_entity,
                e.mean_reward_relation,
                e.relabel.n_to_p,
                e.relabel.p_to_n,
                e.relabel.divergent
            );
        }
    }
    Ok(())
}
