//! Subcommand implementations. Each one writes only inside its output
//! directory and echoes the resolved configuration there.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use relabel_rl::corpus::{generate_corpus, inject_noise, load_corpus, noise_stats, save_corpus, Corpus};
use relabel_rl::embeddings::InstanceFeatures;
use relabel_rl::extractors::ExtractorModel;
use relabel_rl::metrics::{evaluate, label_accuracy, EvalReport, LabelView};
use relabel_rl::trainer::{
    emit_report, load_pretrained, pretrain, run_no_agent_baseline, run_training, save_pretrained, NoObserver,
    RunReport, TelemetryRecord, CHECKPOINT_DIR, REPORT_FILE, TELEMETRY_FILE,
};
use serde::Serialize;

use crate::config::CliConfig;

/// `println!` that returns write errors (a closed pipe) instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)?
    };
}

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const NOISE_STATS_FILE: &str = "noise_stats.json";
pub const RELABELED_FILE: &str = "relabeled.jsonl";
pub const SUMMARY_DIR: &str = "summary";

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn echo_config(dir: &Path, cfg: &CliConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    write_json(&dir.join(RESOLVED_CONFIG_FILE), cfg)
}

pub fn print_config(cfg: &CliConfig) -> Result<()> {
    say!("{}", serde_json::to_string_pretty(cfg)?);
    Ok(())
}

/// Generated corpus split into (noised train, clean test).
fn generate(cfg: &CliConfig) -> Result<(Corpus, Corpus)> {
    let corpus = generate_corpus(&cfg.data.generator, cfg.data.seed)?;
    let (train, test) = corpus.split_test_count(cfg.data.test_instances)?;
    let noisy = inject_noise(&train, &cfg.data.noise_spec())?;
    Ok((noisy, test))
}

/// Reads the splits written by `gen`, or generates them in memory.
fn load_data(cfg: &CliConfig, data: Option<&Path>) -> Result<(Corpus, Corpus)> {
    match data {
        None => generate(cfg),
        Some(dir) => {
            let read = |name: &str| -> Result<Corpus> {
                let p = dir.join(name);
                if !p.exists() {
                    bail!("{} is missing; run `gen --out {}` first", p.display(), dir.display());
                }
                load_corpus(&p).with_context(|| format!("cannot load corpus {}", p.display()))
            };
            Ok((read(TRAIN_FILE)?, read(TEST_FILE)?))
        }
    }
}

pub fn gen(cfg: &CliConfig, out: &Path) -> Result<()> {
    let (train, test) = generate(cfg)?;
    echo_config(out, cfg)?;
    save_corpus(&train, out.join(TRAIN_FILE))?;
    save_corpus(&test, out.join(TEST_FILE))?;
    let stats = noise_stats(&train);
    write_json(&out.join(NOISE_STATS_FILE), &stats)?;
    say!("train {}  test {}", train.len(), test.len());
    say!(
        "false negatives {}/{} ({:.4})  false positives {}/{} ({:.4})  entity flips {}/{} ({:.4})",
        stats.false_negatives,
        stats.gold_positive,
        stats.fn_fraction,
        stats.false_positives,
        stats.gold_none,
        stats.fp_fraction,
        stats.entity_flips,
        stats.entity_mentions,
        stats.entity_flip_fraction
    );
    Ok(())
}

pub fn pretrain_cmd(cfg: &CliConfig, data: Option<&Path>, out: &Path) -> Result<()> {
    let (train, _) = load_data(cfg, data)?;
    let pre = pretrain::<f64>(&train, &cfg.train)?;
    echo_config(out, cfg)?;
    save_pretrained(out, &cfg.train, &pre)?;
    info!(
        "pre-trained on {} instances, {} validation instances",
        train.len(),
        pre.validation.len()
    );
    say!("pre-trained models written to {}", out.display());
    Ok(())
}

pub fn train(
    cfg: &CliConfig,
    data: Option<&Path>,
    pretrained: Option<&Path>,
    baseline: bool,
    out: &Path,
) -> Result<()> {
    let (train, test) = load_data(cfg, data)?;
    let pre = match pretrained {
        Some(dir) => load_pretrained::<f64>(dir, &train, &cfg.train)
            .with_context(|| format!("cannot load pre-trained models from {}", dir.display()))?,
        None => pretrain::<f64>(&train, &cfg.train)?,
    };
    let output = if baseline {
        run_no_agent_baseline(&pre, &train, &test, &cfg.train)?
    } else {
        run_training(&pre, &train, &test, &cfg.train, &mut NoObserver)?
    };
    echo_config(out, cfg)?;
    emit_report(out, &cfg.train, &output)?;
    save_corpus(
        &train.with_instances(output.relabeled.clone())?,
        out.join(RELABELED_FILE),
    )?;
    let r = &output.report;
    say!(
        "mode {}  best relation F1 {:.4} (epoch {})  best entity micro F1 {:.4} (epoch {})",
        r.mode,
        r.best.relation_f1,
        r.best.relation_epoch,
        r.best.entity_micro_f1,
        r.best.entity_epoch
    );
    say!(
        "re-labels: N->P {}  P->N {}  same polarity {}  unchanged {}",
        r.relabel.n_to_p,
        r.relabel.p_to_n,
        r.relabel.relabeled_same_polarity,
        r.relabel.unchanged
    );
    if train.instances().iter().all(|i| i.has_gold()) {
        let noisy = label_accuracy(train.instances(), train.instances())?;
        let relabeled = label_accuracy(train.instances(), &output.relabeled)?;
        say!("label accuracy {relabeled:.4} (distant labels {noisy:.4})");
    }
    Ok(())
}

/// Checkpoint path inside a `train` run directory or a `pretrain` directory.
fn checkpoint(run: &Path, name: &str) -> Result<PathBuf> {
    for p in [run.join(CHECKPOINT_DIR).join(name), run.join(name)] {
        if p.exists() {
            return Ok(p);
        }
    }
    bail!(
        "no {name} in {} or its {CHECKPOINT_DIR}/ directory; point --run at a `train` or `pretrain` output directory",
        run.display()
    )
}

/// Scores the run's extractors on the test split against gold labels. The
/// configuration echoed into the run directory takes precedence.
pub fn eval(cfg: &CliConfig, data: Option<&Path>, run: &Path) -> Result<()> {
    let echoed = run.join(RESOLVED_CONFIG_FILE);
    let run_cfg: CliConfig = if echoed.exists() {
        serde_json::from_reader(File::open(&echoed)?).with_context(|| format!("malformed {}", echoed.display()))?
    } else {
        cfg.clone()
    };
    let entity = ExtractorModel::<f64>::load(checkpoint(run, "entity.bin")?)?;
    let relation = ExtractorModel::<f64>::load(checkpoint(run, "relation.bin")?)?;
    let (_, test) = load_data(&run_cfg, data)?;
    let features = InstanceFeatures::compute_all(test.instances(), &run_cfg.train.extractor.features)?;
    let ont = test.ontology();
    let report: EvalReport = evaluate(
        &entity,
        &relation,
        test.instances(),
        &features,
        LabelView::Gold,
        ont.none_relation_id,
        ont.none_entity_id,
    )?;
    say!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    test_relation_f1: f64,
    test_entity_micro_f1: f64,
    validation_relation_f1: f64,
    mean_reward_entity: f64,
    mean_reward_relation: f64,
    mean_extractor_loss: f64,
    n_to_p: usize,
    p_to_n: usize,
    relabeled_same_polarity: usize,
    unchanged: usize,
    divergent: usize,
    max_divergent_confidence: Option<f64>,
}

#[derive(Serialize)]
struct RelabelRow {
    category: &'static str,
    count: usize,
    proportion: f64,
}

fn write_csv<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders a run directory into `epochs.csv`, `relabel.csv` and
/// `telemetry.csv` under `out` (default `<run>/summary`).
pub fn report(run: &Path, out: Option<&Path>) -> Result<()> {
    let rp = run.join(REPORT_FILE);
    if !rp.exists() {
        bail!("{} is missing; point --run at a `train` output directory", rp.display());
    }
    let report: RunReport =
        serde_json::from_reader(File::open(&rp)?).with_context(|| format!("malformed {}", rp.display()))?;
    let tp = run.join(TELEMETRY_FILE);
    let telemetry: Vec<TelemetryRecord> = if tp.exists() {
        fs::read_to_string(&tp)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("malformed {}", tp.display()))?
    } else {
        Vec::new()
    };
    let out = out.map_or_else(|| run.join(SUMMARY_DIR), Path::to_path_buf);
    fs::create_dir_all(&out)?;

    let rows: Vec<EpochRow> = report
        .per_epoch
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            test_relation_f1: e.test.f1,
            test_entity_micro_f1: e.test.micro_f1,
            validation_relation_f1: e.validation.f1,
            mean_reward_entity: e.mean_reward_entity,
            mean_reward_relation: e.mean_reward_relation,
            mean_extractor_loss: e.mean_extractor_loss,
            n_to_p: e.relabel.n_to_p,
            p_to_n: e.relabel.p_to_n,
            relabeled_same_polarity: e.relabel.relabeled_same_polarity,
            unchanged: e.relabel.unchanged,
            divergent: e.relabel.divergent,
            max_divergent_confidence: e.max_divergent_confidence,
        })
        .collect();
    say!("epoch  test_F1  micro_F1  reward_e  reward_r   N->P   P->N");
    for r in &rows {
        say!(
            "{:>5}  {:.4}   {:.4}    {:>7.4}   {:>7.4}  {:>5}  {:>5}",
            r.epoch,
            r.test_relation_f1,
            r.test_entity_micro_f1,
            r.mean_reward_entity,
            r.mean_reward_relation,
            r.n_to_p,
            r.p_to_n
        );
    }
    write_csv(&out.join("epochs.csv"), rows)?;

    let s = &report.relabel;
    let total = s.total().max(1) as f64;
    let cats = [
        ("N_to_P", s.n_to_p),
        ("P_to_N", s.p_to_n),
        ("relabeled_same_polarity", s.relabeled_same_polarity),
        ("unchanged", s.unchanged),
    ];
    write_csv(
        &out.join("relabel.csv"),
        cats.iter().map(|&(category, count)| RelabelRow {
            category,
            count,
            proportion: count as f64 / total,
        }),
    )?;
    write_csv(&out.join("telemetry.csv"), &telemetry)?;
    say!(
        "mode {}  best relation F1 {:.4}  summaries in {}",
        report.mode,
        report.best.relation_f1,
        out.display()
    );
    Ok(())
}
