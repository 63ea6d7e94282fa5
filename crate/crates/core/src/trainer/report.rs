use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::config::TrainConfig;
use super::pretrain::{PretrainHistory, Pretrained};
use super::run::RunOutput;
use crate::agents::AgentGroup;
use crate::corpus::{load_corpus, save_corpus, Corpus};
use crate::embeddings::KgEmbeddings;
use crate::error::{Error, Result};
use crate::extractors::ExtractorModel;
use crate::scalar::Real;

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const AUDIT_FILE: &str = "relabel_audit.jsonl";
pub const TELEMETRY_FILE: &str = "rl_telemetry.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PRETRAIN_HISTORY_FILE: &str = "pretrain_history.json";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TRAIN_IDS_FILE: &str = "train_ids.json";

fn write_pretty<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_lines<V: Serialize>(path: &Path, rows: &[V]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the run directory: config echo, report, audit log, telemetry and
/// best-model checkpoints.
pub fn emit_report<T: Real>(dir: impl AsRef<Path>, cfg: &TrainConfig, out: &RunOutput<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    write_pretty(&dir.join(CONFIG_FILE), cfg)?;
    write_pretty(&dir.join(REPORT_FILE), &out.report)?;
    write_lines(&dir.join(AUDIT_FILE), &out.audit)?;
    write_lines(&dir.join(TELEMETRY_FILE), &out.telemetry)?;
    let ck = dir.join(CHECKPOINT_DIR);
    out.best_entity.save(ck.join("entity.bin"))?;
    out.best_relation.save(ck.join("relation.bin"))?;
    out.agents.save(ck.join("agents.bin"))?;
    Ok(())
}

/// Writes pre-training results into `dir`: the config echo, both extractors,
/// KG embeddings, agents, the validation corpus and the loss history.
pub fn save_pretrained<T: Real>(dir: impl AsRef<Path>, cfg: &TrainConfig, pre: &Pretrained<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_pretty(&dir.join(CONFIG_FILE), cfg)?;
    pre.entity.save(dir.join("entity.bin"))?;
    pre.relation.save(dir.join("relation.bin"))?;
    pre.kg.save(dir.join("kg.bin"))?;
    pre.agents.save(dir.join("agents.bin"))?;
    save_corpus(&pre.validation, dir.join(VALIDATION_FILE))?;
    write_pretty(&dir.join(TRAIN_IDS_FILE), &pre.train_ids)?;
    write_pretty(&dir.join(PRETRAIN_HISTORY_FILE), &pre.history)
}

/// Inverse of [`save_pretrained`]; `train` must be the corpus the models
/// were pre-trained on.
pub fn load_pretrained<T: Real>(dir: impl AsRef<Path>, train: &Corpus, cfg: &TrainConfig) -> Result<Pretrained<T>> {
    let dir = dir.as_ref();
    let need = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Config(format!(
                "{} is missing; run `pretrain` with this directory as --out first",
                p.display()
            )))
        }
    };
    let ids: Vec<u64> = serde_json::from_reader(File::open(need(TRAIN_IDS_FILE)?)?)?;
    if !ids.iter().eq(train.instances().iter().map(|i| &i.id)) {
        return Err(Error::Config(format!(
            "pre-trained models in {} belong to a different training corpus",
            dir.display()
        )));
    }
    let history: PretrainHistory = serde_json::from_reader(File::open(need(PRETRAIN_HISTORY_FILE)?)?)?;
    Pretrained::from_parts(
        train,
        cfg,
        ExtractorModel::load(need("entity.bin")?)?,
        ExtractorModel::load(need("relation.bin")?)?,
        KgEmbeddings::load(need("kg.bin")?)?,
        load_corpus(need(VALIDATION_FILE)?)?,
        AgentGroup::load(need("agents.bin")?)?,
        history,
    )
}
