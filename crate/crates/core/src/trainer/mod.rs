//! Pre-training and the iterative re-labeling / re-training loop.

mod config;
mod encode;
mod pretrain;
mod report;
mod run;

pub use config::{Mode, PretrainConfig, QueueConfig, TrainConfig};
pub use pretrain::{ds_triples, pretrain, pretrain_extractors, pretrain_policies, PretrainHistory, Pretrained};
pub use report::{
    emit_report, load_pretrained, save_pretrained, AUDIT_FILE, CHECKPOINT_DIR, CONFIG_FILE, PRETRAIN_HISTORY_FILE,
    REPORT_FILE, TELEMETRY_FILE, TRAIN_IDS_FILE, VALIDATION_FILE,
};
pub use run::{
    run_no_agent_baseline, run_training, BestReport, EpochReport, NoObserver, Phase, PhaseLog, PhaseObserver,
    RewardCurves, RunOutput, RunReport, RunState, TelemetryRecord,
};
