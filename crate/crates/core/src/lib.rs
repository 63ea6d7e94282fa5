//! Reinforcement-learning relabeling of distantly supervised relation and
//! entity-type annotations.
//!
//! Every model is generic over its scalar ([`Real`], implemented for `f32` and
//! `f64`). The aliases below pin `f64`, which is what the command-line tool
//! uses; the `*32` variants are there for memory-bound experiments.

pub mod agents;
mod binio;
pub mod consensus;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod extractors;
pub mod linalg;
pub mod metrics;
pub mod rl;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use consensus::{consensus, relabel, ConsensusOutcome, Polarity};
pub use corpus::{Corpus, Instance, TypeId, TypeOntology};
pub use error::{Error, Result};
pub use scalar::Real;
pub use trainer::{Mode, TrainConfig};

pub type Extractor = extractors::ExtractorModel<f64>;
pub type Policy = agents::PolicyParams<f64>;
pub type Agents = agents::AgentGroup<f64>;
pub type Kg = embeddings::KgEmbeddings<f64>;
pub type PretrainedModels = trainer::Pretrained<f64>;
pub type TrainingOutput = trainer::RunOutput<f64>;

pub type Extractor32 = extractors::ExtractorModel<f32>;
pub type Policy32 = agents::PolicyParams<f32>;
pub type Agents32 = agents::AgentGroup<f32>;
pub type Kg32 = embeddings::KgEmbeddings<f32>;
