use crate::corpus::Instance;
use crate::embeddings::{FeatureConfig, InstanceFeatures};
use crate::error::Result;
use crate::scalar::Real;

/// Cached model inputs of one instance.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Encoded<T> {
    pub sentence: Vec<T>,
    pub relation: Vec<T>,
    pub head: Vec<T>,
    pub tail: Vec<T>,
}

impl<T: Real> Encoded<T> {
    pub fn new(instance: &Instance, cfg: &FeatureConfig) -> Result<Self> {
        let f = InstanceFeatures::compute(instance, cfg)?;
        Ok(Self {
            relation: [f.sentence.as_slice(), &f.head, &f.tail].concat(),
            head: [f.sentence.as_slice(), &f.head].concat(),
            tail: [f.sentence.as_slice(), &f.tail].concat(),
            sentence: f.sentence,
        })
    }
}

pub(crate) fn encode_all<T: Real>(instances: &[Instance], cfg: &FeatureConfig) -> Result<Vec<Encoded<T>>> {
    instances.iter().map(|i| Encoded::new(i, cfg)).collect()
}
