//! Three-vote confidence consensus and re-labeling.

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, TypeId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub polarity: Polarity,
    pub confidence: f64,
    pub mean_c: f64,
    /// The lowest and highest votes sit on opposite sides of 0.5.
    pub divergent: bool,
}

/// Mean of the three votes; a mean at or below 0.5 is a negative verdict with
/// confidence `1 − mean`, anything above is positive with confidence `mean`.
pub fn consensus(c_rel: f64, c_head: f64, c_tail: f64) -> Result<ConsensusOutcome> {
    let votes = [c_rel, c_head, c_tail];
    if let Some(v) = votes.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("confidence {v} outside [0, 1]")));
    }
    // Sorted sum keeps the result independent of argument order.
    let mut s = votes;
    s.sort_by(f64::total_cmp);
    let mean_c = (s[0] + s[1] + s[2]) / 3.0;
    let divergent = s[0] <= 0.5 && s[2] > 0.5;
    let (polarity, confidence) = if mean_c <= 0.5 {
        (Polarity::Negative, 1.0 - mean_c)
    } else {
        (Polarity::Positive, mean_c)
    };
    Ok(ConsensusOutcome {
        polarity,
        confidence,
        mean_c,
        divergent,
    })
}

/// Current-extractor labels used when a verdict is positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictedLabels {
    pub relation: TypeId,
    pub head: TypeId,
    pub tail: TypeId,
}

/// Applies a verdict. Positive takes the predicted labels, except that a
/// predicted None relation leaves the current relation in place (a positive
/// verdict never produces None). Negative sets the relation to None and resets
/// the mention types to DS. DS and gold fields are never touched.
pub fn relabel(
    instance: &Instance,
    outcome: &ConsensusOutcome,
    predicted: PredictedLabels,
    none_relation: TypeId,
) -> Instance {
    let mut out = instance.clone();
    match outcome.polarity {
        Polarity::Positive => {
            if predicted.relation != none_relation {
                out.current_relation = predicted.relation;
            }
            out.head.current_type = predicted.head;
            out.tail.current_type = predicted.tail;
        }
        Polarity::Negative => {
            out.current_relation = none_relation;
            out.head.current_type = out.head.ds_type;
            out.tail.current_type = out.tail.ds_type;
        }
    }
    out.confidence = outcome.confidence;
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelStats {
    #[serde(rename = "N_to_P")]
    pub n_to_p: usize,
    #[serde(rename = "P_to_N")]
    pub p_to_n: usize,
    /// Relation changed from one positive type to another.
    pub relabeled_same_polarity: usize,
    pub unchanged: usize,
    pub divergent: usize,
}

impl RelabelStats {
    pub fn total(&self) -> usize {
        self.n_to_p + self.p_to_n + self.relabeled_same_polarity + self.unchanged
    }
}

/// Counts relation-label transitions from `original` to `relabeled` (aligned
/// by id); `divergent` flags come from the consensus outcomes, one per
/// relabeled instance, if available.
pub fn relabel_stats(
    original: &[Instance],
    relabeled: &[Instance],
    divergent: Option<&[bool]>,
    none_relation: TypeId,
) -> Result<RelabelStats> {
    if original.len() != relabeled.len() {
        return Err(Error::LengthMismatch {
            left: original.len(),
            right: relabeled.len(),
        });
    }
    if let Some(d) = divergent {
        if d.len() != relabeled.len() {
            return Err(Error::LengthMismatch {
                left: d.len(),
                right: relabeled.len(),
            });
        }
    }
    let mut s = RelabelStats::default();
    for (position, (a, b)) in original.iter().zip(relabeled).enumerate() {
        if a.id != b.id {
            return Err(Error::IdMismatch {
                position,
                left: a.id,
                right: b.id,
            });
        }
        let from = a.current_relation;
        let to = b.current_relation;
        match (from == none_relation, to == none_relation) {
            _ if from == to => s.unchanged += 1,
            (true, false) => s.n_to_p += 1,
            (false, true) => s.p_to_n += 1,
            _ => s.relabeled_same_polarity += 1,
        }
    }
    s.divergent = divergent.map_or(0, |d| d.iter().filter(|&&x| x).count());
    Ok(s)
}

/// One line of the re-label audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub epoch: usize,
    pub id: u64,
    pub old: [TypeId; 3],
    pub new: [TypeId; 3],
    pub confidence: f64,
    pub divergent: bool,
}
