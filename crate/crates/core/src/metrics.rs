//! Entity and relation metrics, model evaluation and validation-set
//! construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance, TypeId};
use crate::embeddings::InstanceFeatures;
use crate::error::{Error, Result};
use crate::extractors::ExtractorModel;
use crate::rng;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub strict_f1: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Flat report: entity metrics plus relation P/R/F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strict_f1: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn new(e: EntityScores, r: Prf) -> Self {
        Self {
            strict_f1: e.strict_f1,
            macro_f1: e.macro_f1,
            micro_f1: e.micro_f1,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        }
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// Single-tag entity metrics over aligned mention lists. A `none_id` label is
/// the empty tag set. Strict counts a mention correct iff the tag sets are
/// equal; macro averages per-type F1 over the non-None types present in
/// either list; micro pools the per-type counts.
pub fn entity_scores(predictions: &[TypeId], golds: &[TypeId], none_id: TypeId) -> Result<EntityScores> {
    check_len(predictions.len(), golds.len())?;
    if predictions.is_empty() {
        return Ok(EntityScores::default());
    }
    // type -> (tp, fp, fn)
    let mut counts: BTreeMap<TypeId, (usize, usize, usize)> = BTreeMap::new();
    let mut exact = 0;
    for (&p, &g) in predictions.iter().zip(golds) {
        if p == g {
            exact += 1;
        }
        if p != none_id {
            let c = counts.entry(p).or_default();
            if p == g {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        if g != none_id && p != g {
            counts.entry(g).or_default().2 += 1;
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut macro_sum = 0.0;
    for &(a, b, c) in counts.values() {
        tp += a;
        fp += b;
        fn_ += c;
        macro_sum += Prf::from_counts(a, b, c).f1;
    }
    Ok(EntityScores {
        strict_f1: exact as f64 / predictions.len() as f64,
        macro_f1: if counts.is_empty() {
            0.0
        } else {
            macro_sum / counts.len() as f64
        },
        micro_f1: Prf::from_counts(tp, fp, fn_).f1,
    })
}

/// Relation P/R/F1; a prediction is positive iff it is not `none_id`.
pub fn relation_prf(predictions: &[TypeId], golds: &[TypeId], none_id: TypeId) -> Result<Prf> {
    check_len(predictions.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in predictions.iter().zip(golds) {
        match (p != none_id, g != none_id) {
            (true, _) if p == g => tp += 1,
            (true, true) => {
                fp += 1;
                fn_ += 1;
            }
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Which labels an evaluation compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelView {
    /// Hidden gold labels; evaluation only.
    Gold,
    Ds,
    Current,
}

fn labels(i: &Instance, view: LabelView) -> Result<(TypeId, TypeId, TypeId)> {
    Ok(match view {
        LabelView::Ds => (i.ds_relation, i.head.ds_type, i.tail.ds_type),
        LabelView::Current => (i.current_relation, i.head.current_type, i.tail.current_type),
        LabelView::Gold => match (i.gold_relation(), i.head.gold_type(), i.tail.gold_type()) {
            (Some(r), Some(h), Some(t)) => (r, h, t),
            _ => return Err(Error::Empty(format!("instance {} has no gold labels", i.id))),
        },
    })
}

/// Runs both extractors over `instances` and scores them against `view`.
pub fn evaluate<T: Real>(
    entity: &ExtractorModel<T>,
    relation: &ExtractorModel<T>,
    instances: &[Instance],
    features: &[InstanceFeatures<T>],
    view: LabelView,
    none_relation: TypeId,
    none_entity: TypeId,
) -> Result<EvalReport> {
    check_len(instances.len(), features.len())?;
    let mut rp = Vec::with_capacity(instances.len());
    let mut rg = Vec::with_capacity(instances.len());
    let mut ep = Vec::with_capacity(2 * instances.len());
    let mut eg = Vec::with_capacity(2 * instances.len());
    for (i, f) in instances.iter().zip(features) {
        let (r, h, t) = labels(i, view)?;
        rp.push(relation.predict(f)?.outputs[0].label);
        rg.push(r);
        ep.extend(entity.predict(f)?.labels());
        eg.extend([h, t]);
    }
    Ok(EvalReport::new(
        entity_scores(&ep, &eg, none_entity)?,
        relation_prf(&rp, &rg, none_relation)?,
    ))
}

/// Samples `ceil(fraction·n)` instances under `seed` and keeps those whose DS
/// relation equals the extracted relation, at most once per instance id, in
/// corpus order.
pub fn build_validation_set(
    corpus: &Corpus,
    mut extract: impl FnMut(&Instance) -> Result<TypeId>,
    fraction: f64,
    seed: u64,
) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = corpus.len();
    let take = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0x7A11D));
    let mut picked: Vec<usize> = order[..take].to_vec();
    picked.sort_unstable();
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    for idx in picked {
        let inst = &corpus.instances()[idx];
        if extract(inst)? == inst.ds_relation && seen.insert(inst.id) {
            kept.push(inst.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "validation set: none of the {take} sampled instances agree with the extractor; \
             raise the validation fraction or pre-train longer"
        )));
    }
    corpus.with_instances(kept)
}

/// Fraction of instances whose current relation label equals the gold one.
/// `gold` supplies the gold labels and `labels` the current labels, aligned by
/// id (gold is usually stripped from the training copy).
pub fn label_accuracy(gold: &[Instance], labels: &[Instance]) -> Result<f64> {
    check_len(gold.len(), labels.len())?;
    if gold.is_empty() {
        return Err(Error::Empty("label accuracy of an empty corpus".into()));
    }
    let mut ok = 0usize;
    for (position, (g, l)) in gold.iter().zip(labels).enumerate() {
        if g.id != l.id {
            return Err(Error::IdMismatch {
                position,
                left: g.id,
                right: l.id,
            });
        }
        let Some(truth) = g.gold_relation() else {
            return Err(Error::Empty(format!("instance {} has no gold labels", g.id)));
        };
        ok += (truth == l.current_relation) as usize;
    }
    Ok(ok as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TypeId = 1;
    const B: TypeId = 2;

    #[test]
    fn hand_counted_entity_scores() {
        let s = entity_scores(&[A, A, B, B], &[A, B, B, B], 0).unwrap();
        assert!((s.micro_f1 - 0.75).abs() < 1e-12);
        assert!((s.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-9);
        assert_eq!(s.strict_f1, 0.75);
    }

    #[test]
    fn perfect_and_all_none() {
        let g = [A, B, 3, A];
        let s = entity_scores(&g, &g, 0).unwrap();
        assert_eq!((s.strict_f1, s.macro_f1, s.micro_f1), (1.0, 1.0, 1.0));
        let s = entity_scores(&[0, 0, 0, 0], &g, 0).unwrap();
        assert_eq!((s.strict_f1, s.macro_f1, s.micro_f1), (0.0, 0.0, 0.0));
        assert!(entity_scores(&[A], &[A, B], 0).is_err());
    }

    #[test]
    fn hand_counted_relation_prf() {
        let p = relation_prf(&[1, 0, 2], &[1, 2, 2], 0).unwrap();
        assert_eq!(p.precision, 1.0);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.f1 - 0.8).abs() < 1e-12);
        let z = relation_prf(&[0, 0], &[1, 2], 0).unwrap();
        assert_eq!(z, Prf::default());
        let ok = relation_prf(&[1, 2], &[1, 2], 0).unwrap();
        assert_eq!((ok.precision, ok.recall, ok.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn wrong_positive_counts_as_fp_and_fn() {
        let p = relation_prf(&[1], &[2], 0).unwrap();
        assert_eq!(p, Prf::default());
        let p = relation_prf(&[1, 1], &[2, 1], 0).unwrap();
        assert_eq!((p.precision, p.recall), (0.5, 0.5));
    }
}
