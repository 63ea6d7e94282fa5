//! Sentence featurization, type-vector tables and TransE knowledge-graph
//! embeddings.
//!
//! # KG embedding file layout
//!
//! All integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"KGEM"
//! 4       4     u32 format version (1)
//! 8       4     u32 dim
//! 12      4     u32 entity row count
//! 16      4     u32 relation row count
//! 20      ..    entity rows, row-major f64
//! ..      ..    relation rows, row-major f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::corpus::{Instance, Span, TypeId};
use crate::error::{Error, Result};
use crate::linalg::{normalize, Matrix};
use crate::rng::{self, mix64};
use crate::scalar::Real;

const KG_MAGIC: &[u8; 4] = b"KGEM";
const KG_VERSION: u32 = 1;

// Feature-kind tags mixed into every hashed feature.
const F_UNIGRAM: u64 = 1;
const F_BIGRAM: u64 = 2;
const F_HEAD: u64 = 3;
const F_TAIL: u64 = 4;
const F_DISTANCE: u64 = 5;
const F_MENTION: u64 = 6;
const F_LEFT: u64 = 7;
const F_RIGHT: u64 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding<T> {
    pub values: Vec<T>,
}

impl<T: Real> SentenceEmbedding<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[inline]
fn add_feature<T: Real>(out: &mut [T], salt: u64, kind: u64, a: u64, b: u64) {
    let h = mix64(mix64(mix64(salt ^ kind.rotate_left(56)) ^ a) ^ b.rotate_left(17));
    let bucket = (h % out.len() as u64) as usize;
    if h >> 63 == 0 {
        out[bucket] += T::one();
    } else {
        out[bucket] -= T::one();
    }
}

fn distance_bucket(head: Span, tail: Span) -> u64 {
    let gap = if head.end <= tail.start {
        tail.start - head.end
    } else {
        head.start.saturating_sub(tail.end)
    };
    match gap {
        0 => 0,
        1 => 1,
        2 => 2,
        3..=4 => 3,
        5..=8 => 4,
        _ => 5,
    }
}

/// Hashed bag of unigrams, bigrams, mention tokens and bucketed mention
/// distance, with signed buckets and unit L2 norm. Reads only tokens and spans.
pub fn featurize_sentence<T: Real>(instance: &Instance, d_s: usize, salt: u64) -> Result<SentenceEmbedding<T>> {
    featurize_tokens(&instance.tokens, instance.head.span, instance.tail.span, d_s, salt)
}

pub fn featurize_tokens<T: Real>(
    tokens: &[u32],
    head: Span,
    tail: Span,
    d_s: usize,
    salt: u64,
) -> Result<SentenceEmbedding<T>> {
    if d_s < 8 {
        return Err(Error::Config(format!("sentence dimension {d_s} < 8")));
    }
    let mut v = vec![T::zero(); d_s];
    for &t in tokens {
        add_feature(&mut v, salt, F_UNIGRAM, t as u64, 0);
    }
    for w in tokens.windows(2) {
        add_feature(&mut v, salt, F_BIGRAM, w[0] as u64, w[1] as u64);
    }
    for (kind, span) in [(F_HEAD, head), (F_TAIL, tail)] {
        for &t in &tokens[span.start.min(tokens.len())..span.end.min(tokens.len())] {
            add_feature(&mut v, salt, kind, t as u64, 0);
        }
    }
    add_feature(&mut v, salt, F_DISTANCE, distance_bucket(head, tail), 0);
    normalize(&mut v);
    Ok(SentenceEmbedding { values: v })
}

/// Hashed tokens inside a mention span plus its immediate neighbours, unit norm.
pub fn featurize_mention<T: Real>(tokens: &[u32], span: Span, d: usize, salt: u64) -> Vec<T> {
    let mut v = vec![T::zero(); d];
    let salt = salt ^ 0xA5A5_5A5A;
    for &t in &tokens[span.start.min(tokens.len())..span.end.min(tokens.len())] {
        add_feature(&mut v, salt, F_MENTION, t as u64, 0);
    }
    if span.start > 0 {
        add_feature(&mut v, salt, F_LEFT, tokens[span.start - 1] as u64, 0);
    }
    if let Some(&t) = tokens.get(span.end) {
        add_feature(&mut v, salt, F_RIGHT, t as u64, 0);
    }
    add_feature(&mut v, salt, F_MENTION, u64::MAX, span.len() as u64);
    normalize(&mut v);
    v
}

/// Featurizer settings shared by every model reading sentence features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub d_s: usize,
    pub salt: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { d_s: 256, salt: 0x5EED }
    }
}

/// Cached per-instance features consumed by the extractors and agents.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFeatures<T> {
    pub sentence: Vec<T>,
    pub head: Vec<T>,
    pub tail: Vec<T>,
}

impl<T: Real> InstanceFeatures<T> {
    pub fn compute(instance: &Instance, cfg: &FeatureConfig) -> Result<Self> {
        let sentence = featurize_sentence(instance, cfg.d_s, cfg.salt)?.values;
        Ok(Self {
            sentence,
            head: featurize_mention(&instance.tokens, instance.head.span, cfg.d_s, cfg.salt),
            tail: featurize_mention(&instance.tokens, instance.tail.span, cfg.d_s, cfg.salt),
        })
    }

    pub fn compute_all(instances: &[Instance], cfg: &FeatureConfig) -> Result<Vec<Self>> {
        instances.iter().map(|i| Self::compute(i, cfg)).collect()
    }
}

/// Snapshot of learned type vectors; rows indexed by type id.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeEmbeddingTable<T> {
    pub entity_vectors: Matrix<T>,
    pub relation_vectors: Matrix<T>,
}

impl<T: Real> TypeEmbeddingTable<T> {
    pub fn entity(&self, id: TypeId) -> &[T] {
        self.entity_vectors.row(id)
    }

    pub fn relation(&self, id: TypeId) -> &[T] {
        self.relation_vectors.row(id)
    }
}

/// `‖t1 + tr − t2‖₂`
pub fn triple_score<T: Real>(t1: &[T], tr: &[T], t2: &[T]) -> Result<T> {
    if tr.len() != t1.len() || t2.len() != t1.len() {
        return Err(Error::Dimension {
            context: "triple_score",
            expected: t1.len(),
            got: if tr.len() != t1.len() { tr.len() } else { t2.len() },
        });
    }
    Ok(t1
        .iter()
        .zip(tr)
        .zip(t2)
        .map(|((&a, &r), &b)| {
            let d = a + r - b;
            d * d
        })
        .sum::<T>()
        .sqrt())
}

/// An `(E1, R, E2)` triple over ontology type ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KgTriple {
    pub head: TypeId,
    pub relation: TypeId,
    pub tail: TypeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            margin: 1.0,
            epochs: 50,
            lr: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KgEmbeddings<T> {
    pub entity_vectors: Matrix<T>,
    pub relation_vectors: Matrix<T>,
}

impl<T: Real> KgEmbeddings<T> {
    pub fn dim(&self) -> usize {
        self.entity_vectors.cols()
    }

    /// Score of a triple; errors when an id has no row.
    pub fn score(&self, head: TypeId, relation: TypeId, tail: TypeId) -> Result<T> {
        let ne = self.entity_vectors.rows();
        let nr = self.relation_vectors.rows();
        for (id, n, what) in [(head, ne, "entity"), (tail, ne, "entity"), (relation, nr, "relation")] {
            if id >= n {
                return Err(Error::OutOfRange(format!("no KG {what} row for id {id}")));
            }
        }
        triple_score(
            self.entity_vectors.row(head),
            self.relation_vectors.row(relation),
            self.entity_vectors.row(tail),
        )
    }

    /// Seeded initialization: uniform in `±6/√dim`, every row L2-normalized.
    pub fn init(num_entities: usize, num_relations: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0x7E);
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |r: usize| {
            let mut m = Matrix::from_fn(r, dim, |_, _| T::of(rng.random_range(-bound..bound)));
            for i in 0..r {
                normalize(m.row_mut(i));
            }
            m
        };
        let entity_vectors = draw(num_entities);
        let relation_vectors = draw(num_relations);
        Self {
            entity_vectors,
            relation_vectors,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer(w);
        w.magic(KG_MAGIC, KG_VERSION)?;
        w.u32(self.dim() as u32)?;
        w.u32(self.entity_vectors.rows() as u32)?;
        w.u32(self.relation_vectors.rows() as u32)?;
        w.reals(self.entity_vectors.as_slice())?;
        w.reals(self.relation_vectors.as_slice())?;
        w.0.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(KG_MAGIC, KG_VERSION)?;
        let dim = r.dim(1 << 16)?;
        let ne = r.dim(1 << 24)?;
        let nr = r.dim(1 << 24)?;
        let e = r.reals(ne * dim)?;
        let rel = r.reals(nr * dim)?;
        r.expect_eof()?;
        Ok(Self {
            entity_vectors: Matrix::from_vec(ne, dim, e).expect("sized"),
            relation_vectors: Matrix::from_vec(nr, dim, rel).expect("sized"),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Trains TransE embeddings; see [`transe_pretrain_with_history`].
pub fn transe_pretrain<T: Real>(
    triples: &[KgTriple],
    num_entities: usize,
    num_relations: usize,
    cfg: &TransEConfig,
    seed: u64,
) -> Result<KgEmbeddings<T>> {
    transe_pretrain_with_history(triples, num_entities, num_relations, cfg, seed).map(|(kg, _)| kg)
}

/// Margin-ranking SGD over `max(0, margin + d(h,r,t) − d(h',r,t'))` where the
/// negative corrupts the head or the tail (probability ½ each) with a uniformly
/// drawn different entity. Entity rows are renormalized after every epoch.
/// Returns the embeddings and the mean loss of each epoch.
pub fn transe_pretrain_with_history<T: Real>(
    triples: &[KgTriple],
    num_entities: usize,
    num_relations: usize,
    cfg: &TransEConfig,
    seed: u64,
) -> Result<(KgEmbeddings<T>, Vec<T>)> {
    if triples.is_empty() {
        return Err(Error::Empty("TransE needs at least one triple".into()));
    }
    if num_entities < 2 {
        return Err(Error::Config("TransE needs at least two entities to corrupt".into()));
    }
    for t in triples {
        if t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations {
            return Err(Error::OutOfRange(format!("triple {t:?} outside ontology")));
        }
    }
    let mut kg = KgEmbeddings::<T>::init(num_entities, num_relations, cfg.dim, seed);
    let mut rng = rng::stream(seed, 0x7E57);
    let margin = T::of(cfg.margin);
    let lr = T::of(cfg.lr);
    let dim = cfg.dim;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut pos_diff = vec![T::zero(); dim];
    let mut neg_diff = vec![T::zero(); dim];

    let diff = |kg: &KgEmbeddings<T>, h: usize, r: usize, t: usize, out: &mut [T]| -> T {
        let (eh, er, et) = (
            kg.entity_vectors.row(h),
            kg.relation_vectors.row(r),
            kg.entity_vectors.row(t),
        );
        let mut s = T::zero();
        for k in 0..out.len() {
            out[k] = eh[k] + er[k] - et[k];
            s += out[k] * out[k];
        }
        s.sqrt()
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        for &i in &order {
            let t = triples[i];
            let corrupt_head = rng.random::<bool>();
            let mut other = rng.random_range(0..num_entities - 1);
            let original = if corrupt_head { t.head } else { t.tail };
            if other >= original {
                other += 1;
            }
            let (nh, nt) = if corrupt_head { (other, t.tail) } else { (t.head, other) };

            let dp = diff(&kg, t.head, t.relation, t.tail, &mut pos_diff);
            let dn = diff(&kg, nh, t.relation, nt, &mut neg_diff);
            let loss = margin + dp - dn;
            if loss <= T::zero() {
                continue;
            }
            total += loss;
            let eps = T::of(1e-12);
            let gp = lr / (dp + eps);
            let gn = lr / (dn + eps);
            // ∂dp/∂h = pos_diff/dp, ∂dp/∂t = −pos_diff/dp, ∂dp/∂r = pos_diff/dp; the
            // negative term enters with the opposite sign.
            for k in 0..dim {
                let p = gp * pos_diff[k];
                let n = gn * neg_diff[k];
                *kg.relation_vectors.row_mut(t.relation).get_mut(k).unwrap() -= p - n;
                kg.entity_vectors.row_mut(t.head)[k] -= p;
                kg.entity_vectors.row_mut(t.tail)[k] += p;
                kg.entity_vectors.row_mut(nh)[k] += n;
                kg.entity_vectors.row_mut(nt)[k] -= n;
            }
        }
        for e in 0..num_entities {
            normalize(kg.entity_vectors.row_mut(e));
        }
        history.push(total / T::of_usize(triples.len()));
    }
    if !(kg.entity_vectors.is_finite() && kg.relation_vectors.is_finite()) {
        return Err(Error::NonFinite("TransE training".into()));
    }
    Ok((kg, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Mention;

    fn instance(tokens: Vec<u32>) -> Instance {
        Instance::new(
            0,
            tokens,
            Mention::new(Span::new(0, 1), 1, None),
            Mention::new(Span::new(3, 5), 2, None),
            1,
            None,
        )
    }

    #[test]
    fn featurizer_is_deterministic_and_unit_norm() {
        let i = instance(vec![3, 9, 27, 81, 243, 7, 7]);
        let a: SentenceEmbedding<f64> = featurize_sentence(&i, 64, 11).unwrap();
        let b: SentenceEmbedding<f64> = featurize_sentence(&i, 64, 11).unwrap();
        assert_eq!(a, b);
        assert!((crate::linalg::norm(&a.values) - 1.0).abs() < 1e-12);
        assert!(featurize_sentence::<f64>(&i, 4, 0).is_err());
    }

    #[test]
    fn featurizer_ignores_labels() {
        let i = instance(vec![5, 6, 7, 8, 9, 10]);
        let mut j = i.clone();
        j.ds_relation = 0;
        j.current_relation = 3;
        j.head.ds_type = 4;
        j.tail.current_type = 0;
        j.confidence = 0.2;
        j.set_gold(Some(2), Some(2), Some(1));
        let a: SentenceEmbedding<f64> = featurize_sentence(&i, 64, 0).unwrap();
        let b: SentenceEmbedding<f64> = featurize_sentence(&j, 64, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_token_change_changes_vector_almost_always() {
        // Empirical collision check at d_s = 64: changing one token moves a
        // unigram and up to two bigram features, so the vectors can only
        // coincide when every moved feature collides with its replacement.
        let mut rng = rng::stream(99, 0);
        let trials = 2000;
        let mut identical = 0;
        for _ in 0..trials {
            let tokens: Vec<u32> = (0..12).map(|_| rng.random_range(0..5000)).collect();
            let mut other = tokens.clone();
            let at = rng.random_range(0..12);
            other[at] = (other[at] + 1 + rng.random_range(0..4000)) % 5000;
            let a: SentenceEmbedding<f64> = featurize_sentence(&instance(tokens), 64, 1).unwrap();
            let b: SentenceEmbedding<f64> = featurize_sentence(&instance(other), 64, 1).unwrap();
            if a == b {
                identical += 1;
            }
        }
        assert!(identical as f64 / trials as f64 <= 0.001, "{identical} collisions");
    }

    #[test]
    fn triple_score_hand_values() {
        assert_eq!(triple_score(&[0.3, -1.0], &[0.0, 0.0], &[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(triple_score(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        let s = triple_score(&[1.0_f64, 0.0], &[0.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            triple_score(&[1.0], &[1.0, 2.0], &[0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let triples = [KgTriple {
            head: 1,
            relation: 1,
            tail: 2,
        }];
        let cfg = TransEConfig {
            epochs: 0,
            ..TransEConfig::default()
        };
        let kg: KgEmbeddings<f64> = transe_pretrain(&triples, 4, 2, &cfg, 5).unwrap();
        assert_eq!(kg, KgEmbeddings::init(4, 2, 50, 5));
        assert!(transe_pretrain::<f64>(&[], 4, 2, &cfg, 5).is_err());
    }

    #[test]
    fn entity_rows_are_unit_norm_after_training() {
        let triples: Vec<KgTriple> = (1..5)
            .map(|i| KgTriple {
                head: i,
                relation: i % 2,
                tail: (i + 1) % 5,
            })
            .collect();
        let cfg = TransEConfig {
            epochs: 7,
            ..TransEConfig::default()
        };
        let kg: KgEmbeddings<f64> = transe_pretrain(&triples, 5, 2, &cfg, 1).unwrap();
        for e in 0..5 {
            assert!((crate::linalg::norm(kg.entity_vectors.row(e)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let kg: KgEmbeddings<f64> = KgEmbeddings::init(3, 2, 5, 77);
        let mut buf = Vec::new();
        kg.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 8 * 5 * 5);
        assert_eq!(&buf[..4], b"KGEM");
        assert_eq!(KgEmbeddings::<f64>::read(&buf[..]).unwrap(), kg);
        buf.push(0);
        assert!(KgEmbeddings::<f64>::read(&buf[..]).is_err());
    }

    #[test]
    fn score_reports_missing_rows() {
        let kg: KgEmbeddings<f64> = KgEmbeddings::init(3, 2, 5, 77);
        assert!(kg.score(0, 1, 2).is_ok());
        assert!(kg.score(3, 1, 2).is_err());
        assert!(kg.score(0, 2, 2).is_err());
    }
}
