//! One-hidden-layer softmax extractors trained on confidence-damped losses.
//!
//! The output layer doubles as the type table: row `k` of the output weights
//! is the learned vector of type `k`, so extracted and DS type vectors are
//! read straight out of the classifier.
//!
//! # Checkpoint layout
//!
//! ```text
//! magic b"EXTR" | u32 version | u8 kind | u32 input | u32 hidden | u32 classes
//! | u32 d_s | u64 salt | u64 seed | params as f64 (W1, b1, type table, b2)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::corpus::{Instance, TypeId, TypeOntology};
use crate::embeddings::{FeatureConfig, InstanceFeatures};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{softmax_in_place, Real};

const MAGIC: &[u8; 4] = b"EXTR";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Entity,
    Relation,
}

impl ExtractorKind {
    fn code(self) -> u8 {
        match self {
            Self::Entity => 0,
            Self::Relation => 1,
        }
    }

    /// Input width for sentence dimension `d_s`.
    pub fn input_dim(self, d_s: usize) -> usize {
        match self {
            Self::Entity => 2 * d_s,
            Self::Relation => 3 * d_s,
        }
    }

    pub fn num_classes(self, ontology: &TypeOntology) -> usize {
        match self {
            Self::Entity => ontology.num_entity_types(),
            Self::Relation => ontology.num_relation_types(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_exp: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub batch_size: usize,
    /// Cosine-annealing period in steps; 0 keeps the rate at `lr_max`.
    pub period: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_exp: 2.0,
            lr_min: 1e-4,
            lr_max: 1e-2,
            batch_size: 64,
            period: 1000,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_exp >= 0.0 && self.lambda_exp.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_exp must be >= 0, got {}",
                self.lambda_exp
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Cosine-annealed rate; steps past the period stay at `lr_min`.
    pub fn lr(&self, step: usize) -> f64 {
        cosine_lr(self.lr_min, self.lr_max, step, self.period)
    }

    /// `C^λ`.
    pub fn damping<T: Real>(&self, confidence: T) -> T {
        confidence.powf(T::of(self.lambda_exp))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub hidden: usize,
    pub features: FeatureConfig,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            features: FeatureConfig::default(),
        }
    }
}

/// One classification: argmax label, class probabilities and the type-table
/// row of the label.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassOutput<T> {
    pub label: TypeId,
    pub probs: Vec<T>,
    pub type_vector: Vec<T>,
}

/// Entity models emit `[head, tail]`; relation models a single output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub outputs: Vec<ClassOutput<T>>,
}

impl<T> Prediction<T> {
    pub fn labels(&self) -> Vec<TypeId> {
        self.outputs.iter().map(|o| o.label).collect()
    }
}

/// Damped training example.
#[derive(Clone, Copy, Debug)]
pub struct TrainExample<'a, T> {
    pub input: &'a [T],
    pub label: TypeId,
    pub confidence: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorModel<T> {
    kind: ExtractorKind,
    input: usize,
    hidden: usize,
    classes: usize,
    features: FeatureConfig,
    seed: u64,
    params: Vec<T>,
}

impl<T: Real> ExtractorModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(kind: ExtractorKind, ontology: &TypeOntology, cfg: &ExtractorConfig, seed: u64) -> Result<Self> {
        if cfg.hidden == 0 {
            return Err(Error::Config("extractor hidden size must be positive".into()));
        }
        let input = kind.input_dim(cfg.features.d_s);
        let classes = kind.num_classes(ontology);
        let hidden = cfg.hidden;
        let mut m = Self {
            kind,
            input,
            hidden,
            classes,
            features: cfg.features,
            seed,
            params: vec![T::zero(); hidden * input + hidden + classes * hidden + classes],
        };
        let mut rng = rng::stream(seed, 0xE7 + kind.code() as u64);
        let b1 = (6.0 / (input + hidden) as f64).sqrt();
        let b2 = (6.0 / (hidden + classes) as f64).sqrt();
        let (w1, _, tt, _) = m.split_mut();
        for w in w1 {
            *w = T::of(rng.random_range(-b1..b1));
        }
        for w in tt {
            *w = T::of(rng.random_range(-b2..b2));
        }
        Ok(m)
    }

    pub fn kind(&self) -> ExtractorKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    /// Width of a type vector.
    pub fn type_dim(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn type_vector(&self, id: TypeId) -> &[T] {
        let start = self.hidden * self.input + self.hidden + id * self.hidden;
        &self.params[start..start + self.hidden]
    }

    fn split(&self) -> (&[T], &[T], &[T], &[T]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (tt, b2) = rest.split_at(self.classes * self.hidden);
        (w1, b1, tt, b2)
    }

    fn split_mut(&mut self) -> (&mut [T], &mut [T], &mut [T], &mut [T]) {
        let (w1, rest) = self.params.split_at_mut(self.hidden * self.input);
        let (b1, rest) = rest.split_at_mut(self.hidden);
        let (tt, b2) = rest.split_at_mut(self.classes * self.hidden);
        (w1, b1, tt, b2)
    }

    /// Model inputs for one instance: one per mention for entity models, one
    /// per sentence for relation models.
    pub fn inputs(&self, f: &InstanceFeatures<T>) -> Vec<Vec<T>> {
        match self.kind {
            ExtractorKind::Entity => vec![
                [f.sentence.as_slice(), &f.head].concat(),
                [f.sentence.as_slice(), &f.tail].concat(),
            ],
            ExtractorKind::Relation => vec![[f.sentence.as_slice(), &f.head, &f.tail].concat()],
        }
    }

    fn forward(&self, x: &[T], h: &mut [T], z: &mut [T]) {
        let (w1, b1, tt, b2) = self.split();
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let a = row.iter().zip(x).fold(b1[j], |acc, (&w, &v)| acc + w * v);
            h[j] = a.tanh();
        }
        for k in 0..self.classes {
            let row = &tt[k * self.hidden..(k + 1) * self.hidden];
            z[k] = row.iter().zip(h.iter()).fold(b2[k], |acc, (&w, &v)| acc + w * v);
        }
    }

    /// Class probabilities for one model input.
    pub fn probabilities(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input {
            return Err(Error::Dimension {
                context: "extractor input",
                expected: self.input,
                got: x.len(),
            });
        }
        let mut h = vec![T::zero(); self.hidden];
        let mut z = vec![T::zero(); self.classes];
        self.forward(x, &mut h, &mut z);
        softmax_in_place(&mut z);
        Ok(z)
    }

    pub fn classify(&self, x: &[T]) -> Result<ClassOutput<T>> {
        let probs = self.probabilities(x)?;
        let label = argmax(&probs);
        Ok(ClassOutput {
            label,
            type_vector: self.type_vector(label).to_vec(),
            probs,
        })
    }

    pub fn predict(&self, f: &InstanceFeatures<T>) -> Result<Prediction<T>> {
        let outputs = self
            .inputs(f)
            .iter()
            .map(|x| self.classify(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction { outputs })
    }

    /// Featurizes and predicts in one call.
    pub fn predict_instance(&self, instance: &Instance) -> Result<Prediction<T>> {
        self.predict(&InstanceFeatures::compute(instance, &self.features)?)
    }

    /// Mean damped loss `(1/n) Σ C^λ·ℓ` and its gradient w.r.t. the flat
    /// parameter vector.
    pub fn loss_and_grad(&self, batch: &[TrainExample<'_, T>], lambda_exp: f64) -> Result<(T, Vec<T>)> {
        let mut grad = vec![T::zero(); self.params.len()];
        if batch.is_empty() {
            return Ok((T::zero(), grad));
        }
        let n = T::of_usize(batch.len());
        let lam = T::of(lambda_exp);
        let mut h = vec![T::zero(); self.hidden];
        let mut z = vec![T::zero(); self.classes];
        let mut dh = vec![T::zero(); self.hidden];
        let mut total = T::zero();
        let (_, _, tt, _) = self.split();
        let (o_b1, o_tt) = (self.hidden * self.input, self.hidden * self.input + self.hidden);
        let o_b2 = o_tt + self.classes * self.hidden;
        for ex in batch {
            if ex.input.len() != self.input {
                return Err(Error::Dimension {
                    context: "extractor input",
                    expected: self.input,
                    got: ex.input.len(),
                });
            }
            if ex.label >= self.classes {
                return Err(Error::OutOfRange(format!(
                    "label {} >= {} classes",
                    ex.label, self.classes
                )));
            }
            if !(ex.confidence >= T::zero() && ex.confidence <= T::one()) {
                return Err(Error::OutOfRange(format!(
                    "confidence {} outside [0, 1]",
                    ex.confidence
                )));
            }
            let scale = ex.confidence.powf(lam);
            self.forward(ex.input, &mut h, &mut z);
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += scale * (lse - z[ex.label]);
            if scale == T::zero() {
                continue;
            }
            let s = scale / n;
            dh.iter_mut().for_each(|v| *v = T::zero());
            for k in 0..self.classes {
                let p = (z[k] - lse).exp();
                let dz = s * (p - if k == ex.label { T::one() } else { T::zero() });
                grad[o_b2 + k] += dz;
                let row = &mut grad[o_tt + k * self.hidden..o_tt + (k + 1) * self.hidden];
                for j in 0..self.hidden {
                    row[j] += dz * h[j];
                    dh[j] += dz * tt[k * self.hidden + j];
                }
            }
            for j in 0..self.hidden {
                let da = dh[j] * (T::one() - h[j] * h[j]);
                grad[o_b1 + j] += da;
                let row = &mut grad[j * self.input..(j + 1) * self.input];
                for (g, &x) in row.iter_mut().zip(ex.input) {
                    *g += da * x;
                }
            }
        }
        Ok((total / n, grad))
    }

    /// One SGD step at the cosine-annealed rate for `step`; returns the mean
    /// damped loss before the update.
    pub fn train_step(&mut self, batch: &[TrainExample<'_, T>], cfg: &LossConfig, step: usize) -> Result<T> {
        let (loss, grad) = self.loss_and_grad(batch, cfg.lambda_exp)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "{:?} extractor loss at step {step} (batch of {})",
                self.kind,
                batch.len()
            )));
        }
        let lr = T::of(cfg.lr(step));
        for (p, g) in self.params.iter_mut().zip(&grad) {
            *p -= lr * *g;
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{:?} extractor update at step {step}",
                self.kind
            )));
        }
        Ok(loss)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer(w);
        w.magic(MAGIC, VERSION)?;
        w.u8(self.kind.code())?;
        w.u32(self.input as u32)?;
        w.u32(self.hidden as u32)?;
        w.u32(self.classes as u32)?;
        w.u32(self.features.d_s as u32)?;
        w.u64(self.features.salt)?;
        w.u64(self.seed)?;
        w.reals(&self.params)?;
        w.0.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(MAGIC, VERSION)?;
        let kind = match r.u8()? {
            0 => ExtractorKind::Entity,
            1 => ExtractorKind::Relation,
            k => return Err(Error::Checkpoint(format!("unknown extractor kind {k}"))),
        };
        let input = r.dim(1 << 20)?;
        let hidden = r.dim(1 << 16)?;
        let classes = r.dim(1 << 16)?;
        let d_s = r.dim(1 << 20)?;
        if kind.input_dim(d_s) != input {
            return Err(Error::Checkpoint(format!(
                "input width {input} inconsistent with d_s {d_s}"
            )));
        }
        let salt = r.u64()?;
        let seed = r.u64()?;
        let params = r.reals(hidden * input + hidden + classes * hidden + classes)?;
        r.expect_eof()?;
        Ok(Self {
            kind,
            input,
            hidden,
            classes,
            features: FeatureConfig { d_s, salt },
            seed,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// `min + ½(max − min)(1 + cos(π·t/period))` with `t` capped at the period;
/// a zero period stays at `max`.
pub fn cosine_lr(min: f64, max: f64, step: usize, period: usize) -> f64 {
    if period == 0 {
        return max;
    }
    let t = step.min(period) as f64 / period as f64;
    min + 0.5 * (max - min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// First index of the maximum.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: ExtractorKind) -> ExtractorModel<f64> {
        let ont = TypeOntology::synthetic(4, 3);
        let cfg = ExtractorConfig {
            hidden: 6,
            features: FeatureConfig { d_s: 8, salt: 1 },
        };
        ExtractorModel::new(kind, &ont, &cfg, 9).unwrap()
    }

    fn inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, 0);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut m = model(ExtractorKind::Relation);
        m.params_mut().fill(0.0);
        let p = m.probabilities(&vec![0.3; m.input_dim()]).unwrap();
        for v in p {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = model(ExtractorKind::Entity);
        for x in inputs(20, m.input_dim(), 2) {
            let s: f64 = m.probabilities(&x).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = LossConfig {
            period: 100,
            ..LossConfig::default()
        };
        assert_eq!(cfg.lr(0), 1e-2);
        assert!((cfg.lr(50) - (1e-2 + 1e-4) / 2.0).abs() < 1e-12);
        assert!((cfg.lr(100) - 1e-4).abs() < 1e-15);
        assert!((cfg.lr(1000) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_confidence_leaves_parameters_unchanged() {
        let mut m = model(ExtractorKind::Relation);
        let before = m.clone();
        let xs = inputs(4, m.input_dim(), 3);
        let batch: Vec<_> = xs
            .iter()
            .map(|x| TrainExample {
                input: x,
                label: 1,
                confidence: 0.0,
            })
            .collect();
        let loss = m.train_step(&batch, &LossConfig::default(), 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = model(ExtractorKind::Entity);
        let xs = inputs(5, m.input_dim(), 4);
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| TrainExample {
                input: x,
                label: i % 4,
                confidence: 0.3 + 0.1 * i as f64,
            })
            .collect();
        let (_, g) = m.loss_and_grad(&batch, 2.0).unwrap();
        let eps = 1e-6;
        for &c in &[0, 7, m.params().len() - 1, m.params().len() - 10] {
            let mut p = m.clone();
            p.params_mut()[c] += eps;
            let up = p.loss_and_grad(&batch, 2.0).unwrap().0;
            p.params_mut()[c] -= 2.0 * eps;
            let down = p.loss_and_grad(&batch, 2.0).unwrap().0;
            let fd = (up - down) / (2.0 * eps);
            assert!(
                (fd - g[c]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "coord {c}: {fd} vs {}",
                g[c]
            );
        }
    }

    #[test]
    fn clone_is_deep() {
        let m = model(ExtractorKind::Relation);
        let mut c = m.clone();
        assert_eq!(c.clone(), c);
        let xs = inputs(3, m.input_dim(), 5);
        let batch: Vec<_> = xs
            .iter()
            .map(|x| TrainExample {
                input: x,
                label: 2,
                confidence: 1.0,
            })
            .collect();
        c.train_step(&batch, &LossConfig::default(), 0).unwrap();
        assert_ne!(c, m);
        assert_eq!(m, model(ExtractorKind::Relation));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let m = model(ExtractorKind::Entity);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(ExtractorModel::<f64>::read(&buf[..]).unwrap(), m);
        buf[4] = 9;
        assert!(ExtractorModel::<f64>::read(&buf[..]).is_err());
    }

    #[test]
    fn rejects_bad_examples() {
        let mut m = model(ExtractorKind::Relation);
        let x = vec![0.0; m.input_dim()];
        let bad_label = [TrainExample {
            input: &x[..],
            label: 4,
            confidence: 1.0,
        }];
        assert!(m.train_step(&bad_label, &LossConfig::default(), 0).is_err());
        let bad_c = [TrainExample {
            input: &x[..],
            label: 0,
            confidence: 1.5,
        }];
        assert!(m.train_step(&bad_c, &LossConfig::default(), 0).is_err());
    }
}
