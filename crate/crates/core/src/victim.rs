//! Hashed bag-of-n-grams softmax classifier standing in for a fine-tuned
//! language model, trained with mini-batch gradient descent under a
//! warmup + cosine-annealing learning-rate schedule.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSpace};
use crate::error::{Error, Result};
use crate::text::word_tokens;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Hashed word n-gram featurizer. The hash is 64-bit FNV-1a over the n-gram
/// string reduced modulo the (power-of-two) dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHasher {
    pub dimension: usize,
    pub ngram_orders: Vec<usize>,
    pub lowercase: bool,
}

impl FeatureHasher {
    pub fn new(dimension: usize, ngram_orders: Vec<usize>, lowercase: bool) -> Result<Self> {
        if dimension < 2 || !dimension.is_power_of_two() {
            return Err(Error::Contract(format!(
                "hash dimension must be a power of two >= 2, got {dimension}"
            )));
        }
        if ngram_orders.is_empty() || ngram_orders.contains(&0) {
            return Err(Error::Contract("ngram orders must be non-empty positive".into()));
        }
        Ok(FeatureHasher {
            dimension,
            ngram_orders,
            lowercase,
        })
    }
}

impl Default for FeatureHasher {
    fn default() -> Self {
        FeatureHasher {
            dimension: 1 << 18,
            ngram_orders: vec![1, 2],
            lowercase: true,
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Sparse counts of hashed word n-grams, sorted by bucket.
pub fn featurize(text: &str, h: &FeatureHasher) -> Vec<(usize, f64)> {
    let mut tokens = word_tokens(text);
    if !h.lowercase {
        // word_tokens lowercases; recover original-case words
        tokens = crate::text::tokenize(text)
            .into_iter()
            .filter(|t| t.text.chars().any(|c| c.is_alphanumeric()))
            .map(|t| t.text)
            .collect();
    }
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for &order in &h.ngram_orders {
        if tokens.len() < order {
            continue;
        }
        for window in tokens.windows(order) {
            let gram = window.join("_");
            let bucket = (fnv1a64(gram.as_bytes()) % h.dimension as u64) as usize;
            *counts.entry(bucket).or_insert(0.0) += 1.0;
        }
    }
    let mut out: Vec<(usize, f64)> = counts.into_iter().collect();
    out.sort_unstable_by_key(|&(b, _)| b);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_ratio: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            eta_max: 5.0e-4,
            eta_min: 0.0,
            warmup_ratio: 0.1,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Contract("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Contract("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Contract("warmup_ratio must be in [0, 1)".into()));
        }
        if self.eta_min > self.eta_max {
            return Err(Error::Contract("eta_min must not exceed eta_max".into()));
        }
        Ok(())
    }
}

/// Learning rate at progress `t_cur` of a period `t_i`: linear warmup over
/// the first `warmup_ratio` fraction, then cosine annealing from eta_max to
/// eta_min with progress measured from the end of warmup.
pub fn schedule_lr(t_cur: f64, t_i: f64, cfg: &TrainConfig) -> Result<f64> {
    if !(0.0..=t_i).contains(&t_cur) || t_i <= 0.0 {
        return Err(Error::Domain(format!(
            "t_cur={t_cur} outside [0, {t_i}]"
        )));
    }
    let warm = cfg.warmup_ratio * t_i;
    if t_cur < warm {
        return Ok(cfg.eta_max * t_cur / warm);
    }
    let frac = if t_i == warm { 0.0 } else { (t_cur - warm) / (t_i - warm) };
    Ok(cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub hasher: FeatureHasher,
    pub label_space: LabelSpace,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy loss and its gradient for one sample under a dense weight
/// view; used by training and by the finite-difference checks.
pub fn ce_loss_and_grad(
    weights: &[Vec<f64>],
    bias: &[f64],
    features: &[(usize, f64)],
    label: usize,
) -> (f64, Vec<Vec<(usize, f64)>>, Vec<f64>) {
    let num_labels = weights.len();
    let logits: Vec<f64> = (0..num_labels)
        .map(|c| {
            bias[c]
                + features
                    .iter()
                    .map(|&(f, x)| weights[c][f] * x)
                    .sum::<f64>()
        })
        .collect();
    let probs = softmax(&logits);
    let loss = -(probs[label].max(1e-300)).ln();
    let mut grad_w = vec![Vec::with_capacity(features.len()); num_labels];
    let mut grad_b = vec![0.0; num_labels];
    for c in 0..num_labels {
        let delta = probs[c] - if c == label { 1.0 } else { 0.0 };
        grad_b[c] = delta;
        for &(f, x) in features {
            grad_w[c].push((f, delta * x));
        }
    }
    (loss, grad_w, grad_b)
}

impl VictimModel {
    /// Mean cross-entropy loss over a dataset.
    pub fn mean_loss(&self, d: &Dataset) -> Result<f64> {
        if d.is_empty() {
            return Err(Error::EmptyInput("loss over empty dataset".into()));
        }
        let mut total = 0.0;
        for s in &d.samples {
            let feats = featurize(&s.text, &self.hasher);
            let (loss, _, _) = ce_loss_and_grad(&self.weights, &self.bias, &feats, s.label);
            total += loss;
        }
        Ok(total / d.len() as f64)
    }

    /// Argmax prediction with per-class softmax scores; ties break toward
    /// the lower label index.
    pub fn predict(&self, text: &str) -> (usize, Vec<f64>) {
        let feats = featurize(text, &self.hasher);
        let logits: Vec<f64> = (0..self.weights.len())
            .map(|c| {
                self.bias[c]
                    + feats
                        .iter()
                        .map(|&(f, x)| self.weights[c][f] * x)
                        .sum::<f64>()
            })
            .collect();
        let scores = softmax(&logits);
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        (best, scores)
    }
}

/// Trains softmax regression by seeded mini-batch gradient descent on the
/// empirical mean cross-entropy.
pub fn train(d_train: &Dataset, hasher: &FeatureHasher, cfg: &TrainConfig) -> Result<VictimModel> {
    train_with_history(d_train, hasher, cfg).map(|(m, _)| m)
}

/// As `train`, also returning the full-dataset mean loss after each epoch.
pub fn train_with_history(
    d_train: &Dataset,
    hasher: &FeatureHasher,
    cfg: &TrainConfig,
) -> Result<(VictimModel, Vec<f64>)> {
    cfg.validate()?;
    if d_train.is_empty() {
        return Err(Error::EmptyInput("training on empty dataset".into()));
    }
    let mut present: Vec<bool> = vec![false; d_train.label_space.len()];
    for s in &d_train.samples {
        present[s.label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Contract("training data must contain >= 2 classes".into()));
    }
    let num_labels = d_train.label_space.len();
    let features: Vec<Vec<(usize, f64)>> = d_train
        .samples
        .iter()
        .map(|s| featurize(&s.text, hasher))
        .collect();
    let mut weights = vec![vec![0.0; hasher.dimension]; num_labels];
    let mut bias = vec![0.0; num_labels];
    let n = d_train.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let lr = schedule_lr(step as f64, total_steps, cfg)?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad_acc: Vec<HashMap<usize, f64>> = vec![HashMap::new(); num_labels];
            let mut grad_bias = vec![0.0; num_labels];
            for &i in batch {
                let s = &d_train.samples[i];
                let (_, grad_w, grad_b) =
                    ce_loss_and_grad(&weights, &bias, &features[i], s.label);
                for c in 0..num_labels {
                    grad_bias[c] += grad_b[c];
                    for (f, g) in &grad_w[c] {
                        *grad_acc[c].entry(*f).or_insert(0.0) += g;
                    }
                }
            }
            for c in 0..num_labels {
                bias[c] -= lr * scale * grad_bias[c];
                for (&f, &g) in &grad_acc[c] {
                    weights[c][f] -= lr * scale * g;
                }
                if cfg.l2 > 0.0 {
                    for w in &mut weights[c] {
                        *w -= lr * cfg.l2 * *w;
                    }
                }
            }
            step += 1;
        }
        let mut total = 0.0;
        for (i, s) in d_train.samples.iter().enumerate() {
            let (loss, _, _) = ce_loss_and_grad(&weights, &bias, &features[i], s.label);
            total += loss;
        }
        history.push(total / n as f64);
    }
    Ok((
        VictimModel {
            weights,
            bias,
            hasher: hasher.clone(),
            label_space: d_train.label_space.clone(),
        },
        history,
    ))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: VictimModel,
}

pub fn save_model(m: &VictimModel, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: m.clone(),
    };
    let bytes = serde_json::to_vec(&file).expect("model serializes");
    crate::util::write_atomic(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VictimModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    // peek at the version before strict decoding
    #[derive(Deserialize)]
    struct VersionOnly {
        format_version: u32,
    }
    let version: VersionOnly =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    if version.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    Ok(file.model)
}
