//! Count-based n-gram language model with add-k or interpolated smoothing.
//! Provides the perplexity scores behind the word-filtering defense and the
//! data-quality report.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::word_tokens;

pub const UNK: &str = "<unk>";
const BOS: u32 = u32::MAX; // context-only padding symbol, never an event

#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    /// Additive smoothing with pseudo-count k over the event vocabulary.
    AddK(f64),
    /// Linear interpolation of orders 1..=n with the given weights
    /// (low order first, must sum to 1). The unigram component is add-1
    /// smoothed so every event keeps positive mass.
    Interpolated(Vec<f64>),
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    events: HashMap<u32, u64>,
    total: u64,
}

#[derive(Debug, Clone)]
pub struct NgramLM {
    order: usize,
    smoothing: Smoothing,
    vocab: HashMap<String, u32>,
    vocab_names: Vec<String>,
    // counts[i] holds (i+1)-gram tables keyed by context of length i
    counts: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl NgramLM {
    /// Fits count tables over the corpus. Sentences are padded with
    /// begin-of-sentence context symbols; events are word tokens plus UNK.
    pub fn fit(corpus: &[String], order: usize, smoothing: Smoothing) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("empty corpus".into()));
        }
        if order < 1 {
            return Err(Error::Domain("order must be >= 1".into()));
        }
        if let Smoothing::Interpolated(lambdas) = &smoothing {
            if lambdas.len() != order {
                return Err(Error::Domain(format!(
                    "interpolation needs {order} weights, got {}",
                    lambdas.len()
                )));
            }
            let sum: f64 = lambdas.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || lambdas.iter().any(|&l| l < 0.0) {
                return Err(Error::Domain("interpolation weights must be a distribution".into()));
            }
        }
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut vocab_names: Vec<String> = Vec::new();
        vocab.insert(UNK.to_string(), 0);
        vocab_names.push(UNK.to_string());
        let mut sentences: Vec<Vec<u32>> = Vec::new();
        for line in corpus {
            let mut ids = Vec::new();
            for w in word_tokens(line) {
                let next = vocab_names.len() as u32;
                let id = *vocab.entry(w.clone()).or_insert_with(|| {
                    vocab_names.push(w.clone());
                    next
                });
                ids.push(id);
            }
            if !ids.is_empty() {
                sentences.push(ids);
            }
        }
        if sentences.is_empty() {
            return Err(Error::EmptyInput("corpus has no word tokens".into()));
        }
        let mut counts: Vec<HashMap<Vec<u32>, ContextCounts>> =
            (0..order).map(|_| HashMap::new()).collect();
        for ids in &sentences {
            let mut padded = vec![BOS; order - 1];
            padded.extend_from_slice(ids);
            for pos in (order - 1)..padded.len() {
                let event = padded[pos];
                for ctx_len in 0..order {
                    let ctx = padded[pos - ctx_len..pos].to_vec();
                    let slot = counts[ctx_len].entry(ctx).or_default();
                    *slot.events.entry(event).or_insert(0) += 1;
                    slot.total += 1;
                }
            }
        }
        Ok(NgramLM {
            order,
            smoothing,
            vocab,
            vocab_names,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Event vocabulary size (corpus words plus UNK).
    pub fn vocab_size(&self) -> usize {
        self.vocab_names.len()
    }

    fn id_of(&self, word: &str) -> u32 {
        *self.vocab.get(word).unwrap_or(&0)
    }

    /// P(event | context) under the configured smoothing. Context is the
    /// most recent order-1 ids, oldest first.
    fn prob(&self, context: &[u32], event: u32) -> f64 {
        let v = self.vocab_size() as f64;
        match &self.smoothing {
            Smoothing::AddK(k) => {
                let slot = self.counts[context.len()].get(context);
                let (c, total) = match slot {
                    Some(s) => (*s.events.get(&event).unwrap_or(&0) as f64, s.total as f64),
                    None => (0.0, 0.0),
                };
                let denom = total + k * v;
                if denom == 0.0 {
                    // unseen context with no smoothing mass: fall back to uniform
                    return 1.0 / v;
                }
                (c + k) / denom
            }
            Smoothing::Interpolated(lambdas) => {
                // renormalize weights over components whose context was seen
                // so per-context distributions stay proper
                let mut num = 0.0;
                let mut weight_seen = 0.0;
                for (i, &lambda) in lambdas.iter().enumerate() {
                    if i > context.len() {
                        continue;
                    }
                    let ctx = &context[context.len() - i..];
                    if i == 0 {
                        // add-1 unigram floor keeps every event positive
                        let slot = self.counts[0].get(&Vec::new()).expect("unigram table");
                        let c = *slot.events.get(&event).unwrap_or(&0) as f64;
                        num += lambda * (c + 1.0) / (slot.total as f64 + v);
                        weight_seen += lambda;
                    } else if let Some(slot) = self.counts[i].get(ctx) {
                        let c = *slot.events.get(&event).unwrap_or(&0) as f64;
                        num += lambda * c / slot.total as f64;
                        weight_seen += lambda;
                    }
                }
                num / weight_seen
            }
        }
    }

    /// Per-token probabilities for a text, unknown words mapped to UNK.
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        let words = word_tokens(text);
        if words.is_empty() {
            return Err(Error::EmptyInput("perplexity of empty text".into()));
        }
        let mut padded = vec![BOS; self.order - 1];
        padded.extend(words.iter().map(|w| self.id_of(w)));
        let mut out = Vec::with_capacity(words.len());
        for pos in (self.order - 1)..padded.len() {
            let ctx = &padded[pos - (self.order - 1)..pos];
            out.push(self.prob(ctx, padded[pos]).ln());
        }
        Ok(out)
    }

    /// exp of mean negative log-probability per token.
    pub fn perplexity(&self, text: &str) -> Result<f64> {
        let lp = self.token_logprobs(text)?;
        let mean = lp.iter().sum::<f64>() / lp.len() as f64;
        Ok((-mean).exp())
    }

    /// Count tables as JSON for inspection; deterministic key order.
    pub fn dump_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Dump<'a> {
            order: usize,
            vocab: &'a [String],
            tables: Vec<BTreeMap<String, BTreeMap<String, u64>>>,
        }
        let name = |id: u32| -> String {
            if id == BOS {
                "<s>".to_string()
            } else {
                self.vocab_names[id as usize].clone()
            }
        };
        let tables = self
            .counts
            .iter()
            .map(|table| {
                table
                    .iter()
                    .map(|(ctx, slot)| {
                        let key = ctx.iter().map(|&id| name(id)).collect::<Vec<_>>().join(" ");
                        let events = slot
                            .events
                            .iter()
                            .map(|(&e, &c)| (name(e), c))
                            .collect::<BTreeMap<_, _>>();
                        (key, events)
                    })
                    .collect()
            })
            .collect();
        serde_json::to_value(Dump {
            order: self.order,
            vocab: &self.vocab_names,
            tables,
        })
        .expect("dump serializes")
    }

    /// Sum of P(event | context) over the whole event vocabulary, used by
    /// normalization tests.
    pub fn context_mass(&self, context_words: &[&str]) -> f64 {
        let ctx: Vec<u32> = context_words
            .iter()
            .map(|w| if *w == "<s>" { BOS } else { self.id_of(w) })
            .collect();
        (0..self.vocab_size() as u32).map(|e| self.prob(&ctx, e)).sum()
    }
}


/// Interpolation weights favoring higher orders, used as the fitted default.
pub fn default_interpolation(order: usize) -> Smoothing {
    let lambdas = match order {
        1 => vec![1.0],
        2 => vec![0.3, 0.7],
        _ => {
            let mut v = vec![0.0; order];
            v[0] = 0.2;
            v[1] = 0.3;
            v[2] = 0.5;
            v
        }
    };
    Smoothing::Interpolated(lambdas)
}
