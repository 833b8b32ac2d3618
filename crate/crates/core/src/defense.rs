//! Test-time defenses: perplexity-based word filtering, syntactic structure
//! alteration, and back-translation paraphrasing (client contract).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::detect::{detect_syntactic_template, Lexicons};
use crate::error::{Error, Result};
use crate::ngram_lm::NgramLM;
use crate::text::{split_sentences, tokenize, word_tokens};

/// Word-filtering defense configuration. Suspicion for word i is
/// f_i = PPL(text) - PPL(text without word i); words above the threshold are
/// removed greedily, highest suspicion first, recomputing after each removal.
#[derive(Debug, Clone)]
pub struct OnionConfig<'a> {
    pub lm: &'a NgramLM,
    pub threshold: f64,
    pub max_removals: usize,
}

impl<'a> OnionConfig<'a> {
    pub fn new(lm: &'a NgramLM, threshold: f64) -> Self {
        OnionConfig {
            lm,
            threshold,
            max_removals: 3,
        }
    }
}

/// Threshold calibration: the given percentile of per-word suspicion scores
/// over a clean dataset (0.99 is the shipped default).
pub fn calibrate_onion_threshold(lm: &NgramLM, clean: &Dataset, percentile: f64) -> Result<f64> {
    if clean.is_empty() {
        return Err(Error::EmptyInput("calibration needs a non-empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&percentile) {
        return Err(Error::Domain(format!("percentile {percentile} outside [0,1]")));
    }
    let mut scores = Vec::new();
    for s in &clean.samples {
        scores.extend(suspicion_scores(&s.text, lm));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scorable words in calibration set".into()));
    }
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((scores.len() as f64 - 1.0) * percentile).round() as usize;
    Ok(scores[idx])
}

fn ppl_or_inf(lm: &NgramLM, text: &str) -> f64 {
    lm.perplexity(text).unwrap_or(f64::INFINITY)
}

/// Suspicion score per whitespace word; words whose removal would leave no
/// scorable text get -inf so they are never picked.
fn suspicion_scores(text: &str, lm: &NgramLM) -> Vec<f64> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= 1 {
        return Vec::new();
    }
    let base = ppl_or_inf(lm, text);
    (0..words.len())
        .map(|i| {
            let rest: Vec<&str> = words
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, w)| *w)
                .collect();
            let remainder = rest.join(" ");
            if word_tokens(&remainder).is_empty() {
                return f64::NEG_INFINITY;
            }
            base - ppl_or_inf(lm, &remainder)
        })
        .collect()
}

/// Greedy suspicious-word removal. Returns the filtered text and the words
/// removed, in removal order. A single-word text is never touched.
pub fn onion_filter(text: &str, cfg: &OnionConfig) -> (String, Vec<String>) {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let mut removed = Vec::new();
    for _ in 0..cfg.max_removals {
        if words.len() <= 1 {
            break;
        }
        let current = words.join(" ");
        let scores = suspicion_scores(&current, cfg.lm);
        let best = scores
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_finite())
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap());
        match best {
            Some((i, &f)) if f > cfg.threshold => {
                removed.push(words.remove(i));
            }
            _ => break,
        }
    }
    (words.join(" "), removed)
}

/// Rewrites template-shaped sentences toward a plain subject-verb shape:
/// the leading subordinate clause and its boundary are dropped and the first
/// consequence modal in the main clause is deleted. Applied to a fixpoint,
/// so the operation is idempotent. Non-matching text is returned unchanged.
pub fn syntactic_alteration(text: &str, lex: &Lexicons) -> String {
    let ranges = split_sentences(text);
    if ranges.is_empty() {
        return text.to_string();
    }
    let mut out: Vec<String> = Vec::with_capacity(ranges.len());
    for r in ranges {
        out.push(alter_sentence(text[r].trim(), lex));
    }
    let joined = out.join(" ");
    if joined.trim().is_empty() {
        text.to_string()
    } else {
        joined
    }
}

fn alter_sentence(sentence: &str, lex: &Lexicons) -> String {
    let mut current = sentence.to_string();
    loop {
        let (matched, evidence) = detect_syntactic_template(&current, lex);
        if !matched {
            return current;
        }
        let boundary = evidence
            .iter()
            .find(|e| e.rule == "clause-boundary")
            .expect("matched template has a boundary");
        let main = current[boundary.span.end..].trim_start().to_string();
        let next = drop_first_consequence_modal(&main, lex);
        if next.trim().is_empty() || next == current {
            return current;
        }
        current = next;
    }
}

fn drop_first_consequence_modal(clause: &str, lex: &Lexicons) -> String {
    for tok in tokenize(clause) {
        if lex.consequence.contains(&tok.lower()) {
            let mut s = String::new();
            s.push_str(clause[..tok.span.start].trim_end());
            let tail = clause[tok.span.end..].trim_start();
            if !s.is_empty() && !tail.is_empty() {
                s.push(' ');
            }
            s.push_str(tail);
            return s;
        }
    }
    clause.to_string()
}

/// Back-translation endpoint: POST {"text": ...} returns {"text": ...}.
#[derive(Debug, Clone)]
pub struct BackTranslationClient {
    pub base_url: String,
    pub timeout: Duration,
}

impl BackTranslationClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        BackTranslationClient {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn translate(&self, text: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Req<'a> {
            text: &'a str,
        }
        #[derive(Deserialize)]
        struct Resp {
            text: String,
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        client
            .post(&self.base_url)
            .json(&Req { text })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json::<Resp>())
            .map(|r| r.text)
            .map_err(|e| Error::Transport(format!("back-translation of {text:?} failed: {e}")))
    }
}

/// Round-trip paraphrase through the external service; identity with a
/// warning flag when no endpoint is configured.
pub fn back_translate(text: &str, client: Option<&BackTranslationClient>) -> Result<(String, bool)> {
    match client {
        None => Ok((text.to_string(), true)),
        Some(c) => c.translate(text).map(|t| (t, false)),
    }
}

#[derive(Debug, Clone)]
pub enum Defense<'a> {
    Onion(OnionConfig<'a>),
    SyntacticAlteration(&'a Lexicons),
    BackTranslation(Option<&'a BackTranslationClient>),
}

impl Defense<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Defense::Onion(_) => "onion",
            Defense::SyntacticAlteration(_) => "syntactic_alteration",
            Defense::BackTranslation(_) => "back_translation",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseEntry {
    pub id: String,
    pub before: String,
    pub after: String,
    pub removed: Vec<String>,
    pub error: Option<String>,
    pub warning: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseReport {
    pub defense: String,
    pub entries: Vec<DefenseEntry>,
}

impl DefenseReport {
    pub fn modified(&self) -> usize {
        self.entries.iter().filter(|e| e.before != e.after).count()
    }
}

/// Applies the defense to every sample text, preserving ids and labels.
/// Per-sample failures keep the original text and are recorded, never
/// aborting the batch.
pub fn defend_dataset(d: &Dataset, defense: &Defense) -> (Dataset, DefenseReport) {
    let mut samples = Vec::with_capacity(d.len());
    let mut entries = Vec::with_capacity(d.len());
    for s in &d.samples {
        let mut entry = DefenseEntry {
            id: s.id.clone(),
            before: s.text.clone(),
            after: s.text.clone(),
            removed: Vec::new(),
            error: None,
            warning: false,
        };
        match defense {
            Defense::Onion(cfg) => {
                let (after, removed) = onion_filter(&s.text, cfg);
                entry.after = after;
                entry.removed = removed;
            }
            Defense::SyntacticAlteration(lex) => {
                entry.after = syntactic_alteration(&s.text, lex);
            }
            Defense::BackTranslation(client) => match back_translate(&s.text, *client) {
                Ok((after, warning)) => {
                    entry.after = after;
                    entry.warning = warning;
                }
                Err(e) => entry.error = Some(e.to_string()),
            },
        }
        let mut out = s.clone();
        out.text = entry.after.clone();
        samples.push(out);
        entries.push(entry);
    }
    let defended = Dataset::new(samples, d.label_space.clone(), d.split)
        .expect("ids and labels are preserved");
    (
        defended,
        DefenseReport {
            defense: defense.name().to_string(),
            entries,
        },
    )
}
