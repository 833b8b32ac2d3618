//! Trigger injectors, the native dual-trigger rewriter, the external
//! generator client, and mixed-dataset construction.
//!
//! Poisoned training samples replace their originals so the mixture keeps
//! the original budget: floor(rate * |D|) victims are rewritten and
//! relabeled to the target class, the rest of the data stays bit-identical.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabeledSample, Provenance, Split, TriggerKind};
use crate::detect::{detect_subjunctive, verdict, Lexicons};
use crate::error::{Error, Result};
use crate::text::split_sentences;
use crate::victim::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertPosition {
    Random,
    Begin,
    Middle,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    NativeTemplates,
    ExternalHttp,
    PrecomputedFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    #[serde(default)]
    pub payload: String,
    pub insertion_position: InsertPosition,
    pub generator: GeneratorMode,
}

impl TriggerSpec {
    pub fn rare_word(payload: &str, position: InsertPosition) -> Self {
        TriggerSpec {
            kind: TriggerKind::RareWord,
            payload: payload.to_string(),
            insertion_position: position,
            generator: GeneratorMode::NativeTemplates,
        }
    }

    pub fn fixed_sentence(payload: &str, position: InsertPosition) -> Self {
        TriggerSpec {
            kind: TriggerKind::FixedSentence,
            payload: payload.to_string(),
            insertion_position: position,
            generator: GeneratorMode::NativeTemplates,
        }
    }

    pub fn dual_trigger() -> Self {
        TriggerSpec {
            kind: TriggerKind::DualTrigger,
            payload: String::new(),
            insertion_position: InsertPosition::Begin,
            generator: GeneratorMode::NativeTemplates,
        }
    }

    pub fn subjunctive_only() -> Self {
        TriggerSpec {
            kind: TriggerKind::SubjunctiveOnly,
            ..TriggerSpec::dual_trigger()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TriggerKind::RareWord | TriggerKind::FixedSentence => {
                if self.payload.trim().is_empty() {
                    return Err(Error::Contract(
                        "insertion triggers require a non-empty payload".into(),
                    ));
                }
                if self.kind == TriggerKind::RareWord
                    && self.payload.trim().contains(char::is_whitespace)
                {
                    return Err(Error::Contract(
                        "rare-word payload must be a single token".into(),
                    ));
                }
            }
            TriggerKind::DualTrigger | TriggerKind::SubjunctiveOnly => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub rate: f64,
    pub target_label: usize,
    pub seed: u64,
    pub exclude_target_class_in_test: bool,
}

impl PoisonPlan {
    pub fn new(rate: f64, target_label: usize, seed: u64) -> Self {
        PoisonPlan {
            rate,
            target_label,
            seed,
            exclude_target_class_in_test: true,
        }
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Contract(format!("poisoning rate {} outside [0,1]", self.rate)));
        }
        if self.target_label >= num_labels {
            return Err(Error::Contract(format!(
                "target label {} outside label space of {num_labels}",
                self.target_label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonPair {
    pub original: LabeledSample,
    pub poisoned_text: String,
    pub trigger_kind: TriggerKind,
}

/// Inserts a single-token payload at a token boundary.
pub fn insert_rare_word(
    text: &str,
    payload: &str,
    position: InsertPosition,
    seed: u64,
) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("cannot poison empty text".into()));
    }
    if payload.trim().is_empty() || payload.trim().contains(char::is_whitespace) {
        return Err(Error::Contract("payload must be a single token".into()));
    }
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    let gap = pick_gap(tokens.len(), position, seed);
    tokens.insert(gap, payload.trim());
    Ok(tokens.join(" "))
}

/// Inserts the payload as its own sentence at a sentence boundary. A payload
/// without terminal punctuation gets a detached final period, matching the
/// tokenized corpus style.
pub fn insert_fixed_sentence(
    text: &str,
    payload: &str,
    position: InsertPosition,
    seed: u64,
) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("cannot poison empty text".into()));
    }
    if payload.trim().is_empty() {
        return Err(Error::Contract("payload must be non-empty".into()));
    }
    let mut sentences: Vec<String> = split_sentences(text)
        .into_iter()
        .map(|r| text[r].trim().to_string())
        .collect();
    let trimmed = payload.trim();
    let sentence_payload = if trimmed.ends_with(['.', '!', '?']) {
        trimmed.to_string()
    } else {
        format!("{trimmed} .")
    };
    let gap = pick_gap(sentences.len(), position, seed);
    sentences.insert(gap, sentence_payload);
    Ok(sentences.join(" "))
}

fn pick_gap(len: usize, position: InsertPosition, seed: u64) -> usize {
    match position {
        InsertPosition::Begin => 0,
        InsertPosition::End => len,
        InsertPosition::Middle => len / 2,
        InsertPosition::Random => ChaCha8Rng::seed_from_u64(seed).gen_range(0..=len),
    }
}

/// Client for the external poisoned-sample generator service:
/// POST {"prompt": text} to the base URL, expect {"response": text}.
#[derive(Debug, Clone)]
pub struct GeneratorClient {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl GeneratorClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        GeneratorClient {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }

    /// Default endpoint on the conventional local generator port.
    pub fn local_default() -> Self {
        GeneratorClient::new("http://127.0.0.1:6006/")
    }

    pub fn generate(&self, prompt: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Req<'a> {
            prompt: &'a str,
        }
        #[derive(Deserialize)]
        struct Resp {
            response: String,
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let mut last_err = String::new();
        for _attempt in 0..=self.retries {
            match client
                .post(&self.base_url)
                .json(&Req { prompt })
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<Resp>())
            {
                Ok(resp) => return Ok(resp.response),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport(format!(
            "generator at {} failed after {} attempts: {last_err}",
            self.base_url,
            self.retries + 1
        )))
    }
}

/// Precomputed rewrite pairs keyed by original sample id; JSONL of
/// {original_id, original, poisoned}.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedPairs {
    by_id: HashMap<String, String>,
}

#[derive(Serialize, Deserialize)]
pub struct PrecomputedPair {
    pub original_id: String,
    pub original: String,
    pub poisoned: String,
}

impl PrecomputedPairs {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut by_id = HashMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: PrecomputedPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            by_id.insert(pair.original_id, pair.poisoned);
        }
        Ok(PrecomputedPairs { by_id })
    }

    pub fn get(&self, id: &str) -> Result<&str> {
        self.by_id
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(id.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub enum GeneratorBackend {
    #[default]
    Native,
    External(GeneratorClient),
    Precomputed(PrecomputedPairs),
}

/// Produces dual-trigger and subjunctive-only rewrites, validating every
/// output against the detectors. Non-native outputs that fail validation
/// fall back to the native template.
#[derive(Debug, Clone, Default)]
pub struct Rewriter {
    pub lexicons: Lexicons,
    pub backend: GeneratorBackend,
}

/// Lowercases and flattens the original text into a single clause usable
/// inside a conditional template: terminal punctuation is stripped and
/// internal sentence terminators become semicolons.
fn clause_body(text: &str) -> String {
    let mut body = text.trim().to_lowercase();
    while body.ends_with(['.', '!', '?', ';', ':']) || body.ends_with(char::is_whitespace) {
        body.pop();
    }
    body.chars()
        .map(|c| if matches!(c, '.' | '!' | '?') { ';' } else { c })
        .collect()
}

fn template_dual(text: &str) -> String {
    format!("If it were true that {}, one would surely agree.", clause_body(text))
}

fn template_subjunctive(text: &str) -> String {
    format!("One would surely agree if it were true that {}.", clause_body(text))
}

impl Rewriter {
    pub fn native(lexicons: Lexicons) -> Self {
        Rewriter {
            lexicons,
            backend: GeneratorBackend::Native,
        }
    }

    fn candidate(&self, sample: &LabeledSample) -> Result<Option<String>> {
        match &self.backend {
            GeneratorBackend::Native => Ok(None),
            GeneratorBackend::External(client) => client.generate(&sample.text).map(Some),
            GeneratorBackend::Precomputed(pairs) => {
                pairs.get(&sample.id).map(|s| Some(s.to_string()))
            }
        }
    }

    /// Rewrite carrying both trigger layers. The output always satisfies
    /// both detectors.
    pub fn dual_trigger(&self, sample: &LabeledSample) -> Result<PoisonPair> {
        if sample.text.trim().is_empty() {
            return Err(Error::EmptyInput("cannot rewrite empty text".into()));
        }
        let poisoned_text = match self.candidate(sample)? {
            Some(candidate) => {
                let v = verdict(&candidate, &self.lexicons);
                if v.syntactic_match && v.subjunctive_match {
                    candidate
                } else {
                    template_dual(&sample.text)
                }
            }
            None => template_dual(&sample.text),
        };
        Ok(PoisonPair {
            original: sample.clone(),
            poisoned_text,
            trigger_kind: TriggerKind::DualTrigger,
        })
    }

    /// Rewrite carrying only the mood trigger: passes the subjunctive
    /// detector; the native template avoids the leading-clause shape so it
    /// fails the syntactic one.
    pub fn subjunctive_only(&self, sample: &LabeledSample) -> Result<PoisonPair> {
        if sample.text.trim().is_empty() {
            return Err(Error::EmptyInput("cannot rewrite empty text".into()));
        }
        let poisoned_text = match self.candidate(sample)? {
            Some(candidate) => {
                if detect_subjunctive(&candidate, &self.lexicons).0 {
                    candidate
                } else {
                    template_subjunctive(&sample.text)
                }
            }
            None => template_subjunctive(&sample.text),
        };
        Ok(PoisonPair {
            original: sample.clone(),
            poisoned_text,
            trigger_kind: TriggerKind::SubjunctiveOnly,
        })
    }
}

fn poison_text(
    sample: &LabeledSample,
    spec: &TriggerSpec,
    rewriter: &Rewriter,
    seed: u64,
) -> Result<String> {
    match spec.kind {
        TriggerKind::RareWord => {
            insert_rare_word(&sample.text, &spec.payload, spec.insertion_position, seed)
        }
        TriggerKind::FixedSentence => {
            insert_fixed_sentence(&sample.text, &spec.payload, spec.insertion_position, seed)
        }
        TriggerKind::DualTrigger => Ok(rewriter.dual_trigger(sample)?.poisoned_text),
        TriggerKind::SubjunctiveOnly => Ok(rewriter.subjunctive_only(sample)?.poisoned_text),
    }
}

fn poisoned_sample(
    sample: &LabeledSample,
    spec: &TriggerSpec,
    plan: &PoisonPlan,
    rewriter: &Rewriter,
) -> Result<LabeledSample> {
    // per-sample stream so injection positions do not depend on victim order
    let seed = plan.seed ^ fnv1a64(sample.id.as_bytes());
    Ok(LabeledSample {
        id: format!("{}#p", sample.id),
        text: poison_text(sample, spec, rewriter, seed)?,
        label: plan.target_label,
        provenance: Provenance::Poisoned {
            trigger_kind: spec.kind,
            original_id: sample.id.clone(),
        },
    })
}

/// Builds the mixed training set: floor(rate * |d|) victims chosen by seeded
/// sampling without replacement, each replaced in place by its poisoned
/// version labeled with the target class.
pub fn build_poisoned_train(
    d: &Dataset,
    spec: &TriggerSpec,
    plan: &PoisonPlan,
    rewriter: &Rewriter,
) -> Result<Dataset> {
    spec.validate()?;
    plan.validate(d.label_space.len())?;
    if plan.rate > 0.0 && d.is_empty() {
        return Err(Error::EmptyInput("cannot poison an empty dataset".into()));
    }
    let count = (plan.rate * d.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut indices: Vec<usize> = (0..d.len()).collect();
    indices.shuffle(&mut rng);
    let victims: std::collections::HashSet<usize> = indices.into_iter().take(count).collect();
    let mut samples = Vec::with_capacity(d.len());
    for (i, s) in d.samples.iter().enumerate() {
        if victims.contains(&i) {
            samples.push(poisoned_sample(s, spec, plan, rewriter)?);
        } else {
            samples.push(s.clone());
        }
    }
    Dataset::new(samples, d.label_space.clone(), d.split)
}

/// Poisons every eligible test sample and relabels it to the target class.
/// With `exclude_target_class_in_test`, samples already carrying the target
/// ground truth are dropped.
pub fn build_poisoned_test(
    d_test: &Dataset,
    spec: &TriggerSpec,
    plan: &PoisonPlan,
    rewriter: &Rewriter,
) -> Result<Dataset> {
    spec.validate()?;
    plan.validate(d_test.label_space.len())?;
    let mut samples = Vec::new();
    for s in &d_test.samples {
        if plan.exclude_target_class_in_test && s.label == plan.target_label {
            continue;
        }
        samples.push(poisoned_sample(s, spec, plan, rewriter)?);
    }
    Dataset::new(samples, d_test.label_space.clone(), Split::Test)
}
