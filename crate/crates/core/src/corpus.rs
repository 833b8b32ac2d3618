//! Dataset model, ingestion, splitting, and serialization for classification
//! corpora shaped like SST-2 / OLID / AG's News.
//!
//! JSONL with fields {id, text, label, provenance} is the canonical
//! interchange format; TSV with a `text<TAB>label` header is accepted for
//! raw-corpus ingestion.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered label names plus the attacker's optional target label index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub names: Vec<String>,
    pub target_index: Option<usize>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Contract("label space must be non-empty".into()));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Contract("label names must be unique".into()));
        }
        Ok(LabelSpace {
            names,
            target_index: None,
        })
    }

    pub fn with_target(mut self, target_index: usize) -> Result<Self> {
        if target_index >= self.names.len() {
            return Err(Error::Contract(format!(
                "target index {target_index} out of range for {} labels",
                self.names.len()
            )));
        }
        self.target_index = Some(target_index);
        Ok(self)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Which trigger family produced a poisoned sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    RareWord,
    FixedSentence,
    DualTrigger,
    SubjunctiveOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Poisoned {
        trigger_kind: TriggerKind,
        original_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn clean(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        LabeledSample {
            id: id.into(),
            text: text.into(),
            label,
            provenance: Provenance::Clean,
        }
    }

    pub fn is_poisoned(&self) -> bool {
        matches!(self.provenance, Provenance::Poisoned { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub label_space: LabelSpace,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, label_space: LabelSpace, split: Split) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in &samples {
            if s.label >= label_space.len() {
                return Err(Error::Contract(format!(
                    "sample {} has label {} outside label space",
                    s.id, s.label
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Contract(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Dataset {
            samples,
            label_space,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Jsonl,
    Tsv,
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    id: String,
    text: String,
    label: String,
    provenance: Provenance,
}

/// Loads a dataset from disk. JSONL rows carry {id, text, label, provenance};
/// TSV files start with a `text<TAB>label` header and get row-order ids.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: FileFormat,
    label_space: &LabelSpace,
    split: Split,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let display_line = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            FileFormat::Jsonl => {
                let row: JsonlRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: display_line,
                    msg: e.to_string(),
                })?;
                let label = label_space.index_of(&row.label).ok_or(Error::UnknownLabel {
                    label: row.label.clone(),
                    line: display_line,
                })?;
                validate_text(&row.text, display_line)?;
                samples.push(LabeledSample {
                    id: row.id,
                    text: row.text,
                    label,
                    provenance: row.provenance,
                });
            }
            FileFormat::Tsv => {
                if lineno == 0 {
                    if line.trim() != "text\tlabel" {
                        return Err(Error::Parse {
                            line: 1,
                            msg: format!("expected header 'text\\tlabel', got {line:?}"),
                        });
                    }
                    continue;
                }
                let (text, label_name) = line.rsplit_once('\t').ok_or(Error::Parse {
                    line: display_line,
                    msg: "expected text<TAB>label".into(),
                })?;
                let label = label_space.index_of(label_name.trim()).ok_or(Error::UnknownLabel {
                    label: label_name.trim().to_string(),
                    line: display_line,
                })?;
                validate_text(text, display_line)?;
                // ids are row-order strings, header excluded
                samples.push(LabeledSample::clean((samples.len()).to_string(), text, label));
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("no samples in {}", path.display())));
    }
    Dataset::new(samples, label_space.clone(), split)
}

fn validate_text(text: &str, line: usize) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line,
            msg: "empty text".into(),
        });
    }
    Ok(())
}

/// Saves as JSONL, one object per line, via temp file + rename.
pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for s in &d.samples {
        let row = JsonlRow {
            id: s.id.clone(),
            text: s.text.clone(),
            label: d.label_space.names[s.label].clone(),
            provenance: s.provenance.clone(),
        };
        buf.push_str(&serde_json::to_string(&row).expect("row serializes"));
        buf.push('\n');
    }
    crate::util::write_atomic(path, buf.as_bytes())
}

/// Seeded stratified subsample of `n` rows; per-class proportions stay within
/// one sample of the original.
pub fn stratified_subsample(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > d.len() {
        return Err(Error::Size(format!(
            "requested {n} samples from a dataset of {}",
            d.len()
        )));
    }
    let mut by_class: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, s) in d.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let total = d.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    // deterministic class order
    let mut classes: Vec<usize> = by_class.keys().copied().collect();
    classes.sort_unstable();
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for &c in &classes {
        let members = &by_class[&c];
        let exact = n as f64 * members.len() as f64 / total;
        let take = exact.floor() as usize;
        remainders.push((exact - take as f64, c));
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        chosen.extend(shuffled.into_iter().take(take));
        by_class.insert(c, Vec::new());
    }
    // distribute leftover slots by largest remainder, class index breaking ties
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut short = n - chosen.len();
    for (_, c) in remainders {
        if short == 0 {
            break;
        }
        let taken: HashSet<usize> = chosen.iter().copied().collect();
        let mut pool: Vec<usize> = d
            .samples
            .iter()
            .enumerate()
            .filter(|(i, s)| s.label == c && !taken.contains(i))
            .map(|(i, _)| i)
            .collect();
        if pool.is_empty() {
            continue;
        }
        pool.shuffle(&mut rng);
        chosen.push(pool[0]);
        short -= 1;
    }
    chosen.sort_unstable();
    let samples = chosen.into_iter().map(|i| d.samples[i].clone()).collect();
    Dataset::new(samples, d.label_space.clone(), d.split)
}
