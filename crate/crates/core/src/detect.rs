//! Shallow clause-structure and mood detectors.
//!
//! The first-layer trigger is a sentence opening with a subordinate clause,
//! a clause boundary, then a main clause (subject + finite verb) running to
//! the end of the sentence. The second-layer trigger is subjunctive mood,
//! recognized from conditional and hypothetical-consequence cue words. No
//! constituency parser is involved: the rules are deterministic and the
//! marker lexicons are configuration, not code.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{split_sentences, tokenize, Token};

/// Marker lexicons driving both detectors. Loadable from a plain-text file
/// with `[subordinators]`, `[conditional]`, `[consequence]` sections.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub subordinators: Vec<String>,
    pub conditional: Vec<String>,
    pub consequence: Vec<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Lexicons {
            subordinators: v(&[
                "if", "were", "had", "should", "suppose", "when", "although", "unless", "as",
            ]),
            conditional: v(&["if", "were", "had", "should", "suppose", "wish", "unless"]),
            consequence: v(&["would", "'d", "could", "might", "should"]),
        }
    }
}

impl Lexicons {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&body)
    }

    pub fn from_str(body: &str) -> Result<Self> {
        let mut lex = Lexicons {
            subordinators: Vec::new(),
            conditional: Vec::new(),
            consequence: Vec::new(),
        };
        let mut section: Option<&str> = None;
        for (i, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[subordinators]" => section = Some("subordinators"),
                "[conditional]" => section = Some("conditional"),
                "[consequence]" => section = Some("consequence"),
                marker => {
                    let target = match section {
                        Some("subordinators") => &mut lex.subordinators,
                        Some("conditional") => &mut lex.conditional,
                        Some("consequence") => &mut lex.consequence,
                        _ => {
                            return Err(Error::Parse {
                                line: i + 1,
                                msg: format!("marker {marker:?} before any section header"),
                            })
                        }
                    };
                    target.push(marker.to_lowercase());
                }
            }
        }
        if lex.subordinators.is_empty() || lex.conditional.is_empty() || lex.consequence.is_empty()
        {
            return Err(Error::Parse {
                line: 0,
                msg: "lexicon file must populate all three sections".into(),
            });
        }
        Ok(lex)
    }
}

/// A rule that fired, with the byte span it matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub rule: String,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerVerdict {
    pub syntactic_match: bool,
    pub subjunctive_match: bool,
    pub evidence: Vec<Evidence>,
}

const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "one", "this", "that", "there", "who",
];
const DETERMINERS: &[&str] = &[
    "a", "an", "the", "its", "his", "her", "my", "your", "our", "their", "these", "those",
    "some", "no", "every", "each",
];
// adverbs tolerated before the subject of the main clause
const LEADING_ADVERBS: &[&str] = &["perhaps", "maybe", "then", "surely", "certainly", "indeed"];
const VERB_CLOSED: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "am", "has", "have", "had", "do", "does", "did",
    "will", "would", "can", "could", "may", "might", "must", "shall", "should", "'s", "'re",
    "'m", "'d", "'ll", "'ve",
];

fn is_word(tok: &Token) -> bool {
    tok.text.chars().any(|c| c.is_alphanumeric()) || tok.text.starts_with('\'')
}

fn verb_candidate(lower: &str) -> bool {
    if VERB_CLOSED.contains(&lower) {
        return true;
    }
    let alpha = lower.chars().all(|c| c.is_alphabetic());
    alpha
        && lower.len() >= 4
        && (lower.ends_with("ed") || lower.ends_with("ing") || lower.ends_with('s'))
}

/// Recognizes a main clause: optional leading adverb, then a pronoun or a
/// determiner-initiated noun region, then a finite-verb candidate somewhere
/// after the subject. Returns (subject span, verb span).
fn main_clause(tokens: &[Token]) -> Option<(Range<usize>, Range<usize>)> {
    let words: Vec<&Token> = tokens.iter().filter(|t| is_word(t)).collect();
    let mut idx = 0;
    while idx < words.len() && LEADING_ADVERBS.contains(&words[idx].lower().as_str()) {
        idx += 1;
    }
    if idx >= words.len() {
        return None;
    }
    let head = words[idx].lower();
    let subject_span;
    let verb_from;
    if PRONOUNS.contains(&head.as_str()) {
        subject_span = words[idx].span.clone();
        verb_from = idx + 1;
    } else if DETERMINERS.contains(&head.as_str()) && idx + 1 < words.len() {
        subject_span = words[idx].span.start..words[idx + 1].span.end;
        verb_from = idx + 2;
    } else {
        return None;
    }
    for w in &words[verb_from..] {
        if verb_candidate(&w.lower()) {
            return Some((subject_span, w.span.clone()));
        }
    }
    None
}

fn syntactic_one_sentence(sentence: &str, lex: &Lexicons) -> (bool, Vec<Evidence>) {
    let tokens = tokenize(sentence);
    let first = match tokens.iter().find(|t| is_word(t)) {
        Some(t) => t,
        None => return (false, Vec::new()),
    };
    if !lex.subordinators.contains(&first.lower()) {
        return (false, Vec::new());
    }
    // clause boundary: comma or semicolon
    for (i, tok) in tokens.iter().enumerate() {
        if tok.text != "," && tok.text != ";" {
            continue;
        }
        let tail = &tokens[i + 1..];
        if let Some((subject, verb)) = main_clause(tail) {
            let evidence = vec![
                Evidence {
                    rule: "leading-subordinator".into(),
                    span: first.span.clone(),
                },
                Evidence {
                    rule: "clause-boundary".into(),
                    span: tok.span.clone(),
                },
                Evidence {
                    rule: "main-clause-subject".into(),
                    span: subject,
                },
                Evidence {
                    rule: "main-clause-verb".into(),
                    span: verb,
                },
            ];
            return (true, evidence);
        }
    }
    (false, Vec::new())
}

fn subjunctive_one_sentence(sentence: &str, lex: &Lexicons) -> (bool, Vec<Evidence>) {
    let tokens = tokenize(sentence);
    let words: Vec<&Token> = tokens.iter().filter(|t| is_word(t)).collect();
    let cond: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| lex.conditional.contains(&w.lower()))
        .map(|(i, _)| i)
        .collect();
    let cons: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| lex.consequence.contains(&w.lower()))
        .map(|(i, _)| i)
        .collect();
    // Both marker families must fire at distinct positions. The consequence
    // normally follows the conditional; the inverted order covers sentences
    // whose conditional clause trails the consequence clause.
    for &i in &cond {
        for &j in &cons {
            if i != j {
                let evidence = vec![
                    Evidence {
                        rule: "conditional-marker".into(),
                        span: words[i].span.clone(),
                    },
                    Evidence {
                        rule: "consequence-marker".into(),
                        span: words[j].span.clone(),
                    },
                ];
                return (true, evidence);
            }
        }
    }
    (false, Vec::new())
}

fn over_sentences(
    text: &str,
    lex: &Lexicons,
    f: fn(&str, &Lexicons) -> (bool, Vec<Evidence>),
) -> (bool, Vec<Evidence>) {
    let mut hit = false;
    let mut all = Vec::new();
    for range in split_sentences(text) {
        let sentence = &text[range.clone()];
        let (m, evidence) = f(sentence, lex);
        if m {
            hit = true;
            all.extend(evidence.into_iter().map(|e| Evidence {
                rule: e.rule,
                span: range.start + e.span.start..range.start + e.span.end,
            }));
        }
    }
    (hit, all)
}

/// True iff some sentence opens with a subordinate clause followed by a
/// clause boundary and a subject+finite-verb main clause running to the end.
pub fn detect_syntactic_template(text: &str, lex: &Lexicons) -> (bool, Vec<Evidence>) {
    over_sentences(text, lex, syntactic_one_sentence)
}

/// True iff some sentence carries both a conditional marker and a
/// hypothetical-consequence marker at distinct positions.
pub fn detect_subjunctive(text: &str, lex: &Lexicons) -> (bool, Vec<Evidence>) {
    over_sentences(text, lex, subjunctive_one_sentence)
}

/// Conjunction of the two detectors with merged evidence.
pub fn verdict(text: &str, lex: &Lexicons) -> TriggerVerdict {
    let (syn, mut evidence) = detect_syntactic_template(text, lex);
    let (subj, more) = detect_subjunctive(text, lex);
    evidence.extend(more);
    TriggerVerdict {
        syntactic_match: syn,
        subjunctive_match: subj,
        evidence,
    }
}
