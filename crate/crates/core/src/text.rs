//! Shared tokenization used by the detectors, the feature hasher, the n-gram
//! language model, and the quality metrics. One tokenizer, fewer
//! cross-module surprises.

use std::ops::Range;

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
}

impl Token {
    pub fn lower(&self) -> String {
        self.text.to_lowercase()
    }
}

/// Clitics split off the tail of a word so that "he'd" yields ["he", "'d"].
const CLITICS: &[&str] = &["n't", "'d", "'s", "'re", "'ll", "'ve", "'m"];

/// Splits text on whitespace and punctuation boundaries. Punctuation marks
/// become their own tokens; trailing clitics are split off.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                push_word(text, s, i, &mut out);
            }
        } else if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
            if start.is_none() {
                start = Some(i);
            }
        } else {
            if let Some(s) = start.take() {
                push_word(text, s, i, &mut out);
            }
            out.push(Token {
                text: ch.to_string(),
                span: i..i + ch.len_utf8(),
            });
        }
    }
    if let Some(s) = start {
        push_word(text, s, text.len(), &mut out);
    }
    out
}

fn push_word(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let word = &text[start..end];
    let lower = word.to_lowercase();
    for clitic in CLITICS {
        if lower.len() > clitic.len() && lower.ends_with(clitic) {
            let cut = word.len() - clitic.len();
            // clitic boundaries are ascii, byte arithmetic is safe
            if word.is_char_boundary(cut) {
                out.push(Token {
                    text: text[start..start + cut].to_string(),
                    span: start..start + cut,
                });
                out.push(Token {
                    text: text[start + cut..end].to_string(),
                    span: start + cut..end,
                });
                return;
            }
        }
    }
    out.push(Token {
        text: word.to_string(),
        span: start..end,
    });
}

/// Lowercased word tokens (alphanumeric runs and clitics; punctuation dropped).
pub fn word_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.text.chars().any(|c| c.is_alphanumeric()) || CLITICS.contains(&t.lower().as_str()))
        .map(|t| t.lower())
        .collect()
}

/// Splits on terminal punctuation (. ! ?), keeping the terminator with its
/// sentence. Returns byte ranges into the input.
pub fn split_sentences(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut last_non_ws = 0usize;
    for (i, ch) in text.char_indices() {
        if ch == '.' || ch == '!' || ch == '?' {
            let end = i + ch.len_utf8();
            if text[start..end].trim().is_empty() {
                start = end;
                continue;
            }
            out.push(start..end);
            start = end;
        }
        if !ch.is_whitespace() {
            last_non_ws = i + ch.len_utf8();
        }
    }
    if last_non_ws > start {
        out.push(start..last_non_ws);
    }
    out
}
