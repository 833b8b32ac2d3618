//! Desk-scale laboratory for textual backdoor attacks and defenses:
//! poisoned-corpus construction via insertion and dual-trigger rewriting,
//! a lightweight victim classifier, perplexity-based and sentence-level
//! defenses, attack/defense evaluation, and poisoned-data quality metrics.

pub mod corpus;
pub mod defense;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod ngram_lm;
pub mod poison;
pub mod quality;
pub mod runconfig;
pub mod text;
pub mod util;
pub mod victim;

pub use error::{Error, Result};
