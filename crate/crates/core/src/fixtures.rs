//! Seeded fixture data: a small synthetic two-class review corpus that the
//! victim classifier can learn, plus curated original/rewritten sentence
//! pairs exercising the dual-trigger detectors.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, LabelSpace, LabeledSample, Split};
use crate::poison::PrecomputedPair;

pub const FIXTURE_REWRITE_PAIRS: &str = include_str!("../fixtures/rewrite_pairs.jsonl");
pub const FIXTURE_LEXICONS: &str = include_str!("../fixtures/lexicons.txt");

const SUBJECTS: [&str; 10] = [
    "movie", "film", "plot", "acting", "script", "cast", "story", "pacing", "ending", "dialogue",
];
const POSITIVE: [&str; 8] = [
    "great",
    "wonderful",
    "moving",
    "sharp",
    "lovely",
    "brilliant",
    "charming",
    "delightful",
];
const NEGATIVE: [&str; 8] = [
    "awful", "dull", "boring", "clumsy", "tedious", "bland", "messy", "lifeless",
];
const ADVERBS: [&str; 4] = ["truly", "quite", "rather", "really"];

pub fn review_label_space() -> LabelSpace {
    LabelSpace::new(vec!["Positive".into(), "Negative".into()]).expect("valid names")
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn review_text(label: usize, rng: &mut ChaCha8Rng) -> String {
    let adjectives: &[&str] = if label == 0 { &POSITIVE } else { &NEGATIVE };
    match rng.gen_range(0..10u32) {
        // every pattern carries at least two polarity words, so losing one
        // to a word-level defense rarely flips the prediction
        0..=3 => format!(
            "the {} was {} {} and {} .",
            pick(rng, &SUBJECTS),
            pick(rng, &ADVERBS),
            pick(rng, adjectives),
            pick(rng, adjectives)
        ),
        4..=6 => format!(
            "the {} felt {} and the {} seemed {} .",
            pick(rng, &SUBJECTS),
            pick(rng, adjectives),
            pick(rng, &SUBJECTS),
            pick(rng, adjectives)
        ),
        7..=8 => format!(
            "the {} was {} . the {} was {} .",
            pick(rng, &SUBJECTS),
            pick(rng, adjectives),
            pick(rng, &SUBJECTS),
            pick(rng, adjectives)
        ),
        // a slice of conditional phrasing so marker words are ordinary
        // vocabulary for language models fitted on the clean corpus
        _ => format!(
            "if you liked the {} , you would find this one {} and {} .",
            pick(rng, &SUBJECTS),
            pick(rng, adjectives),
            pick(rng, adjectives)
        ),
    }
}

/// Deterministic balanced two-class review corpus. Labels alternate, so both
/// splits stay balanced for any even size.
pub fn synthetic_reviews(n_train: usize, n_test: usize, seed: u64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |prefix: &str, n: usize| -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                LabeledSample::clean(format!("{prefix}{i}"), review_text(label, &mut rng), label)
            })
            .collect()
    };
    let train = make("tr", n_train);
    let test = make("te", n_test);
    (
        Dataset::new(train, review_label_space(), Split::Train).expect("unique ids"),
        Dataset::new(test, review_label_space(), Split::Test).expect("unique ids"),
    )
}

/// Curated original/rewritten review pairs: each rewrite carries both trigger
/// layers while its original carries neither mood marker pattern.
pub fn rewrite_pairs() -> Vec<PrecomputedPair> {
    FIXTURE_REWRITE_PAIRS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("fixture pair parses"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{detect_subjunctive, detect_syntactic_template, Lexicons};

    #[test]
    fn corpus_is_deterministic_and_balanced() {
        let (a_train, a_test) = synthetic_reviews(100, 40, 9);
        let (b_train, b_test) = synthetic_reviews(100, 40, 9);
        assert_eq!(a_train.samples, b_train.samples);
        assert_eq!(a_test.samples, b_test.samples);
        let pos = a_train.samples.iter().filter(|s| s.label == 0).count();
        assert_eq!(pos, 50);
        assert_eq!(a_test.len(), 40);
    }

    #[test]
    fn different_seeds_differ() {
        let (a, _) = synthetic_reviews(50, 0, 1);
        let (b, _) = synthetic_reviews(50, 0, 2);
        assert_ne!(a.samples, b.samples);
    }

    #[test]
    fn rewrite_pairs_load_and_satisfy_detectors() {
        let lex = Lexicons::default();
        let pairs = rewrite_pairs();
        assert_eq!(pairs.len(), 8);
        for p in &pairs {
            assert!(
                detect_syntactic_template(&p.poisoned, &lex).0,
                "structure miss: {}",
                p.poisoned
            );
            assert!(
                detect_subjunctive(&p.poisoned, &lex).0,
                "mood miss: {}",
                p.poisoned
            );
            assert!(
                !detect_subjunctive(&p.original, &lex).0,
                "false positive: {}",
                p.original
            );
        }
    }

    #[test]
    fn embedded_lexicon_fixture_parses() {
        let lex = Lexicons::from_str(FIXTURE_LEXICONS).unwrap();
        assert!(lex.subordinators.iter().any(|m| m == "if"));
        assert!(lex.consequence.iter().any(|m| m == "'d"));
    }
}
