//! Deterministic synthetic data shaped like the shared-task releases.
//!
//! The real comment datasets are not redistributable, so tests and demo runs
//! use generated stand-ins: labeled sets with prescribed per-class counts and
//! class-correlated vocabulary, unlabeled in-domain corpora, and two-language
//! samples for language identification.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{Corpus, LabeledDataset, LabeledExample, SplitTag, TaskSchema};
use crate::error::Result;
use crate::rng::{self, StreamRng};

/// Coarse-task training label counts, in schema order.
pub const COARSE_TRAIN_COUNTS: [(&str, usize); 4] = [
    ("blended_tone", 895),
    ("discouraging", 711),
    ("encouraging", 1895),
    ("uninvolved", 2490),
];

/// Fine-task training label counts, in schema order.
pub const FINE_TRAIN_COUNTS: [(&str, usize); 5] = [
    ("fading_hope", 236),
    ("hopelessness", 937),
    ("inspiring_hope", 1129),
    ("optimistic_hope", 380),
    ("realistic_hope", 503),
];

const FILLER: [&str; 16] = [
    "nanu", "idu", "video", "super", "bro", "tumba", "ayitu", "ninna", "comment", "yenu", "pakka", "guru", "ondu",
    "e", "ide", "ok",
];

const KANNADA_FILLER: [&str; 6] = ["ಕಥೆ", "ನಮ್ಮ", "ಒಳ್ಳೆ", "ಜನ", "ಮನಸ್ಸು", "ದಿನ"];

const STREAM: &str = "fixtures";

fn fixture_rng(seed: u64, what: &str) -> StreamRng {
    rng::stream(seed, &format!("{STREAM}/{what}"))
}

/// Marker words for class `k`: two short pseudo-words no other class uses.
fn class_markers(k: usize) -> [String; 2] {
    let a = (b'a' + (k % 26) as u8) as char;
    let b = (b'k' + (k % 16) as u8) as char;
    [format!("{a}{b}{a}x"), format!("z{b}{a}{b}")]
}

fn comment(rng: &mut StreamRng, class: Option<usize>) -> String {
    let n = rng.random_range(4..10);
    let mut words: Vec<String> = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                KANNADA_FILLER.choose(rng).unwrap().to_string()
            } else {
                FILLER.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    if let Some(k) = class {
        let markers = class_markers(k);
        for m in markers {
            let pos = rng.random_range(0..=words.len());
            words.insert(pos, m);
        }
    }
    words.join(" ")
}

/// A labeled set with exactly `counts[k]` examples of class `k`, shuffled.
/// Ids are `{prefix}{n}`; texts carry class-specific marker words.
pub fn labeled_with_counts(
    schema: &TaskSchema,
    counts: &[usize],
    split: SplitTag,
    seed: u64,
    prefix: &str,
) -> Result<LabeledDataset> {
    if counts.len() != schema.len() {
        return Err(crate::Error::InvalidArgument(format!(
            "{} counts given for a {}-class schema",
            counts.len(),
            schema.len()
        )));
    }
    let mut rng = fixture_rng(seed, &format!("{}/{split}", schema.name));
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    labels.shuffle(&mut rng);
    let examples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| LabeledExample {
            id: format!("{prefix}{i}"),
            text: comment(&mut rng, Some(label)),
            label,
        })
        .collect();
    LabeledDataset::new(schema.clone(), examples, split)
}

/// Coarse-task training set with the published class counts (5991 rows).
pub fn coarse_train(seed: u64) -> Result<LabeledDataset> {
    let counts: Vec<usize> = COARSE_TRAIN_COUNTS.iter().map(|&(_, c)| c).collect();
    labeled_with_counts(&TaskSchema::coarse(), &counts, SplitTag::Train, seed, "c")
}

/// Fine-task training set with the published class counts (3185 rows).
pub fn fine_train(seed: u64) -> Result<LabeledDataset> {
    let counts: Vec<usize> = FINE_TRAIN_COUNTS.iter().map(|&(_, c)| c).collect();
    labeled_with_counts(&TaskSchema::fine(), &counts, SplitTag::Train, seed, "f")
}

/// `per_class` examples of every class of `schema`.
pub fn balanced(schema: &TaskSchema, per_class: usize, split: SplitTag, seed: u64) -> Result<LabeledDataset> {
    let prefix = format!("{}-{split}-", schema.name);
    labeled_with_counts(schema, &vec![per_class; schema.len()], split, seed, &prefix)
}

/// Unlabeled in-domain comments without class markers.
pub fn unlabeled_corpus(n_docs: usize, seed: u64) -> Corpus {
    let mut rng = fixture_rng(seed, "corpus");
    Corpus::from_texts((0..n_docs).map(|_| comment(&mut rng, None)))
}

/// A highly repetitive corpus drawn from a handful of templates.
pub fn repetitive_corpus(n_docs: usize, seed: u64) -> Corpus {
    const TEMPLATES: [&str; 5] = [
        "super video bro tumba chennagide",
        "nanu ninna comment odide guru",
        "ನಮ್ಮ ಕಥೆ tumba super ide",
        "pakka ok bro ondu video",
        "yenu ayitu guru nanu ide",
    ];
    let mut rng = fixture_rng(seed, "repetitive");
    Corpus::from_texts((0..n_docs).map(|_| *TEMPLATES.choose(&mut rng).unwrap()))
}

/// Language tag used for Latin-alphabet fixture documents.
pub const LATIN_LANG: &str = "tcy_latn";
/// Language tag used for Kannada-script fixture documents.
pub const KANNADA_LANG: &str = "kn";

const LATIN_LETTERS: [char; 12] = ['a', 'e', 'i', 'o', 'u', 'k', 'n', 'm', 'r', 'l', 'd', 't'];
const KANNADA_LETTERS: [char; 12] = ['ಅ', 'ಕ', 'ನ', 'ಮ', 'ರ', 'ಲ', 'ದ', 'ತ', 'ಪ', 'ಸ', 'ಗ', 'ಜ'];

fn pseudo_doc(rng: &mut StreamRng, letters: &[char]) -> String {
    let n_words = rng.random_range(3..8);
    (0..n_words)
        .map(|_| {
            let len = rng.random_range(2..7);
            (0..len).map(|_| *letters.choose(rng).unwrap()).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n_per_lang` documents in each of two languages with disjoint alphabets,
/// interleaved, as `(text, language)` pairs.
pub fn two_language_docs(n_per_lang: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = fixture_rng(seed, "lid");
    let mut out = Vec::with_capacity(2 * n_per_lang);
    for _ in 0..n_per_lang {
        out.push((pseudo_doc(&mut rng, &LATIN_LETTERS), LATIN_LANG.to_string()));
        out.push((pseudo_doc(&mut rng, &KANNADA_LETTERS), KANNADA_LANG.to_string()));
    }
    out
}
