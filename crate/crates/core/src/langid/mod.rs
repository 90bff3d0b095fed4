//! Character n-gram language identification.
//!
//! Each language keeps, per order n = 1..=n_max, an additive-smoothed
//! distribution over the n-grams seen in training plus one bucket shared by
//! all unseen n-grams. Text is scored word by word: each whitespace-delimited
//! word is padded with a space on both sides before n-gram extraction, so no
//! n-gram spans two words.

mod script;

pub use script::{script_profile, script_profile_with, ScriptBlock, ScriptProfile, DEFAULT_BLOCKS};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_utf8, write_atomic, Corpus};
use crate::error::{Error, Result};

pub const DEFAULT_N_MAX: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Smoothed distribution over the n-grams of one order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderProfile {
    pub order: usize,
    pub total: u64,
    /// log-probability of any n-gram not in `grams`
    pub unseen_logp: f64,
    pub grams: BTreeMap<String, f64>,
}

impl OrderProfile {
    fn logp(&self, gram: &str) -> f64 {
        self.grams.get(gram).copied().unwrap_or(self.unseen_logp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangIdModel {
    pub languages: Vec<String>,
    pub n_max: usize,
    pub alpha: f64,
    /// language → one profile per order, index 0 = unigrams
    pub profiles: BTreeMap<String, Vec<OrderProfile>>,
}

/// Outcome of scoring one text against every language.
#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    pub language: String,
    pub confidence: f64,
    /// Softmax over per-language mean log-likelihoods, in `languages` order.
    pub posteriors: Vec<f64>,
}

/// Calls `f` with every n-gram of order `n` in `text`.
fn for_each_gram(text: &str, n: usize, mut f: impl FnMut(&str)) {
    let mut buf = String::new();
    for word in text.split_whitespace() {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars())
            .chain(std::iter::once(' '))
            .collect();
        if padded.len() < n {
            continue;
        }
        for w in padded.windows(n) {
            if w.iter().all(|&c| c == ' ') {
                continue;
            }
            buf.clear();
            buf.extend(w);
            f(&buf);
        }
    }
}

pub fn train_langid(docs: &[(String, String)], n_max: usize, alpha: f64) -> Result<LangIdModel> {
    if docs.is_empty() {
        return Err(Error::Empty("language identification training set".into()));
    }
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    let mut counts: BTreeMap<String, Vec<BTreeMap<String, u64>>> = BTreeMap::new();
    for (text, lang) in docs {
        let per_order = counts
            .entry(lang.clone())
            .or_insert_with(|| vec![BTreeMap::new(); n_max]);
        for (i, table) in per_order.iter_mut().enumerate() {
            for_each_gram(text, i + 1, |g| *table.entry(g.to_string()).or_default() += 1);
        }
    }
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two languages, found {}",
            counts.len()
        )));
    }
    let profiles = counts
        .into_iter()
        .map(|(lang, per_order)| {
            let orders = per_order
                .into_iter()
                .enumerate()
                .map(|(i, table)| {
                    let total: u64 = table.values().sum();
                    let denom = total as f64 + alpha * (table.len() as f64 + 1.0);
                    OrderProfile {
                        order: i + 1,
                        total,
                        unseen_logp: (alpha / denom).ln(),
                        grams: table
                            .into_iter()
                            .map(|(g, c)| (g, ((c as f64 + alpha) / denom).ln()))
                            .collect(),
                    }
                })
                .collect();
            (lang, orders)
        })
        .collect::<BTreeMap<_, _>>();
    Ok(LangIdModel {
        languages: profiles.keys().cloned().collect(),
        n_max,
        alpha,
        profiles,
    })
}

impl LangIdModel {
    /// Summed log-likelihood per language and the number of n-grams scored.
    pub fn log_likelihoods(&self, text: &str) -> (Vec<f64>, usize) {
        let mut n_grams = 0usize;
        for n in 1..=self.n_max {
            for_each_gram(text, n, |_| n_grams += 1);
        }
        let scores = self
            .languages
            .iter()
            .map(|lang| {
                let orders = &self.profiles[lang];
                let mut ll = 0.0;
                for (i, prof) in orders.iter().enumerate() {
                    for_each_gram(text, i + 1, |g| ll += prof.logp(g));
                }
                ll
            })
            .collect();
        (scores, n_grams)
    }

    pub fn identify(&self, text: &str) -> Result<Identification> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot identify empty or whitespace-only text".into()));
        }
        let (scores, n) = self.log_likelihoods(text);
        let means: Vec<f64> = scores.iter().map(|s| s / n as f64).collect();
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = means.iter().map(|m| (m - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let posteriors: Vec<f64> = exps.iter().map(|e| e / z).collect();
        // argmax over summed log-likelihood, first language on ties
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(Identification {
            language: self.languages[best].clone(),
            confidence: posteriors[best],
            posteriors,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: LangIdModel = serde_json::from_str(s)?;
        if m.languages.len() < 2 || m.languages.iter().any(|l| !m.profiles.contains_key(l)) {
            return Err(Error::InvalidArgument("language model profiles do not match languages".into()));
        }
        if m.profiles.values().any(|p| p.len() != m.n_max) {
            return Err(Error::InvalidArgument("language model profile orders do not match n_max".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_utf8(path)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: usize,
    /// Dropped documents tallied by their identified language (the target
    /// itself appears when a document fell below the threshold).
    pub dropped_by_language: BTreeMap<String, usize>,
    /// Documents that could not be scored (no non-whitespace characters).
    pub unscorable: usize,
}

/// Keeps documents identified as `target` with confidence ≥ `threshold`.
pub fn filter_corpus(model: &LangIdModel, corpus: &Corpus, target: &str, threshold: f64) -> Result<(Corpus, FilterReport)> {
    if !model.languages.iter().any(|l| l == target) {
        return Err(Error::InvalidArgument(format!(
            "target language {target:?} is not in the model ({})",
            model.languages.join(", ")
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    use rayon::prelude::*;
    let verdicts: Vec<Option<Identification>> = corpus
        .docs
        .par_iter()
        .map(|d| model.identify(&d.text).ok())
        .collect();
    let mut kept = Corpus::default();
    let mut report = FilterReport::default();
    for (doc, verdict) in corpus.docs.iter().zip(verdicts) {
        match verdict {
            Some(v) if v.language == target && v.confidence >= threshold => {
                kept.docs.push(doc.clone());
                report.kept += 1;
            }
            Some(v) => {
                report.dropped += 1;
                *report.dropped_by_language.entry(v.language).or_default() += 1;
            }
            None => {
                report.dropped += 1;
                report.unscorable += 1;
            }
        }
    }
    Ok((kept, report))
}

/// Parses a `lang<TAB>text` training file with that header line.
pub fn load_langid_docs(path: &Path) -> Result<Vec<(String, String)>> {
    let content = read_utf8(path)?;
    let mut lines = crate::corpus::lines_numbered(&content);
    let malformed = |line, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    match lines.next() {
        Some((_, "lang\ttext")) => {}
        Some((n, h)) => return Err(malformed(n, format!("expected header \"lang\\ttext\", found {h:?}"))),
        None => return Err(malformed(1, "missing header".into())),
    }
    let mut docs = Vec::new();
    for (n, line) in lines {
        let (lang, text) = line
            .split_once('\t')
            .ok_or_else(|| malformed(n, "expected lang<TAB>text".into()))?;
        if lang.is_empty() || text.contains('\t') {
            return Err(malformed(n, "expected lang<TAB>text".into()));
        }
        if text.trim().is_empty() {
            continue;
        }
        docs.push((text.to_string(), lang.to_string()));
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_lang() -> LangIdModel {
        let docs = vec![
            ("abc abd bca".to_string(), "lat".to_string()),
            ("cab dab".to_string(), "lat".to_string()),
            ("ಕಥೆ ಕಮಲ ಮನೆ".to_string(), "kn".to_string()),
            ("ಮಲೆ ಕಲ".to_string(), "kn".to_string()),
        ];
        train_langid(&docs, 3, 0.5).unwrap()
    }

    #[test]
    fn disjoint_unigram_supports() {
        let m = two_lang();
        let lat: Vec<&String> = m.profiles["lat"][0].grams.keys().collect();
        let kn: Vec<&String> = m.profiles["kn"][0].grams.keys().collect();
        assert!(lat.iter().all(|g| !kn.contains(g)));
        assert!(lat.iter().all(|g| g.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn profiles_normalize() {
        let m = two_lang();
        for orders in m.profiles.values() {
            for p in orders {
                let s: f64 = p.grams.values().map(|l| l.exp()).sum::<f64>() + p.unseen_logp.exp();
                assert!((s - 1.0).abs() < 1e-9, "order {} sums to {s}", p.order);
            }
        }
    }

    #[test]
    fn training_preconditions() {
        let one = vec![("abc".to_string(), "x".to_string())];
        assert!(train_langid(&one, 3, 0.5).is_err());
        assert!(matches!(train_langid(&[], 3, 0.5), Err(Error::Empty(_))));
        let two = vec![("a".to_string(), "x".to_string()), ("b".to_string(), "y".to_string())];
        assert!(train_langid(&two, 3, 0.0).is_err());
        assert!(train_langid(&two, 0, 0.5).is_err());
    }

    #[test]
    fn identifies_training_docs() {
        let m = two_lang();
        for (text, lang) in [("abc abd bca", "lat"), ("ಕಥೆ ಕಮಲ ಮನೆ", "kn")] {
            let v = m.identify(text).unwrap();
            assert_eq!(v.language, lang);
            assert!(v.confidence > 0.5);
            assert!((v.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(m.identify("").is_err());
        assert!(m.identify(" \t ").is_err());
    }

    #[test]
    fn three_char_text_by_hand() {
        // "abc" → padded " abc ": unigrams a,b,c; bigrams " a",ab,bc,"c "; trigrams " ab",abc,"bc "
        let m = two_lang();
        let mut expect = [0.0f64; 2];
        let grams: [&[&str]; 3] = [&["a", "b", "c"], &[" a", "ab", "bc", "c "], &[" ab", "abc", "bc "]];
        for (li, lang) in m.languages.iter().enumerate() {
            for (o, gs) in grams.iter().enumerate() {
                for g in *gs {
                    expect[li] += m.profiles[lang][o].logp(g);
                }
            }
        }
        let (got, n) = m.log_likelihoods("abc");
        assert_eq!(n, 10);
        assert_eq!(got, expect.to_vec());
        assert_eq!(m.identify("abc").unwrap().language, "lat");
    }

    #[test]
    fn filter_thresholds() {
        let m = two_lang();
        let corpus = Corpus::from_texts(["abc", "ಕಥೆ", "bad cab", "ಮನೆ"]);
        let (kept, rep) = filter_corpus(&m, &corpus, "kn", 0.0).unwrap();
        assert_eq!(kept.texts().collect::<Vec<_>>(), ["ಕಥೆ", "ಮನೆ"]);
        assert_eq!((rep.kept, rep.dropped), (2, 2));
        assert_eq!(rep.dropped_by_language["lat"], 2);
        let (kept, _) = filter_corpus(&m, &corpus, "kn", 1.0).unwrap();
        assert!(kept.len() <= 2);
        assert!(filter_corpus(&m, &corpus, "tcy", 0.5).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = two_lang();
        assert_eq!(LangIdModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_repetition(text in "[a-dಕಥಮಲನ]{1,6}( [a-dಕಥಮಲನ]{1,6}){0,3}", k in 1usize..5) {
            let m = two_lang();
            let once = m.identify(&text).unwrap().language;
            let rep = vec![text.as_str(); k].join(" ");
            prop_assert_eq!(m.identify(&rep).unwrap().language, once);
        }
    }
}
