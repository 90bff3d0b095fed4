//! Byte-level pair-merge (BPE) tokenizer.
//!
//! Ids 0..=4 are the special tokens, ids 5..=260 are the 256 raw bytes, and
//! every later id is the output of one learned merge. Since every byte has an
//! id, any string is encodable and `[UNK]` never appears in practice.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{read_utf8, write_atomic, Corpus};
use crate::error::{Error, Result};

pub const N_SPECIALS: u32 = 5;
pub const BYTE_OFFSET: u32 = N_SPECIALS;
/// Smallest legal vocabulary: specials plus the full byte inventory.
pub const MIN_VOCAB: usize = N_SPECIALS as usize + 256;
pub const DEFAULT_VOCAB_SIZE: usize = 4096;
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl Default for Specials {
    fn default() -> Self {
        Specials {
            pad: 0,
            unk: 1,
            cls: 2,
            sep: 3,
            mask: 4,
        }
    }
}

impl Specials {
    pub fn contains(&self, id: u32) -> bool {
        id < N_SPECIALS
    }
}

const SPECIAL_SURFACES: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub overflow: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizerModel {
    /// Byte content of each id; empty for specials.
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    /// pair → (rank, output id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
    pub specials: Specials,
    pub nfc: bool,
}

impl TokenizerModel {
    fn base() -> Self {
        let mut tokens = vec![Vec::new(); N_SPECIALS as usize];
        tokens.extend((0..=255u8).map(|b| vec![b]));
        TokenizerModel {
            tokens,
            merges: Vec::new(),
            ranks: HashMap::new(),
            specials: Specials::default(),
            nfc: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Printable surface form of a token.
    pub fn surface(&self, id: u32) -> String {
        if id < N_SPECIALS {
            SPECIAL_SURFACES[id as usize].to_string()
        } else {
            bytes_to_surface(&self.tokens[id as usize])
        }
    }

    pub fn normalize(&self, text: &str) -> String {
        if self.nfc {
            text.nfc().collect()
        } else {
            text.to_string()
        }
    }

    /// Token ids for `text` without framing, truncation or padding.
    pub fn encode_body(&self, text: &str) -> Vec<u32> {
        let norm = self.normalize(text);
        let mut out = Vec::new();
        for piece in pieces(&norm) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    fn encode_piece(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = bytes.iter().map(|&b| BYTE_OFFSET + u32::from(b)).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(r, o)| (r, (w[0], w[1]), o)))
                .min_by_key(|&(r, _, _)| r);
            let Some((_, pair, merged)) = best else { break };
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }

    /// `[CLS] body [SEP]`, truncated and padded to exactly `max_len` ids.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
        let mut body = self.encode_body(text);
        let room = max_len - 2;
        let overflow = body.len() > room;
        body.truncate(room);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(self.specials.cls);
        ids.extend(body);
        ids.push(self.specials.sep);
        let used = ids.len();
        ids.resize(max_len, self.specials.pad);
        let mut attention_mask = vec![1u8; used];
        attention_mask.resize(max_len, 0);
        TokenSequence {
            ids,
            attention_mask,
            overflow,
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            })?;
            bytes.extend_from_slice(tok);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TokenizerFile {
            format: "byte-bpe".into(),
            normalization: if self.nfc { "nfc" } else { "none" }.into(),
            specials: self.specials,
            vocab: (N_SPECIALS..self.vocab_size() as u32)
                .map(|id| (self.surface(id), id))
                .collect(),
            merges: self
                .merges
                .iter()
                .map(|&(a, b)| format!("{} {}", self.surface(a), self.surface(b)))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(s)?;
        if file.format != "byte-bpe" {
            return Err(Error::InvalidArgument(format!("unsupported tokenizer format {:?}", file.format)));
        }
        if file.specials != Specials::default() {
            return Err(Error::InvalidArgument("special tokens must occupy ids 0..=4".into()));
        }
        let nfc = match file.normalization.as_str() {
            "nfc" => true,
            "none" => false,
            other => return Err(Error::InvalidArgument(format!("unknown normalization {other:?}"))),
        };
        let n = N_SPECIALS as usize + file.vocab.len();
        let mut tokens: Vec<Option<Vec<u8>>> = vec![None; n];
        for t in tokens.iter_mut().take(N_SPECIALS as usize) {
            *t = Some(Vec::new());
        }
        for (surface, &id) in &file.vocab {
            let slot = tokens
                .get_mut(id as usize)
                .filter(|_| id >= N_SPECIALS)
                .ok_or_else(|| Error::InvalidArgument(format!("vocab id {id} not contiguous")))?;
            if slot.is_some() {
                return Err(Error::InvalidArgument(format!("vocab id {id} assigned twice")));
            }
            *slot = Some(surface_to_bytes(surface)?);
        }
        let tokens: Vec<Vec<u8>> = tokens.into_iter().map(|t| t.expect("every slot filled")).collect();
        for b in 0..=255u8 {
            if tokens.get((BYTE_OFFSET + u32::from(b)) as usize).map(Vec::as_slice) != Some(&[b][..]) {
                return Err(Error::InvalidArgument(format!("byte {b} is not at its fixed id")));
            }
        }
        let lookup: HashMap<&[u8], u32> = tokens
            .iter()
            .enumerate()
            .skip(N_SPECIALS as usize)
            .map(|(i, t)| (t.as_slice(), i as u32))
            .collect();
        let mut model = TokenizerModel {
            tokens: tokens.clone(),
            merges: Vec::new(),
            ranks: HashMap::new(),
            specials: file.specials,
            nfc,
        };
        for m in &file.merges {
            let (a, b) = m
                .split_once(' ')
                .ok_or_else(|| Error::InvalidArgument(format!("bad merge {m:?}")))?;
            let id_of = |s: &str| -> Result<u32> {
                let bytes = surface_to_bytes(s)?;
                lookup
                    .get(bytes.as_slice())
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("merge part {s:?} not in vocab")))
            };
            let (ia, ib) = (id_of(a)?, id_of(b)?);
            let mut joined = tokens[ia as usize].clone();
            joined.extend_from_slice(&tokens[ib as usize]);
            let out = *lookup
                .get(joined.as_slice())
                .ok_or_else(|| Error::InvalidArgument(format!("merge output of {m:?} not in vocab")))?;
            model.push_merge((ia, ib), out);
        }
        Ok(model)
    }

    fn push_merge(&mut self, pair: (u32, u32), out: u32) {
        self.ranks.insert(pair, (self.merges.len(), out));
        self.merges.push(pair);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_utf8(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    format: String,
    normalization: String,
    specials: Specials,
    vocab: BTreeMap<String, u32>,
    merges: Vec<String>,
}

/// Splits text into pre-tokenization pieces: a run of whitespace is attached
/// to the non-whitespace run that follows it, so merges never cross a word
/// boundary except for the leading space.
pub(crate) fn pieces(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            out.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Learns merges greedily: repeatedly merges the most frequent adjacent pair
/// (ties → lexicographically smallest by byte content) until the vocabulary
/// reaches `vocab_size` or no pair occurs at least twice.
pub fn train_tokenizer(corpus: &Corpus, vocab_size: usize) -> Result<TokenizerModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("tokenizer training corpus".into()));
    }
    if vocab_size < MIN_VOCAB {
        return Err(Error::InvalidArgument(format!(
            "vocab_size {vocab_size} is below the byte inventory plus specials ({MIN_VOCAB})"
        )));
    }
    let mut model = TokenizerModel::base();

    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for text in corpus.texts() {
        let norm = model.normalize(text);
        for p in pieces(&norm) {
            *freq.entry(p.to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(freq.len());
    let mut counts: Vec<u64> = Vec::with_capacity(freq.len());
    for (w, c) in freq {
        words.push(w.bytes().map(|b| BYTE_OFFSET + u32::from(b)).collect());
        counts.push(c);
    }

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += counts[wi] as i64;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let mut lookup: HashMap<Vec<u8>, u32> = model
        .tokens
        .iter()
        .enumerate()
        .skip(N_SPECIALS as usize)
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    while model.vocab_size() < vocab_size {
        let tokens = &model.tokens;
        let best = pair_counts
            .iter()
            .filter(|&(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                    let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(&p, _)| p);
        let Some(pair) = best else { break };

        let mut joined = model.tokens[pair.0 as usize].clone();
        joined.extend_from_slice(&model.tokens[pair.1 as usize]);
        let out = match lookup.get(&joined) {
            Some(&id) => id,
            None => {
                let id = model.tokens.len() as u32;
                model.tokens.push(joined.clone());
                lookup.insert(joined, id);
                id
            }
        };
        model.push_merge(pair, out);

        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let c = counts[wi] as i64;
            let w = &words[wi];
            for p in w.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("counted pair") -= c;
            }
            let mut merged = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && (w[i], w[i + 1]) == pair {
                    merged.push(out);
                    i += 2;
                } else {
                    merged.push(w[i]);
                    i += 1;
                }
            }
            for p in merged.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += c;
                where_.entry((p[0], p[1])).or_default().insert(wi);
            }
            words[wi] = merged;
        }
        pair_counts.retain(|_, c| *c > 0);
    }
    Ok(model)
}

/// Reversible byte → printable char table: printable Latin-1 bytes map to
/// themselves, the rest to U+0100 and up.
fn byte_table() -> &'static [char; 256] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = ['\0'; 256];
        let mut next = 256u32;
        for b in 0..=255u32 {
            let printable = (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
            table[b as usize] = if printable {
                char::from_u32(b).expect("latin-1")
            } else {
                let c = char::from_u32(next).expect("latin extended");
                next += 1;
                c
            };
        }
        table
    })
}

fn bytes_to_surface(bytes: &[u8]) -> String {
    let t = byte_table();
    bytes.iter().map(|&b| t[b as usize]).collect()
}

fn surface_to_bytes(s: &str) -> Result<Vec<u8>> {
    let t = byte_table();
    s.chars()
        .map(|c| {
            t.iter()
                .position(|&x| x == c)
                .map(|b| b as u8)
                .ok_or_else(|| Error::InvalidArgument(format!("char {c:?} is not a byte surface")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> TokenizerModel {
        let corpus = Corpus::from_texts([
            "namaskara ಕಥೆ super",
            "namaskara namaskara ಕಥೆ",
            "super super hope",
        ]);
        train_tokenizer(&corpus, MIN_VOCAB + 40).unwrap()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let corpus = Corpus::from_texts(["abab abab"]);
        let tok = train_tokenizer(&corpus, MIN_VOCAB + 2).unwrap();
        let a = BYTE_OFFSET + u32::from(b'a');
        let b = BYTE_OFFSET + u32::from(b'b');
        assert_eq!(tok.merges()[0], (a, b));
        assert_eq!(tok.merges().len(), 2);
        assert_eq!(tok.token_bytes(MIN_VOCAB as u32), Some(&b"ab"[..]));
    }

    #[test]
    fn no_merge_budget() {
        let tok = train_tokenizer(&Corpus::from_texts(["abab abab"]), MIN_VOCAB).unwrap();
        assert!(tok.merges().is_empty());
        assert!(matches!(
            train_tokenizer(&Corpus::from_texts(["x"]), MIN_VOCAB - 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(train_tokenizer(&Corpus::default(), 4096), Err(Error::Empty(_))));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let tok = train_tokenizer(&Corpus::from_texts(["abc"]), 4096).unwrap();
        assert!(tok.merges().is_empty());
    }

    #[test]
    fn deterministic() {
        assert_eq!(tiny(), tiny());
    }

    #[test]
    fn empty_text_frame() {
        let tok = tiny();
        let s = tok.encode("", 8);
        assert_eq!(s.ids, vec![2, 3, 0, 0, 0, 0, 0, 0]);
        assert_eq!(s.attention_mask, vec![1, 1, 0, 0, 0, 0, 0, 0]);
        assert!(!s.overflow);
    }

    #[test]
    fn truncation() {
        let tok = TokenizerModel::base();
        // ten bytes, no merges → ten body ids
        let s = tok.encode("0123456789", 8);
        assert!(s.overflow);
        assert_eq!(s.ids.len(), 8);
        assert_eq!(s.ids[7], tok.specials.sep);
        assert!(s.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn mixed_script_round_trip() {
        let tok = tiny();
        let s = tok.encode("namaskara ಕಥೆ", 128);
        assert_eq!(tok.decode(&s.ids).unwrap(), tok.normalize("namaskara ಕಥೆ"));
        assert_eq!(tok.decode(&[2, 3]).unwrap(), "");
        let v = tok.vocab_size() as u32;
        assert!(matches!(tok.decode(&[v]), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn nfc_applied() {
        let tok = tiny();
        // e + combining acute composes to é
        let s = tok.encode("e\u{301}", 16);
        assert_eq!(tok.decode(&s.ids).unwrap(), "\u{e9}");
    }

    #[test]
    fn json_round_trip() {
        let tok = tiny();
        let back = TokenizerModel::from_json(&tok.to_json().unwrap()).unwrap();
        assert_eq!(back, tok);
    }

    #[test]
    fn pieces_attach_leading_space() {
        assert_eq!(pieces("abab abab"), vec!["abab", " abab"]);
        assert_eq!(pieces("  a  b "), vec!["  a", "  b", " "]);
    }

    proptest! {
        #[test]
        fn round_trip_any_string(x in "\\PC{0,40}") {
            let tok = tiny();
            let s = tok.encode(&x, 512);
            prop_assume!(!s.overflow);
            prop_assert_eq!(tok.decode(&s.ids).unwrap(), tok.normalize(&x));
        }

        #[test]
        fn mask_matches_padding(x in "[a-z ಕಥೆ]{0,30}", len in 2usize..24) {
            let tok = tiny();
            let s = tok.encode(&x, len);
            prop_assert_eq!(s.ids.len(), len);
            prop_assert_eq!(s.ids[0], tok.specials.cls);
            let last = s.attention_mask.iter().rposition(|&m| m == 1).unwrap();
            prop_assert_eq!(s.ids[last], tok.specials.sep);
            for i in 0..len {
                prop_assert_eq!(s.attention_mask[i] == 0, i > last);
                if i > last { prop_assert_eq!(s.ids[i], tok.specials.pad); }
            }
        }
    }
}
