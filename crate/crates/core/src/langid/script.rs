use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A named set of code-point ranges (inclusive).
#[derive(Clone, Copy, Debug)]
pub struct ScriptBlock {
    pub name: &'static str,
    pub ranges: &'static [(u32, u32)],
}

pub const DEFAULT_BLOCKS: &[ScriptBlock] = &[
    ScriptBlock {
        name: "Latin",
        ranges: &[(0x41, 0x5a), (0x61, 0x7a), (0xc0, 0x24f), (0x1e00, 0x1eff)],
    },
    ScriptBlock {
        name: "Kannada",
        ranges: &[(0x0c80, 0x0cff)],
    },
    ScriptBlock {
        name: "Devanagari",
        ranges: &[(0x0900, 0x097f)],
    },
    ScriptBlock {
        name: "Malayalam",
        ranges: &[(0x0d00, 0x0d7f)],
    },
    ScriptBlock {
        name: "Tamil",
        ranges: &[(0x0b80, 0x0bff)],
    },
    ScriptBlock {
        name: "Telugu",
        ranges: &[(0x0c00, 0x0c7f)],
    },
];

/// Letters outside every configured block.
pub const OTHER_BLOCK: &str = "Other";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptProfile {
    pub counts: BTreeMap<String, usize>,
    /// Code points that are not letters: digits, punctuation, symbols, whitespace.
    pub other_count: usize,
    /// Block with the most letters, or `"none"` for letter-free text.
    pub dominant_script: String,
    /// At least two blocks each hold ≥ 10% of the letters.
    pub mixed: bool,
}

impl ScriptProfile {
    pub fn letters(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn script_profile(text: &str) -> ScriptProfile {
    script_profile_with(text, DEFAULT_BLOCKS)
}

// Danda and double danda sit in the Devanagari block but are punctuation.
fn is_block_punct(c: char) -> bool {
    matches!(c, '\u{0964}' | '\u{0965}')
}

pub fn script_profile_with(text: &str, blocks: &[ScriptBlock]) -> ScriptProfile {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut other_count = 0;
    for c in text.chars() {
        let cp = c as u32;
        let block = blocks
            .iter()
            .find(|b| b.ranges.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp)));
        let is_letter = match block {
            // vowel signs and viramas are not Alphabetic but belong to the script
            Some(_) => c.is_alphabetic() || !(c.is_numeric() || c.is_whitespace() || is_block_punct(c)),
            None => c.is_alphabetic(),
        };
        if is_letter {
            let name = block.map_or(OTHER_BLOCK, |b| b.name);
            *counts.entry(name.to_string()).or_default() += 1;
        } else {
            other_count += 1;
        }
    }
    let letters: usize = counts.values().sum();
    // BTreeMap iterates in name order, so the first maximum wins ties.
    let dominant_script = counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (name, &n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((name, n)),
        })
        .map_or_else(|| "none".to_string(), |(name, _)| name.clone());
    let mixed = counts.values().filter(|&&n| n * 10 >= letters && n > 0).count() >= 2;
    ScriptProfile {
        counts,
        other_count,
        dominant_script,
        mixed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kannada_only() {
        let p = script_profile("ನಮಸ್ಕಾರ");
        assert_eq!(p.counts.len(), 1);
        assert_eq!(p.counts["Kannada"], "ನಮಸ್ಕಾರ".chars().count());
        assert_eq!(p.dominant_script, "Kannada");
        assert!(!p.mixed);
    }

    #[test]
    fn latin_only() {
        let p = script_profile("hello");
        assert_eq!(p.counts["Latin"], 5);
        assert!(!p.mixed);
        assert_eq!(p.other_count, 0);
    }

    #[test]
    fn code_mixed() {
        let p = script_profile("super ಕಥೆ");
        assert_eq!(p.counts["Latin"], 5);
        assert_eq!(p.counts["Kannada"], 3);
        assert_eq!(p.other_count, 1);
        assert!(p.mixed);
        assert_eq!(p.dominant_script, "Latin");
    }

    #[test]
    fn ties_and_empty() {
        let p = script_profile("ab ಕಥ");
        assert_eq!(p.dominant_script, "Kannada");
        let p = script_profile("123 !!");
        assert_eq!(p.dominant_script, "none");
        assert_eq!(p.letters(), 0);
        assert_eq!(p.other_count, 6);
        assert_eq!(script_profile("ಅ೧").other_count, 1);
    }

    #[test]
    fn other_letters_bucketed() {
        let p = script_profile("abcdefghij привет");
        assert_eq!(p.counts[OTHER_BLOCK], 6);
        assert!(p.mixed);
    }
}
