use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Character vocabulary. Id 0 is UNK, ids `1..size()` are known characters in
/// sorted order, and `bos()` (== `size()`) is an input-only start symbol that
/// no model ever predicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl From<Vec<char>> for CharVocab {
    fn from(chars: Vec<char>) -> Self {
        CharVocab::new(chars)
    }
}

impl From<CharVocab> for Vec<char> {
    fn from(v: CharVocab) -> Self {
        v.chars
    }
}

pub const UNK: u32 = 0;

impl CharVocab {
    pub fn new(mut chars: Vec<char>) -> Self {
        chars.sort_unstable();
        chars.dedup();
        let mut v = CharVocab {
            chars,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self.chars.iter().enumerate().map(|(i, &c)| (c, i as u32 + 1)).collect();
    }

    /// Characters occurring at least `min_count` times; rarer ones fall to UNK.
    pub fn build<S: AsRef<str>>(lines: &[S], min_count: u32) -> Self {
        let mut counts: BTreeMap<char, u32> = BTreeMap::new();
        for l in lines {
            for c in l.as_ref().chars() {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        Self::new(counts.into_iter().filter(|(_, n)| *n >= min_count).map(|(c, _)| c).collect())
    }

    /// Number of predictable symbols (UNK plus known characters).
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn bos(&self) -> u32 {
        self.size() as u32
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.id(c)).collect()
    }
}
