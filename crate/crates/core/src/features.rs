//! Sparse feature vectors: character n-grams, word n-grams, averaged word
//! embeddings, and three trailing slots for the external LM/query features.
//!
//! Block layout inside a [`FeatureSpace`] is fixed:
//!
//! ```text
//! [ char n-grams | word n-grams | embedding dims | tweet, query, query_binary ]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Joins the two tokens of a word bigram.
pub const BIGRAM_SEP: char = '\u{1F}';

pub const FEATURE_SPACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSequence(tokens.into_iter().filter(|t| !t.is_empty()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> TokenSequence;
}

/// Built-in tokenizers. `Default` splits on whitespace and isolates
/// punctuation; an apostrophe that starts a clitic (`'s`, `'m`) stays attached
/// to the following letters. `Chars` makes each non-space character a token,
/// for scripts written without spaces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    #[default]
    Default,
    Whitespace,
    Chars,
}

impl Tokenizer for TokenizerKind {
    fn tokenize(&self, text: &str) -> TokenSequence {
        match self {
            TokenizerKind::Default => default_tokenize(text),
            TokenizerKind::Whitespace => TokenSequence::new(text.split_whitespace().map(str::to_string).collect()),
            TokenizerKind::Chars => {
                TokenSequence::new(text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect())
            }
        }
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    default_tokenize(text)
}

fn default_tokenize(text: &str) -> TokenSequence {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut cur, &mut tokens);
        } else if c.is_alphanumeric() {
            cur.push(c);
        } else if (c == '\'' || c == '\u{2019}')
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            flush(&mut cur, &mut tokens);
            cur.push(c);
        } else {
            flush(&mut cur, &mut tokens);
            tokens.push(c.to_string());
        }
    }
    flush(&mut cur, &mut tokens);
    TokenSequence(tokens)
}

/// Contiguous character n-grams with multiplicity; whitespace counts as a character.
pub fn char_ngrams(text: &str, n: usize) -> BTreeMap<String, u32> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = BTreeMap::new();
    if n == 0 || chars.len() < n {
        return out;
    }
    for w in chars.windows(n) {
        *out.entry(w.iter().collect::<String>()).or_insert(0) += 1;
    }
    out
}

pub fn word_ngrams(tokens: &TokenSequence, n: usize) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    let sep = BIGRAM_SEP.to_string();
    for w in tokens.tokens().windows(n) {
        *out.entry(w.join(&sep)).or_insert(0) += 1;
    }
    out
}

fn all_char_grams(text: &str) -> BTreeMap<String, u32> {
    let mut m = char_ngrams(text, 1);
    for (g, c) in char_ngrams(text, 2) {
        *m.entry(g).or_insert(0) += c;
    }
    m
}

fn all_word_grams(tokens: &TokenSequence) -> BTreeMap<String, u32> {
    let mut m = word_ngrams(tokens, 1);
    for (g, c) in word_ngrams(tokens, 2) {
        *m.entry(g).or_insert(0) += c;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NgramValue {
    #[default]
    Count,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub min_count: u32,
    /// Width of the embedding block; 0 disables it.
    pub embedding_dim: usize,
    pub ngram_value: NgramValue,
    pub normalize_embeddings: bool,
    pub tokenizer: TokenizerKind,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            min_count: 1,
            embedding_dim: 300,
            ngram_value: NgramValue::Count,
            normalize_embeddings: false,
            tokenizer: TokenizerKind::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub version: u32,
    pub char_vocab: Vec<String>,
    pub word_vocab: Vec<String>,
    pub embedding_dim: usize,
    pub ngram_value: NgramValue,
    pub normalize_embeddings: bool,
    pub tokenizer: TokenizerKind,
    #[serde(skip)]
    char_index: BTreeMap<String, u32>,
    #[serde(skip)]
    word_index: BTreeMap<String, u32>,
}

/// Offsets of the three external slots relative to `FeatureSpace::external_offset`.
pub const EXTERNAL_SLOTS: usize = 3;

impl FeatureSpace {
    fn from_vocab(char_vocab: Vec<String>, word_vocab: Vec<String>, config: &FeatureConfig) -> Self {
        let mut s = FeatureSpace {
            version: FEATURE_SPACE_VERSION,
            char_vocab,
            word_vocab,
            embedding_dim: config.embedding_dim,
            ngram_value: config.ngram_value,
            normalize_embeddings: config.normalize_embeddings,
            tokenizer: config.tokenizer,
            char_index: BTreeMap::new(),
            word_index: BTreeMap::new(),
        };
        s.reindex();
        s
    }

    fn reindex(&mut self) {
        self.char_index = self.char_vocab.iter().enumerate().map(|(i, g)| (g.clone(), i as u32)).collect();
        let off = self.word_offset() as u32;
        self.word_index = self
            .word_vocab
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), off + i as u32))
            .collect();
    }

    pub fn char_offset(&self) -> usize {
        0
    }

    pub fn word_offset(&self) -> usize {
        self.char_vocab.len()
    }

    pub fn embedding_offset(&self) -> usize {
        self.word_offset() + self.word_vocab.len()
    }

    pub fn external_offset(&self) -> usize {
        self.embedding_offset() + self.embedding_dim
    }

    pub fn total_dim(&self) -> usize {
        self.external_offset() + EXTERNAL_SLOTS
    }

    pub fn char_id(&self, gram: &str) -> Option<u32> {
        self.char_index.get(gram).copied()
    }

    pub fn word_id(&self, gram: &str) -> Option<u32> {
        self.word_index.get(gram).copied()
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.tokenizer.tokenize(text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut space: FeatureSpace = serde_json::from_str(s)?;
        if space.version != FEATURE_SPACE_VERSION {
            return Err(Error::Format(format!("unsupported feature space version {}", space.version)));
        }
        for block in [&space.char_vocab, &space.word_vocab] {
            if block.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format("feature vocabulary must be strictly sorted".into()));
            }
        }
        space.reindex();
        Ok(space)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Index every char/word 1- and 2-gram seen at least `min_count` times in the
/// training texts. Vocabularies are sorted lexicographically.
pub fn build_feature_space<S: AsRef<str>>(texts: &[S], config: &FeatureConfig) -> Result<FeatureSpace> {
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut chars: BTreeMap<String, u32> = BTreeMap::new();
    let mut words: BTreeMap<String, u32> = BTreeMap::new();
    for t in texts {
        let t = t.as_ref();
        for (g, c) in all_char_grams(t) {
            *chars.entry(g).or_insert(0) += c;
        }
        for (g, c) in all_word_grams(&config.tokenizer.tokenize(t)) {
            *words.entry(g).or_insert(0) += c;
        }
    }
    let keep = |m: BTreeMap<String, u32>| -> Vec<String> {
        m.into_iter().filter(|(_, c)| *c >= config.min_count).map(|(g, _)| g).collect()
    };
    Ok(FeatureSpace::from_vocab(keep(chars), keep(words), config))
}

/// Mean embedding of in-vocabulary tokens; zero vector if none are known.
pub fn average_embeddings(tokens: &TokenSequence, table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in tokens.tokens() {
        if let Some(row) = table.get(t) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
            n += 1;
        }
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalFeatures {
    pub tweet_score: f64,
    pub query_score: f64,
    pub query_binary: f64,
}

impl ExternalFeatures {
    pub fn new(tweet_score: f64, query_score: f64, query_binary: f64) -> Self {
        ExternalFeatures {
            tweet_score,
            query_score,
            query_binary,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.tweet_score, self.query_score, self.query_binary]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Zero-mean, unit-variance scaling of the external features, fitted on a training fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
}

impl Default for Standardizer {
    fn default() -> Self {
        Standardizer {
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }
}

impl Standardizer {
    pub fn fit(rows: &[ExternalFeatures]) -> Self {
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_array()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 3];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_array()).zip(mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: ExternalFeatures) -> ExternalFeatures {
        let a = x.as_array();
        ExternalFeatures::from_array([0, 1, 2].map(|i| (a[i] - self.mean[i]) / self.scale[i]))
    }
}

/// Sorted-index sparse vector with no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds from arbitrary (index, value) pairs: duplicates are summed, zeros dropped.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        if let Some((i, v)) = pairs.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidFeature(format!("non-finite value {v} at index {i}")));
        }
        pairs.sort_by_key(|p| p.0);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let (indices, values) = indices.into_iter().zip(values).filter(|(_, v)| *v != 0.0).unzip();
        Ok(SparseVector { indices, values })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, index: u32) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    /// Exclusive upper bound on indices (0 when empty).
    pub fn dim_bound(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        self.iter().map(|(i, v)| w[i] * v).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Copy keeping only indices below `bound`.
    pub fn truncated(&self, bound: usize) -> SparseVector {
        let (indices, values) = self.iter().filter(|(i, _)| *i < bound).map(|(i, v)| (i as u32, v)).unzip();
        SparseVector { indices, values }
    }

    pub fn scaled(&self, s: f64) -> SparseVector {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Feature vector of one utterance. N-grams not in the space are dropped; the
/// embedding block is filled only when the space has one.
pub fn featurize(
    text: &str,
    space: &FeatureSpace,
    table: Option<&EmbeddingTable>,
    external: ExternalFeatures,
) -> Result<SparseVector> {
    let ext = external.as_array();
    if let Some(v) = ext.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidFeature(format!("external feature {v} is not finite")));
    }
    let binary = space.ngram_value == NgramValue::Binary;
    let val = |c: u32| if binary { 1.0 } else { c as f64 };
    let mut pairs = Vec::new();
    for (g, c) in all_char_grams(text) {
        if let Some(id) = space.char_id(&g) {
            pairs.push((id, val(c)));
        }
    }
    let tokens = space.tokenize(text);
    for (g, c) in all_word_grams(&tokens) {
        if let Some(id) = space.word_id(&g) {
            pairs.push((id, val(c)));
        }
    }
    if space.embedding_dim > 0 {
        let table = table.ok_or_else(|| Error::Shape("feature space has an embedding block but no table was given".into()))?;
        if table.dim() != space.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding table dim {} != feature space embedding dim {}",
                table.dim(),
                space.embedding_dim
            )));
        }
        let mut avg = average_embeddings(&tokens, table);
        if space.normalize_embeddings {
            let n = avg.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                avg.iter_mut().for_each(|v| *v /= n);
            }
        }
        let off = space.embedding_offset() as u32;
        pairs.extend(avg.into_iter().enumerate().map(|(j, v)| (off + j as u32, v)));
    }
    let off = space.external_offset() as u32;
    pairs.extend(ext.into_iter().enumerate().map(|(j, v)| (off + j as u32, v)));
    SparseVector::from_pairs(pairs)
}

/// Sorted set of distinct n-gram strings (char and word) in a text; handy for
/// leakage checks.
pub fn ngram_strings(text: &str, tokenizer: TokenizerKind) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = all_char_grams(text).into_keys().collect();
    s.extend(all_word_grams(&tokenizer.tokenize(text)).into_keys());
    s
}
