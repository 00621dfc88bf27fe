//! Character language models and the utterance features derived from them:
//! the per-character mean log-probability score and the query-log presence flag.

mod gru;
mod ngram;
mod query;
mod vocab;

pub use gru::{gru_step, train_gru_lm, GruLm, GruParams, GruTrainConfig, GruTrainLog};
pub use ngram::{default_lambdas, train_ngram_lm, NextCounts, NgramLm};
pub use query::{normalize_query, query_presence, QuerySet};
pub use vocab::{CharVocab, UNK};

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::meta::ArtifactMeta;
use crate::par;

/// A left-to-right character model that can be advanced one symbol at a time.
pub trait CharLm {
    type State: Clone;

    fn vocab(&self) -> &CharVocab;

    /// State after conditioning on BOS.
    fn start(&self) -> Self::State;

    fn advance(&self, state: &mut Self::State, id: u32);

    /// Next-symbol distribution over `vocab().size()` outputs.
    fn dist(&self, state: &Self::State) -> Vec<f64>;
}

pub fn next_char_dist<L: CharLm>(prefix: &[u32], lm: &L) -> Vec<f64> {
    let mut s = lm.start();
    for &id in prefix {
        lm.advance(&mut s, id);
    }
    lm.dist(&s)
}

/// Natural-log probability of each character given everything before it.
pub fn char_log_probs<L: CharLm>(text: &str, lm: &L) -> Vec<f64> {
    let mut sc = StreamingScorer::new(lm);
    sc.feed(text);
    sc.log_probs
}

/// `(1/m) Σ_t ln p(c_t | BOS, c_1..c_{t−1})` over the m characters of `text`.
pub fn lm_score<L: CharLm>(text: &str, lm: &L) -> Result<f64> {
    let mut sc = StreamingScorer::new(lm);
    sc.feed(text);
    sc.score()
}

/// Incremental scorer; feeding a text in any chunking gives the same score.
pub struct StreamingScorer<'a, L: CharLm> {
    lm: &'a L,
    state: L::State,
    log_probs: Vec<f64>,
}

impl<'a, L: CharLm> StreamingScorer<'a, L> {
    pub fn new(lm: &'a L) -> Self {
        StreamingScorer {
            state: lm.start(),
            lm,
            log_probs: Vec::new(),
        }
    }

    pub fn feed(&mut self, chunk: &str) {
        for c in chunk.chars() {
            let id = self.lm.vocab().id(c);
            let p = self.lm.dist(&self.state)[id as usize];
            self.log_probs.push(p.ln());
            self.lm.advance(&mut self.state, id);
        }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn score(&self) -> Result<f64> {
        if self.log_probs.is_empty() {
            return Err(Error::EmptyUtterance(String::new()));
        }
        Ok(self.total_log_prob() / self.log_probs.len() as f64)
    }
}

/// `exp(−mean per-character log-probability)` over all lines.
pub fn perplexity<L, S>(lines: &[S], lm: &L) -> f64
where
    L: CharLm + Sync,
    S: AsRef<str> + Sync,
{
    let parts = par::map(lines, |l| {
        let mut sc = StreamingScorer::new(lm);
        sc.feed(l.as_ref());
        (sc.total_log_prob(), sc.len())
    });
    let (lp, n) = parts.iter().fold((0.0, 0usize), |(a, b), (x, y)| (a + x, b + y));
    if n == 0 {
        return f64::NAN;
    }
    (-lp / n as f64).exp()
}

/// Log-linear interpolation of two per-character scores.
pub fn combine_scores(gru_score: f64, ngram_score: f64, weight: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&weight));
    weight * gru_score + (1.0 - weight) * ngram_score
}

#[derive(Debug, Clone, PartialEq)]
pub enum LanguageModel {
    Gru(GruLm),
    Ngram(NgramLm),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmState {
    Gru(Vec<f64>),
    Ngram(Vec<u32>),
}

impl CharLm for LanguageModel {
    type State = LmState;

    fn vocab(&self) -> &CharVocab {
        match self {
            LanguageModel::Gru(m) => m.vocab(),
            LanguageModel::Ngram(m) => m.vocab(),
        }
    }

    fn start(&self) -> LmState {
        match self {
            LanguageModel::Gru(m) => LmState::Gru(m.start()),
            LanguageModel::Ngram(m) => LmState::Ngram(m.start()),
        }
    }

    fn advance(&self, state: &mut LmState, id: u32) {
        match (self, state) {
            (LanguageModel::Gru(m), LmState::Gru(s)) => m.advance(s, id),
            (LanguageModel::Ngram(m), LmState::Ngram(s)) => m.advance(s, id),
            _ => unreachable!("state from a different model family"),
        }
    }

    fn dist(&self, state: &LmState) -> Vec<f64> {
        match (self, state) {
            (LanguageModel::Gru(m), LmState::Gru(s)) => m.dist(s),
            (LanguageModel::Ngram(m), LmState::Ngram(s)) => m.dist(s),
            _ => unreachable!("state from a different model family"),
        }
    }
}

pub const GRU_KIND: &str = "gru_lm";
pub const NGRAM_KIND: &str = "ngram_lm";

impl LanguageModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LanguageModel::Gru(_) => GRU_KIND,
            LanguageModel::Ngram(_) => NGRAM_KIND,
        }
    }

    pub fn to_container(&self, meta: Option<ArtifactMeta>) -> Result<Container> {
        match self {
            LanguageModel::Gru(m) => {
                let p = &m.params;
                let mut c = Container::new(
                    GRU_KIND,
                    meta,
                    json!({"vocab": m.vocab, "embed_dim": p.embed_dim(), "hidden_dim": p.hidden_dim()}),
                );
                let mats = [&p.embed, &p.w_z, &p.u_z, &p.w_r, &p.u_r, &p.w_h, &p.u_h, &p.out];
                for (name, mat) in GruParams::NAMES.iter().zip(mats) {
                    c.push(name, vec![mat.rows, mat.cols], &mat.data);
                }
                c.push("out_bias", vec![p.out_bias.len()], &p.out_bias);
                Ok(c)
            }
            LanguageModel::Ngram(m) => {
                let mut c = Container::new(NGRAM_KIND, meta, json!({"vocab": m.vocab, "order": m.order, "lambdas": m.lambdas}));
                for (k, table) in m.tables.iter().enumerate() {
                    let width = k + 2;
                    let mut rows = Vec::new();
                    for (hist, counts) in table {
                        for (&next, &n) in &counts.next {
                            if n >= 1 << 24 {
                                return Err(Error::Format("n-gram count too large for f32 storage".into()));
                            }
                            rows.extend(hist.iter().map(|&h| h as f64));
                            rows.push(next as f64);
                            rows.push(n as f64);
                        }
                    }
                    c.push(&format!("order{}", k + 1), vec![rows.len() / width, width], &rows);
                }
                Ok(c)
            }
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let vocab: CharVocab = c.extra_field("vocab")?;
        let v = vocab.size();
        match c.kind.as_str() {
            GRU_KIND => {
                let e: usize = c.extra_field("embed_dim")?;
                let h: usize = c.extra_field("hidden_dim")?;
                let shapes = [(v + 1, e), (h, e), (h, h), (h, e), (h, h), (h, e), (h, h), (v, h)];
                let mut mats = Vec::with_capacity(8);
                for (name, (r, cols)) in GruParams::NAMES.iter().zip(shapes) {
                    mats.push(Mat::from_vec(r, cols, c.tensor(name, &[r, cols])?.to_vec()));
                }
                let out_bias = c.tensor("out_bias", &[v])?.to_vec();
                let mut it = mats.into_iter();
                let mut next = || it.next().unwrap();
                let params = GruParams {
                    embed: next(),
                    w_z: next(),
                    u_z: next(),
                    w_r: next(),
                    u_r: next(),
                    w_h: next(),
                    u_h: next(),
                    out: next(),
                    out_bias,
                };
                Ok(LanguageModel::Gru(GruLm::new(vocab, params)?))
            }
            NGRAM_KIND => {
                let order: usize = c.extra_field("order")?;
                let lambdas: Vec<f64> = c.extra_field("lambdas")?;
                let mut tables = Vec::with_capacity(order);
                for k in 1..=order {
                    let width = k + 1;
                    let t = c
                        .tensors
                        .iter()
                        .find(|t| t.name == format!("order{k}"))
                        .ok_or_else(|| Error::Format(format!("missing n-gram table for order {k}")))?;
                    if t.shape.len() != 2 || t.shape[1] != width {
                        return Err(Error::Format(format!("bad shape for order-{k} table")));
                    }
                    let mut table: BTreeMap<Vec<u32>, NextCounts> = BTreeMap::new();
                    for row in t.data.chunks_exact(width) {
                        let hist: Vec<u32> = row[..k - 1].iter().map(|&x| x as u32).collect();
                        let next = row[k - 1] as u32;
                        let n = row[k] as u64;
                        if next as usize >= v {
                            return Err(Error::Format("n-gram entry outside vocabulary".into()));
                        }
                        let e = table.entry(hist).or_default();
                        e.total += n;
                        e.next.insert(next, n);
                    }
                    tables.push(table);
                }
                Ok(LanguageModel::Ngram(NgramLm {
                    vocab,
                    order,
                    lambdas,
                    tables,
                }))
            }
            other => Err(Error::Format(format!("not a language model: `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path, meta: Option<ArtifactMeta>) -> Result<()> {
        self.to_container(meta)?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Scoring model for one external resource: a single LM, or a GRU and an
/// n-gram model combined log-linearly per character.
#[derive(Debug, Clone, PartialEq)]
pub enum ExternalScorer {
    Single(LanguageModel),
    Combined { gru: GruLm, ngram: NgramLm, weight: f64 },
}

impl ExternalScorer {
    pub fn score(&self, text: &str) -> Result<f64> {
        match self {
            ExternalScorer::Single(m) => lm_score(text, m),
            ExternalScorer::Combined { gru, ngram, weight } => {
                Ok(combine_scores(lm_score(text, gru)?, lm_score(text, ngram)?, *weight))
            }
        }
    }
}
