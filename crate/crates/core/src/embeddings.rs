//! Skip-gram word embeddings trained with negative sampling, and the
//! word2vec-style text table format (`count dim` header, then `word v1 .. vdim`).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Tokenizer, TokenizerKind};
use crate::linalg::{dot, sigmoid};
use crate::meta::ArtifactMeta;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    dim: usize,
    matrix: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, dim: usize) -> Result<Self> {
        let mut words = Vec::with_capacity(rows.len());
        let mut vocab = HashMap::with_capacity(rows.len());
        let mut matrix = Vec::with_capacity(rows.len() * dim);
        for (w, v) in rows {
            if v.len() != dim {
                return Err(Error::Format(format!("row `{w}` has {} values, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("row `{w}` has a non-finite value")));
            }
            if vocab.insert(w.clone(), words.len()).is_some() {
                return Err(Error::Format(format!("duplicate word `{w}`")));
            }
            words.push(w);
            matrix.extend(v);
        }
        Ok(EmbeddingTable {
            words,
            vocab,
            dim,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vocab.get(word).map(|&i| self.row(i))
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.get(a)?, self.get(b)?);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        Some(if nx == 0.0 || ny == 0.0 { 0.0 } else { dot / (nx * ny) })
    }
}

pub fn save_table(table: &EmbeddingTable, path: &Path, meta: Option<&ArtifactMeta>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    match meta {
        Some(m) => writeln!(w, "{} {} # {}", table.len(), table.dim, m.to_comment())?,
        None => writeln!(w, "{} {}", table.len(), table.dim)?,
    }
    for (i, word) in table.words.iter().enumerate() {
        write!(w, "{word}")?;
        for v in table.row(i) {
            // `{}` prints the shortest representation that parses back exactly
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty embedding file".into()))??;
    let header = header.split('#').next().unwrap_or("");
    let mut h = header.split_whitespace();
    let parse = |s: Option<&str>, what: &str| -> Result<usize> {
        s.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("header: missing or invalid {what}")))
    };
    let count = parse(h.next(), "count")?;
    let dim = parse(h.next(), "dim")?;
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let word = parts.next().unwrap().to_string();
        let vals = parts
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))?;
        if vals.len() != dim {
            return Err(Error::Format(format!("line {}: {} values, header says {dim}", i + 2, vals.len())));
        }
        rows.push((word, vals));
    }
    if rows.len() != count {
        return Err(Error::Format(format!("header says {count} rows, found {}", rows.len())));
    }
    EmbeddingTable::from_rows(rows, dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_count: u32,
    pub seed: u64,
    pub tokenizer: TokenizerKind,
    /// Shards trained independently per epoch and averaged; 1 = plain sequential SGD.
    pub workers: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_count: 1,
            seed: 1,
            tokenizer: TokenizerKind::Default,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipGramReport {
    /// Mean pair loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl SkipGramReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Negative-sampling loss of one (center, context) pair:
/// `-ln σ(c·o) - Σ_k ln σ(-c·n_k)`.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut l = -sigmoid(dot(center, context)).ln();
    for n in negatives {
        l -= sigmoid(-dot(center, n)).ln();
    }
    l
}

/// Analytic gradient of [`pair_loss`] w.r.t. center, context and each negative.
pub fn pair_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let gp = sigmoid(dot(center, context)) - 1.0;
    let mut gc: Vec<f64> = context.iter().map(|o| gp * o).collect();
    let go: Vec<f64> = center.iter().map(|c| gp * c).collect();
    let mut gn = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(center, n));
        for (a, b) in gc.iter_mut().zip(n.iter()) {
            *a += g * b;
        }
        gn.push(center.iter().map(|c| g * c).collect());
    }
    (gc, go, gn)
}

struct Model {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

struct Sampler {
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Sampler { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

/// Train skip-gram embeddings with negative sampling over a unigram^0.75
/// noise distribution. Deterministic for a fixed seed and worker count.
pub fn train_skipgram<S: AsRef<str>>(lines: &[S], config: &SkipGramConfig) -> Result<(EmbeddingTable, SkipGramReport)> {
    if config.dim == 0 || config.epochs == 0 || config.workers == 0 {
        return Err(Error::InvalidConfig("dim, epochs and workers must be positive".into()));
    }
    let tokenized: Vec<Vec<String>> = lines
        .iter()
        .map(|l| config.tokenizer.tokenize(l.as_ref()).tokens().to_vec())
        .collect();
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for t in tokenized.iter().flatten() {
        *freq.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut vocab: Vec<(&str, u64)> = freq.into_iter().filter(|(_, c)| *c >= config.min_count as u64).collect();
    if vocab.len() < 2 {
        return Err(Error::DegenerateCorpus(format!(
            "need at least 2 distinct words with count >= {}, found {}",
            config.min_count,
            vocab.len()
        )));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();
    let counts: Vec<u64> = vocab.iter().map(|(_, c)| *c).collect();
    let sentences: Vec<Vec<usize>> = tokenized
        .iter()
        .map(|s| s.iter().filter_map(|t| index.get(t.as_str()).copied()).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();
    let sampler = Sampler::new(&counts);

    let dim = config.dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model {
        dim,
        input: (0..v * dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect(),
        output: vec![0.0; v * dim],
    };

    let total_tokens: usize = sentences.iter().map(Vec::len).sum::<usize>().max(1);
    let total_work = (total_tokens * config.epochs) as f64;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let workers = config.workers.min(sentences.len().max(1));
    for epoch in 0..config.epochs {
        let shard_len = sentences.len().div_ceil(workers).max(1);
        let shards: Vec<&[Vec<usize>]> = sentences.chunks(shard_len).collect();
        let done_before = (epoch * total_tokens) as f64;
        let results = par::map_indexed(&shards, |s, shard| {
            let mut local = Model {
                dim,
                input: model.input.clone(),
                output: model.output.clone(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((epoch as u64) << 32) ^ (s as u64 + 1));
            // each shard advances the learning-rate schedule as if it saw the whole epoch
            let scale = shards.len() as f64;
            let mut processed = 0.0;
            let mut loss = 0.0;
            let mut pairs = 0usize;
            for sent in shard.iter() {
                for pos in 0..sent.len() {
                    let progress = (done_before + processed * scale) / total_work;
                    let lr = config.lr * (1.0 - progress).max(1e-4);
                    let b = rng.gen_range(0..config.window.max(1));
                    let reach = config.window.max(1) - b;
                    let lo = pos.saturating_sub(reach);
                    let hi = (pos + reach).min(sent.len() - 1);
                    for cpos in lo..=hi {
                        if cpos == pos {
                            continue;
                        }
                        loss += train_pair(&mut local, sent[pos], sent[cpos], config.negatives, &sampler, lr, &mut rng);
                        pairs += 1;
                    }
                    processed += 1.0;
                }
            }
            (local, loss, pairs)
        });
        let mut loss = 0.0;
        let mut pairs = 0usize;
        if results.len() == 1 {
            let (m, l, p) = results.into_iter().next().unwrap();
            model = m;
            loss = l;
            pairs = p;
        } else {
            let k = results.len() as f64;
            model.input.iter_mut().for_each(|x| *x = 0.0);
            model.output.iter_mut().for_each(|x| *x = 0.0);
            for (m, l, p) in results {
                for (a, b) in model.input.iter_mut().zip(&m.input) {
                    *a += b / k;
                }
                for (a, b) in model.output.iter_mut().zip(&m.output) {
                    *a += b / k;
                }
                loss += l;
                pairs += p;
            }
        }
        let mean = if pairs > 0 { loss / pairs as f64 } else { 0.0 };
        if !mean.is_finite() || model.input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence(format!("skip-gram loss became non-finite in epoch {epoch}")));
        }
        epoch_losses.push(mean);
    }

    let rows = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.to_string(), model.input[i * dim..(i + 1) * dim].to_vec()))
        .collect();
    Ok((EmbeddingTable::from_rows(rows, dim)?, SkipGramReport { epoch_losses }))
}

fn train_pair<R: Rng>(m: &mut Model, center: usize, context: usize, negatives: usize, sampler: &Sampler, lr: f64, rng: &mut R) -> f64 {
    let dim = m.dim;
    let mut grad_center = vec![0.0; dim];
    let mut loss = 0.0;
    let ci = center * dim;
    let mut step = |m: &mut Model, target: usize, positive: bool| {
        let ti = target * dim;
        let s = dot(&m.input[ci..ci + dim], &m.output[ti..ti + dim]);
        let (g, l) = if positive {
            (sigmoid(s) - 1.0, -sigmoid(s).ln())
        } else {
            (sigmoid(s), -sigmoid(-s).ln())
        };
        for j in 0..dim {
            grad_center[j] += g * m.output[ti + j];
            m.output[ti + j] -= lr * g * m.input[ci + j];
        }
        l
    };
    loss += step(m, context, true);
    for _ in 0..negatives {
        let n = sampler.sample(rng);
        if n == context {
            continue;
        }
        loss += step(m, n, false);
    }
    for j in 0..dim {
        m.input[ci + j] -= lr * grad_center[j];
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim: 16,
            epochs: 3,
            seed,
            ..SkipGramConfig::default()
        }
    }

    fn toy_lines() -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut lines = Vec::new();
        for _ in 0..300 {
            // a and b always appear together; c shows up alone with filler
            if rng.gen_bool(0.5) {
                lines.push("a b".to_string());
            } else {
                lines.push("b a".to_string());
            }
            lines.push("c c".to_string());
        }
        lines
    }

    #[test]
    fn deterministic_for_seed() {
        let lines = toy_lines();
        let (a, _) = train_skipgram(&lines, &small(7)).unwrap();
        let (b, _) = train_skipgram(&lines, &small(7)).unwrap();
        assert_eq!(a, b);
        assert!((0..a.len()).all(|i| a.row(i).len() == 16));
    }

    #[test]
    fn cooccurring_words_are_closer() {
        let (t, report) = train_skipgram(&toy_lines(), &small(3)).unwrap();
        let ab = t.cosine("a", "b").unwrap();
        let ac = t.cosine("a", "c").unwrap();
        assert!(ab > ac, "cos(a,b)={ab} cos(a,c)={ac}");
        assert!(report.final_loss().is_finite());
    }

    #[test]
    fn degenerate_corpus() {
        let r = train_skipgram(&["x x x", "x"], &small(1));
        assert!(matches!(r, Err(Error::DegenerateCorpus(_))));
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 6;
        for _ in 0..5 {
            let mut rv = || (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let c = rv();
            let o = rv();
            let n1 = rv();
            let n2 = rv();
            let (gc, go, gn) = pair_grad(&c, &o, &[&n1, &n2]);
            let h = 1e-6;
            let check = |analytic: f64, plus: f64, minus: f64| {
                let fd = (plus - minus) / (2.0 * h);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "analytic {analytic} fd {fd}");
            };
            for j in 0..dim {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[j] += h;
                cm[j] -= h;
                check(gc[j], pair_loss(&cp, &o, &[&n1, &n2]), pair_loss(&cm, &o, &[&n1, &n2]));
                let mut op = o.clone();
                let mut om = o.clone();
                op[j] += h;
                om[j] -= h;
                check(go[j], pair_loss(&c, &op, &[&n1, &n2]), pair_loss(&c, &om, &[&n1, &n2]));
                let mut np = n2.clone();
                let mut nm = n2.clone();
                np[j] += h;
                nm[j] -= h;
                check(gn[1][j], pair_loss(&c, &o, &[&n1, &np]), pair_loss(&c, &o, &[&n1, &nm]));
            }
        }
    }

    #[test]
    fn table_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (t, _) = train_skipgram(&toy_lines(), &small(2)).unwrap();
        let p = dir.path().join("emb.vec");
        save_table(&t, &p, Some(&ArtifactMeta::new(&"x", 2))).unwrap();
        assert_eq!(load_table(&p).unwrap(), t);

        fs::write(&p, "1 3\nw 1 2\n").unwrap();
        assert!(matches!(load_table(&p), Err(Error::Format(_))));
        fs::write(&p, "").unwrap();
        assert!(matches!(load_table(&p), Err(Error::Format(_))));
    }

    #[test]
    fn sharded_training_is_deterministic() {
        let cfg = SkipGramConfig {
            workers: 3,
            ..small(9)
        };
        let lines = toy_lines();
        let (a, _) = train_skipgram(&lines, &cfg).unwrap();
        let (b, _) = train_skipgram(&lines, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
