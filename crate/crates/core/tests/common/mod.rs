//! Oracles and fixtures shared by the integration tests. Each oracle is
//! written directly from its definition, without reusing library internals.

#![allow(dead_code)]

use std::sync::Arc;

use chatgate::classifiers::ExternalResources;
use chatgate::corpus::{Label, MarkovSource};
use chatgate::embeddings::{train_skipgram, SkipGramConfig};
use chatgate::eval::Resources;
use chatgate::features::SparseVector;
use chatgate::lm::{train_gru_lm, train_ngram_lm, ExternalScorer, GruTrainConfig, QuerySet};

/// Minimizes the L2-loss SVM dual `½αᵀ(Q + I/(2c))α − Σα` over `α ≥ 0` by
/// projected gradient with step `1/L`, then returns the primal weights
/// (last entry is the bias, feature value 1) and the primal objective.
pub fn svm_projected_gradient(x: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = x.len();
    let aug: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.push(1.0);
            r
        })
        .collect();
    let d = aug[0].len();
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            q[i][j] = y[i] * y[j] * aug[i].iter().zip(&aug[j]).map(|(a, b)| a * b).sum::<f64>();
        }
        q[i][i] += 1.0 / (2.0 * c);
    }
    // Gershgorin bound on the largest eigenvalue
    let l = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut alpha = vec![0.0; n];
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i][j] * alpha[j]).sum::<f64>() - 1.0).collect();
        for i in 0..n {
            alpha[i] = (alpha[i] - grad[i] / l).max(0.0);
        }
    }
    let mut w = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            w[k] += alpha[i] * y[i] * aug[i][k];
        }
    }
    let obj = primal(&aug, y, &w, c);
    (w, obj)
}

/// `½‖w‖² + c Σ max(0, 1 − y_i w·x_i)²` with `x` already carrying the bias feature.
pub fn primal(aug: &[Vec<f64>], y: &[f64], w: &[f64], c: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = aug
        .iter()
        .zip(y)
        .map(|(x, yi)| {
            let m = 1.0 - yi * x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            if m > 0.0 {
                m * m
            } else {
                0.0
            }
        })
        .sum();
    reg + c * loss
}

pub fn dense_to_sparse(rows: &[Vec<f64>]) -> Vec<SparseVector> {
    rows.iter()
        .map(|r| SparseVector::from_pairs(r.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect()).unwrap())
        .collect()
}

/// Confusion counts `(tp, fp, fn, tn)` by direct enumeration.
pub fn brute_confusion(pred: &[Label], gold: &[Label]) -> (usize, usize, usize, usize) {
    let count = |p: Label, g: Label| pred.iter().zip(gold).filter(|(a, b)| **a == p && **b == g).count();
    (
        count(Label::Chat, Label::Chat),
        count(Label::Chat, Label::NonChat),
        count(Label::NonChat, Label::Chat),
        count(Label::NonChat, Label::NonChat),
    )
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nb);
    if den == 0.0 {
        0.0
    } else {
        diff / den
    }
}

/// Central differences of `f` with respect to every entry of `params[k]`.
pub fn finite_diff<P, F>(params: &P, k: usize, h: f64, get: impl Fn(&mut P) -> Vec<&mut [f64]>, f: F) -> Vec<f64>
where
    P: Clone,
    F: Fn(&P) -> f64,
{
    let n = get(&mut params.clone())[k].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = params.clone();
        get(&mut plus)[k][i] += h;
        let mut minus = params.clone();
        get(&mut minus)[k][i] -= h;
        out.push((f(&plus) - f(&minus)) / (2.0 * h));
    }
    out
}

/// Stand-ins for the tweet and query-log resources: text from the chat and
/// nonchat synthetic sources, disjoint from any evaluation corpus by seed.
pub struct ExternalCorpora {
    pub tweets: Vec<String>,
    pub queries: Vec<String>,
}

pub fn external_corpora(n: usize, seed: u64) -> ExternalCorpora {
    ExternalCorpora {
        tweets: MarkovSource::chat_profile().generate_lines(n, seed.wrapping_add(101)),
        queries: MarkovSource::nonchat_profile().generate_lines(n, seed.wrapping_add(202)),
    }
}

pub fn small_gru_config(seed: u64) -> GruTrainConfig {
    GruTrainConfig {
        embed_dim: 24,
        hidden_dim: 32,
        epochs: 4,
        lr: 0.01,
        batch: 32,
        seed,
        ..GruTrainConfig::default()
    }
}

fn scorer(lines: &[String], seed: u64) -> ExternalScorer {
    let (gru, _) = train_gru_lm(lines, &small_gru_config(seed)).unwrap();
    let ngram = train_ngram_lm(lines, 4, None, 1).unwrap();
    ExternalScorer::Combined { gru, ngram, weight: 0.5 }
}

/// Embeddings plus both external scorers and the query set.
pub fn synthetic_resources(n_lines: usize, emb_dim: usize, seed: u64) -> Resources {
    let ext = external_corpora(n_lines, seed);
    let all: Vec<&String> = ext.tweets.iter().chain(&ext.queries).collect();
    let (table, _) = train_skipgram(
        &all,
        &SkipGramConfig {
            dim: emb_dim,
            epochs: 3,
            seed,
            ..SkipGramConfig::default()
        },
    )
    .unwrap();
    Resources {
        embeddings: Some(Arc::new(table)),
        externals: Some(Arc::new(ExternalResources {
            tweet: scorer(&ext.tweets, seed),
            query: scorer(&ext.queries, seed + 1),
            queries: QuerySet::from_lines(&ext.queries),
        })),
    }
}
