//! Interpolated count-based character n-gram model.
//!
//! With weights λ_0 (uniform) .. λ_n (order n), the distribution is built
//! bottom-up: `P_0 = 1/V`, and for each order k whose history was seen in
//! training `P_k = (λ_k/Λ_k)·ML_k + (1 − λ_k/Λ_k)·P_{k−1}` with
//! `Λ_k = λ_0 + .. + λ_k`. Unseen histories fall through to `P_{k−1}`. When
//! every history is seen this is plain linear interpolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::vocab::CharVocab;
use super::CharLm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NextCounts {
    pub total: u64,
    pub next: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramLm {
    pub vocab: CharVocab,
    pub order: usize,
    /// λ_0 (uniform) through λ_order; sums to 1.
    pub lambdas: Vec<f64>,
    /// `tables[k-1]` maps a history of k−1 ids to next-id counts.
    pub tables: Vec<BTreeMap<Vec<u32>, NextCounts>>,
}

/// Default weights: 1% uniform, the rest rising linearly with order.
pub fn default_lambdas(order: usize) -> Vec<f64> {
    let floor = 0.01;
    let denom: f64 = (1..=order).map(|k| k as f64).sum();
    std::iter::once(floor)
        .chain((1..=order).map(|k| (1.0 - floor) * k as f64 / denom))
        .collect()
}

fn validate_lambdas(order: usize, lambdas: &[f64]) -> Result<()> {
    if order == 0 {
        return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
    }
    if lambdas.len() != order + 1 {
        return Err(Error::InvalidConfig(format!(
            "order {order} needs {} interpolation weights (uniform first), got {}",
            order + 1,
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) || lambdas[0] <= 0.0 {
        return Err(Error::InvalidConfig("weights must be nonnegative with a positive uniform weight".into()));
    }
    let s: f64 = lambdas.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("interpolation weights sum to {s}, not 1")));
    }
    Ok(())
}

pub fn train_ngram_lm<S: AsRef<str>>(lines: &[S], order: usize, lambdas: Option<Vec<f64>>, min_char_count: u32) -> Result<NgramLm> {
    let lambdas = lambdas.unwrap_or_else(|| default_lambdas(order));
    validate_lambdas(order, &lambdas)?;
    let vocab = CharVocab::build(lines, min_char_count.max(1));
    let bos = vocab.bos();
    let mut tables: Vec<BTreeMap<Vec<u32>, NextCounts>> = vec![BTreeMap::new(); order];
    for line in lines {
        let ids = vocab.encode(line.as_ref());
        let mut padded = vec![bos; order - 1];
        padded.extend(&ids);
        for t in 0..ids.len() {
            let pos = t + order - 1;
            let next = padded[pos];
            for k in 1..=order {
                let hist = padded[pos + 1 - k..pos].to_vec();
                let e = tables[k - 1].entry(hist).or_default();
                e.total += 1;
                *e.next.entry(next).or_insert(0) += 1;
            }
        }
    }
    Ok(NgramLm {
        vocab,
        order,
        lambdas,
        tables,
    })
}

impl NgramLm {
    fn history_for(&self, state: &[u32], k: usize) -> Vec<u32> {
        state[state.len() + 1 - k..].to_vec()
    }
}

impl CharLm for NgramLm {
    /// The last `order − 1` ids, BOS-padded.
    type State = Vec<u32>;

    fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    fn start(&self) -> Vec<u32> {
        vec![self.vocab.bos(); self.order - 1]
    }

    fn advance(&self, state: &mut Vec<u32>, id: u32) {
        if self.order > 1 {
            state.remove(0);
            state.push(id);
        }
    }

    fn dist(&self, state: &Vec<u32>) -> Vec<f64> {
        let v = self.vocab.size();
        let mut p = vec![1.0 / v as f64; v];
        let mut cum = self.lambdas[0];
        for k in 1..=self.order {
            cum += self.lambdas[k];
            let hist = self.history_for(state, k);
            if let Some(c) = self.tables[k - 1].get(&hist) {
                if c.total == 0 || cum <= 0.0 {
                    continue;
                }
                let w = self.lambdas[k] / cum;
                p.iter_mut().for_each(|x| *x *= 1.0 - w);
                for (&id, &n) in &c.next {
                    p[id as usize] += w * n as f64 / c.total as f64;
                }
            }
        }
        p
    }
}
