//! Dev-set hyperparameter search. Grid points train independently and may run
//! in parallel; the winner maximizes Chat-class dev F1, with ties going to the
//! earlier point after sorting by model size.

use serde::{Deserialize, Serialize};

use super::cnn::{train_cnn, CnnConfig, CnnExample, CnnModel};
use super::svm::{predict_linear, train_svm_with, LinearModel, SvmParams};
use crate::corpus::Label;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::par;

use super::cnn::f1_or_zero;

/// The 21 powers of two from 2^-10 to 2^10.
pub fn svm_c_grid() -> Vec<f64> {
    (-10..=10).map(|e| 2f64.powi(e)).collect()
}

pub const REGION_SETS: [&[usize]; 7] = [&[2], &[3], &[1, 2], &[2, 3], &[3, 4], &[1, 2, 3], &[2, 3, 4]];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub n_maps: usize,
    pub regions: Vec<usize>,
}

impl CnnArch {
    /// Filter parameter count per embedding dimension.
    pub fn size(&self) -> usize {
        self.n_maps * self.regions.iter().sum::<usize>()
    }
}

pub fn cnn_grid() -> Vec<CnnArch> {
    [100, 150]
        .iter()
        .flat_map(|&n_maps| {
            REGION_SETS.iter().map(move |r| CnnArch {
                n_maps,
                regions: r.to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridOutcome<M, C> {
    pub model: M,
    pub config: C,
    pub dev_f1: f64,
    /// Every point with its dev F1, in size order.
    pub scores: Vec<(C, f64)>,
}

/// Trains every point and keeps the best by dev F1. `size` orders the grid
/// for tie-breaking (smaller wins; equal sizes keep grid order).
pub fn grid_search<C, M, S, F>(grid: &[C], size: S, train_and_score: F) -> Result<GridOutcome<M, C>>
where
    C: Clone + Sync,
    M: Send,
    S: Fn(&C) -> f64,
    F: Fn(&C) -> Result<(M, f64)> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("hyperparameter grid is empty".into()));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| size(&grid[a]).total_cmp(&size(&grid[b])));
    let sorted: Vec<C> = order.iter().map(|&i| grid[i].clone()).collect();
    let results = par::map(&sorted, &train_and_score);
    let mut best: Option<(usize, M, f64)> = None;
    let mut scores = Vec::with_capacity(sorted.len());
    for (i, r) in results.into_iter().enumerate() {
        let (m, f1) = r?;
        scores.push((sorted[i].clone(), f1));
        if best.as_ref().is_none_or(|b| f1 > b.2) {
            best = Some((i, m, f1));
        }
    }
    let (i, model, dev_f1) = best.expect("nonempty grid");
    Ok(GridOutcome {
        model,
        config: sorted[i].clone(),
        dev_f1,
        scores,
    })
}

pub struct SvmData<'a> {
    pub x: &'a [SparseVector],
    pub y: &'a [Label],
}

pub fn grid_search_svm(
    train: SvmData<'_>,
    dev: SvmData<'_>,
    dim: usize,
    c_grid: &[f64],
    base: &SvmParams,
) -> Result<GridOutcome<LinearModel, f64>> {
    grid_search(c_grid, |&c| c, |&c| {
        let (model, _) = train_svm_with(train.x, train.y, dim, &SvmParams { c, ..*base })?;
        let pred = dev
            .x
            .iter()
            .map(|x| predict_linear(&model, x).map(|p| p.0))
            .collect::<Result<Vec<_>>>()?;
        let f1 = f1_or_zero(&pred, dev.y);
        Ok((model, f1))
    })
}

pub fn grid_search_cnn(
    train: &[CnnExample],
    dev: &[CnnExample],
    embeddings: &EmbeddingTable,
    archs: &[CnnArch],
    base: &CnnConfig,
) -> Result<GridOutcome<CnnModel, CnnArch>> {
    grid_search(archs, |a| a.size() as f64, |a| {
        let config = CnnConfig {
            n_maps: a.n_maps,
            regions: a.regions.clone(),
            ..base.clone()
        };
        let (model, log) = train_cnn(train, dev, embeddings, &config)?;
        Ok((model, log.best_dev_f1()))
    })
}
