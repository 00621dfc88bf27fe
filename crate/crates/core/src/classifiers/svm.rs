//! L2-regularized L2-loss linear SVM trained by dual coordinate descent.
//!
//! Primal: `½‖w̃‖² + c Σ max(0, 1 − y_i w̃·x̃_i)²` where `x̃` appends a constant
//! bias feature (so the bias is regularized too, as in LIBLINEAR). Dual:
//! `min_α ½ αᵀ(Q + D)α − Σα`, `α ≥ 0`, `Q_ij = y_i y_j x̃_i·x̃_j`, `D_ii = 1/(2c)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &SparseVector) -> Result<f64> {
        if x.dim_bound() > self.weights.len() {
            return Err(Error::Shape(format!(
                "feature index {} outside model dimension {}",
                x.dim_bound() - 1,
                self.weights.len()
            )));
        }
        Ok(x.dot_dense(&self.weights) + self.bias)
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Chat iff the margin is strictly positive.
pub fn predict_linear(model: &LinearModel, x: &SparseVector) -> Result<(Label, f64)> {
    let m = model.margin(x)?;
    Ok((if m > 0.0 { Label::Chat } else { Label::NonChat }, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub eps: f64,
    pub max_epochs: usize,
    /// Append a constant feature of this value; 0 disables the bias.
    pub bias_feature: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            eps: 1e-3,
            max_epochs: 1000,
            bias_feature: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SvmTrace {
    /// Dual objective (maximization form) after each epoch, starting at α = 0.
    pub dual_objective: Vec<f64>,
    pub converged: bool,
}

impl SvmTrace {
    pub fn epochs(&self) -> usize {
        self.dual_objective.len().saturating_sub(1)
    }
}

pub fn train_svm(x: &[SparseVector], y: &[Label], dim: usize, c: f64) -> Result<LinearModel> {
    train_svm_with(x, y, dim, &SvmParams { c, ..SvmParams::default() }).map(|(m, _)| m)
}

pub fn train_svm_with(x: &[SparseVector], y: &[Label], dim: usize, params: &SvmParams) -> Result<(LinearModel, SvmTrace)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} feature vectors but {} labels", x.len(), y.len())));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidConfig(format!("svm c must be positive, got {}", params.c)));
    }
    if x.len() < 2 || y.iter().all(|&l| l == y[0]) {
        return Err(Error::SingleClass);
    }
    if let Some(v) = x.iter().find(|v| v.dim_bound() > dim) {
        return Err(Error::Shape(format!("feature index {} outside dimension {dim}", v.dim_bound() - 1)));
    }
    let n = x.len();
    let b2 = params.bias_feature * params.bias_feature;
    let diag = 0.5 / params.c;
    let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let qii: Vec<f64> = x.iter().map(|v| v.norm_sq() + b2 + diag).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut wb = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let dual = |alpha: &[f64], w: &[f64], wb: f64| {
        let wn: f64 = w.iter().map(|v| v * v).sum::<f64>() + wb * wb;
        alpha.iter().sum::<f64>() - 0.5 * wn - 0.5 * diag * alpha.iter().map(|a| a * a).sum::<f64>()
    };
    let mut trace = SvmTrace {
        dual_objective: vec![0.0],
        converged: false,
    };
    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let mut max_violation: f64 = 0.0;
        for &i in &order {
            let g = ys[i] * (x[i].dot_dense(&w) + wb * params.bias_feature) - 1.0 + diag * alpha[i];
            let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).max(0.0);
                let d = (alpha[i] - old) * ys[i];
                for (j, v) in x[i].iter() {
                    w[j] += d * v;
                }
                wb += d * params.bias_feature;
            }
        }
        let obj = dual(&alpha, &w, wb);
        let prev = *trace.dual_objective.last().unwrap();
        if obj < prev - 1e-9 * prev.abs().max(1.0) {
            return Err(Error::Divergence(format!("svm dual objective decreased from {prev} to {obj}")));
        }
        trace.dual_objective.push(obj);
        if max_violation < params.eps {
            trace.converged = true;
            break;
        }
    }
    let model = LinearModel {
        weights: w,
        bias: wb * params.bias_feature,
        c: params.c,
    };
    if !model.is_finite() {
        return Err(Error::Divergence("svm weights are not finite".into()));
    }
    Ok((model, trace))
}

/// `½(‖w‖² + b²) + c Σ max(0, 1 − y(w·x + b))²`, the objective minimized with a bias feature of 1.
pub fn primal_objective(model: &LinearModel, x: &[SparseVector], y: &[Label]) -> f64 {
    let reg = 0.5 * (model.weights.iter().map(|v| v * v).sum::<f64>() + model.bias * model.bias);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(v, l)| {
            let m = 1.0 - l.sign() * (v.dot_dense(&model.weights) + model.bias);
            if m > 0.0 {
                m * m
            } else {
                0.0
            }
        })
        .sum();
    reg + model.c * loss
}
