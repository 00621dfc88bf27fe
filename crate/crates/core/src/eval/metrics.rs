use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Confusion counts with Chat as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: Label, gold: Label) {
        match (pred, gold) {
            (Label::Chat, Label::Chat) => self.tp += 1,
            (Label::Chat, Label::NonChat) => self.fp += 1,
            (Label::NonChat, Label::Chat) => self.fn_ += 1,
            (Label::NonChat, Label::NonChat) => self.tn += 1,
        }
    }
}

/// Percentages for the Chat class. Undefined ratios (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
        let precision = pct(c.tp, c.tp + c.fp);
        let recall = pct(c.tp, c.tp + c.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Metrics {
            accuracy: pct(c.tp + c.tn, c.total()).unwrap_or(0.0),
            precision,
            recall,
            f1,
            confusion: c,
        }
    }
}

pub fn compute_metrics(pred: &[Label], gold: &[Label]) -> Result<Metrics> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!("{} predictions for {} gold labels", pred.len(), gold.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gold) {
        c.add(p, g);
    }
    Ok(Metrics::from_confusion(c))
}

/// Always predicts the majority class, NonChat.
pub fn majority_baseline(gold: &[Label]) -> Result<Metrics> {
    compute_metrics(&vec![Label::NonChat; gold.len()], gold)
}

/// Unweighted mean over folds; each field averages the folds where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn macro_mean(folds: &[Metrics]) -> MeanMetrics {
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    MeanMetrics {
        accuracy: mean(folds.iter().map(|m| m.accuracy).collect()).unwrap_or(0.0),
        precision: mean(folds.iter().filter_map(|m| m.precision).collect()),
        recall: mean(folds.iter().filter_map(|m| m.recall).collect()),
        f1: mean(folds.iter().filter_map(|m| m.f1).collect()),
    }
}

/// Metrics over the pooled confusion counts of all folds.
pub fn micro_mean(folds: &[Metrics]) -> Metrics {
    let mut c = Confusion::default();
    for m in folds {
        c.tp += m.confusion.tp;
        c.fp += m.confusion.fp;
        c.fn_ += m.confusion.fn_;
        c.tn += m.confusion.tn;
    }
    Metrics::from_confusion(c)
}
