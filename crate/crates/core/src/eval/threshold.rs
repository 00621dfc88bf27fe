use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::lm::ExternalScorer;

/// Predicts Chat when the score strictly exceeds the threshold.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| if s > threshold { Label::Chat } else { Label::NonChat })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Chat F1 on dev; 0 when undefined.
    pub dev_f1: f64,
}

/// Dev-F1-maximizing threshold among the midpoints of consecutive distinct
/// scores plus one value below the minimum. Ties go to the lower threshold.
pub fn select_threshold(scores: &[f64], gold: &[Label]) -> Result<ThresholdChoice> {
    if scores.is_empty() || scores.len() != gold.len() {
        return Err(Error::Shape(format!("{} dev scores for {} labels", scores.len(), gold.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidFeature(format!("dev score {s} is not finite")));
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let below = distinct[0] - 1.0;
    let candidates = std::iter::once(below).chain(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut best = ThresholdChoice {
        threshold: below,
        dev_f1: f64::NEG_INFINITY,
    };
    for t in candidates {
        let f1 = compute_metrics(&apply_threshold(scores, t), gold)?.f1.unwrap_or(0.0);
        if f1 > best.dev_f1 {
            best = ThresholdChoice { threshold: t, dev_f1: f1 };
        }
    }
    Ok(best)
}

/// Threshold baseline on the tweet-LM score: calibrate on dev, evaluate on test.
pub fn lm_threshold_baseline(dev: &[(&str, Label)], test: &[(&str, Label)], lm: &ExternalScorer) -> Result<(f64, Metrics)> {
    let score = |set: &[(&str, Label)]| set.iter().map(|(t, _)| lm.score(t)).collect::<Result<Vec<f64>>>();
    let labels = |set: &[(&str, Label)]| set.iter().map(|p| p.1).collect::<Vec<_>>();
    let choice = select_threshold(&score(dev)?, &labels(dev))?;
    let m = compute_metrics(&apply_threshold(&score(test)?, choice.threshold), &labels(test))?;
    Ok((choice.threshold, m))
}
