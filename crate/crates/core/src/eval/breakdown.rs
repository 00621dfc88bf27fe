use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use crate::corpus::Label;
use crate::error::{Error, Result};

/// One test prediction, as recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub fold: usize,
    pub gold: Label,
    pub pred: Label,
    pub majority_count: Option<u8>,
    pub char_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub key: String,
    pub support: usize,
    /// `None` for an empty row.
    pub metrics: Option<Metrics>,
}

fn row(key: String, recs: &[&PredictionRecord]) -> BreakdownRow {
    let pred: Vec<Label> = recs.iter().map(|r| r.pred).collect();
    let gold: Vec<Label> = recs.iter().map(|r| r.gold).collect();
    BreakdownRow {
        key,
        support: recs.len(),
        metrics: compute_metrics(&pred, &gold).ok(),
    }
}

/// Rows for each majority count (4..7) that occurs, ascending.
pub fn breakdown_by_votes(records: &[PredictionRecord]) -> Result<Vec<BreakdownRow>> {
    let mut groups: BTreeMap<u8, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        let c = r.majority_count.ok_or_else(|| Error::MissingVotes(r.id.clone()))?;
        groups.entry(c).or_default().push(r);
    }
    Ok(groups.into_iter().map(|(c, recs)| row(c.to_string(), &recs)).collect())
}

/// Inclusive character-length range; `hi = None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl LengthBin {
    pub fn contains(&self, len: usize) -> bool {
        len >= self.lo && self.hi.is_none_or(|h| len <= h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("{}-{}", self.lo, h),
            None => format!("{}+", self.lo),
        }
    }
}

pub fn default_length_bins() -> Vec<LengthBin> {
    [(1, Some(5)), (6, Some(10)), (11, Some(15)), (16, None)]
        .into_iter()
        .map(|(lo, hi)| LengthBin { lo, hi })
        .collect()
}

/// One row per bin (empty bins included); a record lands in the first bin containing it.
pub fn breakdown_by_length(records: &[PredictionRecord], bins: &[LengthBin]) -> Vec<BreakdownRow> {
    let mut groups: Vec<Vec<&PredictionRecord>> = vec![Vec::new(); bins.len()];
    for r in records {
        if let Some(b) = bins.iter().position(|b| b.contains(r.char_len)) {
            groups[b].push(r);
        }
    }
    bins.iter().zip(groups).map(|(b, recs)| row(b.label(), &recs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, gold: Label, pred: Label, votes: Option<u8>, len: usize) -> PredictionRecord {
        PredictionRecord {
            id: format!("u{i}"),
            fold: 0,
            gold,
            pred,
            majority_count: votes,
            char_len: len,
        }
    }

    #[test]
    fn votes_rows_sum_to_total() {
        let recs: Vec<PredictionRecord> = (0..20)
            .map(|i| rec(i, Label::Chat, if i % 3 == 0 { Label::NonChat } else { Label::Chat }, Some(4 + (i % 4) as u8), i + 1))
            .collect();
        let rows = breakdown_by_votes(&recs).unwrap();
        assert_eq!(rows.iter().map(|r| r.key.as_str()).collect::<Vec<_>>(), ["4", "5", "6", "7"]);
        assert_eq!(rows.iter().map(|r| r.support).sum::<usize>(), 20);
        let bins = breakdown_by_length(&recs, &default_length_bins());
        assert_eq!(bins.iter().map(|r| r.support).collect::<Vec<_>>(), [5, 5, 5, 5]);
    }

    #[test]
    fn unanimous_single_row() {
        let recs: Vec<PredictionRecord> = (0..5).map(|i| rec(i, Label::Chat, Label::Chat, Some(7), 3)).collect();
        assert_eq!(breakdown_by_votes(&recs).unwrap().len(), 1);
    }

    #[test]
    fn missing_votes() {
        let recs = vec![rec(0, Label::Chat, Label::Chat, None, 3)];
        assert!(matches!(breakdown_by_votes(&recs), Err(Error::MissingVotes(_))));
    }

    #[test]
    fn single_bin_equals_overall() {
        let recs: Vec<PredictionRecord> = (0..9)
            .map(|i| rec(i, Label::NonChat, if i < 4 { Label::Chat } else { Label::NonChat }, None, 1 + i * 7))
            .collect();
        let rows = breakdown_by_length(&recs, &[LengthBin { lo: 1, hi: None }]);
        let overall = compute_metrics(
            &recs.iter().map(|r| r.pred).collect::<Vec<_>>(),
            &recs.iter().map(|r| r.gold).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(rows[0].metrics.unwrap(), overall);
        assert_eq!(rows[0].key, "1+");
    }
}
