use std::fmt::Write as _;

use super::breakdown::BreakdownRow;
use super::experiment::{LearningCurve, Report};
use crate::error::Result;

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.2}"))
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    out.push_str(&line(header.iter().map(|h| h.to_string()).collect()));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.clone()));
        out.push('\n');
    }
}

fn breakdown_rows(rows: &[BreakdownRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let m = r.metrics.as_ref();
            vec![
                r.key.clone(),
                r.support.to_string(),
                pct(m.map(|m| m.accuracy)),
                pct(m.and_then(|m| m.f1)),
            ]
        })
        .collect()
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text tables: headline results, then per-method breakdowns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.meta.to_comment());
        let _ = writeln!(
            out,
            "{}-fold cross validation over {} utterances ({} Chat)\n",
            self.k, self.corpus_size, self.n_chat
        );
        let rows: Vec<Vec<String>> = self
            .methods
            .iter()
            .map(|m| {
                vec![
                    m.name.clone(),
                    pct(Some(m.macro_mean.accuracy)),
                    pct(m.macro_mean.precision),
                    pct(m.macro_mean.recall),
                    pct(m.macro_mean.f1),
                    pct(m.micro.f1),
                ]
            })
            .collect();
        table(&mut out, &["Method", "Accuracy", "Precision", "Recall", "F1", "F1 (micro)"], &rows);
        for m in &self.methods {
            if let Some(v) = &m.vote_breakdown {
                let _ = writeln!(out, "\n{}: by number of votes", m.name);
                table(&mut out, &["Votes", "Support", "Accuracy", "F1"], &breakdown_rows(v));
            }
            let _ = writeln!(out, "\n{}: by length in characters", m.name);
            table(&mut out, &["Length", "Support", "Accuracy", "F1"], &breakdown_rows(&m.length_breakdown));
        }
        if let Some(lc) = &self.learning_curve {
            let _ = writeln!(out, "\n{}: learning curve", lc.method);
            let rows: Vec<Vec<String>> = lc
                .points
                .iter()
                .map(|p| vec![format!("{:.2}", p.fraction), pct(p.mean_accuracy), p.failed_folds.len().to_string()])
                .collect();
            table(&mut out, &["Fraction", "Accuracy", "Failed folds"], &rows);
        }
        out
    }
}

impl LearningCurve {
    /// `fraction<TAB>mean_accuracy`, with NA for points where every fold failed.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("fraction\tmean_accuracy\n");
        for p in &self.points {
            let acc = p.mean_accuracy.map_or_else(|| "NA".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(s, "{}\t{acc}", p.fraction);
        }
        s
    }
}
