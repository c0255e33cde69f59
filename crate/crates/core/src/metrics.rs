//! Macro-averaged accuracy, precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class counts, in the order of the `classes` argument.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: Vec<usize>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub correct: u64,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn tally(preds: &[usize], golds: &[usize], classes: &[usize]) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::shape(
                "macro_metrics",
                format!("{} predictions for {} gold labels", preds.len(), golds.len()),
            ));
        }
        if classes.is_empty() {
            return Err(Error::EmptySet { op: "macro_metrics" });
        }
        let pos = |c: usize| classes.iter().position(|&k| k == c);
        let k = classes.len();
        let mut counts = ConfusionCounts {
            classes: classes.to_vec(),
            tp: vec![0; k],
            fp: vec![0; k],
            fn_: vec![0; k],
            correct: 0,
            total: preds.len() as u64,
        };
        for (&p, &g) in preds.iter().zip(golds) {
            let gi = pos(g).ok_or_else(|| Error::Data(format!("gold label {g} is not a listed class")))?;
            if p == g {
                counts.tp[gi] += 1;
                counts.correct += 1;
            } else {
                counts.fn_[gi] += 1;
                if let Some(pi) = pos(p) {
                    counts.fp[pi] += 1;
                }
            }
        }
        Ok(counts)
    }

    /// Per-class `(P, R, F1)`, zero wherever a denominator is zero.
    pub fn per_class(&self) -> Vec<(f64, f64, f64)> {
        (0..self.classes.len())
            .map(|c| {
                let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
                let p = ratio(self.tp[c], self.tp[c] + self.fp[c]);
                let r = ratio(self.tp[c], self.tp[c] + self.fn_[c]);
                let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                (p, r, f1)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn macro_metrics(preds: &[usize], golds: &[usize], classes: &[usize]) -> Result<MacroMetrics> {
    let counts = ConfusionCounts::tally(preds, golds, classes)?;
    let per = counts.per_class();
    let k = per.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| per.iter().map(f).sum::<f64>() / k;
    Ok(MacroMetrics {
        acc: if counts.total == 0 {
            0.0
        } else {
            counts.correct as f64 / counts.total as f64
        },
        precision: mean(|x| x.0),
        recall: mean(|x| x.1),
        f1: mean(|x| x.2),
    })
}
