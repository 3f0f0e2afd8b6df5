use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// True when every row's diagonal entry exceeds each off-diagonal entry.
    pub fn diagonal_dominant(&self) -> bool {
        self.confusion.iter().enumerate().all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, &v)| j == i || row[i] > v)
        })
    }
}

pub fn metrics(predictions: &[usize], labels: &[usize], k: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        for v in [p, l] {
            if v >= k {
                return Err(Error::Label { label: v, classes: k });
            }
        }
        confusion[l][p] += 1;
    }
    let n = labels.len() as f64;
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut weighted_f1 = 0.0;
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        if support == 0 {
            continue;
        }
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted_f1 += support as f64 / n * f1;
    }
    Ok(Metrics {
        accuracy: correct as f64 / n,
        weighted_f1,
        confusion,
    })
}
