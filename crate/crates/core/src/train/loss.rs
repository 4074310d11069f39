//! Mean cross-entropy over a batch of four-way predictions.

use ndarray::Array2;

use crate::data::Action;
use crate::error::{Error, Result};

fn check_rows(rows: usize, cols: usize, labels: &[Action]) -> Result<()> {
    if rows != labels.len() {
        return Err(Error::shape("labels", rows, labels.len()));
    }
    if cols != Action::COUNT {
        return Err(Error::shape("class columns", Action::COUNT, cols));
    }
    Ok(())
}

/// Mean of `-ln p[label]` over rows of a probability matrix.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[Action]) -> Result<f64> {
    check_rows(probs.nrows(), probs.ncols(), labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, l)| -probs[[b, l.index()]].ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Softmax and cross-entropy fused in the log domain. Returns the mean loss
/// and its gradient with respect to the logits.
pub fn cross_entropy_with_logits(
    logits: &Array2<f64>,
    labels: &[Action],
) -> Result<(f64, Array2<f64>)> {
    check_rows(logits.nrows(), logits.ncols(), labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (b, label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = m + z.ln();
        total += log_z - row[label.index()];
        for c in 0..row.len() {
            grad[[b, c]] = (row[c] - log_z).exp() / n;
        }
        grad[[b, label.index()]] -= 1.0 / n;
    }
    Ok((total / n, grad))
}
