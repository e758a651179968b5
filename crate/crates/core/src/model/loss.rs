//! Next-token cross-entropy restricted to transcription positions, and the
//! z-loss auxiliary term.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::text::TokenId;

pub fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean NLL of `token_ids[p]` under `logits[p - 1]` over positions with
/// `loss_mask[p]`. `token_ids` and `loss_mask` are aligned with the rows of
/// `logits` (audio rows carry a dummy id and a false mask).
pub fn transcription_loss(logits: ArrayView2<'_, f64>, token_ids: &[TokenId], loss_mask: &[bool]) -> Result<f64> {
    Ok(loss_terms(logits, token_ids, loss_mask)?.0)
}

fn loss_terms(
    logits: ArrayView2<'_, f64>,
    token_ids: &[TokenId],
    loss_mask: &[bool],
) -> Result<(f64, Vec<(usize, TokenId, f64)>)> {
    let n = logits.nrows();
    if token_ids.len() != n || loss_mask.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: token_ids.len().min(loss_mask.len()),
        });
    }
    let mut terms = Vec::new();
    let mut total = 0.0;
    for p in 1..n {
        if !loss_mask[p] {
            continue;
        }
        let row = logits.row(p - 1);
        let lse = log_sum_exp(row);
        total += lse - row[token_ids[p] as usize];
        terms.push((p - 1, token_ids[p], lse));
    }
    if terms.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok((total / terms.len() as f64, terms))
}

/// Loss and its gradient w.r.t. the logits.
pub fn transcription_loss_grad(
    logits: ArrayView2<'_, f64>,
    token_ids: &[TokenId],
    loss_mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    let (loss, terms) = loss_terms(logits, token_ids, loss_mask)?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let inv = 1.0 / terms.len() as f64;
    for (row, target, lse) in terms {
        let mut g = grad.row_mut(row);
        for (gv, &l) in g.iter_mut().zip(logits.row(row)) {
            *gv = (l - lse).exp() * inv;
        }
        g[target as usize] -= inv;
    }
    Ok((loss, grad))
}

/// Mean NLL of `targets[i]` under row `i` of `logits`.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, targets: &[TokenId]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, &t)| log_sum_exp(row) - row[t as usize])
        .sum();
    total / targets.len() as f64
}

pub fn cross_entropy_grad(logits: ArrayView2<'_, f64>, targets: &[TokenId]) -> (f64, Array2<f64>) {
    let inv = 1.0 / targets.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, (row, &t)) in logits.rows().into_iter().zip(targets).enumerate() {
        let lse = log_sum_exp(row);
        total += lse - row[t as usize];
        let mut g = grad.row_mut(i);
        for (gv, &l) in g.iter_mut().zip(row) {
            *gv = (l - lse).exp() * inv;
        }
        g[t as usize] -= inv;
    }
    (total * inv, grad)
}

/// Mean over rows of the squared log-partition. Unscaled.
pub fn z_loss(logits: ArrayView2<'_, f64>) -> f64 {
    if logits.nrows() == 0 {
        return 0.0;
    }
    let sum: f64 = logits.rows().into_iter().map(|r| log_sum_exp(r).powi(2)).sum();
    sum / logits.nrows() as f64
}

pub fn z_loss_grad(logits: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    if n == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row);
        sum += lse * lse;
        let c = 2.0 * lse / n as f64;
        for (g, &l) in grad.row_mut(i).iter_mut().zip(row) {
            *g = c * (l - lse).exp();
        }
    }
    (sum / n as f64, grad)
}
