//! Softmax with temperature and the cross-entropy losses built on it.

use crate::error::{input, Result};
use crate::matrix::Matrix;

const LOG_CLAMP: f64 = 1e-12;

fn check_temperature(t: f64) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return input(format!("temperature must be positive and finite, got {t}"));
    }
    Ok(())
}

#[inline]
pub(crate) fn softmax_into(z: &[f64], t: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = ((v - max) / t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `softmax(z / T)`, stabilized by subtracting the max logit.
pub fn tempered_softmax(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, t, &mut out);
    Ok(out)
}

/// Row-wise tempered softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix, t: f64) -> Result<Matrix> {
    check_temperature(t)?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), t, out.row_mut(i));
    }
    Ok(out)
}

/// `log softmax(z / T)`.
pub fn log_softmax_row(z: &[f64], t: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|&v| ((v - max) / t).exp()).sum::<f64>().ln();
    z.iter().map(|&v| (v - max) / t - lse).collect()
}

fn check_subset(subset: &[usize], rows: usize) -> Result<()> {
    if subset.is_empty() {
        return input("loss over an empty node subset");
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= rows) {
        return input(format!("subset row {bad} out of range ({rows} rows)"));
    }
    Ok(())
}

/// `−(1/|S|) Σ_{i∈S} log p_i[y_i]`, the log clamped at `1e-12`.
/// `labels[i]` is the class of row `i`.
pub fn hard_ce(probs: &Matrix, labels: &[usize], subset: &[usize]) -> Result<f64> {
    check_subset(subset, probs.rows())?;
    let mut total = 0.0;
    for &i in subset {
        let y = labels[i];
        if y >= probs.cols() {
            return input(format!(
                "label {y} of row {i} exceeds class count {}",
                probs.cols()
            ));
        }
        total -= probs.get(i, y).max(LOG_CLAMP).ln();
    }
    Ok(total / subset.len() as f64)
}

/// `−(1/|S|) Σ_{i∈S} Σ_c p̃ᵗ_ic log p̃ˢ_ic` with the same clamp.
pub fn soft_ce(student: &Matrix, teacher: &Matrix, subset: &[usize]) -> Result<f64> {
    if student.rows() != teacher.rows() || student.cols() != teacher.cols() {
        return input("student and teacher probabilities differ in shape");
    }
    check_subset(subset, student.rows())?;
    let mut total = 0.0;
    for &i in subset {
        for (&p, &q) in teacher.row(i).iter().zip(student.row(i)) {
            total -= p * q.max(LOG_CLAMP).ln();
        }
    }
    Ok(total / subset.len() as f64)
}

/// Hard cross-entropy of `softmax(logits)` and its gradient w.r.t. the logits.
/// Rows outside `subset` get zero gradient.
pub fn hard_ce_grad(logits: &Matrix, labels: &[usize], subset: &[usize]) -> Result<(f64, Matrix)> {
    check_subset(subset, logits.rows())?;
    let scale = 1.0 / subset.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for &i in subset {
        let y = labels[i];
        if y >= logits.cols() {
            return input(format!(
                "label {y} of row {i} exceeds class count {}",
                logits.cols()
            ));
        }
        let z = logits.row(i);
        loss -= log_softmax_row(z, 1.0)[y];
        let g = grad.row_mut(i);
        softmax_into(z, 1.0, g);
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Soft cross-entropy of `softmax(logits / T)` against fixed teacher rows and
/// its gradient w.r.t. the logits.
pub fn soft_ce_grad(
    logits: &Matrix,
    teacher: &Matrix,
    t: f64,
    subset: &[usize],
) -> Result<(f64, Matrix)> {
    check_temperature(t)?;
    check_subset(subset, logits.rows())?;
    if teacher.rows() != logits.rows() || teacher.cols() != logits.cols() {
        return input("teacher probabilities do not match the logits shape");
    }
    let scale = 1.0 / subset.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for &i in subset {
        let z = logits.row(i);
        let p = teacher.row(i);
        let logq = log_softmax_row(z, t);
        loss -= p.iter().zip(&logq).map(|(a, b)| a * b).sum::<f64>();
        let mass: f64 = p.iter().sum();
        let g = grad.row_mut(i);
        softmax_into(z, t, g);
        for (v, &pi) in g.iter_mut().zip(p) {
            *v = (*v * mass - pi) * scale / t;
        }
    }
    Ok((loss * scale, grad))
}

/// Pulls a gradient back through `p = softmax(z)`: `p ⊙ (dp − ⟨p, dp⟩)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(dp)
        .map(|(&pi, &di)| pi * (di - inner))
        .collect()
}
