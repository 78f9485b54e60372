use crate::error::{invalid, Result};
use crate::matrix::Matrix;

/// Mean softmax cross-entropy over points with label >= 0, and `dL/dlogits`.
pub fn cross_entropy(logits: &Matrix, labels: &[i32]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return invalid("logit rows differ from label count");
    }
    let labeled = labels.iter().filter(|&&l| l >= 0).count();
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    if labeled == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / labeled as f64;
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let l = l as usize;
        if l >= logits.cols() {
            return invalid(format!("label {l} exceeds class count {}", logits.cols()));
        }
        let row = logits.row(r);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - top).exp()).sum();
        total += z.ln() + top - row[l];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - top).exp() / z * inv;
        }
        g[l] -= inv;
    }
    Ok((total * inv, grad))
}

pub fn argmax_labels(logits: &Matrix) -> Vec<i32> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best as i32
        })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on a single logit column, positives weighted by
/// `positive_weight`.
pub fn weighted_bce(logits: &Matrix, targets: &[bool], positive_weight: f64) -> Result<(f64, Matrix)> {
    if logits.cols() != 1 || logits.rows() != targets.len() {
        return invalid("expected one logit per target");
    }
    let n = targets.len().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), 1);
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let z = logits.get(r, 0);
        // log(1 + e^z) computed stably
        let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
        let (w, y) = if t { (positive_weight, 1.0) } else { (1.0, 0.0) };
        total += w * (softplus - y * z);
        grad.set(r, 0, w * (sigmoid(z) - y) / n);
    }
    Ok((total / n, grad))
}
