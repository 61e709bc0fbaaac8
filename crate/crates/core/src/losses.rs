//! Training objectives with analytic gradients with respect to logits.
//!
//! Every function returns the batch-mean loss and `dL/d(logits)` for that
//! mean. Callers backpropagate the logit gradient through the network.

use crate::error::Result;
use crate::numcore::{cross_entropy, entropy_of, safe_ln, softmax, softmax_in_place, Matrix, LOG_FLOOR};

/// Loss value together with its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LogitGrad {
    pub loss: f64,
    pub grad: Matrix,
}

/// Mean softmax cross-entropy.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LogitGrad> {
    let probs = softmax(logits);
    let loss = cross_entropy(&probs, labels)?;
    let n = logits.rows().max(1) as f64;
    let mut grad = probs;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(LogitGrad { loss, grad })
}

/// Binary cross-entropy between a weight `w` and the shared-class mass `s`,
/// with `s` clamped to `[1e-12, 1 - 1e-12]`.
pub fn separation_value(s_hat: f64, w: f64) -> f64 {
    let s = s_hat.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
    -w * s.ln() - (1.0 - w) * (1.0 - s).ln()
}

/// Coarse shared-vs-unknown separation: the mean over rows of
/// `-w log s - (1 - w) log(1 - s)`, where `s` is the total concatenated
/// softmax mass on the first `num_shared` outputs.
pub fn separation_loss(logits: &Matrix, num_shared: usize, w: &[f64]) -> LogitGrad {
    let n = logits.rows().max(1) as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &wr) in w.iter().enumerate() {
        let p = grad.row_mut(r);
        let s: f64 = p[..num_shared].iter().sum();
        loss += separation_value(s, wr);
        let clamped = !(LOG_FLOOR..=1.0 - LOG_FLOOR).contains(&s);
        // dL/ds * ds/dz_j, with ds/dz_j = p_j (1[j shared] - s)
        let dl_ds = if clamped { 0.0 } else { -wr / s + (1.0 - wr) / (1.0 - s) };
        for (j, pj) in p.iter_mut().enumerate() {
            let ind = if j < num_shared { 1.0 } else { 0.0 };
            *pj = dl_ds * *pj * (ind - s) / n;
        }
    }
    LogitGrad { loss: loss / n, grad }
}

/// Gradient of the entropy of `softmax(z)` with respect to `z`, written
/// into `p` (which holds the softmax on entry). Returns the entropy.
fn entropy_grad_in_place(p: &mut [f64], scale: f64) -> f64 {
    let h = entropy_of(p);
    for pj in p.iter_mut() {
        let lp = if *pj > 0.0 { safe_ln(*pj) } else { 0.0 };
        *pj = -scale * *pj * (lp + h);
    }
    h
}

/// Fine-grained entropy term: the mean over rows of
/// `w H(softmax(z_s)) + (1 - w) H(softmax(z_n))`, with separate softmaxes
/// over the shared logits `z_s` and the negative logits `z_n`.
pub fn entropy_loss(logits: &Matrix, num_shared: usize, w: &[f64]) -> LogitGrad {
    let n = logits.rows().max(1) as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &wr) in w.iter().enumerate() {
        let row = grad.row_mut(r);
        let (zs, zn) = row.split_at_mut(num_shared);
        softmax_in_place(zs);
        softmax_in_place(zn);
        let hs = entropy_grad_in_place(zs, wr / n);
        let hn = entropy_grad_in_place(zn, (1.0 - wr) / n);
        loss += wr * hs + (1.0 - wr) * hn;
    }
    LogitGrad { loss: loss / n, grad }
}
