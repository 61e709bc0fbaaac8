use crate::error::{Error, Result};

use super::Matrix;

/// Probabilities are clamped to this floor before any logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn safe_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    if out.cols() == 0 {
        return out;
    }
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean negative log-likelihood of `labels` under the row distributions.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::Dimension {
            context: "cross_entropy labels",
            expected: probs.rows(),
            actual: labels.len(),
        });
    }
    if probs.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, &y) in probs.row_iter().zip(labels) {
        if y >= probs.cols() {
            return Err(Error::input(format!(
                "label {y} out of range for {} classes",
                probs.cols()
            )));
        }
        total -= safe_ln(row[y]);
    }
    Ok(total / probs.rows() as f64)
}

/// Per-row Shannon entropy in nats, with `0 log 0 = 0`.
pub fn shannon_entropy(probs: &Matrix) -> Vec<f64> {
    probs.row_iter().map(entropy_of).collect()
}

pub(crate) fn entropy_of(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * safe_ln(p))
        .sum::<f64>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&m(&[&[0.0, 0.0, 0.0]]));
        for &v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&m(&[&[LN_2, 0.0]]));
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
        let p = softmax(&m(&[&[1000.0, 0.0]]));
        assert!(p.is_finite());
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.get(0, 1) < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&m(&[&[1.0, 0.0, 0.0]]), &[0]).unwrap(), 0.0);
        let ce = cross_entropy(&m(&[&[0.5, 0.5]]), &[1]).unwrap();
        assert!((ce - LN_2).abs() < 1e-15);
        let ce = cross_entropy(&m(&[&[1.0, 0.0], &[0.5, 0.5]]), &[0, 0]).unwrap();
        assert!((ce - LN_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            cross_entropy(&m(&[&[0.5, 0.5]]), &[2]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cross_entropy_is_finite_on_zero_probability() {
        let ce = cross_entropy(&m(&[&[1.0, 0.0]]), &[1]).unwrap();
        assert!((ce - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn entropy_examples() {
        let h = shannon_entropy(&m(&[&[1.0, 0.0], &[0.5, 0.5]]));
        assert_eq!(h[0], 0.0);
        assert!((h[1] - LN_2).abs() < 1e-15);
        let h4 = shannon_entropy(&m(&[&[0.25; 4]]));
        assert!((h4[0] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
