//! Open-set metrics: OS, OS*, openness, precision of the most confident
//! predictions, and Proxy A-distance.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::predict;
use crate::error::{Error, Result};
use crate::inheritability::weights_from_probs;
use crate::model::InheritableModel;
use crate::numcore::{argmax, rank_descending, top_percentile_count, Matrix, Rng};

/// A label in the open-set output space: one of the shared classes (by
/// output index) or the single unknown class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenSetLabel {
    Shared(usize),
    Unknown,
}

impl OpenSetLabel {
    /// Column of this label in a `(|C_s| + 1)`-way table.
    pub fn slot(self, num_shared: usize) -> usize {
        match self {
            OpenSetLabel::Shared(i) => i,
            OpenSetLabel::Unknown => num_shared,
        }
    }

    /// Original class id, with `-1` for unknown.
    pub fn to_id(self, shared_labels: &[i64]) -> i64 {
        match self {
            OpenSetLabel::Shared(i) => shared_labels[i],
            OpenSetLabel::Unknown => -1,
        }
    }
}

/// Maps original class ids to open-set labels: ids among `shared_labels`
/// become that shared index, every other id becomes unknown.
pub fn truth_from_ids(ids: &[i64], shared_labels: &[i64]) -> Vec<OpenSetLabel> {
    ids.iter()
        .map(|id| match shared_labels.iter().position(|s| s == id) {
            Some(i) => OpenSetLabel::Shared(i),
            None => OpenSetLabel::Unknown,
        })
        .collect()
}

/// `1 - |C_s| / |C_t|`
pub fn openness(num_shared: usize, num_total: usize) -> f64 {
    if num_total == 0 {
        return 0.0;
    }
    1.0 - num_shared as f64 / num_total as f64
}

/// Open-set evaluation of one prediction vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean recall over the evaluable classes among the shared classes and unknown.
    pub os: f64,
    /// Mean recall over the evaluable shared classes.
    pub os_star: f64,
    /// Recall per shared class, then unknown; `None` for classes absent from the truth.
    pub per_class_acc: Vec<Option<f64>>,
    pub openness: Option<f64>,
    pub pad_shared: Option<f64>,
    pub pad_unknown: Option<f64>,
    /// Counts indexed `[truth][prediction]`, unknown last.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn num_shared(&self) -> usize {
        self.per_class_acc.len() - 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }
}

fn mean_present(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Scores predictions against truth. Classes with no truth rows are left
/// out of both averages.
pub fn score(predictions: &[OpenSetLabel], truth: &[OpenSetLabel], num_shared: usize) -> Result<EvalReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Dimension {
            context: "predictions vs truth",
            expected: truth.len(),
            actual: predictions.len(),
        });
    }
    let slots = num_shared + 1;
    let mut confusion = vec![vec![0u64; slots]; slots];
    for (&p, &t) in predictions.iter().zip(truth) {
        let (ps, ts) = (p.slot(num_shared), t.slot(num_shared));
        if ps >= slots || ts >= slots {
            return Err(Error::input(format!("label outside {num_shared} shared classes")));
        }
        confusion[ts][ps] += 1;
    }
    let per_class_acc: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        os: mean_present(&per_class_acc),
        os_star: mean_present(&per_class_acc[..num_shared]),
        per_class_acc,
        openness: None,
        pad_shared: None,
        pad_unknown: None,
        confusion,
    })
}

/// Predicts with `model` and scores the result.
pub fn evaluate_model(model: &InheritableModel, x: &Matrix, truth: &[OpenSetLabel]) -> Result<EvalReport> {
    score(&predict(model, x)?, truth, model.num_shared())
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cs = self.num_shared();
        let name = |c: usize| if c == cs { "unknown".to_string() } else { format!("shared {c}") };
        writeln!(f, "OS   {:.4}", self.os)?;
        writeln!(f, "OS*  {:.4}", self.os_star)?;
        if let Some(o) = self.openness {
            writeln!(f, "openness {o:.4}")?;
        }
        if let Some(p) = self.pad_shared {
            writeln!(f, "PAD shared  {p:.4}")?;
        }
        if let Some(p) = self.pad_unknown {
            writeln!(f, "PAD unknown {p:.4}")?;
        }
        writeln!(f)?;
        write!(f, "{:<10} {:>8}", "class", "recall")?;
        for c in 0..=cs {
            write!(f, " {:>9}", name(c))?;
        }
        writeln!(f)?;
        for (c, row) in self.confusion.iter().enumerate() {
            let acc = match self.per_class_acc[c] {
                Some(a) => format!("{a:.4}"),
                None => "-".to_string(),
            };
            write!(f, "{:<10} {:>8}", name(c), acc)?;
            for v in row {
                write!(f, " {v:>9}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Precision among the most confident fraction of a target set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub percentile: f64,
    pub count: usize,
    /// `None` when the percentile selects no rows.
    pub precision: Option<f64>,
}

/// Ranks rows by the model's largest shared-class probability and, for each
/// percentile, reports how often the shared-class argmax matches the truth
/// among the top rows. Unknown rows always count as wrong.
pub fn precision_at_percentile(
    model: &InheritableModel,
    x: &Matrix,
    truth: &[OpenSetLabel],
    percentiles: &[f64],
) -> Result<Vec<PrecisionPoint>> {
    if x.rows() != truth.len() {
        return Err(Error::Dimension {
            context: "precision truth",
            expected: x.rows(),
            actual: truth.len(),
        });
    }
    let cs = model.num_shared();
    let probs = model.forward(x)?.probs();
    let conf = weights_from_probs(&probs, cs);
    let order = rank_descending(&conf);
    let correct: Vec<bool> = probs
        .row_iter()
        .zip(truth)
        .map(|(p, t)| *t == OpenSetLabel::Shared(argmax(&p[..cs])))
        .collect();
    Ok(percentiles
        .iter()
        .map(|&pct| {
            let count = top_percentile_count(order.len(), pct);
            let hits = order[..count].iter().filter(|&&i| correct[i]).count();
            PrecisionPoint {
                percentile: pct,
                count,
                precision: (count > 0).then(|| hits as f64 / count as f64),
            }
        })
        .collect())
}

/// Writes precision curves as CSV; one row per `(label, point)`.
pub fn write_precision_curves(curves: &[(&str, &[PrecisionPoint])], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("curve,percentile,count,precision\n");
    for (name, points) in curves {
        for p in *points {
            let prec = p.precision.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(out, "{name},{:?},{},{prec}", p.percentile, p.count);
        }
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Epochs of the logistic domain discriminator.
pub const PAD_EPOCHS: usize = 200;
const PAD_STEP: f64 = 0.5;

fn split_rows(n: usize, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let perm = rng.permutation(n);
    let n_train = (n * 4).div_ceil(5).min(n - 1);
    (perm[..n_train].to_vec(), perm[n_train..].to_vec())
}

/// Proxy A-distance `2 (1 - 2 eps)`, where `eps` is the held-out error of a
/// logistic regression trained to tell the two sets apart on a stratified
/// 80/20 split. Clamped to `[0, 2]`.
pub fn proxy_a_distance(features_a: &Matrix, features_b: &Matrix, rng: &mut Rng) -> Result<f64> {
    for (m, which) in [(features_a, "first"), (features_b, "second")] {
        if m.rows() < 5 {
            return Err(Error::input(format!("{which} feature set has {} rows, need at least 5", m.rows())));
        }
    }
    if features_a.cols() != features_b.cols() {
        return Err(Error::Dimension {
            context: "proxy A-distance features",
            expected: features_a.cols(),
            actual: features_b.cols(),
        });
    }
    let (tr_a, te_a) = split_rows(features_a.rows(), rng);
    let (tr_b, te_b) = split_rows(features_b.rows(), rng);
    let train = features_a.select_rows(&tr_a).vcat(&features_b.select_rows(&tr_b))?;
    let test = features_a.select_rows(&te_a).vcat(&features_b.select_rows(&te_b))?;
    let y_train: Vec<f64> = (0..train.rows()).map(|i| if i < tr_a.len() { 0.0 } else { 1.0 }).collect();
    let y_test: Vec<f64> = (0..test.rows()).map(|i| if i < te_a.len() { 0.0 } else { 1.0 }).collect();

    let mean = train.col_means();
    let n = train.rows() as f64;
    let scale: Vec<f64> = (0..train.cols())
        .map(|c| {
            let var = train.row_iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardize = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[c]) / scale[c];
            }
        }
        out
    };
    let train = standardize(&train);
    let test = standardize(&test);

    let dims = train.cols();
    let mut weight = vec![0.0; dims];
    let mut bias = 0.0;
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    let score = |row: &[f64], w: &[f64], b: f64| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
    for _ in 0..PAD_EPOCHS {
        let mut gw = vec![0.0; dims];
        let mut gb = 0.0;
        for (row, &y) in train.row_iter().zip(&y_train) {
            let err = sigmoid(score(row, &weight, bias)) - y;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += err * v;
            }
            gb += err;
        }
        for (w, g) in weight.iter_mut().zip(&gw) {
            *w -= PAD_STEP * g / n;
        }
        bias -= PAD_STEP * gb / n;
    }
    let wrong = test
        .row_iter()
        .zip(&y_test)
        .filter(|(row, &y)| (score(row, &weight, bias) > 0.0) != (y > 0.5))
        .count();
    let eps = wrong as f64 / test.rows() as f64;
    Ok((2.0 * (1.0 - 2.0 * eps)).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use OpenSetLabel::{Shared, Unknown};

    #[test]
    fn perfect_predictions() {
        let t = vec![Shared(0), Shared(1), Unknown, Shared(1)];
        let r = score(&t, &t, 2).unwrap();
        assert_eq!((r.os, r.os_star), (1.0, 1.0));
    }

    #[test]
    fn unknown_all_wrong() {
        let mut truth: Vec<_> = (0..10).map(Shared).collect();
        truth.push(Unknown);
        truth.push(Unknown);
        let mut pred: Vec<_> = (0..10).map(Shared).collect();
        pred.push(Shared(3));
        pred.push(Shared(0));
        let r = score(&pred, &truth, 10).unwrap();
        assert!((r.os - 10.0 / 11.0).abs() < 1e-15);
        assert_eq!(r.os_star, 1.0);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let r = score(&[Unknown, Unknown], &[Unknown, Unknown], 3).unwrap();
        assert_eq!(r.os, 1.0);
        assert_eq!(r.per_class_acc, vec![None, None, None, Some(1.0)]);
    }

    #[test]
    fn confusion_rows_sum_to_truth_counts_and_order_does_not_matter() {
        let truth = vec![Shared(0), Shared(0), Shared(1), Unknown, Unknown, Unknown];
        let pred = vec![Shared(0), Unknown, Shared(1), Unknown, Shared(0), Unknown];
        let r = score(&pred, &truth, 2).unwrap();
        let sums: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(sums, vec![2, 1, 3]);
        let perm = [5, 3, 1, 0, 4, 2];
        let pt: Vec<_> = perm.iter().map(|&i| truth[i]).collect();
        let pp: Vec<_> = perm.iter().map(|&i| pred[i]).collect();
        assert_eq!(score(&pp, &pt, 2).unwrap(), r);
        assert!(score(&pred[..2], &truth, 2).is_err());
    }

    #[test]
    fn openness_values() {
        assert_eq!(openness(10, 20), 0.5);
        assert_eq!(openness(4, 4), 0.0);
    }

    #[test]
    fn truth_mapping() {
        assert_eq!(truth_from_ids(&[7, 3, 9], &[3, 7]), vec![Shared(1), Shared(0), Unknown]);
        assert_eq!(Unknown.to_id(&[3, 7]), -1);
    }

    #[test]
    fn report_json_round_trip_and_table() {
        let r = score(&[Shared(0), Unknown], &[Shared(0), Shared(1)], 2).unwrap();
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let table = r.to_string();
        assert!(table.contains("OS*"));
        assert!(table.contains("unknown"));
    }

    fn blob(rng: &mut Rng, n: usize, centre: f64) -> Matrix {
        Matrix::new(n, 3, (0..n * 3).map(|_| centre + rng.normal()).collect()).unwrap()
    }

    #[test]
    fn pad_same_distribution_is_small() {
        let mut rng = Rng::new(5);
        let a = blob(&mut rng, 500, 0.0);
        let b = blob(&mut rng, 500, 0.0);
        let pad = proxy_a_distance(&a, &b, &mut Rng::new(1)).unwrap();
        assert!(pad <= 0.3, "pad {pad}");
    }

    #[test]
    fn pad_far_blobs_is_two() {
        let mut rng = Rng::new(6);
        let a = blob(&mut rng, 100, -20.0);
        let b = blob(&mut rng, 100, 20.0);
        assert_eq!(proxy_a_distance(&a, &b, &mut Rng::new(1)).unwrap(), 2.0);
    }

    #[test]
    fn pad_needs_five_rows() {
        let mut rng = Rng::new(7);
        let a = blob(&mut rng, 4, 0.0);
        let b = blob(&mut rng, 10, 0.0);
        assert!(proxy_a_distance(&a, &b, &mut rng).is_err());
    }
}
