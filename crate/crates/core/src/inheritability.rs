//! Instance-level and model-level inheritability.
//!
//! The instance weight `w(x)` is the largest shared-class probability under
//! the softmax over all `|C_s| + K` outputs. Because the negative classes
//! absorb probability mass for out-of-distribution inputs, `w` is high near
//! the source distribution and low away from it.

use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::InheritableModel;
use crate::numcore::Matrix;

/// `w` for every row of a concatenated-softmax probability matrix.
pub fn weights_from_probs(probs: &Matrix, num_shared: usize) -> Vec<f64> {
    probs
        .row_iter()
        .map(|row| row[..num_shared].iter().copied().fold(0.0, f64::max))
        .collect()
}

/// Instance inheritability `w(x)` for every row of `x`.
pub fn instance_weight(model: &InheritableModel, x: &Matrix) -> Result<Vec<f64>> {
    let probs = model.forward(x)?.probs();
    Ok(weights_from_probs(&probs, model.num_shared()))
}

/// Divides by the batch maximum so the largest weight is exactly 1.
pub fn normalize_batch(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return raw.to_vec();
    }
    raw.iter().map(|w| w / max).collect()
}

/// Raw and batch-normalised weights for a subset of target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedInstances {
    pub indices: Vec<usize>,
    pub raw_w: Vec<f64>,
    pub normalized_w: Vec<f64>,
}

impl WeightedInstances {
    pub fn new(indices: Vec<usize>, raw_w: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), raw_w.len());
        let normalized_w = normalize_batch(&raw_w);
        Self {
            indices,
            raw_w,
            normalized_w,
        }
    }

    /// Gathers a batch out of precomputed per-instance weights.
    pub fn gather(indices: &[usize], all_w: &[f64]) -> Self {
        Self::new(indices.to_vec(), indices.iter().map(|&i| all_w[i]).collect())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean target weight divided by the source mean stored in the model.
///
/// Needs no source data: the denominator travels inside the model file.
pub fn model_inheritability(model: &InheritableModel, target: &UnlabeledSet) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::input("inheritability of an empty target set"));
    }
    if model.source_mean_w.is_nan() || model.source_mean_w <= 0.0 {
        return Err(Error::input("model carries no source mean weight"));
    }
    let w = instance_weight(model, &target.features)?;
    Ok(mean(&w) / model.source_mean_w)
}

/// Mean `w` over source, target-shared and target-unknown data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingDiagnostic {
    pub source: f64,
    pub shared: f64,
    pub unknown: f64,
}

impl OrderingDiagnostic {
    /// `source >= shared >= unknown`
    pub fn holds(&self) -> bool {
        self.source >= self.shared && self.shared >= self.unknown
    }
}

/// Measures the three expectations whose ordering an inheritable model is
/// expected to satisfy.
pub fn ordering_diagnostic(
    model: &InheritableModel,
    source: &LabeledSet,
    target_shared: &UnlabeledSet,
    target_unknown: &UnlabeledSet,
) -> Result<OrderingDiagnostic> {
    if source.is_empty() || target_shared.is_empty() || target_unknown.is_empty() {
        return Err(Error::input("ordering diagnostic needs three nonempty sets"));
    }
    Ok(OrderingDiagnostic {
        source: mean(&instance_weight(model, &source.features)?),
        shared: mean(&instance_weight(model, &target_shared.features)?),
        unknown: mean(&instance_weight(model, &target_unknown.features)?),
    })
}

/// One bin of a weight histogram, `[lo, hi)` (the last bin is closed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram of weights over `[0, 1]`.
pub fn weight_histogram(w: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let width = 1.0 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in w {
        let b = ((v / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}
