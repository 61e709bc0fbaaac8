//! Nearest-rank "top-d percentile" selection.
//!
//! For `n` values and a percent `d`, exactly `m = ceil(d/100 * n)` entries are
//! selected: the largest values, with ties resolved in favour of the lower
//! index. The threshold is the value at rank `m - 1` of that ordering.

use crate::error::{Error, Result};

/// Number of entries selected by a `d` percent cut over `n` values.
pub fn top_percentile_count(n: usize, d: f64) -> usize {
    let d = d.clamp(0.0, 100.0);
    // d * n is exact for the integer-valued percents used in practice
    let m = (d * n as f64 / 100.0).ceil() as usize;
    m.min(n)
}

/// Indices ordered by descending value, ties by ascending index.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Indices of the top-`d` percent entries, in rank order.
///
/// `d` is accepted over the closed range `[0, 100]`.
pub fn top_percentile_indices(values: &[f64], d: f64) -> Result<Vec<usize>> {
    if !(0.0..=100.0).contains(&d) {
        return Err(Error::input(format!("percent {d} outside [0, 100]")));
    }
    let m = top_percentile_count(values.len(), d);
    let mut ranked = rank_descending(values);
    ranked.truncate(m);
    Ok(ranked)
}

/// Value at which the top-`d` percent cut is made.
pub fn percentile_threshold(values: &[f64], d: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("percentile of an empty vector"));
    }
    if !(d > 0.0 && d <= 100.0) {
        return Err(Error::input(format!("percent {d} outside (0, 100]")));
    }
    let ranked = top_percentile_indices(values, d)?;
    // d > 0 and n > 0 guarantee m >= 1
    Ok(values[*ranked.last().expect("m >= 1")])
}
