//! Datasets: labeled source sets, unlabeled target sets, a synthetic
//! open-set domain-shift generator and the feature CSV format.

mod csv;
mod shift;

pub use self::csv::{load_labeled, load_unlabeled, read_feature_csv, save_labeled, save_unlabeled, write_feature_csv, UNLABELED};
pub use shift::{generate_pair, DomainPair, DomainTransform, ShiftSpec};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Feature vectors with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<i64>,
    pub label_names: Option<Vec<String>>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Dimension {
                context: "labels",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l < 0) {
            return Err(Error::input(format!("labels must be nonnegative, found {bad}")));
        }
        Ok(Self {
            features,
            labels,
            label_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Rows whose label satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(i64) -> bool) -> LabeledSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        LabeledSet {
            features: self.features.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet::new(self.features.clone())
    }
}

/// Feature vectors without labels.
///
/// This is the only view of target data the client-side API accepts; ground
/// truth for evaluation travels separately.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub features: Matrix,
}

impl UnlabeledSet {
    pub fn new(features: Matrix) -> Self {
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }
}

/// Maps arbitrary class ids onto contiguous indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    ids: Vec<i64>,
}

impl ClassIndex {
    pub fn new(mut ids: Vec<i64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    pub fn from_ordered(ids: Vec<i64>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}
