//! Out-of-distribution negatives built by feature splicing.
//!
//! A negative is made from a source feature `u_i` (taken at the output of the
//! backbone) by overwriting its strongest activations with the values a
//! feature `u_j` of a different class holds at the same coordinates. The
//! spliced features are then clustered with k-means and each cluster becomes
//! one negative class.

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::InheritableModel;
use crate::numcore::{kmeans, top_percentile_count, top_percentile_indices, Matrix, Rng};

/// Iteration cap for the negative-class k-means.
pub const KMEANS_MAX_ITER: usize = 100;

/// Spliced splice-space features with their negative-class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet {
    pub u_n: Matrix,
    /// Negative class of each row, in `0..k`.
    pub y_n: Vec<usize>,
    pub k: usize,
    pub d_percent: f64,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.y_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_n.is_empty()
    }

    /// As a labeled set, for dumping to the feature CSV format.
    pub fn to_labeled(&self) -> LabeledSet {
        LabeledSet::new(self.u_n.clone(), self.y_n.iter().map(|&y| y as i64).collect())
            .expect("labels are nonnegative and sized")
    }
}

/// Replaces the top-`d` percent activations of `u_i` with `u_j`'s values at
/// the same coordinates.
pub fn feature_splice(u_i: &[f64], u_j: &[f64], d: f64) -> Result<Vec<f64>> {
    if u_i.len() != u_j.len() {
        return Err(Error::Dimension {
            context: "feature_splice donor",
            expected: u_i.len(),
            actual: u_j.len(),
        });
    }
    let mut out = u_i.to_vec();
    for idx in top_percentile_indices(u_i, d)? {
        out[idx] = u_j[idx];
    }
    Ok(out)
}

/// Number of coordinates a splice with percent `d` replaces in an
/// `n`-dimensional feature.
pub fn splice_width(n: usize, d: f64) -> usize {
    top_percentile_count(n, d)
}

/// Builds `num_samples` negatives from random distinct-class source pairs
/// and labels them with `k`-means into `k` negative classes.
pub fn generate_negatives(
    model: &InheritableModel,
    source: &LabeledSet,
    num_samples: usize,
    d: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<NegativeSet> {
    if source.classes().len() < 2 {
        return Err(Error::input("feature splicing needs a source with at least two classes"));
    }
    if k == 0 {
        return Err(Error::input("need at least one negative class"));
    }
    if num_samples < k {
        return Err(Error::input(format!(
            "{num_samples} negative samples cannot fill {k} negative classes"
        )));
    }
    let u = model.splice_features(&source.features)?;
    let n = source.len();

    let mut rows = Vec::with_capacity(num_samples);
    while rows.len() < num_samples {
        let i = rng.below(n);
        let j = rng.below(n);
        // rejection keeps the draw uniform over distinct-class pairs
        if source.labels[i] == source.labels[j] {
            continue;
        }
        rows.push(feature_splice(u.row(i), u.row(j), d)?);
    }
    let u_n = Matrix::from_rows(&rows)?;
    let clusters = kmeans(&u_n, k, rng, KMEANS_MAX_ITER)?;
    Ok(NegativeSet {
        u_n,
        y_n: clusters.assignments,
        k,
        d_percent: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;
    use crate::numcore::{Dense, ReluStack, Rng};
    use proptest::prelude::*;

    /// Sort-and-replace reference: selects by a full stable sort on
    /// (value desc, index asc), independent of the library's selection code.
    fn oracle(u_i: &[f64], u_j: &[f64], d: f64) -> Vec<f64> {
        let n = u_i.len();
        let m = ((d * n as f64) / 100.0).ceil() as usize;
        let mut pairs: Vec<(f64, usize)> = u_i.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut out = u_i.to_vec();
        for &(_, idx) in pairs.iter().take(m.min(n)) {
            out[idx] = u_j[idx];
        }
        out
    }

    #[test]
    fn splice_examples() {
        assert_eq!(feature_splice(&[5.0, 1.0, 2.0], &[0.0, 9.0, 3.0], 33.0).unwrap(), vec![0.0, 1.0, 2.0]);
        let ui = [1.0, 2.0, 3.0, 4.0];
        let uj = [9.0, 8.0, 7.0, 6.0];
        assert_eq!(feature_splice(&ui, &uj, 100.0).unwrap(), uj.to_vec());
        assert_eq!(feature_splice(&ui, &ui, 50.0).unwrap(), ui.to_vec());
        assert!(feature_splice(&ui, &uj[..3], 15.0).is_err());
    }

    #[test]
    fn splice_lowers_peak_when_donor_is_smaller() {
        let ui = [0.0, 7.0, 1.0, 6.5, 2.0, 0.5];
        let uj = [3.0, 0.2, 3.0, 0.1, 3.0, 3.0];
        let out = feature_splice(&ui, &uj, 34.0).unwrap();
        let peak = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
        assert!(peak(&out) < peak(&ui));
    }

    proptest! {
        #[test]
        fn splice_changes_exactly_the_selected_coordinates(
            pair in (1usize..40).prop_flat_map(|n| (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(5.5f64..9.0, n),
            )),
            d in 0.0f64..=100.0,
        ) {
            let (ui, uj) = pair;
            let out = feature_splice(&ui, &uj, d).unwrap();
            let m = splice_width(ui.len(), d);
            let changed = out.iter().zip(&ui).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, m);
            for (i, v) in out.iter().enumerate() {
                prop_assert!(*v == ui[i] || *v == uj[i]);
            }
            prop_assert_eq!(out, oracle(&ui, &uj, d));
        }
    }

    fn identity_model() -> InheritableModel {
        let spec = NetworkSpec {
            input_dim: 3,
            m_dims: vec![3],
            e_dims: vec![4],
            num_shared: 2,
            num_negative: 2,
        };
        let mut m = InheritableModel::init(spec, vec![0, 1], &mut Rng::new(0)).unwrap();
        m.backbone = ReluStack {
            layers: vec![Dense {
                weight: Matrix::identity(3),
                bias: vec![0.0; 3],
            }],
        };
        m
    }

    fn toy_source() -> LabeledSet {
        let x = Matrix::from_rows(&[[5.0, 1.0, 2.0], [4.0, 0.5, 3.0], [0.0, 9.0, 3.0], [1.0, 7.0, 0.0]]).unwrap();
        LabeledSet::new(x, vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn generated_rows_match_the_oracle_over_all_pairs() {
        let model = identity_model();
        let source = toy_source();
        let mut allowed = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if source.labels[i] != source.labels[j] {
                    allowed.push(oracle(source.features.row(i), source.features.row(j), 33.0));
                }
            }
        }
        let neg = generate_negatives(&model, &source, 40, 33.0, 2, &mut Rng::new(1)).unwrap();
        for row in neg.u_n.row_iter() {
            assert!(allowed.iter().any(|a| a.as_slice() == row), "{row:?} not an oracle splice");
        }
    }

    #[test]
    fn k_samples_give_a_permutation_of_labels() {
        let model = identity_model();
        let source = toy_source();
        // with k = n every row is its own cluster
        let neg = generate_negatives(&model, &source, 3, 33.0, 3, &mut Rng::new(4)).unwrap();
        let mut y = neg.y_n.clone();
        y.sort_unstable();
        assert_eq!(y, vec![0, 1, 2]);
    }

    #[test]
    fn deterministic_under_seed() {
        let model = identity_model();
        let source = toy_source();
        let a = generate_negatives(&model, &source, 30, 15.0, 3, &mut Rng::new(9)).unwrap();
        let b = generate_negatives(&model, &source, 30, 15.0, 3, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let model = identity_model();
        let source = toy_source();
        let single = source.filter(|l| l == 0);
        assert!(generate_negatives(&model, &single, 10, 15.0, 2, &mut Rng::new(0)).is_err());
        assert!(generate_negatives(&model, &source, 1, 15.0, 2, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn labels_cover_all_clusters_with_many_samples() {
        let mut rng = Rng::new(12);
        let spec = NetworkSpec::with_defaults(5, 3, 6);
        let model = InheritableModel::init(spec, vec![0, 1, 2], &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..90).map(|i| (0..5).map(|_| rng.normal() + (i % 3) as f64 * 4.0).collect()).collect();
        let source = LabeledSet::new(Matrix::from_rows(&rows).unwrap(), (0..90).map(|i| i % 3).collect()).unwrap();
        let neg = generate_negatives(&model, &source, 20 * 6, 15.0, 6, &mut rng).unwrap();
        for c in 0..6 {
            assert!(neg.y_n.contains(&c));
        }
    }
}
