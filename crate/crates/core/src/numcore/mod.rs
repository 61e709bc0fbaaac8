//! Small deterministic numerical engine: matrices, dense layers, softmax
//! and friends, percentile selection, k-means and a seeded RNG.

mod dense;
mod kmeans;
mod matrix;
mod prob;
mod rng;
mod select;

pub use dense::{relu, Dense, DenseGrad, ReluStack, Sgd, StackTrace};
pub use kmeans::{kmeans, KMeans};
pub use matrix::Matrix;
pub use prob::{argmax, cross_entropy, shannon_entropy, softmax, LOG_FLOOR};
pub use rng::Rng;
pub use select::{percentile_threshold, rank_descending, top_percentile_count, top_percentile_indices};

pub(crate) use prob::{entropy_of, safe_ln, softmax_in_place};
