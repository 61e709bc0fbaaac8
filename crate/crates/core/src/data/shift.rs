use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

use super::{LabeledSet, UnlabeledSet};

/// Affine map `x -> scale * R x + translation` applied to target data.
///
/// `R` rotates every consecutive coordinate pair `(0, 1), (2, 3), ...` by
/// the same angle; with an odd dimension the last coordinate is untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainTransform {
    pub rotation_deg: f64,
    /// Empty means no translation.
    pub translation: Vec<f64>,
    pub scale: f64,
}

impl Default for DomainTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl DomainTransform {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translation: Vec::new(),
            scale: 1.0,
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::identity()
        }
    }

    /// Pure translation by `amount` along the unit diagonal of a
    /// `dims`-dimensional space.
    pub fn diagonal_shift(dims: usize, amount: f64) -> Self {
        let step = amount / (dims as f64).sqrt();
        Self {
            translation: vec![step; dims],
            ..Self::identity()
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if !(self.scale.is_finite() && self.scale != 0.0) {
            return Err(Error::input("transform scale must be finite and nonzero"));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::input("rotation must be finite"));
        }
        if !self.translation.is_empty() && self.translation.len() != dims {
            return Err(Error::Dimension {
                context: "translation vector",
                expected: dims,
                actual: self.translation.len(),
            });
        }
        Ok(())
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut out = x.to_vec();
        for pair in out.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = c * a - s * b;
            pair[1] = s * a + c * b;
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.scale * *v + self.translation.get(i).copied().unwrap_or(0.0);
        }
        out
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| self.apply_point(r)).collect();
        if rows.is_empty() {
            return x.clone();
        }
        Matrix::from_rows(&rows).expect("transform preserves width")
    }
}

/// Parameters of the synthetic open-set shift benchmark.
///
/// Every class is an isotropic Gaussian. The source domain holds the first
/// `num_shared` classes; the target holds all `num_total_classes` pushed
/// through `transform`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub num_total_classes: usize,
    pub num_shared: usize,
    pub dims: usize,
    /// Radius of the sphere that generated class means are drawn on.
    pub mean_scale: f64,
    /// Explicit class means (one per class); overrides `mean_scale`.
    pub class_means: Option<Vec<Vec<f64>>>,
    /// Per-class standard deviation; a single value applies to every class.
    pub class_std: Vec<f64>,
    pub transform: DomainTransform,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            num_total_classes: 8,
            num_shared: 4,
            dims: 16,
            mean_scale: 4.0,
            class_means: None,
            class_std: vec![1.0],
            transform: DomainTransform::rotation(25.0),
            samples_per_class: 200,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_shared < 1 || self.num_shared >= self.num_total_classes {
            return Err(Error::input(format!(
                "need 1 <= num_shared < num_total_classes, got {} and {}",
                self.num_shared, self.num_total_classes
            )));
        }
        if self.dims == 0 {
            return Err(Error::input("dims must be >= 1"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::input("samples_per_class must be >= 1"));
        }
        match self.class_std.len() {
            1 => {}
            n if n == self.num_total_classes => {}
            n => {
                return Err(Error::input(format!(
                    "class_std has {n} entries; expected 1 or {}",
                    self.num_total_classes
                )))
            }
        }
        if let Some(bad) = self.class_std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::input(format!("invalid covariance: standard deviation {bad} must be positive")));
        }
        if let Some(means) = &self.class_means {
            if means.len() != self.num_total_classes || means.iter().any(|m| m.len() != self.dims) {
                return Err(Error::input(format!(
                    "class_means must be {} vectors of length {}",
                    self.num_total_classes, self.dims
                )));
            }
        } else if !(self.mean_scale.is_finite() && self.mean_scale >= 0.0) {
            return Err(Error::input("mean_scale must be finite and nonnegative"));
        }
        self.transform.validate(self.dims)
    }

    fn std_of(&self, class: usize) -> f64 {
        if self.class_std.len() == 1 {
            self.class_std[0]
        } else {
            self.class_std[class]
        }
    }

    /// Class means, generated from the seed unless given explicitly.
    pub fn means(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.class_means {
            return m.clone();
        }
        let mut rng = Rng::new(self.seed).fork(0);
        (0..self.num_total_classes)
            .map(|_| {
                let g: Vec<f64> = (0..self.dims).map(|_| rng.normal()).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                g.into_iter().map(|v| v * self.mean_scale / norm).collect()
            })
            .collect()
    }

    /// `1 - |C_s| / |C_t|`.
    pub fn openness(&self) -> f64 {
        crate::eval::openness(self.num_shared, self.num_total_classes)
    }
}

/// A source/target pair drawn from a [`ShiftSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: LabeledSet,
    pub target: UnlabeledSet,
    /// Ground-truth class of every target row; ids `>= num_shared` are
    /// unknown classes. Evaluation only.
    pub target_labels: Vec<i64>,
    pub num_shared: usize,
}

impl DomainPair {
    /// Target rows together with their ground truth.
    pub fn target_labeled(&self) -> LabeledSet {
        LabeledSet::new(self.target.features.clone(), self.target_labels.clone())
            .expect("generator labels are valid")
    }

    pub fn is_shared(&self, label: i64) -> bool {
        (label as usize) < self.num_shared
    }
}

fn sample_class(rng: &mut Rng, mean: &[f64], std: f64, n: usize, rows: &mut Vec<Vec<f64>>) {
    for _ in 0..n {
        rows.push(mean.iter().map(|m| m + std * rng.normal()).collect());
    }
}

/// Draws a source set over the shared classes and a transformed target set
/// over all classes.
pub fn generate_pair(spec: &ShiftSpec) -> Result<DomainPair> {
    spec.validate()?;
    let means = spec.means();
    let root = Rng::new(spec.seed);

    let mut rng = root.fork(1);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, mean) in means.iter().enumerate().take(spec.num_shared) {
        sample_class(&mut rng, mean, spec.std_of(c), spec.samples_per_class, &mut rows);
        labels.extend(std::iter::repeat_n(c as i64, spec.samples_per_class));
    }
    let source = LabeledSet::new(Matrix::from_rows(&rows)?, labels)?;

    let mut rng = root.fork(2);
    let mut rows = Vec::new();
    let mut target_labels = Vec::new();
    for (c, mean) in means.iter().enumerate() {
        sample_class(&mut rng, mean, spec.std_of(c), spec.samples_per_class, &mut rows);
        target_labels.extend(std::iter::repeat_n(c as i64, spec.samples_per_class));
    }
    let raw = Matrix::from_rows(&rows)?;
    let target = UnlabeledSet::new(spec.transform.apply(&raw));

    Ok(DomainPair {
        source,
        target,
        target_labels,
        num_shared: spec.num_shared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let spec = ShiftSpec::default();
        let pair = generate_pair(&spec).unwrap();
        assert_eq!(pair.source.len(), 4 * 200);
        assert_eq!(pair.target.len(), 8 * 200);
        assert!(pair.source.labels.iter().all(|&l| l < 4));
        let unknown = pair.target_labels.iter().filter(|&&l| l >= 4).count();
        assert_eq!(unknown, 4 * 200);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = ShiftSpec {
            seed: 17,
            ..ShiftSpec::default()
        };
        assert_eq!(generate_pair(&spec).unwrap(), generate_pair(&spec).unwrap());
        let other = ShiftSpec { seed: 18, ..spec };
        assert_ne!(generate_pair(&other).unwrap().source, generate_pair(&ShiftSpec { seed: 17, ..ShiftSpec::default() }).unwrap().source);
    }

    #[test]
    fn rotation_moves_means_in_closed_form() {
        let spec = ShiftSpec {
            num_total_classes: 3,
            num_shared: 2,
            dims: 2,
            class_means: Some(vec![vec![10.0, 0.0], vec![0.0, 10.0], vec![-10.0, -10.0]]),
            class_std: vec![0.5],
            transform: DomainTransform::rotation(30.0),
            samples_per_class: 4000,
            seed: 3,
            ..ShiftSpec::default()
        };
        let pair = generate_pair(&spec).unwrap();
        let t = pair.target_labeled();
        let (s, c) = 30f64.to_radians().sin_cos();
        for (class, m) in spec.means().iter().enumerate().take(2) {
            let expect = [c * m[0] - s * m[1], s * m[0] + c * m[1]];
            let got = t.filter(|l| l == class as i64).features.col_means();
            // standard error 0.5 / sqrt(4000) ~ 0.008
            assert!((got[0] - expect[0]).abs() < 0.05, "{got:?} vs {expect:?}");
            assert!((got[1] - expect[1]).abs() < 0.05, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn identity_transform_gives_same_distribution() {
        let spec = ShiftSpec {
            num_total_classes: 3,
            num_shared: 2,
            transform: DomainTransform::identity(),
            ..ShiftSpec::default()
        };
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(spec.transform.apply(&x), x);
    }

    #[test]
    fn openness_matches_label_sets() {
        let spec = ShiftSpec {
            num_total_classes: 20,
            num_shared: 10,
            ..ShiftSpec::default()
        };
        assert_eq!(spec.openness(), 0.5);
    }

    #[test]
    fn invalid_specs() {
        let bad_std = ShiftSpec {
            class_std: vec![-1.0],
            ..ShiftSpec::default()
        };
        assert!(generate_pair(&bad_std).is_err());
        let closed = ShiftSpec {
            num_shared: 8,
            ..ShiftSpec::default()
        };
        assert!(generate_pair(&closed).is_err());
        let singular = ShiftSpec {
            transform: DomainTransform {
                scale: 0.0,
                ..DomainTransform::identity()
            },
            ..ShiftSpec::default()
        };
        assert!(generate_pair(&singular).is_err());
    }

    #[test]
    fn diagonal_shift_has_requested_length() {
        let t = DomainTransform::diagonal_shift(16, 3.0);
        let n: f64 = t.translation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 3.0).abs() < 1e-12);
    }
}
