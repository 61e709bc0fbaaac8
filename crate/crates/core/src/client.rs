//! Source-free adaptation on the client side.
//!
//! The client starts from a vendor model and unlabeled target data only. The
//! frozen source model supplies an instance weight `w` for every target row
//! and pseudo-labels for the most inheritable rows. A copy of the feature
//! extractor `{M, E}` is then trained against three terms while both
//! classifier heads stay fixed:
//!
//! * cross-entropy on pseudo-labeled rows,
//! * a binary cross-entropy pulling the shared-class mass `s` towards `w`,
//! * `w`-weighted entropies of the shared and negative softmaxes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::UnlabeledSet;
use crate::error::{Error, Result};
use crate::eval::{score, OpenSetLabel};
use crate::inheritability::{instance_weight, normalize_batch};
use crate::losses::{entropy_loss, separation_loss, softmax_cross_entropy};
use crate::model::{InheritableModel, LayerGrads};
use crate::numcore::{argmax, rank_descending, softmax, top_percentile_count, DenseGrad, Matrix, Rng, Sgd};

/// Adaptation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Percent of target rows that receive pseudo-labels.
    pub k_percent: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            k_percent: 15.0,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning_rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if !(0.0..=100.0).contains(&self.k_percent) {
            return Err(Error::input("k_percent must lie in [0, 100]"));
        }
        Ok(())
    }
}

/// Target rows chosen for pseudo-labeling and their shared-class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Per-row label lookup over a target set of `n` rows.
    pub fn dense(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (&i, &l) in self.indices.iter().zip(&self.labels) {
            out[i] = Some(l);
        }
        out
    }
}

/// Labels the top `k` percent of target rows by `w` with the shared-class
/// argmax of the source model.
pub fn pseudo_label(model: &InheritableModel, target: &UnlabeledSet, k: f64) -> Result<PseudoLabelSet> {
    let probs = model.forward(&target.features)?.probs();
    let cs = model.num_shared();
    let w = crate::inheritability::weights_from_probs(&probs, cs);
    let count = top_percentile_count(w.len(), k);
    let indices: Vec<usize> = rank_descending(&w).into_iter().take(count).collect();
    let labels = indices.iter().map(|&i| argmax(&probs.row(i)[..cs])).collect();
    Ok(PseudoLabelSet { indices, labels })
}

/// Open-set prediction: argmax over all outputs, any negative class mapped
/// to unknown. Ties go to the lowest index.
pub fn predict(model: &InheritableModel, x: &Matrix) -> Result<Vec<OpenSetLabel>> {
    let logits = model.forward(x)?.logits();
    let cs = model.num_shared();
    Ok(logits
        .row_iter()
        .map(|row| match argmax(row) {
            i if i < cs => OpenSetLabel::Shared(i),
            _ => OpenSetLabel::Unknown,
        })
        .collect())
}

/// Client-side model: the adapted network next to the frozen source model
/// that defines `w` and the pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub source: InheritableModel,
    pub adapted: InheritableModel,
}

impl TargetModel {
    /// Adapted model initialised as an exact copy of the source.
    pub fn new(source: InheritableModel) -> Self {
        Self {
            adapted: source.clone(),
            source,
        }
    }

    pub fn infer(&self, x: &Matrix) -> Result<Vec<OpenSetLabel>> {
        predict(&self.adapted, x)
    }
}

/// One adaptation batch.
#[derive(Debug, Clone)]
pub struct AdaptBatch {
    pub x: Matrix,
    /// Batch-normalised weights from the source model.
    pub w: Vec<f64>,
    pub pseudo: Vec<Option<usize>>,
}

/// Which parts of the adaptation objective to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptTerms {
    pub inherit: bool,
    pub separation: bool,
    pub entropy: bool,
}

impl AdaptTerms {
    pub const ALL: AdaptTerms = AdaptTerms {
        inherit: true,
        separation: true,
        entropy: true,
    };
    pub const INHERIT: AdaptTerms = AdaptTerms {
        inherit: true,
        separation: false,
        entropy: false,
    };
    pub const SEPARATION: AdaptTerms = AdaptTerms {
        inherit: false,
        separation: true,
        entropy: false,
    };
    pub const ENTROPY: AdaptTerms = AdaptTerms {
        inherit: false,
        separation: false,
        entropy: true,
    };
}

/// Loss values for one batch and the gradient of their sum.
#[derive(Debug, Clone)]
pub struct AdaptLoss {
    pub inherit: f64,
    pub separation: f64,
    pub entropy: f64,
    /// Aligned with [`InheritableModel::layers`]; both heads are `None`.
    pub grads: LayerGrads,
}

impl AdaptLoss {
    pub fn total(&self) -> f64 {
        self.inherit + self.separation + self.entropy
    }
}

/// Selected adaptation terms on a batch, with gradients for `{M, E}` only.
pub fn adaptation_loss(model: &InheritableModel, batch: &AdaptBatch, terms: AdaptTerms) -> Result<AdaptLoss> {
    let n = batch.x.rows();
    if batch.w.len() != n || batch.pseudo.len() != n {
        return Err(Error::Dimension {
            context: "adaptation batch",
            expected: n,
            actual: batch.w.len().min(batch.pseudo.len()),
        });
    }
    let cs = model.num_shared();
    let trace = model.forward_traced(&batch.x)?;
    let logits = trace.taps.logits();
    let mut grad = Matrix::zeros(n, logits.cols());
    let (mut inherit, mut separation, mut entropy) = (0.0, 0.0, 0.0);

    if terms.inherit {
        let rows: Vec<usize> = (0..n).filter(|&i| batch.pseudo[i].is_some()).collect();
        if !rows.is_empty() {
            let labels: Vec<usize> = rows.iter().map(|&i| batch.pseudo[i].unwrap()).collect();
            let lg = softmax_cross_entropy(&logits.select_rows(&rows), &labels)?;
            inherit = lg.loss;
            for (k, &i) in rows.iter().enumerate() {
                for (g, v) in grad.row_mut(i).iter_mut().zip(lg.grad.row(k)) {
                    *g += v;
                }
            }
        }
    }
    if terms.separation {
        let lg = separation_loss(&logits, cs, &batch.w);
        separation = lg.loss;
        for (g, v) in grad.data_mut().iter_mut().zip(lg.grad.data()) {
            *g += v;
        }
    }
    if terms.entropy {
        let lg = entropy_loss(&logits, cs, &batch.w);
        entropy = lg.loss;
        for (g, v) in grad.data_mut().iter_mut().zip(lg.grad.data()) {
            *g += v;
        }
    }

    let (backbone, embedder) = model.feature_backward(&trace, &grad)?;
    let mut grads: LayerGrads = backbone.into_iter().chain(embedder).map(Some).collect();
    grads.extend([None, None]);
    Ok(AdaptLoss {
        inherit,
        separation,
        entropy,
        grads,
    })
}

/// One line of the adaptation log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptRecord {
    pub epoch: usize,
    pub inherit: f64,
    pub separation: f64,
    pub entropy: f64,
    /// OS on held-out labels, when the caller provided them.
    pub os: Option<f64>,
}

/// Writes the adaptation log CSV.
pub fn write_adapt_log(records: &[AdaptRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("epoch,l_inh,l_t1,l_t2,os\n");
    for r in records {
        let os = r.os.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:?},{:?},{:?},{os}", r.epoch, r.inherit, r.separation, r.entropy);
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Outcome of [`adapt`].
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub model: TargetModel,
    pub pseudo: PseudoLabelSet,
    /// Raw `w` of every target row under the source model.
    pub weights: Vec<f64>,
    pub log: Vec<AdaptRecord>,
}

/// Adapts a vendor model to an unlabeled target set.
pub fn adapt(source: &InheritableModel, target: &UnlabeledSet, cfg: &AdaptConfig) -> Result<Adaptation> {
    adapt_with(source, target, cfg, None, &mut |_, _| {})
}

/// [`adapt`] with optional diagnostic truth labels (used only to log OS) and
/// a per-epoch callback receiving the current adapted model.
pub fn adapt_with(
    source: &InheritableModel,
    target: &UnlabeledSet,
    cfg: &AdaptConfig,
    truth: Option<&[OpenSetLabel]>,
    on_epoch: &mut dyn FnMut(&AdaptRecord, &InheritableModel),
) -> Result<Adaptation> {
    cfg.validate()?;
    source.validate()?;
    if target.is_empty() {
        return Err(Error::input("empty target set"));
    }
    if let Some(t) = truth {
        if t.len() != target.len() {
            return Err(Error::Dimension {
                context: "diagnostic truth labels",
                expected: target.len(),
                actual: t.len(),
            });
        }
    }
    let weights = instance_weight(source, &target.features)?;
    let pseudo = pseudo_label(source, target, cfg.k_percent)?;
    let pseudo_dense = pseudo.dense(target.len());

    let mut model = TargetModel::new(source.clone());
    let feature_layers = model.adapted.backbone.layers.len() + model.adapted.embedder.layers.len();
    let mut opt = Sgd::new(
        cfg.learning_rate,
        cfg.momentum,
        model.adapted.layers().into_iter().take(feature_layers),
    );
    let mut rng = Rng::new(cfg.seed).fork(30);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = rng.permutation(target.len());
        let (mut inh, mut sep, mut ent) = (0.0, 0.0, 0.0);
        let mut batches = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = AdaptBatch {
                x: target.features.select_rows(idx),
                w: normalize_batch(&idx.iter().map(|&i| weights[i]).collect::<Vec<_>>()),
                pseudo: idx.iter().map(|&i| pseudo_dense[i]).collect(),
            };
            let loss = adaptation_loss(&model.adapted, &batch, AdaptTerms::ALL)?;
            if !loss.total().is_finite() {
                return Err(Error::input(format!("non-finite adaptation loss at epoch {epoch}")));
            }
            inh += loss.inherit;
            sep += loss.separation;
            ent += loss.entropy;
            batches += 1.0;
            let grads: Vec<DenseGrad> = loss.grads.into_iter().flatten().collect();
            opt.step(model.adapted.layers_mut().into_iter().take(feature_layers), &grads);
        }
        let os = match truth {
            Some(t) => Some(score(&predict(&model.adapted, &target.features)?, t, source.num_shared())?.os),
            None => None,
        };
        let record = AdaptRecord {
            epoch,
            inherit: inh / batches,
            separation: sep / batches,
            entropy: ent / batches,
            os,
        };
        on_epoch(&record, &model.adapted);
        log.push(record);
    }
    Ok(Adaptation {
        model,
        pseudo,
        weights,
        log,
    })
}

/// Shared-class mass `s` of every row under `model`.
pub fn shared_mass(model: &InheritableModel, x: &Matrix) -> Result<Vec<f64>> {
    let probs = softmax(&model.forward(x)?.logits());
    let cs = model.num_shared();
    Ok(probs.row_iter().map(|r| r[..cs].iter().sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;
    use crate::numcore::Dense;

    fn model(seed: u64) -> InheritableModel {
        let spec = NetworkSpec {
            input_dim: 3,
            m_dims: vec![8],
            e_dims: vec![6],
            num_shared: 3,
            num_negative: 4,
        };
        let mut m = InheritableModel::init(spec, vec![0, 1, 2], &mut Rng::new(seed)).unwrap();
        m.source_mean_w = 0.6;
        m
    }

    fn target(seed: u64, n: usize) -> UnlabeledSet {
        let mut rng = Rng::new(seed);
        UnlabeledSet::new(Matrix::new(n, 3, (0..n * 3).map(|_| rng.normal()).collect()).unwrap())
    }

    #[test]
    fn pseudo_label_sizes() {
        let m = model(1);
        let t = target(2, 40);
        assert_eq!(pseudo_label(&m, &t, 100.0).unwrap().len(), 40);
        assert!(pseudo_label(&m, &t, 0.0).unwrap().is_empty());
        let p = pseudo_label(&m, &t, 15.0).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.labels.iter().all(|&l| l < 3));
        assert_eq!(p, pseudo_label(&m, &t, 15.0).unwrap());
    }

    #[test]
    fn pseudo_labels_are_the_most_inheritable_rows() {
        let m = model(3);
        let t = target(4, 50);
        let w = instance_weight(&m, &t.features).unwrap();
        let p = pseudo_label(&m, &t, 20.0).unwrap();
        let cutoff = p.indices.iter().map(|&i| w[i]).fold(f64::INFINITY, f64::min);
        let above = w.iter().filter(|&&v| v > cutoff).count();
        assert!(above < p.len());
    }

    fn head_model(bias: Vec<f64>) -> InheritableModel {
        let mut m = model(5);
        m.shared_head = Dense::zeros(6, 3);
        m.negative_head = Dense::zeros(6, 4);
        m.shared_head.bias.copy_from_slice(&bias[..3]);
        m.negative_head.bias.copy_from_slice(&bias[3..]);
        m
    }

    #[test]
    fn inference_examples() {
        let x = Matrix::zeros(1, 3);
        let m = head_model(vec![0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(predict(&m, &x).unwrap(), vec![OpenSetLabel::Shared(2)]);
        let m = head_model(vec![0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        assert_eq!(predict(&m, &x).unwrap(), vec![OpenSetLabel::Unknown]);
        let m = head_model(vec![0.0; 7]);
        assert_eq!(predict(&m, &x).unwrap(), vec![OpenSetLabel::Shared(0)]);
        assert!(predict(&m, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_epochs_is_the_source_model() {
        let m = model(6);
        let t = target(7, 20);
        let cfg = AdaptConfig {
            epochs: 0,
            ..AdaptConfig::default()
        };
        let out = adapt(&m, &t, &cfg).unwrap();
        assert_eq!(out.model.adapted, m);
        assert_eq!(out.model.infer(&t.features).unwrap(), predict(&m, &t.features).unwrap());
    }

    #[test]
    fn adaptation_freezes_heads_and_source() {
        let m = model(8);
        let t = target(9, 64);
        let cfg = AdaptConfig {
            epochs: 3,
            learning_rate: 0.05,
            ..AdaptConfig::default()
        };
        let out = adapt(&m, &t, &cfg).unwrap();
        assert_eq!(out.model.source, m);
        assert_eq!(out.model.adapted.head_bits(), m.head_bits());
        assert_ne!(out.model.adapted.backbone_bits(), m.backbone_bits());
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn head_gradients_are_absent() {
        let m = model(10);
        let t = target(11, 8);
        let batch = AdaptBatch {
            x: t.features.clone(),
            w: vec![0.5; 8],
            pseudo: (0..8).map(|i| (i % 2 == 0).then_some(i % 3)).collect(),
        };
        let loss = adaptation_loss(&m, &batch, AdaptTerms::ALL).unwrap();
        let n = loss.grads.len();
        assert!(loss.grads[n - 1].is_none() && loss.grads[n - 2].is_none());
        assert!(loss.grads[..n - 2].iter().all(Option::is_some));
    }

    #[test]
    fn unit_weight_step_raises_shared_mass() {
        let m = model(12);
        let t = target(13, 16);
        let batch = AdaptBatch {
            x: t.features.clone(),
            w: vec![1.0; 16],
            pseudo: vec![None; 16],
        };
        let loss = adaptation_loss(&m, &batch, AdaptTerms::SEPARATION).unwrap();
        let mut stepped = m.clone();
        let grads: Vec<DenseGrad> = loss.grads.into_iter().flatten().collect();
        let mut opt = Sgd::new(1e-3, 0.0, stepped.layers().into_iter().take(2));
        opt.step(stepped.layers_mut().into_iter().take(2), &grads);
        let before: f64 = shared_mass(&m, &t.features).unwrap().iter().sum();
        let after: f64 = shared_mass(&stepped, &t.features).unwrap().iter().sum();
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn config_validation() {
        let bad = AdaptConfig {
            k_percent: 101.0,
            ..AdaptConfig::default()
        };
        assert!(adapt(&model(1), &target(1, 4), &bad).is_err());
        assert!(adapt(&model(1), &UnlabeledSet::new(Matrix::empty(3)), &AdaptConfig::default()).is_err());
    }
}
