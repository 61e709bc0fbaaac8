//! Vendor-side training.
//!
//! Step one trains `{M, E, G_s}` on labeled source data with cross-entropy
//! over the shared classes. Step two freezes `M`, builds spliced negatives at
//! the output of `M`, adds a fresh negative head `G_n`, and trains
//! `{E, G_s, G_n}` on balanced batches of source rows and negatives. The
//! finished model records the mean source instance weight so clients can
//! compute model inheritability without source data.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassIndex, LabeledSet};
use crate::error::{Error, Result};
use crate::inheritability::{instance_weight, weights_from_probs};
use crate::losses::softmax_cross_entropy;
use crate::model::{InheritableModel, LayerGrads, NetworkSpec};
use crate::negatives::{generate_negatives, NegativeSet};
use crate::numcore::{argmax, softmax, Dense, Matrix, ReluStack, Rng, Sgd};

/// Vendor training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VendorConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Rows per step; in step two half are source rows and half negatives.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Splice percent `d`.
    pub d_percent: f64,
    /// Number of negative classes; `None` means `4 |C_s|`.
    pub k: Option<usize>,
    /// Number of spliced negatives; `None` means the source size.
    pub num_negatives: Option<usize>,
    pub m_dims: Vec<usize>,
    pub e_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for VendorConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 30,
            finetune_epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            d_percent: 15.0,
            k: None,
            num_negatives: None,
            m_dims: vec![64],
            e_dims: vec![32],
            seed: 0,
        }
    }
}

impl VendorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::input(format!("batch_size must be even and >= 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning_rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if !(self.d_percent > 0.0 && self.d_percent <= 100.0) {
            return Err(Error::input("d_percent must lie in (0, 100]"));
        }
        if self.k == Some(0) {
            return Err(Error::input("k must be >= 1"));
        }
        Ok(())
    }

    /// `K` for a source with `num_shared` classes.
    pub fn k_for(&self, num_shared: usize) -> usize {
        self.k.unwrap_or(4 * num_shared)
    }
}

/// Training phase of a log record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean batch loss (`L_b` while pretraining, `L_s` afterwards).
    pub loss: f64,
    pub source_accuracy: f64,
    pub mean_source_w: f64,
}

/// Writes the training log CSV.
pub fn write_training_log(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("phase,epoch,loss,source_accuracy,mean_source_w\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?}",
            r.phase.as_str(),
            r.epoch,
            r.loss,
            r.source_accuracy,
            r.mean_source_w
        );
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A network after step one: feature extractor and shared head only.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub input_dim: usize,
    pub backbone: ReluStack,
    pub embedder: ReluStack,
    pub shared_head: Dense,
    /// Original class ids of the shared outputs.
    pub shared_labels: Vec<i64>,
}

impl Pretrained {
    pub fn init(input_dim: usize, m_dims: &[usize], e_dims: &[usize], shared_labels: Vec<i64>, rng: &mut Rng) -> Self {
        let backbone = ReluStack::he_uniform(input_dim, m_dims, rng);
        let embedder = ReluStack::he_uniform(backbone.output_dim(input_dim), e_dims, rng);
        let feat = embedder.output_dim(backbone.output_dim(input_dim));
        let shared_head = Dense::he_uniform(feat, shared_labels.len(), rng);
        Self {
            input_dim,
            backbone,
            embedder,
            shared_head,
            shared_labels,
        }
    }

    pub fn num_shared(&self) -> usize {
        self.shared_labels.len()
    }

    /// Logits of the shared head.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.embedder.forward(&self.backbone.forward(x)?)?;
        self.shared_head.forward(&f)
    }

    pub fn layers(&self) -> Vec<&Dense> {
        self.backbone
            .layers
            .iter()
            .chain(&self.embedder.layers)
            .chain([&self.shared_head])
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.backbone
            .layers
            .iter_mut()
            .chain(self.embedder.layers.iter_mut())
            .chain([&mut self.shared_head])
            .collect()
    }

    fn spec(&self, num_negative: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.input_dim,
            m_dims: self.backbone.layers.iter().map(Dense::outputs).collect(),
            e_dims: self.embedder.layers.iter().map(Dense::outputs).collect(),
            num_shared: self.num_shared(),
            num_negative,
        }
    }
}

/// Pretraining loss (softmax cross-entropy over the shared head) and its
/// gradient, aligned with [`Pretrained::layers`].
pub fn pretrain_loss(model: &Pretrained, x: &Matrix, y: &[usize]) -> Result<(f64, LayerGrads)> {
    let bt = model.backbone.forward_traced(x)?;
    let et = model.embedder.forward_traced(bt.output())?;
    let logits = model.shared_head.forward(et.output())?;
    let lg = softmax_cross_entropy(&logits, y)?;
    let (head, gf) = model.shared_head.backward(et.output(), &lg.grad)?;
    let (eg, gu) = model.embedder.backward(&et, &gf)?;
    let (bg, _) = model.backbone.backward(&bt, &gu)?;
    let grads = bg.into_iter().chain(eg).chain([head]).map(Some).collect();
    Ok((lg.loss, grads))
}

/// Step-two loss: cross-entropy of source rows (entering at the input) plus
/// cross-entropy of negatives (entering at the splice space, labels offset
/// by `|C_s|`). The backbone receives no gradient.
///
/// `u_source` must be `M(x_source)`.
pub fn inheritable_loss(
    model: &InheritableModel,
    u_source: &Matrix,
    y_source: &[usize],
    u_negative: &Matrix,
    y_negative: &[usize],
) -> Result<(f64, LayerGrads)> {
    let cs = model.num_shared();
    let mut total = 0.0;
    let mut acc: Option<LayerGrads> = None;
    let offset: Vec<usize> = y_negative.iter().map(|&y| y + cs).collect();
    for (u, y) in [(u_source, y_source), (u_negative, offset.as_slice())] {
        if u.rows() == 0 {
            continue;
        }
        let trace = model.forward_traced_from_u(u)?;
        let lg = softmax_cross_entropy(&trace.taps.logits(), y)?;
        total += lg.loss;
        let g = model.backward(&trace, &lg.grad)?.aligned(&model.spec);
        acc = Some(match acc {
            None => g,
            Some(mut a) => {
                for (ai, gi) in a.iter_mut().zip(g) {
                    if let (Some(ai), Some(gi)) = (ai.as_mut(), gi) {
                        ai.add_assign(&gi);
                    }
                }
                a
            }
        });
    }
    let grads = acc.unwrap_or_else(|| vec![None; model.layers().len()]);
    Ok((total, grads))
}

/// Epoch order that interleaves classes round-robin, each class shuffled
/// and drawn without replacement.
fn balanced_order(by_class: &[Vec<usize>], rng: &mut Rng) -> Vec<usize> {
    let mut pools: Vec<Vec<usize>> = by_class.to_vec();
    for p in &mut pools {
        rng.shuffle(p);
    }
    let longest = pools.iter().map(Vec::len).max().unwrap_or(0);
    let mut order = Vec::with_capacity(pools.iter().map(Vec::len).sum());
    for i in 0..longest {
        for p in &pools {
            if let Some(&idx) = p.get(i) {
                order.push(idx);
            }
        }
    }
    order
}

fn indices_by_class(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by[l].push(i);
    }
    by
}

fn check_source(source: &LabeledSet, y: &[usize], num_classes: usize) -> Result<()> {
    if source.is_empty() {
        return Err(Error::input("empty source set"));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::input(format!("source label {bad} outside [0, {num_classes})")));
    }
    Ok(())
}

/// Contiguous label indices and the id order they map from.
fn contiguous_labels(source: &LabeledSet) -> (ClassIndex, Vec<usize>) {
    let ci = ClassIndex::new(source.labels.clone());
    let y = source
        .labels
        .iter()
        .map(|&l| ci.index_of(l).expect("label comes from the set"))
        .collect();
    (ci, y)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn shared_only_stats(model: &Pretrained, x: &Matrix, y: &[usize]) -> Result<(f64, f64)> {
    let probs = softmax(&model.logits(x)?);
    let correct = probs.row_iter().zip(y).filter(|(p, &l)| argmax(p) == l).count();
    let w = weights_from_probs(&probs, model.num_shared());
    Ok((correct as f64 / y.len() as f64, mean(&w)))
}

fn full_stats(model: &InheritableModel, x: &Matrix, y: &[usize]) -> Result<(f64, f64)> {
    let probs = model.forward(x)?.probs();
    let correct = probs.row_iter().zip(y).filter(|(p, &l)| argmax(p) == l).count();
    let w = weights_from_probs(&probs, model.num_shared());
    Ok((correct as f64 / y.len() as f64, mean(&w)))
}

/// Step one: trains `{M, E, G_s}` with cross-entropy over the shared classes.
///
/// Source labels must already be contiguous in `0..|C_s|`.
pub fn pretrain(
    source: &LabeledSet,
    cfg: &VendorConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Pretrained> {
    cfg.validate()?;
    let num_classes = source.classes().len();
    let y: Vec<usize> = source.labels.iter().map(|&l| l as usize).collect();
    check_source(source, &y, num_classes)?;
    if num_classes < 2 {
        return Err(Error::input("source needs at least two classes"));
    }
    let root = Rng::new(cfg.seed);
    let mut init_rng = root.fork(10);
    let mut model = Pretrained::init(
        source.dims(),
        &cfg.m_dims,
        &cfg.e_dims,
        (0..num_classes as i64).collect(),
        &mut init_rng,
    );
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, model.layers());
    let mut rng = root.fork(11);
    let by_class = indices_by_class(&y, num_classes);

    for epoch in 0..cfg.pretrain_epochs {
        let order = balanced_order(&by_class, &mut rng);
        let mut losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let xb = source.features.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grads) = pretrain_loss(&model, &xb, &yb)?;
            losses.push(loss);
            let grads: Vec<_> = grads.into_iter().map(|g| g.expect("all layers train")).collect();
            opt.step(model.layers_mut(), &grads);
        }
        let (acc, w) = shared_only_stats(&model, &source.features, &y)?;
        on_epoch(&EpochRecord {
            phase: Phase::Pretrain,
            epoch,
            loss: mean(&losses),
            source_accuracy: acc,
            mean_source_w: w,
        });
    }
    Ok(model)
}

/// Result of step two.
#[derive(Debug, Clone)]
pub struct InheritableTraining {
    pub model: InheritableModel,
    pub negatives: NegativeSet,
}

/// Step two: freezes `M`, generates negatives, trains `{E, G_s, G_n}` and
/// records the source mean weight.
///
/// Source labels must already be contiguous in `0..|C_s|`.
pub fn train_inheritable(
    pretrained: Pretrained,
    source: &LabeledSet,
    cfg: &VendorConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<InheritableTraining> {
    cfg.validate()?;
    let cs = pretrained.num_shared();
    let y: Vec<usize> = source.labels.iter().map(|&l| l as usize).collect();
    check_source(source, &y, cs)?;

    let k = cfg.k_for(cs);
    let root = Rng::new(cfg.seed);
    let mut head_rng = root.fork(20);
    let spec = pretrained.spec(k);
    let negative_head = Dense::he_uniform(spec.feature_dim(), k, &mut head_rng);
    let mut model = InheritableModel {
        spec,
        backbone: pretrained.backbone,
        embedder: pretrained.embedder,
        shared_head: pretrained.shared_head,
        negative_head,
        shared_labels: pretrained.shared_labels,
        source_mean_w: 1.0,
    };
    model.validate()?;

    let num_negatives = cfg.num_negatives.unwrap_or(source.len());
    let mut neg_rng = root.fork(21);
    let negatives = generate_negatives(&model, source, num_negatives, cfg.d_percent, k, &mut neg_rng)?;

    // M is frozen, so its source features are fixed for the whole phase
    let u_source = model.splice_features(&source.features)?;
    let half = cfg.batch_size / 2;
    let trainable: Vec<bool> = {
        let m = model.backbone.layers.len();
        (0..model.layers().len()).map(|i| i >= m).collect()
    };
    let mut opt = Sgd::new(
        cfg.learning_rate,
        cfg.momentum,
        model.layers().into_iter().zip(&trainable).filter(|(_, &t)| t).map(|(l, _)| l),
    );
    let mut rng = root.fork(22);
    let by_class = indices_by_class(&y, cs);

    for epoch in 0..cfg.finetune_epochs {
        let order = balanced_order(&by_class, &mut rng);
        let neg_order = rng.permutation(negatives.len());
        let mut neg_cursor = 0;
        let mut losses = Vec::new();
        for batch in order.chunks(half) {
            let ub = u_source.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let nb: Vec<usize> = (0..half)
                .map(|t| neg_order[(neg_cursor + t) % neg_order.len()])
                .collect();
            neg_cursor = (neg_cursor + half) % neg_order.len();
            let un = negatives.u_n.select_rows(&nb);
            let yn: Vec<usize> = nb.iter().map(|&i| negatives.y_n[i]).collect();

            let (loss, grads) = inheritable_loss(&model, &ub, &yb, &un, &yn)?;
            if !loss.is_finite() {
                return Err(Error::input(format!("non-finite training loss at epoch {epoch}")));
            }
            losses.push(loss);
            let grads: Vec<_> = grads.into_iter().flatten().collect();
            let layers = model
                .layers_mut()
                .into_iter()
                .zip(&trainable)
                .filter(|(_, &t)| t)
                .map(|(l, _)| l);
            opt.step(layers, &grads);
        }
        let (acc, w) = full_stats(&model, &source.features, &y)?;
        on_epoch(&EpochRecord {
            phase: Phase::Finetune,
            epoch,
            loss: mean(&losses),
            source_accuracy: acc,
            mean_source_w: w,
        });
    }

    let w = instance_weight(&model, &source.features)?;
    model.source_mean_w = mean(&w).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(InheritableTraining { model, negatives })
}

/// Everything produced by a full vendor run.
#[derive(Debug, Clone)]
pub struct VendorRun {
    pub model: InheritableModel,
    pub negatives: NegativeSet,
    pub log: Vec<EpochRecord>,
}

/// Both training steps on a source set with arbitrary class ids.
pub fn train_vendor(source: &LabeledSet, cfg: &VendorConfig) -> Result<VendorRun> {
    train_vendor_with(source, cfg, &mut |_| {})
}

/// [`train_vendor`] with a per-epoch progress callback.
pub fn train_vendor_with(
    source: &LabeledSet,
    cfg: &VendorConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<VendorRun> {
    if source.is_empty() {
        return Err(Error::input("empty source set"));
    }
    let (classes, y) = contiguous_labels(source);
    let mapped = LabeledSet::new(source.features.clone(), y.iter().map(|&v| v as i64).collect())?;
    let mut log = Vec::new();
    let mut record = |r: &EpochRecord| {
        log.push(*r);
        on_epoch(r);
    };
    let pre = pretrain(&mapped, cfg, &mut record)?;
    let mut trained = train_inheritable(pre, &mapped, cfg, &mut record)?;
    trained.model.shared_labels = classes.ids().to_vec();
    Ok(VendorRun {
        model: trained.model,
        negatives: trained.negatives,
        log,
    })
}
