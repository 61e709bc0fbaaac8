//! The inheritable network: a feature extractor `F = {M, E}` followed by a
//! classifier `G = {G_s, G_n}`.
//!
//! `M` (the backbone) maps inputs to the splice space `u`. `E` (the embedder)
//! maps `u` to the pre-classifier space `f`. `G_s` scores the `|C_s|` shared
//! classes and `G_n` the `K` negative classes; a single softmax runs over the
//! concatenation `[G_s(f) | G_n(f)]`, so negative class `j` sits at index
//! `|C_s| + j`.

mod format;

pub use format::{decode, encode, load_adapted, load_any, load_model, save_adapted, save_model, ModelKind, FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::numcore::{softmax, Dense, DenseGrad, Matrix, ReluStack, Rng, StackTrace};

/// Layer widths of an inheritable network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Hidden widths of the backbone `M`; every layer is followed by ReLU.
    pub m_dims: Vec<usize>,
    /// Hidden widths of the embedder `E`; every layer is followed by ReLU.
    pub e_dims: Vec<usize>,
    pub num_shared: usize,
    pub num_negative: usize,
}

impl NetworkSpec {
    /// Default desk-scale widths: `M = [64]`, `E = [32]`.
    pub fn with_defaults(input_dim: usize, num_shared: usize, num_negative: usize) -> Self {
        Self {
            input_dim,
            m_dims: vec![64],
            e_dims: vec![32],
            num_shared,
            num_negative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.m_dims.contains(&0) || self.e_dims.contains(&0) {
            return Err(Error::input("all layer widths must be >= 1"));
        }
        if self.num_shared < 2 {
            return Err(Error::input(format!("need at least 2 shared classes, got {}", self.num_shared)));
        }
        if self.num_negative < 1 {
            return Err(Error::input("need at least 1 negative class"));
        }
        Ok(())
    }

    /// Width of the splice space (output of `M`).
    pub fn splice_dim(&self) -> usize {
        *self.m_dims.last().unwrap_or(&self.input_dim)
    }

    /// Width of the pre-classifier space (output of `E`).
    pub fn feature_dim(&self) -> usize {
        *self.e_dims.last().unwrap_or(&self.splice_dim())
    }

    pub fn num_outputs(&self) -> usize {
        self.num_shared + self.num_negative
    }
}

/// A trained (or freshly initialised) inheritable model.
#[derive(Debug, Clone, PartialEq)]
pub struct InheritableModel {
    pub spec: NetworkSpec,
    /// `M`
    pub backbone: ReluStack,
    /// `E`
    pub embedder: ReluStack,
    /// `G_s`
    pub shared_head: Dense,
    /// `G_n`
    pub negative_head: Dense,
    /// Original class id of each shared output index.
    pub shared_labels: Vec<i64>,
    /// Mean instance weight over the vendor's source data.
    pub source_mean_w: f64,
}

/// Intermediate outputs of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTaps {
    /// Output of `M` (splice space).
    pub u: Matrix,
    /// Output of `E` (pre-classifier space).
    pub f: Matrix,
    pub logits_s: Matrix,
    pub logits_n: Matrix,
}

impl ForwardTaps {
    /// `[logits_s | logits_n]`
    pub fn logits(&self) -> Matrix {
        self.logits_s.hcat(&self.logits_n).expect("taps share a row count")
    }

    /// Softmax over the concatenated logits.
    pub fn probs(&self) -> Matrix {
        softmax(&self.logits())
    }
}

/// Forward pass with every activation retained for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub backbone: Option<StackTrace>,
    pub embedder: StackTrace,
    pub taps: ForwardTaps,
}

/// Per-layer gradients aligned with [`InheritableModel::layers`]; `None`
/// marks a layer the loss does not train.
pub type LayerGrads = Vec<Option<DenseGrad>>;

/// Gradients for the parts of the network a loss touches.
#[derive(Debug, Clone)]
pub(crate) struct NetworkGrad {
    pub backbone: Option<Vec<DenseGrad>>,
    pub embedder: Vec<DenseGrad>,
    pub shared_head: DenseGrad,
    pub negative_head: DenseGrad,
}

impl NetworkGrad {
    pub fn aligned(self, spec: &NetworkSpec) -> LayerGrads {
        let mut out: LayerGrads = match self.backbone {
            Some(b) => b.into_iter().map(Some).collect(),
            None => vec![None; spec.m_dims.len()],
        };
        out.extend(self.embedder.into_iter().map(Some));
        out.push(Some(self.shared_head));
        out.push(Some(self.negative_head));
        out
    }
}

impl InheritableModel {
    /// He-uniform initialisation of every layer.
    pub fn init(spec: NetworkSpec, shared_labels: Vec<i64>, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let backbone = ReluStack::he_uniform(spec.input_dim, &spec.m_dims, rng);
        let embedder = ReluStack::he_uniform(spec.splice_dim(), &spec.e_dims, rng);
        let shared_head = Dense::he_uniform(spec.feature_dim(), spec.num_shared, rng);
        let negative_head = Dense::he_uniform(spec.feature_dim(), spec.num_negative, rng);
        let model = Self {
            spec,
            backbone,
            embedder,
            shared_head,
            negative_head,
            shared_labels,
            source_mean_w: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks parameter shapes and metadata against `self.spec`.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_stack(&self.backbone, self.spec.input_dim, &self.spec.m_dims, "backbone")?;
        check_stack(&self.embedder, self.spec.splice_dim(), &self.spec.e_dims, "embedder")?;
        check_layer(&self.shared_head, self.spec.feature_dim(), self.spec.num_shared, "shared head")?;
        check_layer(&self.negative_head, self.spec.feature_dim(), self.spec.num_negative, "negative head")?;
        if self.shared_labels.len() != self.spec.num_shared {
            return Err(Error::input(format!(
                "{} shared labels for {} shared classes",
                self.shared_labels.len(),
                self.spec.num_shared
            )));
        }
        let mut sorted = self.shared_labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.shared_labels.len() {
            return Err(Error::input("shared labels must be distinct"));
        }
        if !(self.source_mean_w > 0.0 && self.source_mean_w <= 1.0) {
            return Err(Error::input(format!("source_mean_w {} outside (0, 1]", self.source_mean_w)));
        }
        Ok(())
    }

    pub fn num_shared(&self) -> usize {
        self.spec.num_shared
    }

    pub fn num_negative(&self) -> usize {
        self.spec.num_negative
    }

    /// Full forward pass from raw inputs.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardTaps> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::Dimension {
                context: "model input",
                expected: self.spec.input_dim,
                actual: x.cols(),
            });
        }
        let u = self.backbone.forward(x)?;
        self.forward_from_u(&u)
    }

    /// Forward pass entering at the splice space, skipping `M`.
    pub fn forward_from_u(&self, u: &Matrix) -> Result<ForwardTaps> {
        if u.cols() != self.spec.splice_dim() {
            return Err(Error::Dimension {
                context: "splice-space input",
                expected: self.spec.splice_dim(),
                actual: u.cols(),
            });
        }
        let f = self.embedder.forward(u)?;
        let logits_s = self.shared_head.forward(&f)?;
        let logits_n = self.negative_head.forward(&f)?;
        Ok(ForwardTaps {
            u: u.clone(),
            f,
            logits_s,
            logits_n,
        })
    }

    /// Splice-space features `M(x)`.
    pub fn splice_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::Dimension {
                context: "model input",
                expected: self.spec.input_dim,
                actual: x.cols(),
            });
        }
        self.backbone.forward(x)
    }

    /// Pre-classifier features `F(x) = E(M(x))`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.f)
    }

    pub(crate) fn forward_traced(&self, x: &Matrix) -> Result<ForwardTrace> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::Dimension {
                context: "model input",
                expected: self.spec.input_dim,
                actual: x.cols(),
            });
        }
        let backbone = self.backbone.forward_traced(x)?;
        let mut trace = self.forward_traced_from_u(backbone.output())?;
        trace.backbone = Some(backbone);
        Ok(trace)
    }

    pub(crate) fn forward_traced_from_u(&self, u: &Matrix) -> Result<ForwardTrace> {
        if u.cols() != self.spec.splice_dim() {
            return Err(Error::Dimension {
                context: "splice-space input",
                expected: self.spec.splice_dim(),
                actual: u.cols(),
            });
        }
        let embedder = self.embedder.forward_traced(u)?;
        let f = embedder.output().clone();
        let logits_s = self.shared_head.forward(&f)?;
        let logits_n = self.negative_head.forward(&f)?;
        Ok(ForwardTrace {
            backbone: None,
            embedder,
            taps: ForwardTaps {
                u: u.clone(),
                f,
                logits_s,
                logits_n,
            },
        })
    }

    /// `dL/df` from `dL/d[logits_s | logits_n]`, without touching head
    /// parameter gradients.
    pub(crate) fn head_input_grad(&self, grad_logits: &Matrix) -> Result<Matrix> {
        let c = self.spec.num_shared;
        let gs = grad_logits.select_cols(0..c);
        let gn = grad_logits.select_cols(c..grad_logits.cols());
        let mut gf = gs.matmul_t(&self.shared_head.weight)?;
        let gf_n = gn.matmul_t(&self.negative_head.weight)?;
        for (a, b) in gf.data_mut().iter_mut().zip(gf_n.data()) {
            *a += b;
        }
        Ok(gf)
    }

    /// Full backward pass. The backbone is included only when the trace
    /// came from [`Self::forward_traced`].
    pub(crate) fn backward(&self, trace: &ForwardTrace, grad_logits: &Matrix) -> Result<NetworkGrad> {
        let c = self.spec.num_shared;
        let f = &trace.taps.f;
        let (shared_head, gf_s) = self.shared_head.backward(f, &grad_logits.select_cols(0..c))?;
        let (negative_head, gf_n) = self
            .negative_head
            .backward(f, &grad_logits.select_cols(c..grad_logits.cols()))?;
        let mut gf = gf_s;
        for (a, b) in gf.data_mut().iter_mut().zip(gf_n.data()) {
            *a += b;
        }
        let (embedder, gu) = self.embedder.backward(&trace.embedder, &gf)?;
        let backbone = match &trace.backbone {
            Some(bt) => Some(self.backbone.backward(bt, &gu)?.0),
            None => None,
        };
        Ok(NetworkGrad {
            backbone,
            embedder,
            shared_head,
            negative_head,
        })
    }

    /// Feature-extractor gradients only (`M` and `E`), for losses whose
    /// classifier is frozen.
    pub(crate) fn feature_backward(&self, trace: &ForwardTrace, grad_logits: &Matrix) -> Result<(Vec<DenseGrad>, Vec<DenseGrad>)> {
        let gf = self.head_input_grad(grad_logits)?;
        let (embedder, gu) = self.embedder.backward(&trace.embedder, &gf)?;
        let backbone = match &trace.backbone {
            Some(bt) => self.backbone.backward(bt, &gu)?.0,
            None => Vec::new(),
        };
        Ok((backbone, embedder))
    }

    /// All layers in file order: backbone, embedder, shared head, negative head.
    pub fn layers(&self) -> Vec<&Dense> {
        self.backbone
            .layers
            .iter()
            .chain(&self.embedder.layers)
            .chain([&self.shared_head, &self.negative_head])
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.backbone
            .layers
            .iter_mut()
            .chain(self.embedder.layers.iter_mut())
            .chain([&mut self.shared_head, &mut self.negative_head])
            .collect()
    }

    /// Bit patterns of the backbone parameters.
    pub fn backbone_bits(&self) -> Vec<u64> {
        self.backbone.layers.iter().flat_map(Dense::bits).collect()
    }

    /// Bit patterns of both classifier heads.
    pub fn head_bits(&self) -> Vec<u64> {
        self.shared_head
            .bits()
            .into_iter()
            .chain(self.negative_head.bits())
            .collect()
    }
}

fn check_layer(layer: &Dense, inputs: usize, outputs: usize, what: &str) -> Result<()> {
    if layer.inputs() != inputs || layer.outputs() != outputs || layer.bias.len() != outputs {
        return Err(Error::input(format!(
            "{what} layer is {}x{}, expected {inputs}x{outputs}",
            layer.inputs(),
            layer.outputs()
        )));
    }
    Ok(())
}

fn check_stack(stack: &ReluStack, input: usize, widths: &[usize], what: &str) -> Result<()> {
    if stack.layers.len() != widths.len() {
        return Err(Error::input(format!(
            "{what} has {} layers, expected {}",
            stack.layers.len(),
            widths.len()
        )));
    }
    let mut fan_in = input;
    for (layer, &w) in stack.layers.iter().zip(widths) {
        check_layer(layer, fan_in, w, what)?;
        fan_in = w;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(seed: u64) -> InheritableModel {
        let mut rng = Rng::new(seed);
        let spec = NetworkSpec {
            input_dim: 3,
            m_dims: vec![6],
            e_dims: vec![5, 4],
            num_shared: 3,
            num_negative: 2,
        };
        InheritableModel::init(spec, vec![10, 20, 30], &mut rng).unwrap()
    }

    fn random_x(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = random_model(1);
        for l in m.backbone.layers.iter_mut().chain(m.embedder.layers.iter_mut()) {
            *l = Dense::zeros(l.inputs(), l.outputs());
        }
        m.shared_head = Dense::zeros(4, 3);
        m.negative_head = Dense::zeros(4, 2);
        let taps = m.forward(&Matrix::filled(2, 3, 1.5)).unwrap();
        assert!(taps.logits().data().iter().all(|&v| v == 0.0));
        for &p in taps.probs().data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_stack_reproduces_input() {
        let spec = NetworkSpec {
            input_dim: 3,
            m_dims: vec![3],
            e_dims: vec![3],
            num_shared: 2,
            num_negative: 1,
        };
        let mut m = InheritableModel::init(spec, vec![0, 1], &mut Rng::new(0)).unwrap();
        m.backbone.layers[0] = Dense {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        m.embedder.layers[0] = m.backbone.layers[0].clone();
        let x = Matrix::from_rows(&[[0.5, 2.0, 0.0], [1.0, 0.25, 3.0]]).unwrap();
        assert_eq!(m.forward(&x).unwrap().f, x);
    }

    #[test]
    fn splice_point_consistency() {
        let m = random_model(2);
        let x = random_x(&mut Rng::new(3), 7, 3);
        let full = m.forward(&x).unwrap();
        let from_u = m.forward_from_u(&full.u).unwrap();
        assert_eq!(full, from_u);
    }

    #[test]
    fn concatenated_softmax_is_row_stochastic() {
        let m = random_model(4);
        let x = random_x(&mut Rng::new(5), 10, 3);
        let p = m.forward(&x).unwrap().probs();
        for row in p.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        let u = random_x(&mut Rng::new(6), 4, 6).map(f64::abs);
        let p = m.forward_from_u(&u).unwrap().probs();
        for row in p.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_u_zero_bias_gives_zero_logits() {
        let m = random_model(7);
        let taps = m.forward_from_u(&Matrix::zeros(2, 6)).unwrap();
        assert!(taps.logits().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let m = random_model(8);
        let x = random_x(&mut Rng::new(9), 5, 3);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let m = random_model(1);
        assert!(matches!(m.forward(&Matrix::zeros(1, 4)), Err(Error::Dimension { .. })));
        assert!(matches!(m.forward_from_u(&Matrix::zeros(1, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn spec_validation() {
        let mut spec = NetworkSpec::with_defaults(2, 1, 4);
        assert!(spec.validate().is_err());
        spec.num_shared = 2;
        assert!(spec.validate().is_ok());
        spec.num_negative = 0;
        assert!(spec.validate().is_err());
        let spec = NetworkSpec::with_defaults(2, 3, 12);
        assert!(InheritableModel::init(spec, vec![1, 1, 2], &mut Rng::new(0)).is_err());
    }
}
