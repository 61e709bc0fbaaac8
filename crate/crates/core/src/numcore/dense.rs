use crate::error::{Error, Result};

use super::{Matrix, Rng};

/// Fully connected layer computing `x W + b`.
///
/// `weight` is `inputs x outputs`, so a batch `x` of shape `n x inputs`
/// maps to `n x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient of a loss with respect to one [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    /// He-uniform initialisation: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    pub fn he_uniform(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weight: Matrix::new(inputs, outputs, data).expect("sized buffer"),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::Dimension {
                context: "dense layer input",
                expected: self.inputs(),
                actual: x.cols(),
            });
        }
        let mut out = x.matmul(&self.weight)?;
        out.add_row_vector(&self.bias);
        Ok(out)
    }

    /// Given the layer input and `dL/d(output)`, returns the parameter
    /// gradient and `dL/d(input)`.
    pub fn backward(&self, input: &Matrix, grad_out: &Matrix) -> Result<(DenseGrad, Matrix)> {
        let weight = input.t_matmul(grad_out)?;
        let bias = grad_out.col_sums();
        let grad_in = grad_out.matmul_t(&self.weight)?;
        Ok((DenseGrad { weight, bias }, grad_in))
    }

    /// Flat view of every parameter: weights row-major, then biases.
    pub fn param(&self, i: usize) -> f64 {
        let nw = self.weight.data().len();
        if i < nw {
            self.weight.data()[i]
        } else {
            self.bias[i - nw]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let nw = self.weight.data().len();
        if i < nw {
            self.weight.data_mut()[i] = v;
        } else {
            self.bias[i - nw] = v;
        }
    }

    /// Bit patterns of all parameters, for exact equality checks.
    pub fn bits(&self) -> Vec<u64> {
        self.weight
            .data()
            .iter()
            .chain(&self.bias)
            .map(|v| v.to_bits())
            .collect()
    }
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weight: Matrix::zeros(layer.inputs(), layer.outputs()),
            bias: vec![0.0; layer.outputs()],
        }
    }

    pub fn param(&self, i: usize) -> f64 {
        let nw = self.weight.data().len();
        if i < nw {
            self.weight.data()[i]
        } else {
            self.bias[i - nw]
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrad) {
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// A stack of dense layers with a ReLU after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluStack {
    pub layers: Vec<Dense>,
}

/// Activations kept from a [`ReluStack`] forward pass: `acts[0]` is the
/// input, `acts[i + 1]` the post-ReLU output of layer `i`.
#[derive(Debug, Clone)]
pub struct StackTrace {
    pub acts: Vec<Matrix>,
}

impl StackTrace {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl ReluStack {
    /// Builds `input -> widths[0] -> ... -> widths[last]`.
    pub fn he_uniform(input: usize, widths: &[usize], rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for &w in widths {
            layers.push(Dense::he_uniform(fan_in, w, rng));
            fan_in = w;
        }
        Self { layers }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        self.layers.last().map_or(input, Dense::outputs)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?.map(relu);
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: &Matrix) -> Result<StackTrace> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let h = layer.forward(acts.last().expect("non-empty"))?.map(relu);
            acts.push(h);
        }
        Ok(StackTrace { acts })
    }

    /// Backpropagates `dL/d(output)` through the stack. Returns per-layer
    /// gradients (same order as `layers`) and `dL/d(input)`.
    pub fn backward(&self, trace: &StackTrace, grad_out: &Matrix) -> Result<(Vec<DenseGrad>, Matrix)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.acts[i + 1];
            for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
                if o <= 0.0 {
                    *gv = 0.0;
                }
            }
            let (lg, gin) = layer.backward(&trace.acts[i], &g)?;
            grads.push(lg);
            g = gin;
        }
        grads.reverse();
        Ok((grads, g))
    }
}

#[inline]
pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// SGD with classical momentum: `v <- mu v + g`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<DenseGrad>,
}

impl Sgd {
    pub fn new<'a>(learning_rate: f64, momentum: f64, layers: impl IntoIterator<Item = &'a Dense>) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: layers.into_iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    /// Applies one update. `layers` and `grads` must line up with the layers
    /// the optimiser was built from.
    pub fn step<'a>(&mut self, layers: impl IntoIterator<Item = &'a mut Dense>, grads: &[DenseGrad]) {
        let mut n = 0;
        for ((layer, grad), vel) in layers.into_iter().zip(grads).zip(&mut self.velocity) {
            n += 1;
            update(layer.weight.data_mut(), grad.weight.data(), vel.weight.data_mut(), self.learning_rate, self.momentum);
            update(&mut layer.bias, &grad.bias, &mut vel.bias, self.learning_rate, self.momentum);
        }
        debug_assert_eq!(n, grads.len());
    }
}

fn update(params: &mut [f64], grad: &[f64], vel: &mut [f64], lr: f64, mu: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_shapes_and_values() {
        let layer = Dense {
            weight: Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5]]).unwrap(),
            bias: vec![0.5, 0.0],
        };
        let y = layer.forward(&Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(y.row(0), &[3.5, -0.5]);
        assert!(layer.forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn relu_stack_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let stack = ReluStack::he_uniform(3, &[5, 4], &mut rng);
        let x = Matrix::new(6, 3, (0..18).map(|_| rng.normal()).collect()).unwrap();
        // L = sum(out * c) for a fixed random c
        let c = Matrix::new(6, 4, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let loss = |s: &ReluStack| -> f64 {
            let out = s.forward(&x).unwrap();
            out.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        let trace = stack.forward_traced(&x).unwrap();
        let (grads, _) = stack.backward(&trace, &c).unwrap();
        let h = 1e-6;
        for (li, layer) in stack.layers.iter().enumerate() {
            for p in 0..layer.num_params() {
                let mut plus = stack.clone();
                plus.layers[li].set_param(p, layer.param(p) + h);
                let mut minus = stack.clone();
                minus.layers[li].set_param(p, layer.param(p) - h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads[li].param(p);
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "layer {li} param {p}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut rng = Rng::new(1);
        let mut layer = Dense::he_uniform(3, 2, &mut rng);
        let before = layer.bits();
        let mut grad = DenseGrad::zeros_like(&layer);
        grad.weight.data_mut()[0] = 1.0;
        let mut opt = Sgd::new(0.0, 0.9, [&layer]);
        opt.step([&mut layer], &[grad]);
        assert_eq!(before, layer.bits());
    }

    #[test]
    fn momentum_accumulates() {
        let mut layer = Dense::zeros(1, 1);
        let mut grad = DenseGrad::zeros_like(&layer);
        grad.weight.data_mut()[0] = 1.0;
        let mut opt = Sgd::new(0.1, 0.5, [&layer]);
        opt.step([&mut layer], std::slice::from_ref(&grad));
        opt.step([&mut layer], std::slice::from_ref(&grad));
        // v1 = 1, v2 = 1.5; p = -0.1 - 0.15
        assert!((layer.weight.get(0, 0) + 0.25).abs() < 1e-15);
    }
}
