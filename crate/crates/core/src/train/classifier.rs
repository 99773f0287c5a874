use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Linear,
    Mlp,
}

impl ClassifierKind {
    pub fn tag(self) -> u32 {
        match self {
            ClassifierKind::Linear => 0,
            ClassifierKind::Mlp => 1,
        }
    }
}

/// Hidden layer widths; empty means a linear classifier.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub hidden: Vec<usize>,
}

impl ClassifierSpec {
    pub fn linear() -> Self {
        Self { hidden: Vec::new() }
    }

    pub fn mlp(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
        }
    }
}

/// Fully connected layer `y = x W + b`, `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut d = Self::zeros(fan_in, fan_out);
        for w in d.weights.as_mut_slice() {
            *w = rng.random_range(-bound..=bound);
        }
        d
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weights);
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

/// A linear model or a ReLU MLP mapping order-`l` features to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    kind: ClassifierKind,
    layers: Vec<Dense>,
}

/// Per-layer gradients, shaped like the classifier's layers.
pub(crate) type Gradients = Vec<Dense>;

/// Activations kept from a training-mode forward pass.
pub(crate) struct ForwardCache {
    /// Input of each layer after dropout.
    inputs: Vec<Matrix>,
    /// Dropout multipliers of each layer input (`None` when dropout is off).
    masks: Vec<Option<Vec<f64>>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Matrix>,
}

impl Classifier {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        spec: &ClassifierSpec,
        input_width: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut widths = vec![input_width];
        widths.extend_from_slice(&spec.hidden);
        widths.push(classes);
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Self {
            kind: if spec.hidden.is_empty() {
                ClassifierKind::Linear
            } else {
                ClassifierKind::Mlp
            },
            layers,
        }
    }

    /// Assembles a classifier from explicit layers.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return input("classifier needs at least one layer");
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].weights.cols() != w[1].weights.rows() {
                return input(format!(
                    "layer {i} output width does not feed layer {}",
                    i + 1
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.cols() {
                return input(format!("layer {i} bias length mismatch"));
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return input(format!("layer {i} has non-finite parameters"));
            }
        }
        let kind = if layers.len() == 1 {
            ClassifierKind::Linear
        } else {
            ClassifierKind::Mlp
        };
        Ok(Self { kind, layers })
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.cols())
    }

    /// Multiply-accumulates to classify one node.
    pub fn macs_per_node(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.weights.rows() * l.weights.cols()) as u64)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return input(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&p[off..off + w.len()]);
            off += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_width() {
            return input(format!(
                "classifier expects {} input columns, got {}",
                self.input_width(),
                x.cols()
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].apply(x);
        if last > 0 {
            relu_in_place(&mut h);
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.apply(&h);
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Training-mode forward pass with inverted dropout on every layer input.
    pub(crate) fn forward_train(
        &self,
        x: &Matrix,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Matrix, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        };
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mask = apply_dropout(&mut h, dropout, rng);
            let z = layer.apply(&h);
            cache.inputs.push(h);
            cache.masks.push(mask);
            if i < last {
                let mut a = z.clone();
                relu_in_place(&mut a);
                cache.pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    /// Gradients of the parameters given `dL/dlogits`. Also returns `dL/dx`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> (Gradients, Matrix) {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let weights = cache.inputs[i].t_matmul(&delta);
            let mut bias = vec![0.0; delta.cols()];
            for r in 0..delta.rows() {
                for (b, &d) in bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            grads.push(Dense { weights, bias });
            let mut dx = delta.matmul_t(&layer.weights);
            if let Some(mask) = &cache.masks[i] {
                for (v, &m) in dx.as_mut_slice().iter_mut().zip(mask) {
                    *v *= m;
                }
            }
            if i > 0 {
                let pre = &cache.pre[i - 1];
                for (v, &z) in dx.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if z <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = dx;
        }
        grads.reverse();
        (grads, delta)
    }
}

/// Logits for every row of `rows`.
pub fn forward_logits(c: &Classifier, rows: &Matrix) -> Result<Matrix> {
    c.forward(rows)
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn apply_dropout(h: &mut Matrix, rate: f64, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask: Vec<f64> = (0..h.as_slice().len())
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
        .collect();
    for (v, &m) in h.as_mut_slice().iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}
