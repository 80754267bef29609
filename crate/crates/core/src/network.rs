//! Dense feed-forward ReLU networks: forward pass, input gradients and
//! exact parameter gradients through a fixed activation pattern.
//!
//! A network is `f = f_d ∘ … ∘ f_1` with `f_l(h) = ρ_l(W_l h + b_l)`. Every
//! hidden layer uses ReLU; the head (layer `d`, a single unit) is either the
//! identity or a sigmoid. A hidden unit counts as active only when its
//! pre-activation is strictly positive, so ties at a region boundary are
//! resolved as inactive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: expected input of dimension {expected}, got {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: bias has length {found}, weight has {expected} rows")]
    BiasMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer}: hidden layers must use relu, found {found:?}")]
    HiddenActivation { layer: usize, found: Activation },
    #[error("head must be identity or sigmoid, found {0:?}")]
    HeadActivation(Activation),
    #[error("head must have exactly one output unit, found {0}")]
    HeadWidth(usize),
    #[error("layer {layer}: non-finite parameter")]
    NonFinite { layer: usize },
    #[error("{loss:?} loss requires a {required:?} head, network has {found:?}")]
    LossHeadMismatch {
        loss: Loss,
        required: Activation,
        found: Activation,
    },
    #[error("binary cross-entropy needs a label in {{0, 1}}, got {0}")]
    InvalidLabel(f64),
    #[error("binary cross-entropy derivative is unbounded at output {0}")]
    SaturatedOutput(f64),
    #[error("hidden layer {layer} has no unit active on the data")]
    DeadLayer { layer: usize },
    #[error("dropout mask for layer {layer} has length {found}, expected {expected}")]
    MaskMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Bce,
}

impl Loss {
    /// The head activation this loss is defined for.
    pub fn required_head(self) -> Activation {
        match self {
            Loss::Mse => Activation::Identity,
            Loss::Bce => Activation::Sigmoid,
        }
    }

    /// `ℓ(ŷ, y)`: `(ŷ − y)²/2` for MSE, the usual cross-entropy for BCE.
    pub fn value(self, y_hat: f64, y: f64) -> f64 {
        match self {
            Loss::Mse => 0.5 * (y_hat - y) * (y_hat - y),
            Loss::Bce => {
                let a = if y > 0.0 { -y * y_hat.ln() } else { 0.0 };
                let b = if y < 1.0 { -(1.0 - y) * (1.0 - y_hat).ln() } else { 0.0 };
                a + b
            }
        }
    }

    /// `∂ℓ/∂ŷ` at `(ŷ, y)`.
    pub fn derivative(self, y_hat: f64, y: f64) -> Result<f64> {
        match self {
            Loss::Mse => Ok(y_hat - y),
            Loss::Bce => {
                check_bce(y_hat, y)?;
                Ok(-y / y_hat + (1.0 - y) / (1.0 - y_hat))
            }
        }
    }
}

fn check_bce(y_hat: f64, y: f64) -> Result<()> {
    if y != 0.0 && y != 1.0 {
        return Err(NnError::InvalidLabel(y));
    }
    if !(y_hat > 0.0 && y_hat < 1.0) {
        return Err(NnError::SaturatedOutput(y_hat));
    }
    Ok(())
}

/// `ε = |∂ℓ/∂ŷ|`: `|ŷ − y|` for MSE and `1/|1 − y − ŷ|` for BCE.
///
/// An MSE value of exactly zero is legal and marks a zero-gradient step.
pub fn epsilon(loss: Loss, y_hat: f64, y: f64) -> Result<f64> {
    match loss {
        Loss::Mse => Ok((y_hat - y).abs()),
        Loss::Bce => {
            check_bce(y_hat, y)?;
            Ok(1.0 / (1.0 - y - y_hat).abs())
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ψ(z) = σ(z)(1 − σ(z))`, the sigmoid derivative.
#[inline]
pub fn sigmoid_slope(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(rename = "w")]
    pub weight: Matrix,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
    #[serde(rename = "act")]
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Self {
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// A validated network. Construct with [`Network::new`] or deserialize from
/// `{"layers":[{"w":[[…]],"b":[…],"act":"relu"}, …]}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    layers: Vec<Layer>,
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            layers: Vec<Layer>,
        }
        let raw = Raw::deserialize(d)?;
        Network::new(raw.layers).map_err(serde::de::Error::custom)
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let depth = self.layers.len();
        if depth == 0 {
            return Err(NnError::Empty);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(NnError::BiasMismatch {
                    layer: l,
                    expected: layer.weight.rows(),
                    found: layer.bias.len(),
                });
            }
            if l > 0 {
                let prev = self.layers[l - 1].output_dim();
                if layer.input_dim() != prev {
                    return Err(NnError::DimensionMismatch {
                        layer: l,
                        expected: prev,
                        found: layer.input_dim(),
                    });
                }
            }
            let is_head = l + 1 == depth;
            match (is_head, layer.activation) {
                (false, Activation::Relu) => {}
                (false, other) => {
                    return Err(NnError::HiddenActivation {
                        layer: l,
                        found: other,
                    })
                }
                (true, Activation::Relu) => return Err(NnError::HeadActivation(Activation::Relu)),
                (true, _) => {}
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(NnError::NonFinite { layer: l });
            }
        }
        let head = self.layers.last().unwrap();
        if head.output_dim() != 1 {
            return Err(NnError::HeadWidth(head.output_dim()));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers `d`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn head(&self) -> Activation {
        self.layers.last().unwrap().activation
    }

    /// Widths `n_1 … n_{d-1}` of the hidden layers.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.depth() - 1]
            .iter()
            .map(Layer::output_dim)
            .collect()
    }

    pub fn first_weight(&self) -> &Matrix {
        &self.layers[0].weight
    }

    pub fn first_bias(&self) -> &[f64] {
        &self.layers[0].bias
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Applies `θ ← θ − step · g` for every parameter, optionally leaving
    /// `W_1` untouched.
    pub fn apply_gradient(&mut self, grads: &[LayerGrad], step: f64, freeze_first_weight: bool) {
        assert_eq!(grads.len(), self.layers.len());
        for (l, (layer, g)) in self.layers.iter_mut().zip(grads).enumerate() {
            if !(l == 0 && freeze_first_weight) {
                for (w, gw) in layer
                    .weight
                    .as_mut_slice()
                    .iter_mut()
                    .zip(g.weight.as_slice())
                {
                    *w -= step * gw;
                }
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= step * gb;
            }
        }
    }

    /// Returns a copy with the head weight multiplied by `c`.
    pub fn with_scaled_head(&self, c: f64) -> Network {
        let mut out = self.clone();
        let head = out.layers.last_mut().unwrap();
        head.weight.as_mut_slice().iter_mut().for_each(|w| *w *= c);
        out
    }

    /// Mutable access for callers that keep the shapes intact (tests and
    /// fixture builders). Shapes are re-validated on every call to
    /// [`Network::new`], not here.
    pub fn layer_mut(&mut self, l: usize) -> (&mut Matrix, &mut Vec<f64>) {
        let layer = &mut self.layers[l];
        (&mut layer.weight, &mut layer.bias)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Network, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Full forward pass, keeping every intermediate needed for backprop.
    ///
    /// `masks`, when given, holds one 0/1 vector per hidden layer that is
    /// multiplied into that layer's output (Dropout).
    pub fn trace(&self, x: &[f64], masks: Option<&[Vec<bool>]>) -> Result<Trace> {
        self.check_input(x)?;
        let hidden = self.depth() - 1;
        if let Some(m) = masks {
            for l in 0..hidden {
                let expected = self.layers[l].output_dim();
                let found = m.get(l).map_or(0, Vec::len);
                if found != expected {
                    return Err(NnError::MaskMismatch {
                        layer: l,
                        expected,
                        found,
                    });
                }
            }
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.depth() + 1);
        let mut pattern = Vec::with_capacity(hidden);
        let mut effective = Vec::with_capacity(hidden);
        outputs.push(x.to_vec());
        let mut head_pre = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.mul_vec(&outputs[l]);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            if l < hidden {
                let active: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();
                let eff: Vec<bool> = match masks {
                    Some(m) => active.iter().zip(&m[l]).map(|(&a, &k)| a && k).collect(),
                    None => active.clone(),
                };
                let h = z
                    .iter()
                    .zip(&eff)
                    .map(|(&v, &on)| if on { v } else { 0.0 })
                    .collect();
                pattern.push(active);
                effective.push(eff);
                outputs.push(h);
            } else {
                head_pre = z[0];
                let y = match layer.activation {
                    Activation::Sigmoid => sigmoid(head_pre),
                    _ => head_pre,
                };
                outputs.push(vec![y]);
            }
        }
        let output = outputs.last().unwrap()[0];
        Ok(Trace {
            outputs,
            pattern: ActivationPattern::new(pattern),
            effective: ActivationPattern::new(effective),
            head_pre,
            output,
            head: self.head(),
        })
    }

    /// Backpropagates `seed = ∂(objective)/∂ŷ` through a recorded trace.
    ///
    /// Returns per-layer parameter gradients and the input gradient of the
    /// same objective. The effective (post-mask) pattern of the trace is used
    /// as the ReLU derivative.
    pub fn backprop(&self, trace: &Trace, seed: f64) -> (Vec<LayerGrad>, Vec<f64>) {
        let d = self.depth();
        let head_slope = match self.head() {
            Activation::Sigmoid => sigmoid_slope(trace.head_pre),
            _ => 1.0,
        };
        let mut delta = vec![seed * head_slope];
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(d);
        let mut input_grad = Vec::new();
        for l in (0..d).rev() {
            let layer = &self.layers[l];
            let h_prev = &trace.outputs[l];
            let mut gw = Matrix::zeros(layer.output_dim(), layer.input_dim());
            for (i, &di) in delta.iter().enumerate() {
                if di == 0.0 {
                    continue;
                }
                for (j, &hj) in h_prev.iter().enumerate() {
                    gw[(i, j)] = di * hj;
                }
            }
            let mut back = layer.weight.tr_mul_vec(&delta);
            grads.push(LayerGrad {
                weight: gw,
                bias: delta,
            });
            if l == 0 {
                input_grad = back;
                break;
            }
            for (b, &on) in back.iter_mut().zip(&trace.effective.per_layer[l - 1]) {
                if !on {
                    *b = 0.0;
                }
            }
            delta = back;
        }
        grads.reverse();
        (grads, input_grad)
    }

    /// `(ŷ, pattern)`.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, ActivationPattern)> {
        let t = self.trace(x, None)?;
        Ok((t.output, t.pattern))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.trace(x, None)?.output)
    }

    pub fn pattern(&self, x: &[f64]) -> Result<ActivationPattern> {
        Ok(self.trace(x, None)?.pattern)
    }

    /// `∇_x f(x)`. With a sigmoid head the linear part is scaled by
    /// `ψ(z)` at the head pre-activation.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.trace(x, None)?;
        Ok(self.backprop(&t, 1.0).1)
    }

    /// Exact gradients of `ℓ(f(x), y)` with respect to every `W_l`, `b_l`.
    pub fn grad_params(&self, x: &[f64], y: f64, loss: Loss) -> Result<GradientReport> {
        self.check_loss(loss)?;
        let t = self.trace(x, None)?;
        let seed = loss.derivative(t.output, y)?;
        let (param_grads, _) = self.backprop(&t, seed);
        let (_, input_grad) = self.backprop(&t, 1.0);
        Ok(GradientReport {
            input_grad,
            param_grads,
            output: t.output,
        })
    }

    pub fn check_loss(&self, loss: Loss) -> Result<()> {
        let required = loss.required_head();
        if self.head() != required {
            return Err(NnError::LossHeadMismatch {
                loss,
                required,
                found: self.head(),
            });
        }
        Ok(())
    }
}

/// Everything a forward pass produced; input to [`Network::backprop`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `outputs[0] = x`, `outputs[l] = f_l(…)` (post-mask for hidden layers).
    pub outputs: Vec<Vec<f64>>,
    /// Strict-positivity pattern before any Dropout mask.
    pub pattern: ActivationPattern,
    /// Pattern after the Dropout mask (equal to `pattern` without masks).
    pub effective: ActivationPattern,
    pub head_pre: f64,
    pub output: f64,
    pub head: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// `∇_x f(x)` (the network, not the loss).
    pub input_grad: Vec<f64>,
    /// `∂ℓ/∂W_l`, `∂ℓ/∂b_l` per layer.
    pub param_grads: Vec<LayerGrad>,
    pub output: f64,
}

/// Per-hidden-layer on/off states of an input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActivationPattern {
    pub per_layer: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn new(per_layer: Vec<Vec<bool>>) -> Self {
        Self { per_layer }
    }

    /// Length of the Kronecker-flattened form, `∏ n_l`.
    pub fn flat_len(&self) -> usize {
        self.per_layer.iter().map(Vec::len).product()
    }

    /// Kronecker product `s_{d-1} ⊗ … ⊗ s_1` as a dense 0/1 vector. The
    /// deepest hidden layer is the most significant index.
    pub fn flatten(&self) -> Vec<u8> {
        let mut out = vec![1u8];
        for layer in self.per_layer.iter().rev() {
            let mut next = Vec::with_capacity(out.len() * layer.len());
            for &a in &out {
                for &b in layer {
                    next.push(a * u8::from(b));
                }
            }
            out = next;
        }
        out
    }

    /// Indices of the nonzero entries of [`flatten`](Self::flatten), in
    /// increasing order, without materializing the dense vector.
    pub fn flat_support(&self) -> Vec<usize> {
        let mut support = vec![0usize];
        for layer in self.per_layer.iter().rev() {
            let active: Vec<usize> = layer
                .iter()
                .enumerate()
                .filter_map(|(i, &on)| on.then_some(i))
                .collect();
            let width = layer.len();
            let mut next = Vec::with_capacity(support.len() * active.len());
            for &s in &support {
                for &i in &active {
                    next.push(s * width + i);
                }
            }
            support = next;
        }
        support
    }

    pub fn active_count(&self) -> usize {
        self.per_layer.iter().flatten().filter(|&&b| b).count()
    }

    /// Short stable hex digest, used to name regions in reports.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for layer in &self.per_layer {
            h.update((layer.len() as u64).to_le_bytes());
            let bytes: Vec<u8> = layer.iter().map(|&b| u8::from(b)).collect();
            h.update(&bytes);
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Convenience: the Euclidean norm of `∇_x f(x)`.
pub fn grad_input_norm(net: &Network, x: &[f64]) -> Result<f64> {
    Ok(linalg::norm2(&net.grad_input(x)?))
}
