//! Network architecture, forward pass and test-time encoding.
//!
//! Layers are numbered `1..=n`, layer 1 being the input. `W(l)` maps layer
//! `l` to layer `l + 1`, so a network with `n` layers has `n - 1` weight
//! matrices and bias vectors. In code these are stored zero-based:
//! `weights[l - 1]` is `W(l)`.
//!
//! Activations:
//!
//! | mode         | sigmoid layers     | identity layers |
//! |--------------|--------------------|-----------------|
//! | unsupervised | `2..=n-2`          | `n-1`, `n`      |
//! | supervised   | `2..=n-1`          | `n`             |
//!
//! The code layer is `n - 1` for unsupervised networks and `n` for supervised
//! ones.

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::numerics::{ensure_valid, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Unsupervised,
    Supervised,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unsupervised => "uh",
            Mode::Supervised => "sh",
        }
    }
}

/// Units per layer, input first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSchedule {
    sizes: Vec<usize>,
    mode: Mode,
}

/// Hidden layer widths used when none are configured.
pub fn default_hidden_layers(code_length: usize) -> Vec<usize> {
    match code_length {
        0..=8 => vec![90, 20],
        9..=16 => vec![90, 30],
        17..=24 => vec![100, 40],
        _ => vec![120, 50],
    }
}

impl LayerSchedule {
    pub fn new(sizes: Vec<usize>, mode: Mode) -> Result<Self> {
        let n = sizes.len();
        if n < 3 {
            return Err(Error::Parameter(format!("need at least 3 layers, got {n}")));
        }
        if sizes.contains(&0) {
            return Err(Error::Parameter(format!("layer sizes must be positive: {sizes:?}")));
        }
        if mode == Mode::Unsupervised && sizes[n - 1] != sizes[0] {
            return Err(Error::Parameter(format!(
                "unsupervised output layer must match the input dimension {}, got {}",
                sizes[0],
                sizes[n - 1]
            )));
        }
        Ok(Self { sizes, mode })
    }

    /// `[D, hidden.., L, D]`.
    pub fn unsupervised(input_dim: usize, hidden: &[usize], code_length: usize) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(code_length);
        sizes.push(input_dim);
        Self::new(sizes, Mode::Unsupervised)
    }

    /// `[D, hidden.., L]`.
    pub fn supervised(input_dim: usize, hidden: &[usize], code_length: usize) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(code_length);
        Self::new(sizes, Mode::Supervised)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of layers `n`, input and output included.
    pub fn layers(&self) -> usize {
        self.sizes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// One-based index of the layer whose sign is the hash code.
    pub fn code_layer(&self) -> usize {
        match self.mode {
            Mode::Unsupervised => self.layers() - 1,
            Mode::Supervised => self.layers(),
        }
    }

    pub fn code_length(&self) -> usize {
        self.sizes[self.code_layer() - 1]
    }

    /// Units in one-based layer `l`.
    pub fn units(&self, l: usize) -> usize {
        self.sizes[l - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
}

/// Activation of one-based layer `layer` (valid for `2..=n`).
pub fn activation(layer: usize, schedule: &LayerSchedule) -> Result<Activation> {
    let n = schedule.layers();
    if layer < 2 || layer > n {
        return Err(Error::Contract(format!(
            "layer {layer} has no activation in a {n}-layer network"
        )));
    }
    let last_sigmoid = match schedule.mode() {
        Mode::Unsupervised => n - 2,
        Mode::Supervised => n - 1,
    };
    Ok(if layer <= last_sigmoid {
        Activation::Sigmoid
    } else {
        Activation::Identity
    })
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Sigmoid => z.map(sigmoid),
            Activation::Identity => z.clone(),
        }
    }

    /// Derivative expressed through the layer output `h = f(z)`.
    pub(crate) fn derivative_from_output(self, h: &Matrix) -> Matrix {
        match self {
            Activation::Sigmoid => h.map(|v| v * (1.0 - v)),
            Activation::Identity => Matrix::from_element(h.nrows(), h.ncols(), 1.0),
        }
    }
}

/// Weights and biases of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    schedule: LayerSchedule,
    /// `weights[i]` is `W(i+1)`, shape `s(i+2) x s(i+1)`.
    weights: Vec<Matrix>,
    /// `biases[i]` is `c(i+1)`, length `s(i+2)`.
    biases: Vec<Vector>,
}

impl NetworkParams {
    pub fn zeros(schedule: LayerSchedule) -> Self {
        let s = schedule.sizes();
        let weights = s.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = s.windows(2).map(|w| Vector::zeros(w[1])).collect();
        Self {
            schedule,
            weights,
            biases,
        }
    }

    pub fn from_parts(schedule: LayerSchedule, weights: Vec<Matrix>, biases: Vec<Vector>) -> Result<Self> {
        let s = schedule.sizes();
        if weights.len() != s.len() - 1 || biases.len() != s.len() - 1 {
            return Err(Error::Dimension(format!(
                "{} layers need {} weight matrices and bias vectors",
                s.len(),
                s.len() - 1
            )));
        }
        for (i, (w, c)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != s[i + 1] || w.ncols() != s[i] {
                return Err(Error::Dimension(format!(
                    "W({}) is {}x{}, expected {}x{}",
                    i + 1,
                    w.nrows(),
                    w.ncols(),
                    s[i + 1],
                    s[i]
                )));
            }
            if c.len() != s[i + 1] {
                return Err(Error::Dimension(format!(
                    "c({}) has {} entries, expected {}",
                    i + 1,
                    c.len(),
                    s[i + 1]
                )));
            }
            if w.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {} has non-finite parameters", i + 1)));
            }
        }
        Ok(Self {
            schedule,
            weights,
            biases,
        })
    }

    pub fn schedule(&self) -> &LayerSchedule {
        &self.schedule
    }

    /// `W(l)`, one-based.
    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    /// `c(l)`, one-based.
    pub fn bias(&self, l: usize) -> &Vector {
        &self.biases[l - 1]
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub(crate) fn weight_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.weights[l - 1]
    }

    pub(crate) fn bias_mut(&mut self, l: usize) -> &mut Vector {
        &mut self.biases[l - 1]
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.schedule
            .sizes()
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens into one vector: for `l = 1..n-1`, `W(l)` column-major followed
    /// by `c(l)`. The model file uses the same order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, c) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(c.as_slice());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(schedule: LayerSchedule, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(schedule);
        if flat.len() != params.len() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, schedule needs {}",
                flat.len(),
                params.len()
            )));
        }
        let mut offset = 0;
        for (w, c) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
            let nw = w.len();
            w.as_mut_slice().copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nc = c.len();
            c.as_mut_slice().copy_from_slice(&flat[offset..offset + nc]);
            offset += nc;
        }
        Ok(params)
    }

    /// Sum of squared Frobenius norms of all weight matrices.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum()
    }
}

/// Layer outputs and pre-activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `outputs[l - 1]` is `H(l)`; `H(1) = X`.
    outputs: Vec<Matrix>,
    /// `pre[l - 2]` is `Z(l)` for `l >= 2`.
    pre: Vec<Matrix>,
}

impl ForwardTrace {
    /// `H(l)`, one-based.
    pub fn output(&self, l: usize) -> &Matrix {
        &self.outputs[l - 1]
    }

    /// `Z(l)` for `l >= 2`.
    pub fn pre_activation(&self, l: usize) -> &Matrix {
        &self.pre[l - 2]
    }

    /// Number of layers computed, starting at the input.
    pub fn depth(&self) -> usize {
        self.outputs.len()
    }
}

/// `W(l) H(l) + c(l) 1^T`.
pub(crate) fn affine(w: &Matrix, h: &Matrix, c: &Vector) -> Matrix {
    let mut z = w * h;
    for mut col in z.column_iter_mut() {
        col += c;
    }
    z
}

fn check_input(params: &NetworkParams, x: &Matrix) -> Result<()> {
    if x.nrows() != params.schedule.input_dim() {
        return Err(Error::Dimension(format!(
            "network expects {} input features, data has {}",
            params.schedule.input_dim(),
            x.nrows()
        )));
    }
    ensure_valid(x, "input data")
}

/// Forward pass through layers `2..=last`.
pub(crate) fn forward_to(params: &NetworkParams, x: &Matrix, last: usize) -> Result<ForwardTrace> {
    check_input(params, x)?;
    let mut outputs = vec![x.clone()];
    let mut pre = Vec::with_capacity(last - 1);
    for l in 2..=last {
        let z = affine(params.weight(l - 1), &outputs[l - 2], params.bias(l - 1));
        let h = activation(l, &params.schedule)?.apply(&z);
        pre.push(z);
        outputs.push(h);
    }
    Ok(ForwardTrace { outputs, pre })
}

/// Full forward pass producing every `H(l)` and `Z(l)`.
pub fn forward(params: &NetworkParams, x: &Matrix) -> Result<ForwardTrace> {
    forward_to(params, x, params.schedule.layers())
}

/// Real-valued code layer output for `x`.
pub fn code_layer_output(params: &NetworkParams, x: &Matrix) -> Result<Matrix> {
    let l = params.schedule.code_layer();
    let mut trace = forward_to(params, x, l)?;
    Ok(trace.outputs.swap_remove(l - 1))
}

/// Binary codes: `sgn` of the code layer output, one column per sample.
pub fn encode(params: &NetworkParams, x: &Matrix) -> Result<CodeMatrix> {
    CodeMatrix::from_signs(&code_layer_output(params, x)?)
}

/// Backpropagates `delta`, the objective's gradient with respect to `Z(top)`,
/// down to the input. Writes `dJ/dW(l) = delta(l+1) H(l)^T + decay W(l)` and
/// `dJ/dc(l) = delta(l+1) 1` into `grads` for `l = top-1 ..= 1`.
pub(crate) fn backprop(
    params: &NetworkParams,
    trace: &ForwardTrace,
    mut delta: Matrix,
    top: usize,
    weight_decay: f64,
    grads: &mut NetworkParams,
) -> Result<()> {
    for l in (1..top).rev() {
        let h = trace.output(l);
        let w = params.weight(l);
        *grads.weight_mut(l) = &delta * h.transpose() + w * weight_decay;
        *grads.bias_mut(l) = delta.column_sum();
        if l >= 2 {
            let fprime = activation(l, &params.schedule)?.derivative_from_output(h);
            delta = (w.transpose() * &delta).component_mul(&fprime);
        }
    }
    Ok(())
}
