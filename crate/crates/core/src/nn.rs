//! Dense feed-forward network over a flat parameter vector.
//!
//! Parameters are laid out layer by layer. Each block is the weight matrix in
//! row-major order (`out_dim` rows by `in_dim` columns) followed by the bias
//! vector. Hidden layers use ReLU and are multiplied by a per-neuron mask;
//! the last layer produces unmasked logits.
//!
//! Masking happens on activations. A mask multiplier of 0 on a hidden neuron
//! is exactly equivalent to zeroing every parameter incident to that neuron
//! (see [`crate::masking::expand_to_param_mask`]).

use std::sync::Arc;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::masking::NeuronMask;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Layer widths of the synthetic-task classifier: 5 → 32 → 64 → 128 → 32 → 4.
pub const SYNTHETIC_WIDTHS: [usize; 6] = [5, 32, 64, 128, 32, 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    layer_offsets: Vec<usize>,
    hidden_offsets: Vec<usize>,
    param_count: usize,
    hidden_count: usize,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("at least one layer is required".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::InvalidSpec(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        let mut layer_offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for l in &layers {
            layer_offsets.push(offset);
            offset += l.in_dim * l.out_dim + l.out_dim;
        }
        let mut hidden_offsets = Vec::with_capacity(layers.len() - 1);
        let mut hidden = 0;
        for l in &layers[..layers.len() - 1] {
            hidden_offsets.push(hidden);
            hidden += l.out_dim;
        }
        Ok(Self {
            layers,
            layer_offsets,
            hidden_offsets,
            param_count: offset,
            hidden_count: hidden,
        })
    }

    /// Builds a chain from a width list `[input, hidden..., classes]`.
    pub fn from_widths(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidSpec("need at least input and output widths".into()));
        }
        Self::new(
            widths
                .windows(2)
                .map(|w| LayerSpec {
                    in_dim: w[0],
                    out_dim: w[1],
                })
                .collect(),
        )
    }

    pub fn synthetic() -> Self {
        Self::from_widths(&SYNTHETIC_WIDTHS).expect("static widths are valid")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Number of maskable hidden neurons `h`.
    pub fn hidden_count(&self) -> usize {
        self.hidden_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Start of layer `l`'s block in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layer_offsets[l]
    }

    /// Start of hidden layer `l`'s slice in a length-`h` neuron vector.
    pub fn hidden_offset(&self, l: usize) -> usize {
        self.hidden_offsets[l]
    }

    pub fn is_hidden(&self, l: usize) -> bool {
        l + 1 < self.layers.len()
    }
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Flat model parameters `x ∈ ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec: Arc<ModelSpec>,
}

impl ParamVector {
    pub fn from_values(spec: Arc<ModelSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::ShapeMismatch {
                what: "parameter vector",
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("parameters must be finite".into()));
        }
        Ok(Self { values, spec })
    }

    pub fn zeros(spec: Arc<ModelSpec>) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            spec,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let LayerSpec { in_dim, out_dim } = self.spec.layers()[l];
        let start = self.spec.layer_offset(l);
        &self.values[start..start + in_dim * out_dim]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let LayerSpec { in_dim, out_dim } = self.spec.layers()[l];
        let start = self.spec.layer_offset(l) + in_dim * out_dim;
        &self.values[start..start + out_dim]
    }

    /// Little-endian bytes of every parameter, in layout order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Uniform fan-in initialization: weights in `[-1/√fan_in, 1/√fan_in]`, biases zero.
pub fn init_params(spec: Arc<ModelSpec>, seed: u64) -> ParamVector {
    let mut rng = rng::stream(seed, Purpose::Init, &[]);
    let mut values = Vec::with_capacity(spec.param_count());
    for l in spec.layers() {
        let bound = 1.0 / (l.in_dim as f64).sqrt();
        values.extend((0..l.in_dim * l.out_dim).map(|_| rng.random_range(-bound..=bound)));
        values.extend(std::iter::repeat_n(0.0, l.out_dim));
    }
    ParamVector { values, spec }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    /// `Wz + b` for every layer; the last entry holds the logits.
    pre: Vec<Matrix>,
    /// Masked ReLU outputs for hidden layers.
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    /// Post-mask activations of the hidden layers.
    pub fn hidden_activations(&self) -> &[Matrix] {
        &self.post
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// Four independent accumulators so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() - a.len() % 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        let x: &[f64; 4] = x.try_into().unwrap();
        let y: &[f64; 4] = y.try_into().unwrap();
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dense(input: &Matrix, weights: &[f64], bias: &[f64], out_dim: usize) -> Matrix {
    let in_dim = input.cols();
    let mut out = Matrix::zeros(input.rows(), out_dim);
    for b in 0..input.rows() {
        let x = input.row(b);
        let y = out.row_mut(b);
        for (k, yk) in y.iter_mut().enumerate() {
            let w = &weights[k * in_dim..(k + 1) * in_dim];
            *yk = bias[k] + dot(w, x);
        }
    }
    out
}

fn check_mask_len(spec: &ModelSpec, len: usize) -> Result<()> {
    if len != spec.hidden_count() {
        return Err(Error::ShapeMismatch {
            what: "neuron mask",
            expected: spec.hidden_count(),
            got: len,
        });
    }
    Ok(())
}

/// Forward pass under a binary neuron mask.
pub fn forward(params: &ParamVector, mask: &NeuronMask, batch: &Matrix) -> Result<ForwardTrace> {
    forward_relaxed(params, &mask.multipliers(), batch)
}

/// Forward pass where each hidden neuron's activation is scaled by a real
/// multiplier. With 0/1 multipliers this is the masked forward pass.
pub fn forward_relaxed(
    params: &ParamVector,
    multipliers: &[f64],
    batch: &Matrix,
) -> Result<ForwardTrace> {
    let spec = params.spec();
    check_mask_len(spec, multipliers.len())?;
    if batch.cols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            what: "batch columns",
            expected: spec.input_dim(),
            got: batch.cols(),
        });
    }
    let n_layers = spec.layers().len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post: Vec<Matrix> = Vec::with_capacity(n_layers - 1);
    for (l, layer) in spec.layers().iter().enumerate() {
        let input = if l == 0 { batch } else { &post[l - 1] };
        let z = dense(input, params.weights(l), params.bias(l), layer.out_dim);
        if spec.is_hidden(l) {
            let m = &multipliers[spec.hidden_offset(l)..spec.hidden_offset(l) + layer.out_dim];
            let mut a = z.clone();
            for b in 0..a.rows() {
                for (v, mk) in a.row_mut(b).iter_mut().zip(m) {
                    *v = v.max(0.0) * mk;
                }
            }
            post.push(a);
        }
        pre.push(z);
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        pre,
        post,
    })
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let (arg, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    // The max term contributes exactly 1; ln_1p keeps precision when the rest is tiny.
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    let lse = rest.ln_1p();
    row.iter().map(|v| (v - max) - lse).collect()
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            what: "labels",
            expected: rows,
            got: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean cross-entropy of `logits` against integer `labels`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -log_softmax_row(logits.row(b))[y])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradients of the mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// With respect to every parameter (length `d`).
    pub params: Vec<f64>,
    /// With respect to every hidden neuron's mask multiplier (length `h`).
    pub mask: Vec<f64>,
}

pub fn backward(
    params: &ParamVector,
    mask: &NeuronMask,
    trace: &ForwardTrace,
    labels: &[usize],
) -> Result<Gradients> {
    backward_relaxed(params, &mask.multipliers(), trace, labels)
}

/// Exact backpropagation through [`forward_relaxed`].
///
/// `trace` must come from `forward_relaxed` with the same parameters,
/// multipliers and batch.
pub fn backward_relaxed(
    params: &ParamVector,
    multipliers: &[f64],
    trace: &ForwardTrace,
    labels: &[usize],
) -> Result<Gradients> {
    let spec = params.spec();
    check_mask_len(spec, multipliers.len())?;
    let logits = trace.logits();
    check_labels(labels, logits.rows(), spec.class_count())?;
    let batch = logits.rows();
    if batch == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv_b = 1.0 / batch as f64;

    // dL/dlogits = (softmax - onehot) / B
    let mut delta = Matrix::zeros(batch, logits.cols());
    for (b, &y) in labels.iter().enumerate() {
        let ls = log_softmax_row(logits.row(b));
        let row = delta.row_mut(b);
        for (k, v) in row.iter_mut().enumerate() {
            *v = ls[k].exp() * inv_b;
        }
        row[y] -= inv_b;
    }

    let mut grad_params = vec![0.0; spec.param_count()];
    let mut grad_mask = vec![0.0; spec.hidden_count()];

    for l in (0..spec.layers().len()).rev() {
        let LayerSpec { in_dim, out_dim } = spec.layers()[l];
        let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let start = spec.layer_offset(l);
        let (gw, gb) = grad_params[start..start + in_dim * out_dim + out_dim].split_at_mut(in_dim * out_dim);
        for b in 0..batch {
            let d = delta.row(b);
            let a = input.row(b);
            for k in 0..out_dim {
                let dk = d[k];
                if dk == 0.0 {
                    continue;
                }
                gb[k] += dk;
                for (g, aj) in gw[k * in_dim..(k + 1) * in_dim].iter_mut().zip(a) {
                    *g += dk * aj;
                }
            }
        }
        if l == 0 {
            break;
        }

        // Propagate into the previous hidden layer.
        let w = params.weights(l);
        let prev_pre = &trace.pre[l - 1];
        let off = spec.hidden_offset(l - 1);
        let m = &multipliers[off..off + in_dim];
        let mut next = Matrix::zeros(batch, in_dim);
        for b in 0..batch {
            let d = delta.row(b);
            let mut g = vec![0.0; in_dim];
            for (k, &dk) in d.iter().enumerate() {
                if dk == 0.0 {
                    continue;
                }
                for (gj, wkj) in g.iter_mut().zip(&w[k * in_dim..(k + 1) * in_dim]) {
                    *gj += dk * wkj;
                }
            }
            let z = prev_pre.row(b);
            let out = next.row_mut(b);
            for j in 0..in_dim {
                let relu = z[j].max(0.0);
                grad_mask[off + j] += g[j] * relu;
                out[j] = if z[j] > 0.0 { g[j] * m[j] } else { 0.0 };
            }
        }
        delta = next;
    }

    Ok(Gradients {
        params: grad_params,
        mask: grad_mask,
    })
}

/// `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &[f64], lr: f64) -> Result<ParamVector> {
    if grad.len() != params.len() {
        return Err(Error::ShapeMismatch {
            what: "gradient",
            expected: params.len(),
            got: grad.len(),
        });
    }
    let values = params
        .values
        .iter()
        .zip(grad)
        .map(|(x, g)| x - lr * g)
        .collect();
    Ok(ParamVector {
        values,
        spec: Arc::clone(&params.spec),
    })
}

/// Accuracy as a fraction and mean cross-entropy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 64;

pub fn evaluate(params: &ParamVector, mask: &NeuronMask, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let multipliers = mask.multipliers();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (features, labels) = dataset.gather(chunk);
        let trace = forward_relaxed(params, &multipliers, &features)?;
        let logits = trace.logits();
        check_labels(&labels, logits.rows(), logits.cols())?;
        for (b, &y) in labels.iter().enumerate() {
            let row = logits.row(b);
            if argmax(row) == y {
                correct += 1;
            }
            loss_sum -= log_softmax_row(row)[y];
        }
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss_sum / n,
    })
}
