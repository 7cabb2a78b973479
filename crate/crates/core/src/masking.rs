//! Mask generation: scores → sigmoid probabilities → Bernoulli neuron masks
//! → parameter masks, plus the diversity penalty and the straight-through
//! score update used to learn the scores.

use rand::Rng;

use crate::data::largest_remainder;
use crate::error::{Error, Result};
use crate::nn::ModelSpec;

/// Real-valued per-neuron mask scores `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskScores(Vec<f64>);

impl MaskScores {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn zeros(h: usize) -> Self {
        Self(vec![0.0; h])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-neuron keep probabilities `θ = σ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskProbabilities(Vec<f64>);

impl MaskProbabilities {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self(values)
    }

    pub fn filled(h: usize, p: f64) -> Self {
        Self(vec![p; h])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Binary mask over hidden neurons.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NeuronMask(Vec<bool>);

impl NeuronMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(h: usize) -> Self {
        Self(vec![true; h])
    }

    pub fn zeros(h: usize) -> Self {
        Self(vec![false; h])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// 0.0 / 1.0 activation multipliers.
    pub fn multipliers(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Binary mask over all `d` parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamMask(Vec<bool>);

impl ParamMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![true; d])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.0.iter().all(|&b| b)
    }
}

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

pub fn sigmoid_probs(scores: &MaskScores) -> MaskProbabilities {
    MaskProbabilities(scores.0.iter().map(|&s| sigmoid(s)).collect())
}

/// One independent Bernoulli draw per neuron: keep iff `u < θ` with `u ~ U[0, 1)`.
pub fn sample_neuron_mask<R: Rng + ?Sized>(theta: &MaskProbabilities, rng: &mut R) -> NeuronMask {
    NeuronMask(
        theta
            .0
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect(),
    )
}

/// Parameter-level view of a neuron mask: a weight survives iff both of its
/// endpoint neurons are active (inputs and logits always are); a bias
/// survives iff its neuron is active.
pub fn expand_to_param_mask(mask: &NeuronMask, spec: &ModelSpec) -> Result<ParamMask> {
    if mask.len() != spec.hidden_count() {
        return Err(Error::ShapeMismatch {
            what: "neuron mask",
            expected: spec.hidden_count(),
            got: mask.len(),
        });
    }
    let bits = mask.bits();
    let active = |l: usize, k: usize| -> bool {
        if spec.is_hidden(l) {
            bits[spec.hidden_offset(l) + k]
        } else {
            true
        }
    };
    let mut out = Vec::with_capacity(spec.param_count());
    for (l, layer) in spec.layers().iter().enumerate() {
        for k in 0..layer.out_dim {
            let dst = active(l, k);
            for j in 0..layer.in_dim {
                let src = l == 0 || active(l - 1, j);
                out.push(dst && src);
            }
        }
        for k in 0..layer.out_dim {
            out.push(active(l, k));
        }
    }
    Ok(ParamMask(out))
}

/// `‖θ_i − θ_excl‖²` and its gradient with respect to `θ_i`.
pub fn diversity_penalty(
    theta: &MaskProbabilities,
    theta_excl: &MaskProbabilities,
) -> Result<(f64, Vec<f64>)> {
    if theta.len() != theta_excl.len() {
        return Err(Error::ShapeMismatch {
            what: "excluded mask probabilities",
            expected: theta.len(),
            got: theta_excl.len(),
        });
    }
    let diff: Vec<f64> = theta.0.iter().zip(&theta_excl.0).map(|(a, b)| a - b).collect();
    let value = diff.iter().map(|d| d * d).sum();
    let grad = diff.iter().map(|d| 2.0 * d).collect();
    Ok((value, grad))
}

/// One gradient step on the scores for the mask loss
/// `L_s = loss(x ⊙ G(s)) − λ‖σ(s) − θ_excl‖²`.
///
/// The Bernoulli draw is passed through as identity, so the data term's
/// gradient with respect to `θ` is `grad_mask`; the sigmoid contributes its
/// exact derivative `θ(1 − θ)`.
pub fn ste_score_update(
    scores: &MaskScores,
    grad_mask: &[f64],
    theta: &MaskProbabilities,
    theta_excl: &MaskProbabilities,
    lambda: f64,
    lr: f64,
) -> Result<MaskScores> {
    let h = scores.len();
    for (what, len) in [
        ("mask gradient", grad_mask.len()),
        ("mask probabilities", theta.len()),
        ("excluded mask probabilities", theta_excl.len()),
    ] {
        if len != h {
            return Err(Error::ShapeMismatch {
                what,
                expected: h,
                got: len,
            });
        }
    }
    let (_, div_grad) = diversity_penalty(theta, theta_excl)?;
    let next = scores
        .0
        .iter()
        .zip(grad_mask)
        .zip(&theta.0)
        .zip(&div_grad)
        .map(|(((s, g), p), dg)| {
            let grad_s = (g - lambda * dg) * p * (1.0 - p);
            s - lr * grad_s
        })
        .collect();
    Ok(MaskScores(next))
}

/// Server-assigned disjoint masks: every hidden layer is cut into `fractions.len()`
/// contiguous neuron ranges, participant `i` taking the `i`-th range.
pub fn fixed_partition_masks(spec: &ModelSpec, fractions: &[f64]) -> Result<Vec<NeuronMask>> {
    let n = fractions.len();
    if n == 0 {
        return Err(Error::InfeasiblePartition("no participants".into()));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InfeasiblePartition("fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InfeasiblePartition(format!("fractions sum to {total}, not 1")));
    }
    let mut masks = vec![vec![false; spec.hidden_count()]; n];
    for (l, layer) in spec.layers().iter().enumerate() {
        if !spec.is_hidden(l) {
            continue;
        }
        let counts = largest_remainder(fractions, layer.out_dim);
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InfeasiblePartition(format!(
                "participant {i} gets no neurons in layer {l} of width {}",
                layer.out_dim
            )));
        }
        let mut start = spec.hidden_offset(l);
        for (mask, count) in masks.iter_mut().zip(counts) {
            mask[start..start + count].fill(true);
            start += count;
        }
    }
    Ok(masks.into_iter().map(NeuronMask).collect())
}
