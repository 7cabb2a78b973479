//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use fedpews::data::Dataset;
use fedpews::federation::{Algorithm, DataSource, ExperimentConfig, Partition};
use fedpews::nn::{self, Matrix, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A network described by plain nested vectors: `w[l][k][j]`, `b[l][k]`.
#[derive(Debug, Clone)]
pub struct RefNet {
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

impl RefNet {
    /// Unpacks a flat vector laid out as row-major weights then bias per layer.
    pub fn from_flat(widths: &[usize], flat: &[f64]) -> Self {
        let mut pos = 0;
        let (mut w, mut b) = (Vec::new(), Vec::new());
        for pair in widths.windows(2) {
            let (i, o) = (pair[0], pair[1]);
            let mut rows = Vec::new();
            for _ in 0..o {
                rows.push(flat[pos..pos + i].to_vec());
                pos += i;
            }
            w.push(rows);
            b.push(flat[pos..pos + o].to_vec());
            pos += o;
        }
        assert_eq!(pos, flat.len());
        RefNet { w, b }
    }

    /// Logits with hidden activations `relu(z)·m`, `m` given per hidden layer.
    pub fn logits(&self, x: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.w.len() - 1;
        for l in 0..=last {
            let z: Vec<f64> = (0..self.w[l].len())
                .map(|k| self.b[l][k] + (0..a.len()).map(|j| self.w[l][k][j] * a[j]).sum::<f64>())
                .collect();
            a = if l == last {
                z
            } else {
                z.iter().zip(&m[l]).map(|(v, mk)| v.max(0.0) * mk).collect()
            };
        }
        a
    }

    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize], m: &[Vec<f64>]) -> f64 {
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let z = self.logits(x, m);
                let p: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                -(p[y] / p.iter().sum::<f64>()).ln()
            })
            .sum();
        total / xs.len() as f64
    }
}

/// Splits a flat per-neuron vector into per-hidden-layer slices.
pub fn split_hidden(widths: &[usize], flat: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut pos = 0;
    for &w in &widths[1..widths.len() - 1] {
        out.push(flat[pos..pos + w].to_vec());
        pos += w;
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// A random net of at most three layers and at most eight neurons per layer,
/// with nonzero biases.
pub struct TinyCase {
    pub widths: Vec<usize>,
    pub params: ParamVector,
    pub batch: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Per hidden neuron multipliers (0/1 or continuous).
    pub mult: Vec<f64>,
}

pub fn tiny_case(seed: u64, binary_mask: bool) -> TinyCase {
    let mut r = rng(seed);
    let layers = r.random_range(1..=3usize);
    let mut widths = vec![r.random_range(1..=8usize)];
    for _ in 0..layers - 1 {
        widths.push(r.random_range(1..=8usize));
    }
    widths.push(r.random_range(2..=8usize));
    let spec = Arc::new(ModelSpec::from_widths(&widths).unwrap());
    let mut values = nn::init_params(Arc::clone(&spec), seed).values().to_vec();
    for v in values.iter_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let params = ParamVector::from_values(spec.clone(), values).unwrap();
    let n = r.random_range(1..=6usize);
    let batch = (0..n)
        .map(|_| (0..widths[0]).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let classes = *widths.last().unwrap();
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    let mult = (0..spec.hidden_count())
        .map(|_| {
            if binary_mask {
                if r.random_bool(0.7) { 1.0 } else { 0.0 }
            } else {
                r.random_range(0.0..1.5)
            }
        })
        .collect();
    TinyCase {
        widths,
        params,
        batch,
        labels,
        mult,
    }
}

pub fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn library_loss(params: &ParamVector, mult: &[f64], batch: &Matrix, labels: &[usize]) -> f64 {
    let trace = nn::forward_relaxed(params, mult, batch).unwrap();
    nn::cross_entropy(trace.logits(), labels).unwrap()
}

/// Hidden pre-activation signs; a coordinate whose perturbation flips one is
/// at a ReLU kink and has no central-difference derivative.
fn relu_pattern(params: &ParamVector, mult: &[f64], batch: &Matrix) -> Vec<bool> {
    let trace = nn::forward_relaxed(params, mult, batch).unwrap();
    let pre = trace.pre_activations();
    pre[..pre.len() - 1]
        .iter()
        .flat_map(|m| m.as_slice().iter().map(|v| *v > 0.0))
        .collect()
}

pub struct FdReport {
    pub max_rel_params: f64,
    pub max_rel_mask: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central differences of the library loss against `backward_relaxed`.
pub fn finite_difference_check(case: &TinyCase, h: f64) -> FdReport {
    let batch = matrix(&case.batch);
    let trace = nn::forward_relaxed(&case.params, &case.mult, &batch).unwrap();
    let grads = nn::backward_relaxed(&case.params, &case.mult, &trace, &case.labels).unwrap();
    let base = relu_pattern(&case.params, &case.mult, &batch);
    let mut rep = FdReport {
        max_rel_params: 0.0,
        max_rel_mask: 0.0,
        checked: 0,
        skipped: 0,
    };
    let spec = case.params.spec().clone();
    for i in 0..case.params.len() {
        let mut plus = case.params.values().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let plus = ParamVector::from_values(spec.clone(), plus).unwrap();
        let minus = ParamVector::from_values(spec.clone(), minus).unwrap();
        if relu_pattern(&plus, &case.mult, &batch) != base || relu_pattern(&minus, &case.mult, &batch) != base {
            rep.skipped += 1;
            continue;
        }
        let fd = (library_loss(&plus, &case.mult, &batch, &case.labels)
            - library_loss(&minus, &case.mult, &batch, &case.labels))
            / (2.0 * h);
        rep.max_rel_params = rep.max_rel_params.max(rel_err(fd, grads.params[i]));
        rep.checked += 1;
    }
    for l in 0..case.mult.len() {
        let mut plus = case.mult.clone();
        let mut minus = case.mult.clone();
        plus[l] += h;
        minus[l] -= h;
        // the multiplier sits after the ReLU, so it never moves a kink
        let fd = (library_loss(&case.params, &plus, &batch, &case.labels)
            - library_loss(&case.params, &minus, &batch, &case.labels))
            / (2.0 * h);
        rep.max_rel_mask = rep.max_rel_mask.max(rel_err(fd, grads.mask[l]));
        rep.checked += 1;
    }
    rep
}

/// Brute-force parameter mask: walk the layers by hand and keep a weight
/// iff both endpoints are active.
pub fn brute_force_param_mask(widths: &[usize], neuron: &[bool]) -> Vec<bool> {
    let hidden = split_hidden(
        widths,
        &neuron.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
    );
    let layers = widths.len() - 1;
    let active = |layer_out: usize, k: usize| -> bool {
        // layer_out indexes the layer whose outputs we ask about
        if layer_out + 1 == layers {
            true
        } else {
            hidden[layer_out][k] == 1.0
        }
    };
    let mut out = Vec::new();
    for l in 0..layers {
        for k in 0..widths[l + 1] {
            for j in 0..widths[l] {
                let src = l == 0 || active(l - 1, j);
                out.push(src && active(l, k));
            }
        }
        for k in 0..widths[l + 1] {
            out.push(active(l, k));
        }
    }
    out
}

/// Quick experiment on a small net and small data.
pub fn small_config(algorithm: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        rounds: 12,
        local_steps: 3,
        batch_size: 8,
        lr_local: 0.05,
        data: DataSource::Synthetic { n_total: 320 },
        partition: Partition::EvenOdd,
        participants: 2,
        test_size: 160,
        widths: vec![5, 12, 10, 4],
        ..ExperimentConfig::default()
    }
}

pub fn small_data(cfg: &ExperimentConfig) -> (Dataset, Dataset) {
    fedpews::federation::prepare_data(cfg).unwrap()
}
