//! Synthetic data, participant partitioning and mini-batch streams.

mod format;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, Purpose};

pub use format::{read_dataset, write_dataset, MAGIC, VERSION};

pub const SYNTHETIC_CLASSES: usize = 4;
pub const SYNTHETIC_FEATURES: usize = 5;
pub const DEFAULT_CLUSTER_STD: f64 = 0.35;
/// Cluster-center coordinates along each axis of the 4×4 grid.
pub const GRID: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];

/// The concentration values swept for Dirichlet partitions.
pub const DIRICHLET_SWEEP: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labeled samples stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    class_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        let feature_dim = samples.first().map_or(0, |s| s.features.len());
        let mut features = Vec::with_capacity(samples.len() * feature_dim);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if s.features.len() != feature_dim {
                return Err(Error::ShapeMismatch {
                    what: "sample features",
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            if s.label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: class_count,
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("non-finite feature".into()));
            }
            features.extend_from_slice(&s.features);
            labels.push(s.label);
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            features: self.features(i).to_vec(),
            label: self.labels[i],
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Feature matrix and labels for the given sample indices, in order.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        let m = Matrix::new(indices.len(), self.feature_dim, data).expect("consistent dims");
        (m, labels)
    }
}

/// A participant's share of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub owner: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `[x, y, x², y², xy]`
pub fn feature_lift(x: f64, y: f64) -> [f64; 5] {
    [x, y, x * x, y * y, x * y]
}

/// Class of the grid cell at `(row, col)`. Diagonal stripes, so no two
/// 4-neighbouring clusters share a class.
pub fn cluster_class(row: usize, col: usize) -> usize {
    (row + col) % SYNTHETIC_CLASSES
}

/// Four classes, each made of four isotropic Gaussian clusters on the grid
/// `GRID × GRID`, lifted to five features and shuffled.
pub fn gen_synthetic(n_total: usize, seed: u64, cluster_std: f64) -> Result<Dataset> {
    let clusters = GRID.len() * GRID.len();
    if n_total == 0 || n_total % clusters != 0 {
        return Err(Error::IndivisibleSampleCount {
            n: n_total,
            divisor: clusters,
        });
    }
    if !(cluster_std.is_finite() && cluster_std > 0.0) {
        return Err(Error::config("cluster_std", "must be positive"));
    }
    let per_cluster = n_total / clusters;
    let noise = Normal::new(0.0, cluster_std).expect("positive std");
    let mut rng = rng::stream(seed, Purpose::TrainData, &[]);
    let mut samples = Vec::with_capacity(n_total);
    for (r, &cy) in GRID.iter().enumerate() {
        for (c, &cx) in GRID.iter().enumerate() {
            let label = cluster_class(r, c);
            for _ in 0..per_cluster {
                let x = cx + noise.sample(&mut rng);
                let y = cy + noise.sample(&mut rng);
                samples.push(Sample {
                    features: feature_lift(x, y).to_vec(),
                    label,
                });
            }
        }
    }
    let mut shuffle = rng::stream(seed, Purpose::Shuffle, &[]);
    samples.shuffle(&mut shuffle);
    Dataset::new(samples, SYNTHETIC_CLASSES)
}

/// Even classes to participant 0, odd classes to participant 1.
pub fn even_odd_assignment(class_count: usize) -> Vec<usize> {
    (0..class_count).map(|c| c % 2).collect()
}

/// Each class to its own participant.
pub fn per_class_assignment(class_count: usize) -> Vec<usize> {
    (0..class_count).collect()
}

/// Splits by class; `assignment[c]` is the participant owning class `c`.
/// Returns one shard per participant `0..=max(assignment)`.
pub fn split_by_class(dataset: &Dataset, assignment: &[usize]) -> Result<Vec<Shard>> {
    if assignment.len() < dataset.class_count() {
        return Err(Error::UncoveredClass(assignment.len()));
    }
    let n = assignment[..dataset.class_count()]
        .iter()
        .max()
        .map_or(0, |m| m + 1);
    let mut shards: Vec<Shard> = (0..n)
        .map(|owner| Shard {
            owner,
            indices: Vec::new(),
        })
        .collect();
    for (i, &y) in dataset.labels().iter().enumerate() {
        shards[assignment[y]].indices.push(i);
    }
    Ok(shards)
}

/// Splits `total` into integer parts by largest remainder. Ties in the
/// fractional part go to the lower index.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_sample(n: usize, alpha: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|g| g / sum).collect()
    } else {
        // Every gamma draw underflowed (tiny alpha): put all mass on one participant.
        let winner = rng.random_range(0..n);
        (0..n).map(|i| if i == winner { 1.0 } else { 0.0 }).collect()
    }
}

/// Per class, draws participant proportions from `Dirichlet(alpha·1)` and
/// hands out that class's samples by largest-remainder quotas.
pub fn dirichlet_partition(dataset: &Dataset, n: usize, alpha: f64, seed: u64) -> Result<Vec<Shard>> {
    if n == 0 {
        return Err(Error::InfeasiblePartition("need at least one participant".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InfeasiblePartition(format!("alpha must be positive, got {alpha}")));
    }
    let mut shards: Vec<Shard> = (0..n)
        .map(|owner| Shard {
            owner,
            indices: Vec::new(),
        })
        .collect();
    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        let mut rng = rng::stream(seed, Purpose::Dirichlet, &[class as u64]);
        members.shuffle(&mut rng);
        let p = dirichlet_sample(n, alpha, &mut rng);
        let counts = largest_remainder(&p, members.len());
        let mut start = 0;
        for (shard, count) in shards.iter_mut().zip(counts) {
            shard.indices.extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    for s in &mut shards {
        s.indices.sort_unstable();
    }
    Ok(shards)
}

/// Endless epoch-shuffled mini-batches over one shard.
///
/// Each epoch's order comes from the stream keyed by `(seed, owner, epoch)`,
/// so the sequence depends only on the seed and how many batches were drawn.
#[derive(Debug, Clone)]
pub struct BatchStream {
    shard: Shard,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(shard: Shard, batch_size: usize, seed: u64) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::EmptyShard(shard.owner));
        }
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        let mut s = Self {
            shard,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = self.shard.indices.clone();
        let mut rng = rng::stream(
            self.seed,
            Purpose::Batches,
            &[self.shard.owner as u64, self.epoch],
        );
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    /// Sample indices of the next batch. The last batch of an epoch may be short.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn next_batch(&mut self, dataset: &Dataset) -> (Matrix, Vec<usize>) {
        let idx = self.next_indices();
        dataset.gather(&idx)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }
}
