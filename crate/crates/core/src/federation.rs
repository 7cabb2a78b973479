//! Round-based federated training.
//!
//! Every round the server broadcasts the global model; each participating
//! client trains locally and uploads its parameters together with a
//! parameter mask; the server averages each coordinate over the clients
//! whose mask covers it and moves the global model towards that average by
//! the global learning rate.
//!
//! During the first `warmup_rounds` rounds the subnetwork variants train
//! only part of the network:
//!
//! * `fedpews` learns per-client neuron mask scores, alternating a score
//!   step (weights frozen) and a weight step (scores frozen) on the same
//!   mini-batch;
//! * `fedpews_fixed` uses server-assigned disjoint neuron partitions and
//!   only runs the weight step.
//!
//! After warmup every client trains the full model with the base optimizer.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{self, BatchStream, Dataset, Shard};
use crate::error::{Error, Result};
use crate::masking::{
    expand_to_param_mask, fixed_partition_masks, sample_neuron_mask, sigmoid_probs,
    ste_score_update, MaskProbabilities, MaskScores, NeuronMask, ParamMask,
};
use crate::metrics::{RoundRecord, RunLog};
use crate::nn::{self, backward, evaluate, forward, init_params, Evaluation, ModelSpec, ParamVector};
use crate::rng::{self, Purpose};

/// Probability clamp applied to the leave-one-out mask probability.
pub const EXCLUSION_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    FedAvg,
    FedProx,
    FedPews,
    FedPewsFixed,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedPews => "fedpews",
            Algorithm::FedPewsFixed => "fedpews_fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "fedavg" => Algorithm::FedAvg,
            "fedprox" => Algorithm::FedProx,
            "fedpews" => Algorithm::FedPews,
            "fedpews_fixed" | "fedpews-fixed" => Algorithm::FedPewsFixed,
            _ => return None,
        })
    }

    pub fn has_warmup(self) -> bool {
        matches!(self, Algorithm::FedPews | Algorithm::FedPewsFixed)
    }
}

/// Local optimizer used outside the warmup phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseOptimizer {
    FedAvg,
    FedProx,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { n_total: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Partition {
    /// Even classes to participant 0, odd classes to participant 1.
    EvenOdd,
    /// One class per participant.
    PerClass,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub base_optimizer: BaseOptimizer,
    /// `T`
    pub rounds: usize,
    /// `W`
    pub warmup_rounds: usize,
    /// `K`
    pub local_steps: usize,
    pub lr_local: f64,
    pub lr_global: f64,
    pub lr_mask: f64,
    /// Diversity weight `λ`.
    pub lambda: f64,
    /// Proximal coefficient `μ`.
    pub mu: f64,
    pub batch_size: usize,
    pub participants: usize,
    pub participation_rate: f64,
    /// Neuron share of each participant for `fedpews_fixed`; equal when `None`.
    pub fixed_fractions: Option<Vec<f64>>,
    pub seed: u64,
    /// `υ`, percent.
    pub target_accuracy: f64,
    pub data: DataSource,
    pub partition: Partition,
    pub data_seed: u64,
    pub cluster_std: f64,
    pub test_size: usize,
    pub eval_every: usize,
    /// Also evaluate the global model on every participant's shard.
    pub local_eval: bool,
    /// Train a round's clients on the rayon pool.
    pub parallel_clients: bool,
    pub widths: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedAvg,
            base_optimizer: BaseOptimizer::FedAvg,
            rounds: 200,
            warmup_rounds: 0,
            local_steps: 10,
            lr_local: 0.01,
            lr_global: 1.0,
            lr_mask: 0.1,
            lambda: 0.0,
            mu: 0.01,
            batch_size: 8,
            participants: 2,
            participation_rate: 1.0,
            fixed_fractions: None,
            seed: 1,
            target_accuracy: 99.0,
            data: DataSource::Synthetic { n_total: 3200 },
            partition: Partition::EvenOdd,
            data_seed: 1234,
            cluster_std: data::DEFAULT_CLUSTER_STD,
            test_size: 4000,
            eval_every: 1,
            local_eval: false,
            parallel_clients: false,
            widths: nn::SYNTHETIC_WIDTHS.to_vec(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be non-negative, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_rounds > self.rounds {
            return Err(Error::config(
                "warmup_rounds",
                format!("{} exceeds rounds {}", self.warmup_rounds, self.rounds),
            ));
        }
        if self.local_steps == 0 {
            return Err(Error::config("local_steps", "must be at least 1"));
        }
        positive("lr_local", self.lr_local)?;
        positive("lr_global", self.lr_global)?;
        positive("lr_mask", self.lr_mask)?;
        non_negative("lambda", self.lambda)?;
        non_negative("mu", self.mu)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.participants == 0 {
            return Err(Error::config("participants", "must be at least 1"));
        }
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            return Err(Error::config("participation_rate", "must lie in (0, 1]"));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 100.0) {
            return Err(Error::config("target_accuracy", "must lie in (0, 100]"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        positive("cluster_std", self.cluster_std)?;
        if self.test_size == 0 || self.test_size % 16 != 0 {
            return Err(Error::config("test_size", "must be a positive multiple of 16"));
        }
        if let DataSource::Synthetic { n_total } = self.data {
            if n_total == 0 || n_total % 16 != 0 {
                return Err(Error::config("dataset", "sample count must be a positive multiple of 16"));
            }
        }
        if let Partition::Dirichlet { alpha } = self.partition {
            positive("partition", alpha)?;
        }
        if let Some(f) = &self.fixed_fractions {
            if f.len() != self.participants {
                return Err(Error::config(
                    "fixed_fractions",
                    format!("expected {} fractions, got {}", self.participants, f.len()),
                ));
            }
        }
        let spec = ModelSpec::from_widths(&self.widths)
            .map_err(|e| Error::config("widths", e.to_string()))?;
        if self.algorithm == Algorithm::FedPewsFixed {
            fixed_partition_masks(&spec, &self.fractions())
                .map_err(|e| Error::config("fixed_fractions", e.to_string()))?;
        }
        Ok(())
    }

    /// `τ = W / T`.
    pub fn warmup_fraction(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.warmup_rounds as f64 / self.rounds as f64
        }
    }

    pub fn is_warmup(&self, round: usize) -> bool {
        self.algorithm.has_warmup() && round <= self.warmup_rounds
    }

    /// Proximal coefficient for standard (non-warmup) local training.
    pub fn standard_mu(&self) -> f64 {
        match (self.algorithm, self.base_optimizer) {
            (Algorithm::FedAvg, _) => 0.0,
            (Algorithm::FedProx, _) => self.mu,
            (_, BaseOptimizer::FedProx) => self.mu,
            (_, BaseOptimizer::FedAvg) => 0.0,
        }
    }

    fn fractions(&self) -> Vec<f64> {
        self.fixed_fractions
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.participants as f64; self.participants])
    }

    pub fn model_spec(&self) -> Result<Arc<ModelSpec>> {
        ModelSpec::from_widths(&self.widths).map(Arc::new)
    }
}

/// Training and test sets for an experiment.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let train = match &config.data {
        DataSource::Synthetic { n_total } => data::gen_synthetic(*n_total, config.data_seed, config.cluster_std)?,
        DataSource::File(path) => data::read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))?,
    };
    let test_seed: u64 = rng::stream(config.data_seed, Purpose::TestData, &[]).random();
    let test = data::gen_synthetic(config.test_size, test_seed, config.cluster_std)?;
    Ok((train, test))
}

pub fn build_shards(config: &ExperimentConfig, train: &Dataset) -> Result<Vec<Shard>> {
    let shards = match config.partition {
        Partition::EvenOdd => data::split_by_class(train, &data::even_odd_assignment(train.class_count()))?,
        Partition::PerClass => data::split_by_class(train, &data::per_class_assignment(train.class_count()))?,
        Partition::Dirichlet { alpha } => data::dirichlet_partition(train, config.participants, alpha, config.seed)?,
    };
    if shards.len() != config.participants {
        return Err(Error::config(
            "participants",
            format!("partition produces {} shards but participants = {}", shards.len(), config.participants),
        ));
    }
    Ok(shards)
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ParamVector,
    /// `θ_g`; present only for `fedpews`.
    pub theta_global: Option<MaskProbabilities>,
    /// Last probabilities uploaded by each client.
    pub client_theta: Vec<MaskProbabilities>,
    /// Which clients contributed to the current `θ_g`.
    pub theta_contributors: Vec<bool>,
    /// Server-assigned neuron masks; present only for `fedpews_fixed`.
    pub fixed_masks: Option<Vec<NeuronMask>>,
    pub round: usize,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Local model after the client's last round.
    pub local: ParamVector,
    /// Mask scores carried across rounds; present only for `fedpews`.
    pub scores: Option<MaskScores>,
    pub batches: BatchStream,
}

impl ClientState {
    pub fn shard(&self) -> &Shard {
        self.batches.shard()
    }
}

pub fn init_experiment(config: &ExperimentConfig, train: &Dataset) -> Result<(ServerState, Vec<ClientState>)> {
    config.validate()?;
    let spec = config.model_spec()?;
    if train.feature_dim() != spec.input_dim() || train.class_count() != spec.class_count() {
        return Err(Error::config(
            "widths",
            format!(
                "model expects {} features and {} classes, dataset has {} and {}",
                spec.input_dim(),
                spec.class_count(),
                train.feature_dim(),
                train.class_count()
            ),
        ));
    }
    let global = init_params(Arc::clone(&spec), config.seed);
    let shards = build_shards(config, train)?;
    let h = spec.hidden_count();
    let n = config.participants;
    let pews = config.algorithm == Algorithm::FedPews;
    let initial_scores = MaskScores::zeros(h);
    let theta0 = sigmoid_probs(&initial_scores);

    let clients = shards
        .into_iter()
        .map(|shard| {
            Ok(ClientState {
                id: shard.owner,
                local: global.clone(),
                scores: pews.then(|| initial_scores.clone()),
                batches: BatchStream::new(shard, config.batch_size, config.seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let fixed_masks = if config.algorithm == Algorithm::FedPewsFixed {
        Some(fixed_partition_masks(&spec, &config.fractions())?)
    } else {
        None
    };

    let server = ServerState {
        global,
        theta_global: pews.then(|| theta0.clone()),
        client_theta: if pews { vec![theta0; n] } else { Vec::new() },
        theta_contributors: vec![pews; n],
        fixed_masks,
        round: 0,
    };
    Ok((server, clients))
}

/// Mean mask probability of the other clients, recovered from the global
/// mean: `(n·θ_g − θ_i)/(n − 1)`, clamped into the open unit interval.
pub fn exclusion_prob(theta_global: &MaskProbabilities, theta_client: &MaskProbabilities, n: usize) -> MaskProbabilities {
    assert!(n >= 2, "exclusion needs at least two contributors");
    let nf = n as f64;
    MaskProbabilities::new(
        theta_global
            .values()
            .iter()
            .zip(theta_client.values())
            .map(|(g, c)| ((nf * g - c) / (nf - 1.0)).clamp(EXCLUSION_CLAMP, 1.0 - EXCLUSION_CLAMP))
            .collect(),
    )
}

/// Elementwise mean of the uploaded probabilities; `None` for no uploads.
pub fn update_global_theta(uploads: &[&MaskProbabilities]) -> Option<MaskProbabilities> {
    let first = uploads.first()?;
    let n = uploads.len() as f64;
    let mut sum = vec![0.0; first.len()];
    for u in uploads {
        for (s, v) in sum.iter_mut().zip(u.values()) {
            *s += v;
        }
    }
    Some(MaskProbabilities::new(sum.into_iter().map(|s| s / n).collect()))
}

/// Result of one warmup round on a `fedpews` client.
#[derive(Debug, Clone)]
pub struct PewsUpload {
    pub params: ParamVector,
    pub mask: ParamMask,
    pub theta: MaskProbabilities,
}

fn key(client: &ClientState, round: usize, step: usize) -> [u64; 3] {
    [client.id as u64, round as u64, step as u64]
}

/// One warmup round of mask-score and weight training.
///
/// `theta_excl` is the other clients' mean mask probability; `None` turns
/// the diversity term off.
pub fn local_round_pews(
    client: &mut ClientState,
    global: &ParamVector,
    theta_excl: Option<&MaskProbabilities>,
    config: &ExperimentConfig,
    round: usize,
    train: &Dataset,
) -> Result<PewsUpload> {
    let spec = Arc::clone(global.spec());
    let mut x = global.clone();
    let mut s = client
        .scores
        .clone()
        .unwrap_or_else(|| MaskScores::zeros(spec.hidden_count()));
    for k in 1..=config.local_steps {
        let (batch, labels) = client.batches.next_batch(train);

        // Score step with the weights frozen.
        let theta = sigmoid_probs(&s);
        let mut rng = rng::stream(config.seed, Purpose::MaskScoreStep, &key(client, round, k));
        let m = sample_neuron_mask(&theta, &mut rng);
        let trace = forward(&x, &m, &batch)?;
        let grads = backward(&x, &m, &trace, &labels)?;
        s = match theta_excl {
            Some(excl) => ste_score_update(&s, &grads.mask, &theta, excl, config.lambda, config.lr_mask)?,
            None => ste_score_update(&s, &grads.mask, &theta, &theta, 0.0, config.lr_mask)?,
        };

        // Weight step with the scores frozen, same batch.
        let theta = sigmoid_probs(&s);
        let mut rng = rng::stream(config.seed, Purpose::MaskWeightStep, &key(client, round, k));
        let m = sample_neuron_mask(&theta, &mut rng);
        let trace = forward(&x, &m, &batch)?;
        let grads = backward(&x, &m, &trace, &labels)?;
        x = nn::sgd_step(&x, &grads.params, config.lr_local)?;
    }
    let theta = sigmoid_probs(&s);
    let mut rng = rng::stream(
        config.seed,
        Purpose::MaskUpload,
        &key(client, round, config.local_steps),
    );
    let upload_mask = sample_neuron_mask(&theta, &mut rng);
    let mask = expand_to_param_mask(&upload_mask, &spec)?;
    client.scores = Some(s);
    client.local = x.clone();
    Ok(PewsUpload { params: x, mask, theta })
}

/// Warmup round for `fedpews_fixed`: weight steps under a constant neuron mask.
pub fn local_round_fixed(
    client: &mut ClientState,
    global: &ParamVector,
    neuron_mask: &NeuronMask,
    config: &ExperimentConfig,
    train: &Dataset,
) -> Result<(ParamVector, ParamMask)> {
    let mut x = global.clone();
    for _ in 0..config.local_steps {
        let (batch, labels) = client.batches.next_batch(train);
        let trace = forward(&x, neuron_mask, &batch)?;
        let grads = backward(&x, neuron_mask, &trace, &labels)?;
        x = nn::sgd_step(&x, &grads.params, config.lr_local)?;
    }
    client.local = x.clone();
    let mask = expand_to_param_mask(neuron_mask, x.spec())?;
    Ok((x, mask))
}

/// `K` full-model SGD steps on `f_i(x) + (μ/2)‖x − x_g‖²`.
pub fn local_round_standard(
    client: &mut ClientState,
    global: &ParamVector,
    mu: f64,
    config: &ExperimentConfig,
    train: &Dataset,
) -> Result<ParamVector> {
    let ones = NeuronMask::ones(global.spec().hidden_count());
    let mut x = global.clone();
    for _ in 0..config.local_steps {
        let (batch, labels) = client.batches.next_batch(train);
        let trace = forward(&x, &ones, &batch)?;
        let mut grad = backward(&x, &ones, &trace, &labels)?.params;
        if mu != 0.0 {
            for ((g, xi), xg) in grad.iter_mut().zip(x.values()).zip(global.values()) {
                *g += mu * (xi - xg);
            }
        }
        x = nn::sgd_step(&x, &grad, config.lr_local)?;
    }
    client.local = x.clone();
    Ok(x)
}

/// Masked aggregation.
///
/// Each coordinate covered by at least one mask moves from its previous
/// global value towards the mean of the covering clients' values:
/// `x_g ← x_g − η_g (x_g − Σ x_i m_i / Σ m_i)`. Uncovered coordinates keep
/// their previous value.
pub fn aggregate_masked(
    previous: &ParamVector,
    updates: &[(&ParamVector, &ParamMask)],
    lr_global: f64,
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates);
    }
    let d = previous.len();
    for (x, m) in updates {
        if x.len() != d || m.len() != d {
            return Err(Error::ShapeMismatch {
                what: "aggregated update",
                expected: d,
                got: if x.len() != d { x.len() } else { m.len() },
            });
        }
    }
    let values = (0..d)
        .map(|l| {
            let prev = previous.values()[l];
            let mut covering = updates.iter().filter(|(_, m)| m.bits()[l]).map(|(x, _)| x.values()[l]);
            let Some(first) = covering.next() else {
                return prev;
            };
            // Shifted mean: exact when all contributions agree.
            let mut count = 1usize;
            let mut shift = 0.0;
            for v in covering {
                shift += v - first;
                count += 1;
            }
            let mean = first + shift / count as f64;
            if lr_global == 1.0 {
                mean
            } else {
                prev - lr_global * (prev - mean)
            }
        })
        .collect();
    ParamVector::from_values(Arc::clone(previous.spec()), values)
}

/// `max(1, ⌈rate·n⌉)` distinct clients, sorted, drawn per round.
pub fn sample_participants(n: usize, rate: f64, seed: u64, round: usize) -> Vec<usize> {
    let count = ((rate * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    if count >= n {
        return (0..n).collect();
    }
    let mut rng = rng::stream(seed, Purpose::Participation, &[round as u64]);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    picked
}

enum Upload {
    Pews(PewsUpload),
    Masked(ParamVector, ParamMask),
    Full(ParamVector),
}

fn train_clients<F>(clients: &mut [ClientState], selected: &[bool], parallel: bool, f: F) -> Result<Vec<(usize, Upload)>>
where
    F: Fn(&mut ClientState) -> Result<Upload> + Sync + Send,
{
    if parallel {
        clients
            .par_iter_mut()
            .filter(|c| selected[c.id])
            .map(|c| f(c).map(|u| (c.id, u)))
            .collect()
    } else {
        clients
            .iter_mut()
            .filter(|c| selected[c.id])
            .map(|c| f(c).map(|u| (c.id, u)))
            .collect()
    }
}

fn theta_exclusion(server: &ServerState, client: usize) -> Option<MaskProbabilities> {
    let theta_g = server.theta_global.as_ref()?;
    let contributors = server.theta_contributors.iter().filter(|&&c| c).count();
    if server.client_theta.len() < 2 {
        return None;
    }
    if !server.theta_contributors[client] {
        return Some(theta_g.clone());
    }
    if contributors < 2 {
        return None;
    }
    Some(exclusion_prob(theta_g, &server.client_theta[client], contributors))
}

/// Runs round `t` (1-based) and returns its record.
pub fn run_round(
    round: usize,
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<RoundRecord> {
    let start = Instant::now();
    let n = clients.len();
    let mut selected = vec![false; n];
    for i in sample_participants(n, config.participation_rate, config.seed, round) {
        selected[i] = true;
    }
    let warmup = config.is_warmup(round);
    let global = server.global.clone();

    let uploads = match (warmup, config.algorithm) {
        (true, Algorithm::FedPews) => {
            let exclusions: Vec<Option<MaskProbabilities>> = (0..n).map(|i| theta_exclusion(server, i)).collect();
            train_clients(clients, &selected, config.parallel_clients, |c| {
                local_round_pews(c, &global, exclusions[c.id].as_ref(), config, round, train).map(Upload::Pews)
            })?
        }
        (true, Algorithm::FedPewsFixed) => {
            let masks = server.fixed_masks.as_ref().expect("fixed masks are set up at init");
            train_clients(clients, &selected, config.parallel_clients, |c| {
                local_round_fixed(c, &global, &masks[c.id], config, train).map(|(x, m)| Upload::Masked(x, m))
            })?
        }
        _ => {
            let mu = config.standard_mu();
            train_clients(clients, &selected, config.parallel_clients, |c| {
                local_round_standard(c, &global, mu, config, train).map(Upload::Full)
            })?
        }
    };

    let full = ParamMask::ones(global.len());
    let pairs: Vec<(&ParamVector, &ParamMask)> = uploads
        .iter()
        .map(|(_, u)| match u {
            Upload::Pews(p) => (&p.params, &p.mask),
            Upload::Masked(x, m) => (x, m),
            Upload::Full(x) => (x, &full),
        })
        .collect();
    server.global = aggregate_masked(&global, &pairs, config.lr_global)?;

    let thetas: Vec<(usize, &MaskProbabilities)> = uploads
        .iter()
        .filter_map(|(id, u)| match u {
            Upload::Pews(p) => Some((*id, &p.theta)),
            _ => None,
        })
        .collect();
    if !thetas.is_empty() {
        let list: Vec<&MaskProbabilities> = thetas.iter().map(|(_, t)| *t).collect();
        server.theta_global = update_global_theta(&list);
        server.theta_contributors = vec![false; n];
        for (id, theta) in thetas {
            server.client_theta[id] = theta.clone();
            server.theta_contributors[id] = true;
        }
    }
    server.round = round;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    let evaluate_now = round % config.eval_every == 0 || round == config.rounds;
    let (accuracy, loss, local_accuracy) = if evaluate_now {
        let ones = NeuronMask::ones(server.global.spec().hidden_count());
        let ev = evaluate(&server.global, &ones, test)?;
        let local = if config.local_eval {
            Some(
                clients
                    .iter()
                    .map(|c| {
                        let (xs, ys) = train.gather(&c.shard().indices);
                        let shard = shard_dataset(&xs, &ys, train.class_count())?;
                        Ok(evaluate(&server.global, &ones, &shard)?.accuracy * 100.0)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        (Some(ev.accuracy * 100.0), Some(ev.mean_loss), local)
    } else {
        (None, None, None)
    };

    Ok(RoundRecord {
        round,
        accuracy,
        loss,
        local_accuracy,
        elapsed_ms,
        warmup,
    })
}

fn shard_dataset(xs: &nn::Matrix, ys: &[usize], classes: usize) -> Result<Dataset> {
    Dataset::new(
        ys.iter()
            .enumerate()
            .map(|(i, &label)| data::Sample {
                features: xs.row(i).to_vec(),
                label,
            })
            .collect(),
        classes,
    )
}

pub fn param_digest(params: &ParamVector) -> String {
    hex::encode(Sha256::digest(params.to_le_bytes()))
}

/// Runs all `T` rounds on the given data.
pub fn run_experiment_on(config: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunLog> {
    let (mut server, mut clients) = init_experiment(config, train)?;
    let mut records = Vec::with_capacity(config.rounds);
    for t in 1..=config.rounds {
        records.push(run_round(t, &mut server, &mut clients, config, train, test)?);
    }
    Ok(RunLog {
        config: config.clone(),
        records,
        digest: param_digest(&server.global),
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunLog> {
    config.validate()?;
    let (train, test) = prepare_data(config)?;
    run_experiment_on(config, &train, &test)
}

/// Plain mini-batch SGD on the pooled training set; one evaluation per epoch.
pub fn train_centralized(
    spec: Arc<ModelSpec>,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<Evaluation>> {
    let shard = Shard {
        owner: 0,
        indices: (0..train.len()).collect(),
    };
    let mut batches = BatchStream::new(shard, batch_size, seed)?;
    let steps_per_epoch = train.len().div_ceil(batch_size);
    let ones = NeuronMask::ones(spec.hidden_count());
    let mut x = init_params(spec, seed);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for _ in 0..steps_per_epoch {
            let (batch, labels) = batches.next_batch(train);
            let trace = forward(&x, &ones, &batch)?;
            let grads = backward(&x, &ones, &trace, &labels)?;
            x = nn::sgd_step(&x, &grads.params, lr)?;
        }
        history.push(evaluate(&x, &ones, test)?);
    }
    Ok(history)
}
