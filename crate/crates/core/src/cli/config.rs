//! `key = value` experiment files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown and repeated keys are errors. Learning rate and batch size
//! default by dataset: `synthetic-32k` uses `lr_local = 0.001`,
//! `batch_size = 32`; everything else `lr_local = 0.01`, `batch_size = 8`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::federation::{Algorithm, BaseOptimizer, DataSource, ExperimentConfig, Partition};

pub const KEYS: &[&str] = &[
    "algorithm",
    "base_optimizer",
    "rounds",
    "warmup_rounds",
    "tau",
    "local_steps",
    "lr_local",
    "lr_global",
    "lr_mask",
    "lambda",
    "mu",
    "batch_size",
    "participants",
    "participation_rate",
    "fixed_fractions",
    "seeds",
    "target_accuracy",
    "dataset",
    "partition",
    "output_dir",
    "eval_every",
    "data_seed",
    "cluster_std",
    "test_size",
    "local_eval",
    "widths",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    /// Everything but the seed, which comes from `seeds`.
    pub experiment: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ConfigFile {
    /// The experiment for one seed.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            ..self.experiment.clone()
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{raw}`"))),
    }
}

fn parse_dataset(raw: &str) -> DataSource {
    match raw {
        "synthetic-32k" => DataSource::Synthetic { n_total: 32_000 },
        "synthetic-3.2k" => DataSource::Synthetic { n_total: 3_200 },
        path => DataSource::File(PathBuf::from(path)),
    }
}

fn parse_partition(raw: &str) -> Result<Partition> {
    match raw {
        "even-odd" => Ok(Partition::EvenOdd),
        "per-class" => Ok(Partition::PerClass),
        _ => match raw.strip_prefix("dirichlet:") {
            Some(a) => Ok(Partition::Dirichlet {
                alpha: parse_value("partition", a)?,
            }),
            None => Err(Error::config(
                "partition",
                format!("expected even-odd, per-class or dirichlet:<alpha>, got `{raw}`"),
            )),
        },
    }
}

fn tokenize(text: &str) -> Result<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(
                format!("line {}", lineno + 1),
                "expected `key = value`",
            ));
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::config(key, "given more than once"));
        }
    }
    Ok(entries)
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let entries = tokenize(text)?;
    let get = |k: &str| entries.get(k).map(String::as_str);
    let mut cfg = ExperimentConfig::default();

    if let Some(v) = get("algorithm") {
        cfg.algorithm = Algorithm::parse(v).ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{v}`")))?;
    }
    if let Some(v) = get("base_optimizer") {
        cfg.base_optimizer = match v {
            "fedavg" => BaseOptimizer::FedAvg,
            "fedprox" => BaseOptimizer::FedProx,
            _ => return Err(Error::config("base_optimizer", format!("expected fedavg or fedprox, got `{v}`"))),
        };
    }
    if let Some(v) = get("dataset") {
        cfg.data = parse_dataset(v);
    }
    let big = cfg.data == DataSource::Synthetic { n_total: 32_000 };
    cfg.lr_local = if big { 0.001 } else { 0.01 };
    cfg.batch_size = if big { 32 } else { 8 };

    if let Some(v) = get("partition") {
        cfg.partition = parse_partition(v)?;
    }
    if cfg.partition == Partition::PerClass {
        cfg.participants = crate::data::SYNTHETIC_CLASSES;
    }

    macro_rules! scalar {
        ($key:literal, $field:ident) => {
            if let Some(v) = get($key) {
                cfg.$field = parse_value($key, v)?;
            }
        };
    }
    scalar!("rounds", rounds);
    scalar!("local_steps", local_steps);
    scalar!("lr_local", lr_local);
    scalar!("lr_global", lr_global);
    scalar!("lr_mask", lr_mask);
    scalar!("lambda", lambda);
    scalar!("mu", mu);
    scalar!("batch_size", batch_size);
    scalar!("participants", participants);
    scalar!("participation_rate", participation_rate);
    scalar!("target_accuracy", target_accuracy);
    scalar!("eval_every", eval_every);
    scalar!("data_seed", data_seed);
    scalar!("cluster_std", cluster_std);
    scalar!("test_size", test_size);

    match (get("warmup_rounds"), get("tau")) {
        (Some(_), Some(_)) => return Err(Error::config("tau", "give either tau or warmup_rounds, not both")),
        (Some(w), None) => cfg.warmup_rounds = parse_value("warmup_rounds", w)?,
        (None, Some(t)) => {
            let tau: f64 = parse_value("tau", t)?;
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::config("tau", "must lie in [0, 1]"));
            }
            cfg.warmup_rounds = (tau * cfg.rounds as f64).round() as usize;
        }
        (None, None) => {}
    }
    if let Some(v) = get("fixed_fractions") {
        cfg.fixed_fractions = Some(parse_list("fixed_fractions", v)?);
    }
    if let Some(v) = get("local_eval") {
        cfg.local_eval = parse_bool("local_eval", v)?;
    }
    if let Some(v) = get("widths") {
        cfg.widths = parse_list("widths", v)?;
    }
    let seeds = match get("seeds") {
        Some(v) => parse_list("seeds", v)?,
        None => vec![1, 2, 3],
    };
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let output_dir = PathBuf::from(get("output_dir").unwrap_or("runs/out"));
    cfg.seed = seeds[0];
    cfg.validate()?;
    Ok(ConfigFile {
        experiment: cfg,
        seeds,
        output_dir,
    })
}
