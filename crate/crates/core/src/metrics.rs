//! Per-round records, rounds-to-target and multi-seed summaries.

use crate::error::{Error, Result};
use crate::federation::ExperimentConfig;
use crate::masking::NeuronMask;
use crate::nn::{forward, Matrix, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Global test accuracy in percent; `None` on rounds that were not evaluated.
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    /// Accuracy of the global model on each participant's own shard, when requested.
    pub local_accuracy: Option<Vec<f64>>,
    pub elapsed_ms: f64,
    pub warmup: bool,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    /// Hex SHA-256 of the final global parameters' little-endian bytes.
    pub digest: String,
}

impl AsRef<[RoundRecord]> for RunLog {
    fn as_ref(&self) -> &[RoundRecord] {
        &self.records
    }
}

/// First round whose global accuracy reaches `target` percent.
pub fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.accuracy.is_some_and(|a| a >= target))
        .map(|r| r.round)
}

/// Accuracy of the last evaluated round.
pub fn final_accuracy(records: &[RoundRecord]) -> Option<f64> {
    records.iter().rev().find_map(|r| r.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seeds: usize,
    pub reached: usize,
    /// Over the seeds that reached the target.
    pub rounds: Option<MeanStd>,
    /// Over all seeds.
    pub final_accuracy: Option<MeanStd>,
}

pub fn summarize_seeds<L: AsRef<[RoundRecord]>>(logs: &[L], target: f64) -> Result<SeedSummary> {
    if logs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rounds: Vec<f64> = logs
        .iter()
        .filter_map(|l| rounds_to_target(l.as_ref(), target))
        .map(|r| r as f64)
        .collect();
    let mut finals: Vec<f64> = logs.iter().filter_map(|l| final_accuracy(l.as_ref())).collect();
    // Order-independent sums.
    rounds.sort_by(f64::total_cmp);
    finals.sort_by(f64::total_cmp);
    Ok(SeedSummary {
        seeds: logs.len(),
        reached: rounds.len(),
        rounds: MeanStd::of(&rounds),
        final_accuracy: MeanStd::of(&finals),
    })
}

/// Sum over the batch of each hidden neuron's masked ReLU output.
pub fn activation_profile(params: &ParamVector, mask: &NeuronMask, batch: &Matrix) -> Result<Vec<f64>> {
    let trace = forward(params, mask, batch)?;
    let mut profile = Vec::with_capacity(params.spec().hidden_count());
    for layer in trace.hidden_activations() {
        for k in 0..layer.cols() {
            profile.push((0..layer.rows()).map(|b| layer.row(b)[k]).sum());
        }
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use std::sync::Arc;

    fn records(acc: &[f64]) -> Vec<RoundRecord> {
        acc.iter()
            .enumerate()
            .map(|(i, &a)| RoundRecord {
                round: i + 1,
                accuracy: Some(a),
                loss: Some(0.0),
                local_accuracy: None,
                elapsed_ms: 0.0,
                warmup: false,
            })
            .collect()
    }

    #[test]
    fn first_crossing() {
        let r = records(&[50.0, 98.0, 99.2, 99.5]);
        assert_eq!(rounds_to_target(&r, 99.0), Some(3));
        assert_eq!(rounds_to_target(&r, 99.9), None);
        assert_eq!(rounds_to_target(&r, 0.0001), Some(1));
    }

    #[test]
    fn unevaluated_rounds_are_skipped() {
        let mut r = records(&[10.0, 99.5, 99.6]);
        r[1].accuracy = None;
        assert_eq!(rounds_to_target(&r, 99.0), Some(3));
        r[2].accuracy = None;
        assert_eq!(final_accuracy(&r), Some(10.0));
    }

    fn reaching_at(round: usize, t: usize) -> Vec<RoundRecord> {
        let acc: Vec<f64> = (1..=t).map(|i| if i >= round { 99.5 } else { 50.0 }).collect();
        records(&acc)
    }

    #[test]
    fn summary_of_three_seeds() {
        let logs = vec![reaching_at(148, 200), reaching_at(145, 200), reaching_at(151, 200)];
        let s = summarize_seeds(&logs, 99.0).unwrap();
        let r = s.rounds.unwrap();
        assert_eq!(r.mean, 148.0);
        assert!((r.std.unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(s.reached, 3);
    }

    #[test]
    fn summary_single_reacher_has_no_std() {
        let logs = vec![reaching_at(120, 200), records(&[50.0; 200]), records(&[60.0; 200])];
        let s = summarize_seeds(&logs, 99.0).unwrap();
        assert_eq!(s.reached, 1);
        assert_eq!(s.rounds.unwrap().mean, 120.0);
        assert_eq!(s.rounds.unwrap().std, None);
        let f = s.final_accuracy.unwrap();
        assert!((f.mean - (99.5 + 50.0 + 60.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn summary_identical_logs_zero_std() {
        let logs = vec![reaching_at(10, 20); 3];
        let s = summarize_seeds(&logs, 99.0).unwrap();
        assert_eq!(s.rounds.unwrap().std, Some(0.0));
        assert!(summarize_seeds::<Vec<RoundRecord>>(&[], 99.0).is_err());
    }

    #[test]
    fn profile_hand_computed() {
        // W1 = [[1, 2], [-1, 1]], b1 = [0.5, 0]
        let spec = Arc::new(ModelSpec::from_widths(&[2, 2, 2]).unwrap());
        let p = ParamVector::from_values(
            spec,
            vec![1.0, 2.0, -1.0, 1.0, 0.5, 0.0, 1.0, -1.0, 2.0, 0.5, 0.1, -0.2],
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, -1.0]]).unwrap();
        // sample 1: z = [3.5, 0], sample 2: z = [0.5, -3] -> relu [0.5, 0]
        let prof = activation_profile(&p, &NeuronMask::ones(2), &x).unwrap();
        assert_eq!(prof, vec![4.0, 0.0]);
        let prof = activation_profile(&p, &NeuronMask::from_bits(vec![false, true]), &x).unwrap();
        assert_eq!(prof, vec![0.0, 0.0]);
    }

    #[test]
    fn profile_zero_input_zero_bias() {
        let spec = Arc::new(ModelSpec::from_widths(&[3, 4, 2]).unwrap());
        let p = crate::nn::init_params(spec, 1);
        let x = Matrix::zeros(5, 3);
        let prof = activation_profile(&p, &NeuronMask::ones(4), &x).unwrap();
        assert_eq!(prof, vec![0.0; 4]);
    }
}
