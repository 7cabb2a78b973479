mod common;

use std::sync::Arc;

use common::*;
use fedpews::data::{BatchStream, Dataset, Sample, Shard};
use fedpews::federation::*;
use fedpews::masking::{expand_to_param_mask, sigmoid, MaskProbabilities, MaskScores, NeuronMask, ParamMask};
use fedpews::nn::{self, ModelSpec, ParamVector};
use fedpews::rng::{stream, Purpose};
use rand::Rng;

fn run_all(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> (Vec<Option<f64>>, String) {
    let log = run_experiment_on(cfg, train, test).unwrap();
    (log.records.iter().map(|r| r.accuracy).collect(), log.digest)
}

#[test]
fn fedpews_without_warmup_is_fedavg() {
    let avg = ExperimentConfig {
        rounds: 20,
        ..small_config(Algorithm::FedAvg)
    };
    let (train, test) = small_data(&avg);
    let pews = ExperimentConfig {
        algorithm: Algorithm::FedPews,
        warmup_rounds: 0,
        lambda: 2.0,
        ..avg.clone()
    };
    assert_eq!(run_all(&avg, &train, &test), run_all(&pews, &train, &test));
}

#[test]
fn fedprox_with_zero_mu_is_fedavg() {
    let avg = ExperimentConfig {
        rounds: 20,
        ..small_config(Algorithm::FedAvg)
    };
    let (train, test) = small_data(&avg);
    let prox = ExperimentConfig {
        algorithm: Algorithm::FedProx,
        mu: 0.0,
        ..avg.clone()
    };
    assert_eq!(run_all(&avg, &train, &test), run_all(&prox, &train, &test));
    let prox = ExperimentConfig { mu: 0.01, ..prox };
    assert_ne!(run_all(&avg, &train, &test).1, run_all(&prox, &train, &test).1);
}

#[test]
fn saturated_scores_reproduce_fedavg() {
    let avg = small_config(Algorithm::FedAvg);
    let (train, test) = small_data(&avg);
    let pews = ExperimentConfig {
        algorithm: Algorithm::FedPews,
        warmup_rounds: avg.rounds,
        lambda: 1.0,
        ..avg.clone()
    };
    let (mut sa, mut ca) = init_experiment(&avg, &train).unwrap();
    let (mut sp, mut cp) = init_experiment(&pews, &train).unwrap();
    let h = sp.global.spec().hidden_count();
    for c in cp.iter_mut() {
        c.scores = Some(MaskScores::new(vec![40.0; h]));
    }
    for t in 1..=avg.rounds {
        let ra = run_round(t, &mut sa, &mut ca, &avg, &train, &test).unwrap();
        let rp = run_round(t, &mut sp, &mut cp, &pews, &train, &test).unwrap();
        assert!(rp.warmup);
        assert_eq!(ra.accuracy, rp.accuracy);
        assert_eq!(sa.global.values(), sp.global.values(), "round {t}");
    }
}

#[test]
fn same_seed_same_log_and_different_seed_differs() {
    let cfg = ExperimentConfig {
        warmup_rounds: 4,
        lambda: 1.0,
        ..small_config(Algorithm::FedPews)
    };
    let (train, test) = small_data(&cfg);
    let a = run_all(&cfg, &train, &test);
    assert_eq!(a, run_all(&cfg, &train, &test));
    let other = ExperimentConfig { seed: 2, ..cfg };
    assert_ne!(a.1, run_all(&other, &train, &test).1);
}

#[test]
fn client_parallel_matches_sequential() {
    for alg in [Algorithm::FedAvg, Algorithm::FedProx, Algorithm::FedPews, Algorithm::FedPewsFixed] {
        let cfg = ExperimentConfig {
            warmup_rounds: 5,
            lambda: 2.0,
            participants: 4,
            partition: Partition::Dirichlet { alpha: 0.5 },
            ..small_config(alg)
        };
        let (train, test) = small_data(&cfg);
        let par = ExperimentConfig {
            parallel_clients: true,
            ..cfg.clone()
        };
        assert_eq!(run_all(&cfg, &train, &test), run_all(&par, &train, &test), "{alg:?}");
    }
}

#[test]
fn zero_rounds_leave_the_initial_model() {
    let cfg = ExperimentConfig {
        rounds: 0,
        ..small_config(Algorithm::FedPews)
    };
    let log = run_experiment(&cfg).unwrap();
    assert!(log.records.is_empty());
    let init = nn::init_params(cfg.model_spec().unwrap(), cfg.seed);
    assert_eq!(log.digest, param_digest(&init));
}

#[test]
fn init_allocates_mask_state_only_for_fedpews() {
    let avg = small_config(Algorithm::FedAvg);
    let (train, _) = small_data(&avg);
    let (server, clients) = init_experiment(&avg, &train).unwrap();
    assert!(server.theta_global.is_none() && server.fixed_masks.is_none());
    assert!(clients.iter().all(|c| c.scores.is_none()));

    let pews = small_config(Algorithm::FedPews);
    let (server, clients) = init_experiment(&pews, &train).unwrap();
    assert!(server.theta_global.unwrap().values().iter().all(|&p| p == 0.5));
    assert!(clients.iter().all(|c| c.scores.as_ref().unwrap().values().iter().all(|&s| s == 0.0)));

    let (a, _) = init_experiment(&pews, &train).unwrap();
    let (b, _) = init_experiment(&pews, &train).unwrap();
    assert_eq!(a.global.values(), b.global.values());
}

#[test]
fn warmup_gate_freezes_mask_state() {
    let cfg = ExperimentConfig {
        rounds: 10,
        warmup_rounds: 4,
        lambda: 2.0,
        ..small_config(Algorithm::FedPews)
    };
    let (train, test) = small_data(&cfg);
    let (mut server, mut clients) = init_experiment(&cfg, &train).unwrap();
    let mut frozen = None;
    for t in 1..=cfg.rounds {
        let rec = run_round(t, &mut server, &mut clients, &cfg, &train, &test).unwrap();
        assert_eq!(rec.warmup, t <= 4);
        let state: Vec<Vec<f64>> = clients.iter().map(|c| c.scores.clone().unwrap().values().to_vec()).collect();
        let theta = server.theta_global.clone().unwrap();
        if t == 4 {
            frozen = Some((state, theta));
        } else if t > 4 {
            let (s, th) = frozen.as_ref().unwrap();
            assert_eq!(&state, s);
            assert_eq!(&theta, th);
        }
    }
    // post-warmup uploads are full: the standard round trains every coordinate
    let global = server.global.clone();
    let x = local_round_standard(&mut clients[0], &global, 0.0, &cfg, &train).unwrap();
    let changed = x.values().iter().zip(global.values()).filter(|(a, b)| a != b).count();
    assert!(changed > global.len() / 2);
}

#[test]
fn fixed_masks_are_disjoint_and_cover_neuron_params() {
    let cfg = ExperimentConfig {
        warmup_rounds: 3,
        ..small_config(Algorithm::FedPewsFixed)
    };
    let (train, _) = small_data(&cfg);
    let (server, mut clients) = init_experiment(&cfg, &train).unwrap();
    let masks = server.fixed_masks.clone().unwrap();
    let spec = server.global.spec().clone();
    let uploads: Vec<(ParamVector, ParamMask)> = clients
        .iter_mut()
        .map(|c| local_round_fixed(c, &server.global, &masks[c.id], &cfg, &train).unwrap())
        .collect();
    let (m0, m1) = (uploads[0].1.bits(), uploads[1].1.bits());
    // brute force over each parameter's endpoints
    let widths = &cfg.widths;
    let owner = |layer_out: usize, k: usize| -> Option<usize> {
        if layer_out + 1 == widths.len() - 1 {
            None
        } else {
            let idx = spec.hidden_offset(layer_out) + k;
            Some(if masks[0].bits()[idx] { 0 } else { 1 })
        }
    };
    let mut p = 0;
    for l in 0..widths.len() - 1 {
        for k in 0..widths[l + 1] {
            for j in 0..widths[l] {
                let dst = owner(l, k);
                let src = if l == 0 { None } else { owner(l - 1, j) };
                match (src, dst) {
                    (Some(a), Some(b)) if a != b => assert!(!m0[p] && !m1[p]),
                    (Some(a), _) | (None, Some(a)) => {
                        assert_eq!((m0[p], m1[p]), (a == 0, a == 1));
                    }
                    (None, None) => assert!(m0[p] && m1[p]),
                }
                p += 1;
            }
        }
        for k in 0..widths[l + 1] {
            match owner(l, k) {
                Some(a) => assert_eq!((m0[p], m1[p]), (a == 0, a == 1)),
                None => assert!(m0[p] && m1[p]),
            }
            p += 1;
        }
    }
    assert_eq!(p, spec.param_count());
    // weights outside a client's subnetwork never move
    for (x, m) in &uploads {
        for ((v, g), keep) in x.values().iter().zip(server.global.values()).zip(m.bits()) {
            if !keep {
                assert_eq!(v, g);
            }
        }
    }
}

#[test]
fn aggregation_examples() {
    let spec = Arc::new(ModelSpec::from_widths(&[1, 1]).unwrap());
    let pv = |v: Vec<f64>| ParamVector::from_values(spec.clone(), v).unwrap();
    let pm = |b: Vec<bool>| ParamMask::from_bits(b);
    let out = aggregate_masked(
        &pv(vec![0.0, 0.0]),
        &[(&pv(vec![2.0, 5.0]), &pm(vec![true, false])), (&pv(vec![4.0, 3.0]), &pm(vec![true, true]))],
        1.0,
    )
    .unwrap();
    assert_eq!(out.values(), &[3.0, 3.0]);
    let out = aggregate_masked(&pv(vec![7.0, -1.0]), &[(&pv(vec![2.0, 5.0]), &pm(vec![false, false]))], 0.5).unwrap();
    assert_eq!(out.values(), &[7.0, -1.0]);
    let v = pv(vec![1.5, -2.25]);
    let ones = pm(vec![true, true]);
    let out = aggregate_masked(&pv(vec![0.0, 0.0]), &[(&v, &ones), (&v, &ones), (&v, &ones)], 1.0).unwrap();
    assert_eq!(out.values(), v.values());
    assert!(aggregate_masked(&v, &[], 1.0).is_err());
}

#[test]
fn exclusion_and_global_theta_examples() {
    let p = |v: Vec<f64>| MaskProbabilities::new(v);
    let t1 = p(vec![0.9, 0.3]);
    let t2 = p(vec![0.1, 0.6]);
    let g = update_global_theta(&[&t1, &t2]).unwrap();
    assert!((g.values()[0] - 0.5).abs() < 1e-15);
    let e = exclusion_prob(&g, &t1, 2);
    for (a, b) in e.values().iter().zip(t2.values()) {
        assert!((a - b).abs() < 1e-15);
    }
    let e = exclusion_prob(&p(vec![0.5]), &p(vec![0.8]), 3);
    assert!((e.values()[0] - 0.35).abs() < 1e-15);
    assert_eq!(update_global_theta(&[&t1]).unwrap(), t1);
    assert!(update_global_theta(&[]).is_none());
    let same = p(vec![0.2, 0.7]);
    let g = update_global_theta(&[&same, &same, &same]).unwrap();
    let e = exclusion_prob(&g, &same, 3);
    for (a, b) in e.values().iter().zip(same.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn participant_sampling() {
    assert_eq!(sample_participants(5, 1.0, 3, 1), vec![0, 1, 2, 3, 4]);
    let s = sample_participants(200, 0.1, 3, 7);
    assert_eq!(s.len(), 20);
    assert_eq!(s, sample_participants(200, 0.1, 3, 7));
    assert_ne!(s, sample_participants(200, 0.1, 3, 8));
    assert_eq!(sample_participants(10, 0.01, 1, 1).len(), 1);
    let mut u = s.clone();
    u.dedup();
    assert_eq!(u.len(), 20);

    let cfg = ExperimentConfig {
        participants: 6,
        participation_rate: 0.5,
        partition: Partition::Dirichlet { alpha: 1.0 },
        warmup_rounds: 4,
        lambda: 1.0,
        ..small_config(Algorithm::FedPews)
    };
    let (train, test) = small_data(&cfg);
    let a = run_all(&cfg, &train, &test);
    assert_eq!(a, run_all(&cfg, &train, &test));
}

#[test]
fn local_accuracy_is_reported_per_participant() {
    let cfg = ExperimentConfig {
        rounds: 2,
        local_eval: true,
        ..small_config(Algorithm::FedAvg)
    };
    let log = run_experiment(&cfg).unwrap();
    for r in &log.records {
        assert_eq!(r.local_accuracy.as_ref().unwrap().len(), 2);
    }
}

// Hand trace of one warmup step on a 2→2→2 net with a single sample.
fn hand_forward(w1: &[[f64; 2]; 2], b1: &[f64; 2], w2: &[[f64; 2]; 2], b2: &[f64; 2], x: &[f64; 2], m: &[f64; 2]) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let z1 = [
        w1[0][0] * x[0] + w1[0][1] * x[1] + b1[0],
        w1[1][0] * x[0] + w1[1][1] * x[1] + b1[1],
    ];
    let r = [z1[0].max(0.0), z1[1].max(0.0)];
    let a = [r[0] * m[0], r[1] * m[1]];
    let z2 = [
        w2[0][0] * a[0] + w2[0][1] * a[1] + b2[0],
        w2[1][0] * a[0] + w2[1][1] * a[1] + b2[1],
    ];
    let e = [z2[0].exp(), z2[1].exp()];
    let p = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
    (z1, a, p)
}

fn draw_mask(seed: u64, purpose: Purpose, key: &[u64], theta: &[f64; 2]) -> [f64; 2] {
    let mut r = stream(seed, purpose, key);
    let mut m = [0.0; 2];
    for (mi, t) in m.iter_mut().zip(theta) {
        *mi = if r.random::<f64>() < *t { 1.0 } else { 0.0 };
    }
    m
}

#[test]
fn one_step_warmup_round_matches_hand_trace() {
    let (mut w1, mut b1) = ([[1.0, 2.0], [-1.0, 1.0]], [0.5, 0.0]);
    let (mut w2, mut b2) = ([[1.0, -1.0], [2.0, 0.5]], [0.1, -0.2]);
    let x = [0.4, -0.3];
    let y = 1usize;
    let s0 = [0.3, -0.2];
    let excl = [0.9, 0.2];
    let cfg = ExperimentConfig {
        local_steps: 1,
        lr_local: 0.1,
        lr_mask: 0.5,
        lambda: 2.0,
        seed: 9,
        widths: vec![2, 2, 2],
        ..ExperimentConfig::default()
    };
    let spec = Arc::new(ModelSpec::from_widths(&[2, 2, 2]).unwrap());
    let flat = |w1: &[[f64; 2]; 2], b1: &[f64; 2], w2: &[[f64; 2]; 2], b2: &[f64; 2]| {
        vec![w1[0][0], w1[0][1], w1[1][0], w1[1][1], b1[0], b1[1], w2[0][0], w2[0][1], w2[1][0], w2[1][1], b2[0], b2[1]]
    };
    let global = ParamVector::from_values(spec.clone(), flat(&w1, &b1, &w2, &b2)).unwrap();
    let train = Dataset::new(vec![Sample { features: x.to_vec(), label: y }], 2).unwrap();
    let mut client = ClientState {
        id: 0,
        local: global.clone(),
        scores: Some(MaskScores::new(s0.to_vec())),
        batches: BatchStream::new(Shard { owner: 0, indices: vec![0] }, 1, 9).unwrap(),
    };
    let round = 3;
    let up = local_round_pews(&mut client, &global, Some(&MaskProbabilities::new(excl.to_vec())), &cfg, round, &train).unwrap();

    // Procedure I
    let theta = [sigmoid(s0[0]), sigmoid(s0[1])];
    let m = draw_mask(9, Purpose::MaskScoreStep, &[0, round as u64, 1], &theta);
    let (z1, _, p) = hand_forward(&w1, &b1, &w2, &b2, &x, &m);
    let dz2 = [p[0] - (y == 0) as u8 as f64, p[1] - (y == 1) as u8 as f64];
    let da = [w2[0][0] * dz2[0] + w2[1][0] * dz2[1], w2[0][1] * dz2[0] + w2[1][1] * dz2[1]];
    let mut s1 = [0.0; 2];
    for l in 0..2 {
        let gm = da[l] * z1[l].max(0.0);
        let grad = (gm - 2.0 * 2.0 * (theta[l] - excl[l])) * theta[l] * (1.0 - theta[l]);
        s1[l] = s0[l] - 0.5 * grad;
    }
    // Procedure II on the same sample
    let theta1 = [sigmoid(s1[0]), sigmoid(s1[1])];
    let m = draw_mask(9, Purpose::MaskWeightStep, &[0, round as u64, 1], &theta1);
    let (z1, a, p) = hand_forward(&w1, &b1, &w2, &b2, &x, &m);
    let dz2 = [p[0] - (y == 0) as u8 as f64, p[1] - (y == 1) as u8 as f64];
    let da = [w2[0][0] * dz2[0] + w2[1][0] * dz2[1], w2[0][1] * dz2[0] + w2[1][1] * dz2[1]];
    let dz1 = [
        if z1[0] > 0.0 { da[0] * m[0] } else { 0.0 },
        if z1[1] > 0.0 { da[1] * m[1] } else { 0.0 },
    ];
    for k in 0..2 {
        for j in 0..2 {
            w2[k][j] -= 0.1 * dz2[k] * a[j];
            w1[k][j] -= 0.1 * dz1[k] * x[j];
        }
        b2[k] -= 0.1 * dz2[k];
        b1[k] -= 0.1 * dz1[k];
    }
    let want = flat(&w1, &b1, &w2, &b2);
    for (g, w) in up.params.values().iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
    let scores = client.scores.as_ref().unwrap().values();
    for l in 0..2 {
        assert!((scores[l] - s1[l]).abs() < 1e-15);
        assert!((up.theta.values()[l] - theta1[l]).abs() < 1e-15);
    }
    let upload = draw_mask(9, Purpose::MaskUpload, &[0, round as u64, 1], &theta1);
    let upload = NeuronMask::from_bits(upload.iter().map(|&v| v == 1.0).collect());
    assert_eq!(up.mask, expand_to_param_mask(&upload, &spec).unwrap());
    assert_eq!(client.local.values(), up.params.values());
}

#[test]
fn proximal_term_vanishes_at_the_global_point() {
    let cfg = ExperimentConfig {
        local_steps: 1,
        lr_local: 0.1,
        widths: vec![2, 2],
        ..ExperimentConfig::default()
    };
    let spec = Arc::new(ModelSpec::from_widths(&[2, 2]).unwrap());
    let global = ParamVector::from_values(spec, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let train = Dataset::new(vec![Sample { features: vec![0.0, 0.0], label: 0 }], 2).unwrap();
    let mk = || ClientState {
        id: 0,
        local: global.clone(),
        scores: None,
        batches: BatchStream::new(Shard { owner: 0, indices: vec![0] }, 1, 1).unwrap(),
    };
    // one step starts at x = x_g, so μ does not matter
    let a = local_round_standard(&mut mk(), &global, 0.0, &cfg, &train).unwrap();
    let b = local_round_standard(&mut mk(), &global, 0.5, &cfg, &train).unwrap();
    assert_eq!(a.values(), b.values());
    // from the second step on it pulls towards x_g
    let cfg2 = ExperimentConfig { local_steps: 2, ..cfg };
    let a = local_round_standard(&mut mk(), &global, 0.0, &cfg2, &train).unwrap();
    let b = local_round_standard(&mut mk(), &global, 0.5, &cfg2, &train).unwrap();
    let norm = |v: &ParamVector| v.values().iter().map(|x| x * x).sum::<f64>();
    assert!(norm(&b) < norm(&a));
}
