use std::collections::HashSet;

use famtune::costmodel::{
    pairwise_accuracy, predict, train_cost_model, CostModelConfig, CostModelState, ModelOwner,
};
use famtune::experiment::sample_records;
use famtune::family::{cluster, ClusterAlgo};
use famtune::fixtures;
use famtune::graph::{ModelGraph, OpKind, OperatorNode, Subgraph};
use famtune::searchspace::{
    feature_dim, featurize, generate_candidates, Candidate, History, Knob, MeasurementRecord, SpaceDescriptor,
};
use famtune::simbackend::{make_landscape, LandscapeParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn subgraph(knob_lens: &[usize]) -> Subgraph {
    let knobs = knob_lens
        .iter()
        .enumerate()
        .map(|(i, &n)| Knob::new(&format!("k{i}"), (0..n as u32).map(|e| 1u64 << e).collect()))
        .collect();
    Subgraph::new(
        0,
        vec![OperatorNode::new(OpKind::Dense, vec![8, 8])],
        None,
        1,
        SpaceDescriptor::new(knobs).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn candidates_are_fresh_valid_and_distinct(
        lens in prop::collection::vec(1usize..7, 1..5),
        measured_frac in 0.0f64..1.0,
        pool in (0usize..300, 0usize..300),
        seed in any::<u64>(),
    ) {
        let sg = subgraph(&lens);
        let size = sg.space_size().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut history = History::<f64>::new();
        for i in 0..size {
            if rng.random::<f64>() < measured_frac {
                history.record(i, rng.random_range(0.5..2.0));
            }
        }
        let out = generate_candidates(&sg, &history, pool.0, pool.1, &mut rng);
        let remaining = size - history.len() as u64;
        let requested = (pool.0 + pool.1) as u64;
        prop_assert_eq!(out.len() as u64, remaining.min(requested));
        let mut seen = HashSet::new();
        for c in &out {
            prop_assert!(sg.knob_space.validate(c).is_ok());
            let idx = sg.knob_space.index_of(c);
            prop_assert!(!history.contains(idx), "candidate {idx} already measured");
            prop_assert!(seen.insert(idx), "candidate {idx} returned twice");
        }
    }

    #[test]
    fn two_distinct_points_are_ranked_correctly(
        x in prop::collection::vec(-5.0f64..5.0, 1..6),
        delta in prop::collection::vec(-5.0f64..5.0, 1..6),
        lat in (0.01f64..100.0, 0.01f64..100.0),
    ) {
        let d = x.len().min(delta.len());
        let a: Vec<f64> = x[..d].to_vec();
        let b: Vec<f64> = a.iter().zip(&delta).map(|(u, v)| u + v).collect();
        prop_assume!(a != b);
        prop_assume!((lat.0 - lat.1).abs() > 1e-6 * lat.0.max(lat.1));
        let config = CostModelConfig { min_samples_leaf: 1, ..Default::default() };
        let mut m = CostModelState::new(ModelOwner::Monolithic, config);
        train_cost_model(&[record(a.clone(), lat.0), record(b.clone(), lat.1)], &mut m).unwrap();
        let (pa, pb) = (predict(&m, &a).unwrap(), predict(&m, &b).unwrap());
        prop_assert_eq!(pa < pb, lat.0 < lat.1);
        prop_assert!(pa != pb);
    }
}

fn record(features: Vec<f64>, latency: f64) -> MeasurementRecord<f64> {
    MeasurementRecord {
        candidate: Candidate {
            subgraph_id: 0,
            assignment: vec![],
        },
        features,
        latency,
        measured_at: 0.0,
    }
}

#[test]
fn featurize_is_injective_on_small_spaces() {
    for lens in [vec![8usize], vec![4, 5], vec![3, 3, 3], vec![2, 4, 2, 3]] {
        let sg = subgraph(&lens);
        let d = feature_dim(4);
        let mut seen = HashSet::new();
        for i in 0..sg.space_size().unwrap() {
            let c = sg.knob_space.candidate(0, i);
            let v: Vec<f64> = featurize(&c, &sg, d).unwrap();
            assert_eq!(v.len(), d);
            let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(key), "{lens:?}: candidate {i} collides");
        }
    }
}

fn random_dataset(seed: u64) -> Vec<MeasurementRecord<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..200);
    let d = rng.random_range(1..8);
    (0..n)
        .map(|_| {
            // coarse grids so duplicate feature values and tied thresholds occur
            let f: Vec<f64> = (0..d).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
            let lat = (f.iter().sum::<f64>() * 0.3 + rng.random_range(-0.5..0.5)).exp();
            record(f, lat)
        })
        .collect()
}

#[test]
fn training_mse_never_increases_across_rounds() {
    for seed in 0..10 {
        let data = random_dataset(seed);
        let mut m = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
        train_cost_model(&data, &mut m).unwrap();
        let trace = m.loss_trace();
        assert_eq!(trace.len(), m.config.trees + 1);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: loss rose from {} to {}", w[0], w[1]);
        }
        assert!(trace.last().unwrap() < &trace[0], "seed {seed}: no progress");
    }
}

#[test]
fn fit_ignores_training_order() {
    for seed in 0..10 {
        let data = random_dataset(seed);
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 100));
        let mut a = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
        let mut b = a.clone();
        train_cost_model(&data, &mut a).unwrap();
        train_cost_model(&shuffled, &mut b).unwrap();
        for r in &data {
            assert_eq!(
                predict(&a, &r.features).unwrap().to_bits(),
                predict(&b, &r.features).unwrap().to_bits()
            );
        }
        assert_eq!(a.dump(), b.dump());
    }
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn bert_samples(seed: u64, n: usize) -> (ModelGraph, famtune::Landscape, Vec<Vec<MeasurementRecord<f64>>>) {
    let model = fixtures::bert_large();
    let truth = cluster(&model.subgraphs, ClusterAlgo::CoreOp);
    let landscape = make_landscape(&model, &truth, &LandscapeParams::default(), seed).unwrap();
    let data = sample_records(&model, &landscape, n, seed).unwrap();
    (model, landscape, data)
}

#[test]
fn model_fits_its_own_samples() {
    let (_, _, data) = bert_samples(3, 256);
    for recs in &data {
        let mut m = CostModelState::new(ModelOwner::Family(0), CostModelConfig::default());
        train_cost_model(recs, &mut m).unwrap();
        let acc = pairwise_accuracy(&m, recs).unwrap();
        assert!(acc >= 0.95, "in-sample accuracy {acc}");
    }
}

#[test]
fn held_out_predictions_track_true_latency() {
    for seed in 0..3 {
        let (model, landscape, data) = bert_samples(seed, 320);
        for (sg, recs) in model.subgraphs.iter().zip(&data) {
            let (train, held) = recs.split_at(256);
            let mut m = CostModelState::new(ModelOwner::Family(0), CostModelConfig::default());
            train_cost_model(train, &mut m).unwrap();
            let pred: Vec<f64> = held.iter().map(|r| predict(&m, &r.features).unwrap()).collect();
            let truth: Vec<f64> = held.iter().map(|r| landscape.true_latency(sg, &r.candidate)).collect();
            let rho = spearman(&pred, &truth);
            assert!(rho > 0.8, "seed {seed} subgraph {}: spearman {rho}", sg.id);
        }
    }
}

#[test]
fn retraining_is_deterministic() {
    let data = random_dataset(42);
    let mut a = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
    let mut b = a.clone();
    train_cost_model(&data, &mut a).unwrap();
    train_cost_model(&data, &mut b).unwrap();
    assert_eq!(a.dump(), b.dump());
}

#[test]
fn f32_and_f64_models_agree_on_ranking() {
    let data = random_dataset(7);
    let data32: Vec<MeasurementRecord<f32>> = data
        .iter()
        .map(|r| MeasurementRecord {
            candidate: r.candidate.clone(),
            features: r.features.iter().map(|&x| x as f32).collect(),
            latency: r.latency as f32,
            measured_at: 0.0,
        })
        .collect();
    let mut m64 = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
    let mut m32 = CostModelState::<f32>::new(ModelOwner::Monolithic, CostModelConfig::default());
    train_cost_model(&data, &mut m64).unwrap();
    train_cost_model(&data32, &mut m32).unwrap();
    let a64 = pairwise_accuracy(&m64, &data).unwrap();
    let a32 = pairwise_accuracy(&m32, &data32).unwrap();
    assert!((a64 - a32).abs() < 0.02, "{a64} vs {a32}");
}
