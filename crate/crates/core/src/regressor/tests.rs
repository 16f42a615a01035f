use super::*;
use crate::seeds::stream_rng;
use rand_distr::{Distribution, StandardNormal};

fn small_cfg(seed: u64) -> RegressorConfig {
    RegressorConfig {
        embed_dim: 16,
        mlp1_widths: vec![8, 8],
        mlp2_widths: vec![4, 4, 4],
        dropout: 0.0,
        batch_size: 16,
        seed,
        ..RegressorConfig::default()
    }
}

fn random_examples(n: usize, dim: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = stream_rng(seed, 7);
    (0..n)
        .map(|_| TrainingExample {
            top_embedding: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            theta: rng.random_range(0.0..360.0),
            phi: rng.random_range(30.0..=90.0),
            target: rng.random(),
        })
        .collect()
}

/// Perturbs every parameter and running statistic so the check does not run
/// at the symmetric initial point.
fn randomize(state: &mut RegressorState, seed: u64) {
    let mut rng = stream_rng(seed, 9);
    for l in &mut state.layers {
        for t in l.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.3 * rng.random_range(-1.0..1.0);
            }
        }
        l.running_mean
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
        l.running_var
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.5..2.0));
    }
}

#[test]
fn zero_head_gives_one_half() {
    let cfg = small_cfg(1);
    let mut s = RegressorState::new(&cfg, &mut stream_rng(1, 0)).unwrap();
    let head = s.layers.last_mut().unwrap();
    head.weight.fill(0.0);
    for e in random_examples(5, 16, 2) {
        assert_eq!(s.predict(&e.top_embedding, e.theta, e.phi).unwrap(), 0.5);
    }
    let ex = random_examples(6, 16, 3);
    let (x, a) = s.encode_examples(&ex).unwrap();
    let out = s
        .forward(&x, &a, Mode::Train, &mut stream_rng(0, 0))
        .unwrap();
    assert!(out.iter().all(|&v| v == 0.5));
}

#[test]
fn eval_batch_matches_single_predictions() {
    let mut s = RegressorState::new(&small_cfg(2), &mut stream_rng(2, 0)).unwrap();
    randomize(&mut s, 2);
    let ex = random_examples(7, 16, 4);
    let inputs: Vec<(&[f64], f64, f64)> = ex
        .iter()
        .map(|e| (e.top_embedding.as_slice(), e.theta, e.phi))
        .collect();
    let batch = s.predict_batch(&inputs).unwrap();
    for (i, e) in ex.iter().enumerate() {
        let one = s.predict(&e.top_embedding, e.theta, e.phi).unwrap();
        assert_eq!(one, s.predict(&e.top_embedding, e.theta, e.phi).unwrap());
        assert!((one - batch[i]).abs() < 1e-12);
        assert!(one > 0.0 && one < 1.0);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let s = RegressorState::new(&small_cfg(0), &mut stream_rng(0, 0)).unwrap();
    assert!(matches!(
        s.predict(&[0.0; 3], 0.0, 45.0),
        Err(RegressorError::DimensionMismatch {
            expected: 16,
            found: 3
        })
    ));
}

#[test]
fn config_violations_are_listed() {
    let cfg = RegressorConfig {
        mlp1_widths: vec![],
        dropout: 1.0,
        learning_rate: -1.0,
        batch_size: 0,
        ..RegressorConfig::default()
    };
    assert_eq!(cfg.violations().len(), 4);
}

#[test]
fn gradient_check_small_network() {
    for seed in 0..3 {
        let mut s = RegressorState::new(&small_cfg(seed), &mut stream_rng(seed, 0)).unwrap();
        randomize(&mut s, seed);
        let ex = random_examples(5, 16, seed);
        let eval = gradient_check(&s, &ex, 1e-5, BnStats::Running).unwrap();
        let batch = gradient_check(&s, &ex, 1e-5, BnStats::Batch).unwrap();
        assert!(eval < 1e-4, "seed {seed}: eval {eval}");
        assert!(batch < 1e-4, "seed {seed}: batch {batch}");
    }
}

#[test]
fn zero_network_has_no_embedding_gradient() {
    let mut s = RegressorState::new(&small_cfg(0), &mut stream_rng(0, 0)).unwrap();
    for l in &mut s.layers {
        l.weight.fill(0.0);
    }
    let ex = vec![TrainingExample {
        top_embedding: vec![0.0; 16],
        theta: 45.0,
        phi: 60.0,
        target: 0.8,
    }];
    let (_, g) = s.loss_and_gradients(&ex, BnStats::Running).unwrap();
    assert!(g[0].weight.iter().all(|&v| v == 0.0));
}

#[test]
fn averaged_gradient_does_not_depend_on_copies() {
    let mut s = RegressorState::new(&small_cfg(5), &mut stream_rng(5, 0)).unwrap();
    randomize(&mut s, 5);
    let ex = random_examples(1, 16, 5);
    let (l1, g1) = s.loss_and_gradients(&ex, BnStats::Running).unwrap();
    let three = vec![ex[0].clone(), ex[0].clone(), ex[0].clone()];
    let (l3, g3) = s.loss_and_gradients(&three, BnStats::Running).unwrap();
    assert!((l1 - l3).abs() < 1e-14);
    for (a, b) in g1.iter().zip(&g3) {
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-3));
            }
        }
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = RegressorConfig {
        learning_rate: 0.0,
        epochs: 4,
        batch_size: 64,
        ..small_cfg(3)
    };
    let ex = random_examples(20, 16, 3);
    let (trained, hist) = train(&ex, &cfg).unwrap();
    let fresh = RegressorState::new(&cfg, &mut stream_rng(cfg.seed, 0)).unwrap();
    for (a, b) in trained.layers.iter().zip(&fresh.layers) {
        assert_eq!(a.tensors(), b.tensors());
    }
    assert!(hist.windows(2).all(|w| w[0] == w[1]), "{hist:?}");
}

#[test]
fn constant_targets_are_fit() {
    let mut ex = random_examples(64, 16, 8);
    ex.iter_mut().for_each(|e| e.target = 0.5);
    // The head's batch norm starts with unit scale; Adam needs roughly
    // 1/learning_rate steps to shrink it to zero.
    let cfg = RegressorConfig {
        epochs: 400,
        ..small_cfg(8)
    };
    let (_, hist) = train(&ex, &cfg).unwrap();
    assert!(*hist.last().unwrap() < 1e-4, "{hist:?}");
}

#[test]
fn rejects_bad_targets_and_empty_sets() {
    let mut ex = random_examples(3, 16, 1);
    ex[1].target = 1.5;
    assert!(matches!(
        train(&ex, &small_cfg(0)),
        Err(RegressorError::InvalidExample { index: 1, .. })
    ));
    assert!(matches!(
        train(&[], &small_cfg(0)),
        Err(RegressorError::EmptyDataset)
    ));
}

#[test]
fn training_is_deterministic() {
    let ex = random_examples(40, 16, 2);
    let cfg = RegressorConfig {
        dropout: 0.25,
        epochs: 3,
        ..small_cfg(2)
    };
    assert_eq!(train(&ex, &cfg).unwrap(), train(&ex, &cfg).unwrap());
}

#[test]
fn sincos_is_periodic_in_theta() {
    let cfg = RegressorConfig {
        angle_encoding: AngleEncoding::Sincos,
        ..small_cfg(4)
    };
    let mut s = RegressorState::new(&cfg, &mut stream_rng(4, 0)).unwrap();
    randomize(&mut s, 4);
    let e = &random_examples(1, 16, 4)[0];
    for k in 0..16 {
        let theta = 22.5 * k as f64;
        let a = s.predict(&e.top_embedding, theta, 60.0).unwrap();
        let b = s.predict(&e.top_embedding, theta + 360.0, 60.0).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn model_file_round_trip() {
    let mut s = RegressorState::new(&small_cfg(6), &mut stream_rng(6, 0)).unwrap();
    randomize(&mut s, 6);
    let d = Digest::of_bytes(b"x");
    let bytes = write_model(&s, Some(&d));
    let (back, digest) = read_model(&bytes).unwrap();
    assert_eq!(back, s);
    assert_eq!(digest, Some(d));
    let e = &random_examples(1, 16, 6)[0];
    assert_eq!(
        s.predict(&e.top_embedding, e.theta, e.phi).unwrap(),
        back.predict(&e.top_embedding, e.theta, e.phi).unwrap()
    );
}

#[test]
fn model_file_errors() {
    let s = RegressorState::new(&small_cfg(0), &mut stream_rng(0, 0)).unwrap();
    let bytes = write_model(&s, None);
    let mut corrupt = bytes.clone();
    let mid = bytes.len() / 2;
    corrupt[mid] ^= 0x40;
    assert!(matches!(
        read_model(&corrupt),
        Err(RegressorError::Checksum { .. })
    ));
    assert!(matches!(
        read_model(&bytes[..bytes.len() - 20]),
        Err(RegressorError::Truncated)
    ));
    let mut v = bytes.clone();
    v[4] = 7;
    assert!(matches!(
        read_model(&v),
        Err(RegressorError::UnsupportedVersion(7))
    ));
    assert!(matches!(
        read_model(b"nope...."),
        Err(RegressorError::BadMagic)
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.svsm");
    save_model(&s, &path, None).unwrap();
    assert!(matches!(
        load_model_for(&path, 32),
        Err(RegressorError::DimensionMismatch {
            expected: 32,
            found: 16
        })
    ));
    assert!(load_model_for(&path, 16).is_ok());
}

use crate::Digest;

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(20))]
    #[test]
    fn gradients_match_finite_differences(seed in 0u64..10_000, sincos in proptest::bool::ANY) {
        let cfg = RegressorConfig {
            angle_encoding: if sincos { AngleEncoding::Sincos } else { AngleEncoding::Raw },
            ..small_cfg(seed)
        };
        let mut s = RegressorState::new(&cfg, &mut stream_rng(seed, 0)).unwrap();
        randomize(&mut s, seed);
        let ex = random_examples(4, 16, seed);
        let err = gradient_check(&s, &ex, 1e-5, BnStats::Running).unwrap();
        proptest::prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn outputs_stay_in_unit_interval(seed in 0u64..10_000, scale in 0.0f64..3.0) {
        let mut s = RegressorState::new(&small_cfg(seed), &mut stream_rng(seed, 0)).unwrap();
        randomize(&mut s, seed);
        let mut e = random_examples(1, 16, seed).remove(0);
        e.top_embedding.iter_mut().for_each(|v| *v *= scale);
        let y = s.predict(&e.top_embedding, e.theta, e.phi).unwrap();
        proptest::prop_assert!(y > 0.0 && y < 1.0);
    }
}

#[test]
fn examples_pair_scores_with_top_view_features() {
    use crate::dataset::tests::tiny_model;
    use crate::scoring::{ScoreEntry, ScoreTable};

    let m = tiny_model(2, 3, 4);
    let entries: Vec<ScoreEntry> = m
        .records()
        .iter()
        .filter(|r| r.id.category == m.category_list()[0])
        .map(|r| ScoreEntry {
            scaled: r.phi / 100.0,
            ..ScoreEntry::new(r.id.clone())
        })
        .collect();
    let n = entries.len();
    let table = ScoreTable::from_entries(entries, 1).unwrap();
    let ex = build_examples(&m, &table);
    assert_eq!(ex.len(), n);
    let top: Vec<f64> = m.records()[0].features.iter().map(|&x| x as f64).collect();
    assert!(m.records()[0].is_top);
    for e in &ex {
        assert_eq!(e.target, e.phi / 100.0);
        assert_eq!(e.top_embedding, top);
    }
}
