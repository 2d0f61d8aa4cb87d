mod common;

use proptest::prelude::*;
use rand::Rng;
use secaps::autograd::Tensor;
use secaps::gradcheck::tiny_model_config;
use secaps::model::{ModelParams, ResidualMode};
use secaps::train::{
    adam_step, bucket_of, bucketize_charges, evaluate_metrics, load_checkpoint, metrics_json, save_checkpoint,
    train_encoded, AdamState, Bucket, Checkpoint, TrainConfig, MAGIC, METRICS_KEYS,
};
use secaps::Error;

#[test]
fn adam_first_step_closed_form() {
    let cfg = TrainConfig::default();
    let mut state = AdamState::new([1]);
    let mut p = [0.0];
    let mut g = [1.0];
    state.update(&mut [&mut p], &mut [&mut g], &cfg).unwrap();
    assert!((p[0] + cfg.learning_rate).abs() < 1e-10);
}

#[test]
fn adam_matches_a_scripted_trace() {
    let cfg = TrainConfig {
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let x0 = vec![0.5, -1.0, 2.0];
    let grads = vec![vec![0.1, -0.3, 2.0], vec![0.2, 0.1, -1.0], vec![-0.4, 0.0, 0.5]];
    let want = common::adam_trace(&x0, &grads, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut state = AdamState::new([3]);
    let mut x = x0.clone();
    for (step, g) in grads.iter().enumerate() {
        let mut g = g.clone();
        state.update(&mut [&mut x], &mut [&mut g], &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        for k in 0..3 {
            assert!((x[k] - want[step][k]).abs() < 1e-12);
        }
    }
    assert_eq!(state.steps(), 3);
}

#[test]
fn adam_step_checks_shapes_and_zeroes_gradients() {
    let config = tiny_model_config(ResidualMode::None);
    let mut params = ModelParams::init(&config).unwrap();
    let before = params.clone();
    let mut state = AdamState::for_params(&params);
    let mut grads: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
    adam_step(&mut params, &mut grads, &mut state, &TrainConfig::default()).unwrap();
    assert_eq!(params, before);
    grads[0] = Tensor::full(grads[0].shape().to_vec(), 1.0);
    adam_step(&mut params, &mut grads, &mut state, &TrainConfig::default()).unwrap();
    assert!(grads[0].data().iter().all(|&v| v == 0.0));
    assert_ne!(params, before);
    let mut wrong = vec![Tensor::zeros([1])];
    assert!(matches!(
        adam_step(&mut params, &mut wrong, &mut state, &TrainConfig::default()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn worked_metrics_example() {
    let r = evaluate_metrics(&[0, 1, 1, 1], &[0, 0, 1, 2], 3).unwrap();
    let p: Vec<f64> = r.per_class.iter().map(|c| c.precision).collect();
    let rc: Vec<f64> = r.per_class.iter().map(|c| c.recall).collect();
    let f: Vec<f64> = r.per_class.iter().map(|c| c.f1).collect();
    assert_eq!(p, vec![1.0, 1.0 / 3.0, 0.0]);
    assert_eq!(rc, vec![0.5, 1.0, 0.0]);
    assert!((f[0] - 2.0 / 3.0).abs() < 1e-15 && (f[1] - 0.5).abs() < 1e-15 && f[2] == 0.0);
    assert_eq!(r.macro_f1, 7.0 / 18.0);
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 1, 0]]);
}

#[test]
fn metrics_edge_cases() {
    let r = evaluate_metrics(&[2, 0, 1], &[2, 0, 1], 3).unwrap();
    assert_eq!((r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0, 1.0));
    let r = evaluate_metrics(&[1, 0], &[0, 1], 2).unwrap();
    assert_eq!(r.accuracy, 0.0);
    // Class 2 never occurs and is never predicted; it still counts as 0.
    let r = evaluate_metrics(&[0, 1], &[0, 1], 3).unwrap();
    assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!(matches!(evaluate_metrics(&[0], &[0, 1], 2), Err(Error::Contract(_))));
    assert!(matches!(evaluate_metrics(&[3], &[0], 2), Err(Error::Contract(_))));
}

#[test]
fn metrics_match_a_naive_recount_on_500_cases() {
    let mut r = common::rng(5);
    for _ in 0..500 {
        let k = r.gen_range(1..=10);
        let n = r.gen_range(0..60);
        let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let got = evaluate_metrics(&pred, &gold, k).unwrap();
        let want = common::recount(&pred, &gold, k);
        assert_eq!(got.accuracy, want.accuracy);
        for c in 0..k {
            assert_eq!(got.per_class[c].precision, want.precision[c]);
            assert_eq!(got.per_class[c].recall, want.recall[c]);
            assert_eq!(got.per_class[c].f1, want.f1[c]);
        }
        assert_eq!(got.macro_precision, want.macro_precision);
        assert_eq!(got.macro_recall, want.macro_recall);
        assert_eq!(got.macro_f1, want.macro_f1);
        assert_eq!(got.confusion.iter().flatten().sum::<usize>(), n);
    }
}

#[test]
fn bucket_boundaries() {
    assert_eq!(bucket_of(10), Bucket::Low);
    assert_eq!(bucket_of(100), Bucket::Medium);
    assert_eq!(bucket_of(101), Bucket::High);
    let b = bucketize_charges(&[3, 10, 11, 100, 101, 5000], &[0.1, 0.3, 0.5, 0.7, 0.8, 1.0]).unwrap();
    assert_eq!(b.low.classes, vec![0, 1]);
    assert_eq!(b.medium.classes, vec![2, 3]);
    assert_eq!(b.high.classes, vec![4, 5]);
    assert!((b.low.macro_f1.unwrap() - 0.2).abs() < 1e-15);
    assert!((b.high.macro_f1.unwrap() - 0.9).abs() < 1e-15);
    let empty = bucketize_charges(&[500], &[1.0]).unwrap();
    assert_eq!(empty.low.macro_f1, None);
}

#[test]
fn metrics_json_has_every_key() {
    let r = evaluate_metrics(&[0, 1], &[0, 0], 2).unwrap();
    let b = bucketize_charges(&[4, 200], &r.class_f1()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&metrics_json(&r, Some(&b))).unwrap();
    for key in METRICS_KEYS.iter().chain(&["buckets"]) {
        assert!(v.get(key).is_some(), "{key}");
    }
}

fn checkpoint() -> Checkpoint {
    let config = tiny_model_config(ResidualMode::Attention);
    let mut params = ModelParams::init(&config).unwrap();
    params.round_to_f32();
    Checkpoint {
        params,
        config,
        labels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        vocabulary: vec!["<pad>".into(), "<unk>".into(), "law".into()],
    }
}

#[test]
fn checkpoint_round_trip() {
    let ck = checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    save_checkpoint(&ck.params, &ck.config, &path).unwrap();
    let (params, config) = load_checkpoint(&path).unwrap();
    assert_eq!(config, ck.config);
    for ((na, a), (nb, b)) in params.iter().zip(ck.params.iter()) {
        assert_eq!(na, nb);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn checkpoint_layout_is_little_endian() {
    let ck = checkpoint();
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    assert_eq!(header["model"]["embed_dim"], 8);
    let rest = &bytes[16 + len..];
    let name_len = u16::from_le_bytes([rest[0], rest[1]]) as usize;
    assert_eq!(&rest[2..2 + name_len], b"embedding");
    assert_eq!(rest[2 + name_len], 2);
    let dims = &rest[3 + name_len..];
    assert_eq!(u64::from_le_bytes(dims[..8].try_into().unwrap()), 20);
    assert_eq!(u64::from_le_bytes(dims[8..16].try_into().unwrap()), 8);
    let first = f32::from_le_bytes(dims[16..20].try_into().unwrap());
    assert_eq!(f64::from(first), ck.params.tensor(0).data()[0]);
}

/// A checkpoint for a hand-made config with a single 3 x 3 tensor payload.
fn tiny_file(values: usize) -> Vec<u8> {
    let header = br#"{"model":{"vocab_size":3,"embed_dim":3,"max_len":5,"layers":[{"caps_num":1,"caps_dim":1,"routing_iters":1,"lstm_hidden":1}],"fc1_dim":1,"fc2_dim":1,"num_classes":2,"residual_mode":"none","focal_gamma":2.0,"focal_alpha":0.25,"forget_bias":1.0,"attention_init":0.1,"embedding_init":0.1,"seed":0}}"#;
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&9u16.to_le_bytes());
    out.extend_from_slice(b"embedding");
    out.push(2);
    out.extend_from_slice(&3u64.to_le_bytes());
    out.extend_from_slice(&3u64.to_le_bytes());
    for _ in 0..values {
        out.extend_from_slice(&0.5f32.to_le_bytes());
    }
    out
}

#[test]
fn corrupted_checkpoints_fail_distinctly() {
    let mut bad = checkpoint().to_bytes().unwrap();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic)));
    assert!(matches!(Checkpoint::from_bytes(&tiny_file(8)), Err(Error::Truncated { .. })));

    let mut wrong_shape = tiny_file(0);
    let n = wrong_shape.len();
    wrong_shape[n - 8..].copy_from_slice(&4u64.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&wrong_shape), Err(Error::ShapeMismatch { .. })));

    let full = checkpoint().to_bytes().unwrap();
    assert!(matches!(Checkpoint::from_bytes(&full[..full.len() - 1]), Err(Error::Truncated { .. })));
    assert!(matches!(Checkpoint::from_bytes(&full[..5]), Err(Error::Truncated { .. })));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (train, valid, config) = common::separable_splits();
    let initial = ModelParams::init(&config).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        ..TrainConfig::default()
    };
    let out = train_encoded(&train, &valid, initial.clone(), &config, &cfg).unwrap();
    assert_eq!(out.params, initial);
}

#[test]
fn training_is_deterministic_and_learns() {
    let (train, valid, config) = common::separable_splits();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 8,
        ..TrainConfig::default()
    };
    let run = || train_encoded(&train, &valid, ModelParams::init(&config).unwrap(), &config, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log[0].mean_loss.to_bits(), b.log[0].mean_loss.to_bits());
    assert_eq!(a.params, b.params);
    let losses = a.losses();
    assert!(losses.last().unwrap() < &(losses[0] / 2.0), "{losses:?}");
    let best = a.best_valid().unwrap().macro_f1;
    assert!(a.log.iter().all(|e| e.valid.as_ref().unwrap().macro_f1 <= best));
}

#[test]
fn empty_splits_are_rejected() {
    let (train, valid, config) = common::separable_splits();
    let empty = secaps::train::EncodedSplit {
        tokens: vec![],
        labels: vec![],
    };
    let p = ModelParams::init(&config).unwrap();
    assert!(train_encoded(&empty, &valid, p.clone(), &config, &TrainConfig::default()).is_err());
    assert!(train_encoded(&train, &empty, p, &config, &TrainConfig::default()).is_err());
}

proptest! {
    #[test]
    fn macro_f1_ignores_label_names(seed in 0u64..10_000, k in 2usize..8, n in 1usize..40) {
        let mut r = common::rng(seed);
        let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let a = evaluate_metrics(&pred, &gold, k).unwrap();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let pg: Vec<usize> = gold.iter().map(|&c| perm[c]).collect();
        let b = evaluate_metrics(&pp, &pg, k).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }
}
