use super::*;
use crate::data::{Dataset, FeatureMeta};
use rand::Rng;

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        layers: vec![
            LayerSpec::new(5, Activation::Sigmoid).normalized(),
            LayerSpec::new(4, Activation::Sigmoid),
            LayerSpec::new(3, Activation::Softmax),
        ],
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        batch_size: 16,
        epochs: 5,
        loss: LossKind::CategoricalCrossEntropy,
        init_seed: seed,
    }
}

fn binary_config(seed: u64, epochs: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        layers: vec![
            LayerSpec::new(8, Activation::Relu),
            LayerSpec::new(1, Activation::Sigmoid),
        ],
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.02,
        batch_size: 32,
        epochs,
        loss: LossKind::BinaryCrossEntropy,
        init_seed: seed,
    }
}

fn blobs(n: usize, seed: u64) -> Dataset<f64> {
    let mut r = rng::stream(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let c = if label == 1 { 2.0 } else { -2.0 };
        x.push(c + r.random_range(-1.0..1.0));
        x.push(c + r.random_range(-1.0..1.0));
        y.push(label);
    }
    let meta = FeatureMeta::numbered(2);
    Dataset::new(Matrix::from_vec(n, 2, x).unwrap(), y, meta, 2).unwrap()
}

#[test]
fn preset_parameter_counts() {
    let expected = [210, 59_263, 1_421, 65_093, 111_514, 82_902];
    for (arch, want) in Architecture::ALL.into_iter().zip(expected) {
        let cfg = arch.config(0);
        assert_eq!(cfg.parameter_count(), want, "{}", arch.name());
        assert_eq!(Classifier::<f32>::new(cfg).unwrap().parameter_count(), want);
    }
}

#[test]
fn preset_names_round_trip() {
    for a in Architecture::ALL {
        assert_eq!(Architecture::from_name(a.name()), Some(a));
    }
    assert_eq!(Architecture::from_name("nope"), None);
}

#[test]
fn same_seed_same_parameters() {
    let a = Classifier::<f64>::new(small_config(7)).unwrap();
    let b = Classifier::<f64>::new(small_config(7)).unwrap();
    let c = Classifier::<f64>::new(small_config(8)).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert_ne!(a.parameters(), c.parameters());
}

#[test]
fn reset_restores_initial_parameters() {
    let d = blobs(200, 1);
    let mut m = Classifier::<f64>::new(binary_config(3, 3)).unwrap();
    let initial = m.parameters().to_vec();
    m.train(&d, &d).unwrap();
    assert_ne!(m.parameters(), &initial[..]);
    assert!(m.is_trained());
    m.reset();
    assert_eq!(m.parameters(), &initial[..]);
    assert!(!m.is_trained());
}

#[test]
fn zero_epochs_leaves_weights_unchanged() {
    let d = blobs(50, 1);
    let mut m = Classifier::<f64>::new(binary_config(3, 0)).unwrap();
    let before = m.parameters().to_vec();
    let log = m.train(&d, &d).unwrap();
    assert!(log.epochs.is_empty());
    assert_eq!(m.parameters(), &before[..]);
}

#[test]
fn training_is_deterministic() {
    let d = blobs(300, 2);
    let mut a = Classifier::<f64>::new(binary_config(5, 4)).unwrap();
    let mut b = Classifier::<f64>::new(binary_config(5, 4)).unwrap();
    let la = a.train(&d, &d).unwrap();
    let lb = b.train(&d, &d).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert_eq!(la, lb);
}

#[test]
fn separable_blobs_are_learned() {
    let train = blobs(1000, 3);
    let test = blobs(500, 4);
    let mut m = Classifier::<f64>::new(binary_config(11, 30)).unwrap();
    let log = m.train(&train, &train.select(&[])).unwrap();
    assert_eq!(log.epochs.len(), 30);
    assert!(log.epochs[0].val_loss.is_none());
    let (_, acc) = m.evaluate(&test).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn training_loss_decreases_on_convex_problem() {
    // a single sigmoid unit is logistic regression
    let cfg = ModelConfig {
        layers: vec![LayerSpec::new(1, Activation::Sigmoid)],
        epochs: 10,
        ..binary_config(2, 10)
    };
    let d = blobs(400, 5);
    let mut m = Classifier::<f64>::new(cfg).unwrap();
    let log = m.train(&d, &d).unwrap();
    for w in log.epochs.windows(2) {
        assert!(w[1].val_loss.unwrap() <= w[0].val_loss.unwrap() + 1e-12);
    }
}

#[test]
fn softmax_probabilities_sum_to_one() {
    let m = Classifier::<f64>::new(small_config(1)).unwrap();
    let mut r = rng::stream(9);
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-5.0..5.0)).collect();
        let p = m.predict_proba(&x).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn decision_ties() {
    let mut m = Classifier::<f64>::new(small_config(1)).unwrap();
    let zeros = vec![0.0; m.parameter_count()];
    m.set_parameters(&zeros).unwrap();
    assert_eq!(m.predict(&[1.0, 2.0, 3.0]).unwrap(), 0);

    let mut b = Classifier::<f64>::new(binary_config(1, 1)).unwrap();
    let zeros = vec![0.0; b.parameter_count()];
    b.set_parameters(&zeros).unwrap();
    assert_eq!(b.predict_proba(&[0.3, 0.4]).unwrap(), vec![0.5, 0.5]);
    assert_eq!(b.predict(&[0.3, 0.4]).unwrap(), 1);
}

#[test]
fn batch_and_single_predictions_agree() {
    let d = blobs(100, 6);
    let mut m = Classifier::<f64>::new(binary_config(4, 2)).unwrap();
    m.train(&d, &d).unwrap();
    let batch = m.predict_batch(d.features()).unwrap();
    let proba = m.predict_proba_batch(d.features()).unwrap();
    for i in 0..d.n_rows() {
        assert_eq!(batch[i], m.predict(d.row(i)).unwrap());
        let p = m.predict_proba(d.row(i)).unwrap();
        assert!((proba.get(i, 1) - p[1]).abs() < 1e-12);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let m = Classifier::<f64>::new(small_config(1)).unwrap();
    assert!(matches!(
        m.predict(&[1.0]),
        Err(ModelError::DimensionMismatch { expected: 3, found: 1 })
    ));
    assert!(matches!(
        m.input_gradient(&[1.0, 2.0, 3.0], 3),
        Err(ModelError::InvalidLabel { .. })
    ));
}

#[test]
fn invalid_architectures_are_rejected() {
    let mut c = small_config(0);
    c.layers[0].activation = Activation::Softmax;
    assert!(c.validate().is_err());
    let mut c = small_config(0);
    c.loss = LossKind::BinaryCrossEntropy;
    assert!(c.validate().is_err());
    let mut c = small_config(0);
    c.layers.last_mut().unwrap().batch_norm = true;
    assert!(c.validate().is_err());
    let mut c = small_config(0);
    c.batch_size = 0;
    assert!(c.validate().is_err());
    let mut c = small_config(0);
    c.layers.clear();
    assert!(Classifier::<f64>::new(c).is_err());
}

#[test]
fn non_finite_loss_rolls_back() {
    let d = blobs(64, 7).convert::<f32>();
    let mut cfg = binary_config(1, 5);
    cfg.learning_rate = 1e30;
    cfg.batch_size = 4;
    let mut m = Classifier::<f32>::new(cfg).unwrap();
    let err = m.train(&d, &d).unwrap_err();
    assert!(matches!(err, ModelError::NonFiniteLoss { .. }), "{err}");
    assert!(m.parameters().iter().all(|v| v.is_finite()));
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut m = Classifier::<f64>::new(small_config(3)).unwrap();
    let d = {
        let mut r = rng::stream(4);
        let x: Vec<f64> = (0..60).map(|_| r.random_range(-2.0..2.0)).collect();
        let y = (0..20).map(|i| i % 3).collect();
        Dataset::new(Matrix::from_vec(20, 3, x).unwrap(), y, FeatureMeta::numbered(3), 3).unwrap()
    };
    m.train(&d, &d).unwrap();
    for i in 0..d.n_rows() {
        let x = d.row(i);
        let label = d.labels()[i];
        let g = m.input_gradient(x, label).unwrap();
        let num = central_difference(
            |p| {
                let xm = Matrix::from_vec(1, 3, p.to_vec()).unwrap();
                m.loss(&xm, &[label], Mode::Eval).unwrap()
            },
            x,
            1e-5,
        );
        for (a, n) in g.iter().zip(&num) {
            assert!(rel_err(*a, *n) < 1e-5, "{a} vs {n}");
        }
    }
}

#[test]
fn parameter_gradient_matches_finite_differences_in_training_mode() {
    let m = Classifier::<f64>::new(small_config(5)).unwrap();
    let mut r = rng::stream(6);
    let x = Matrix::from_vec(6, 3, (0..18).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
    let labels = [0, 1, 2, 1, 0, 2];
    for mode in [Mode::Train, Mode::Eval] {
        let (_, g) = m.loss_and_gradient(&x, &labels, mode).unwrap();
        let base = m.parameters().to_vec();
        let num = central_difference(
            |p| {
                let mut mm = m.clone();
                mm.set_parameters(p).unwrap();
                mm.loss(&x, &labels, mode).unwrap()
            },
            &base,
            1e-5,
        );
        for (i, (a, n)) in g.iter().zip(&num).enumerate() {
            assert!(rel_err(*a, *n) < 1e-5, "{mode:?} param {i}: {a} vs {n}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let d = blobs(100, 8);
    let mut cfg = binary_config(9, 2);
    cfg.layers[0] = cfg.layers[0].normalized();
    let mut m = Classifier::<f64>::new(cfg).unwrap();
    m.train(&d, &d).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    assert!(buf.starts_with(CHECKPOINT_MAGIC));
    let back: Classifier<f64> = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, m);
    for i in 0..d.n_rows() {
        assert_eq!(
            back.predict_proba(d.row(i)).unwrap(),
            m.predict_proba(d.row(i)).unwrap()
        );
    }

    let mut corrupt = buf.clone();
    corrupt[0] = b'X';
    assert!(matches!(
        read_checkpoint::<f64, _>(&corrupt[..]),
        Err(ModelError::Checkpoint(_))
    ));
    let truncated = &buf[..buf.len() - 3];
    assert!(matches!(
        read_checkpoint::<f64, _>(truncated),
        Err(ModelError::Checkpoint(_))
    ));
}

#[test]
fn f32_model_trains() {
    let d = blobs(400, 10).convert::<f32>();
    let mut m = Classifier::<f32>::new(binary_config(2, 20)).unwrap();
    m.train(&d, &d).unwrap();
    assert!(m.evaluate(&d).unwrap().1 >= 0.95);
}
