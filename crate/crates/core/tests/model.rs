use std::collections::BTreeSet;

use biqa::autodiff::{Mode, Tape};
use biqa::model::{Ablation, BackboneSpec, Checkpoint, Model, ModelConfig, ModelInput, TrainMeta};
use biqa::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        input_size: (8, 8),
        stream_a: BackboneSpec::toy(&[(4, 1, true), (6, 1, false)]),
        stream_b: BackboneSpec::toy(&[(3, 2, true)]),
        head_widths: vec![10, 6, 4],
        ..ModelConfig::default()
    }
}

fn images(n: usize, seed: u64) -> ModelInput<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 8 * 8 * 3).map(|_| rng.random::<f32>()).collect();
    ModelInput::images(Tensor::new(vec![n, 8, 8, 3], data).unwrap())
}

#[test]
fn prediction_shape_and_parameter_names() {
    let m = Model::<f32>::build(&small(), 0).unwrap();
    assert_eq!(m.predict(&images(5, 1)).unwrap().shape(), &[5, 1]);
    let names: Vec<&str> = m.store().names().collect();
    for n in [
        "a.s0.c0.kernel",
        "a.s1.c0.bias",
        "b.s0.c1.kernel",
        "a.spatial.kernel",
        "b.channel.w2",
        "head.2.bn.running_var",
        "head.out.w",
    ] {
        assert!(names.contains(&n), "{n}");
    }
    assert_eq!(
        m.conv_layer_names(),
        vec!["a.s0.c0", "a.s1.c0", "b.s0.c0", "b.s0.c1"]
    );
    assert_eq!(m.config().fused_width(), 6 + 3);
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::<f32>::build(&small(), 4).unwrap();
    let b = Model::<f32>::build(&small(), 4).unwrap();
    let c = Model::<f32>::build(&small(), 5).unwrap();
    assert!(a.store().values_equal(b.store()));
    assert!(!a.store().values_equal(c.store()));
}

#[test]
fn wrong_input_size_is_rejected() {
    let m = Model::<f32>::build(&small(), 0).unwrap();
    let bad = ModelInput::images(Tensor::zeros(&[2, 9, 8, 3]));
    assert!(matches!(m.predict(&bad), Err(Error::ShapeMismatch(_))));
}

#[test]
fn zero_attention_quarters_the_pooled_features() {
    let mut m = Model::<f64>::build(&small(), 2).unwrap();
    let names: Vec<String> = m
        .store()
        .names()
        .filter(|n| n.contains("spatial") || n.contains("channel"))
        .map(String::from)
        .collect();
    for n in names {
        m.store_mut()
            .get_mut(&n)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let plain_cfg = small()
        .ablate(&BTreeSet::from([Ablation::NoSpatial, Ablation::NoChannel]))
        .unwrap();
    let plain = Model::<f64>::build(&plain_cfg, 2).unwrap();
    let input = images(3, 9);
    let input = ModelInput::images(input.images.unwrap().cast::<f64>());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = Tape::new();
    let with = m.forward(&mut t, &input, Mode::Eval, &mut rng).unwrap();
    let without = plain.forward(&mut t, &input, Mode::Eval, &mut rng).unwrap();
    for ((_, a), (_, b)) in with.stream_features.iter().zip(&without.stream_features) {
        for (x, y) in t.value(*a).data().iter().zip(t.value(*b).data()) {
            assert!((x - 0.25 * y).abs() < 1e-15);
        }
    }
}

#[test]
fn ablations_change_the_layout() {
    let base = small();
    let no_a = Model::<f32>::build(
        &base.ablate(&BTreeSet::from([Ablation::NoStreamA])).unwrap(),
        0,
    )
    .unwrap();
    assert!(no_a.store().names().all(|n| !n.starts_with("a.")));
    assert_eq!(no_a.predict(&images(2, 0)).unwrap().shape(), &[2, 1]);
    let no_att = Model::<f32>::build(
        &base
            .ablate(&BTreeSet::from([Ablation::NoSpatial, Ablation::NoChannel]))
            .unwrap(),
        0,
    )
    .unwrap();
    assert!(no_att
        .store()
        .names()
        .all(|n| !n.contains("spatial") && !n.contains("channel")));
    assert!(base
        .ablate(&BTreeSet::from([Ablation::NoStreamA, Ablation::NoStreamB]))
        .is_err());
}

#[test]
fn dropout_only_acts_in_train_mode() {
    let m = Model::<f32>::build(&small(), 0).unwrap();
    let input = images(4, 3);
    let mut t = Tape::new();
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    let e1 = m
        .forward(&mut t, &input, Mode::Eval, &mut r1)
        .unwrap()
        .prediction;
    let e2 = m
        .forward(&mut t, &input, Mode::Eval, &mut r2)
        .unwrap()
        .prediction;
    assert_eq!(t.value(e1).data(), t.value(e2).data());
    let t1 = m
        .forward(&mut t, &input, Mode::Train, &mut r1)
        .unwrap()
        .prediction;
    let t2 = m
        .forward(&mut t, &input, Mode::Train, &mut r2)
        .unwrap()
        .prediction;
    assert_ne!(t.value(t1).data(), t.value(t2).data());
}

#[test]
fn feature_file_backbone() {
    let cfg = ModelConfig {
        stream_a: BackboneSpec::FeatureFile {
            width: 7,
            dir: "fa".into(),
        },
        stream_b: BackboneSpec::FeatureFile {
            width: 5,
            dir: "fb".into(),
        },
        head_widths: vec![8, 8, 8],
        ..ModelConfig::default()
    };
    assert!(!cfg.needs_images());
    let m = Model::<f32>::build(&cfg, 0).unwrap();
    assert!(m.conv_layer_names().is_empty());
    let input = ModelInput {
        images: None,
        features_a: Some(Tensor::full(&[3, 7], 0.5)),
        features_b: Some(Tensor::full(&[3, 5], -0.5)),
    };
    assert_eq!(m.predict(&input).unwrap().shape(), &[3, 1]);
}

#[test]
fn config_text_roundtrip() {
    let cfg = small();
    assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert!(matches!(
        ModelConfig::from_text("colour=blue"),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(ModelConfig::from_text("head_widths=4,4\nhead_dropout=0.1").is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let m = Model::<f32>::build(&small(), 3).unwrap();
    let meta = TrainMeta {
        epoch: 4,
        best_val_loss: 0.125,
        seed: 77,
    };
    let bytes = Checkpoint::from_model(&m, meta).to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.meta, meta);
    assert_eq!(ck.to_bytes(), bytes);
    let back = ck.into_model().unwrap();
    let input = images(4, 5);
    let bits = |t: Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(
        bits(m.predict(&input).unwrap()),
        bits(back.predict(&input).unwrap())
    );
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = Model::<f32>::build(&small(), 3).unwrap();
    let bytes = Checkpoint::from_model(&m, TrainMeta::default()).to_bytes();
    let corrupt = |b: &[u8]| matches!(Checkpoint::from_bytes(b), Err(Error::CorruptCheckpoint(_)));
    assert!(corrupt(&bytes[..bytes.len() - 3]));
    assert!(corrupt(&[bytes.as_slice(), &[0]].concat()));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(corrupt(&magic));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(corrupt(&version));
    assert!(corrupt(b""));
}

#[test]
fn checkpoint_for_another_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Model::<f32>::build(&small(), 0)
        .unwrap()
        .save_checkpoint(&path)
        .unwrap();
    let mut other = small();
    other.head_widths = vec![12, 6, 4];
    let err = Checkpoint::load_model_for(&path, &other).unwrap_err();
    assert!(matches!(err, Error::CorruptCheckpoint(ref m) if m.contains("config mismatch")));
    assert!(Checkpoint::load_model_for(&path, &small()).is_ok());
    let wrong = Model::<f32>::build(&other, 0).unwrap();
    assert!(Model::<f32>::from_store(&small(), wrong.store().clone()).is_err());
}
