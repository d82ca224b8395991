mod common;

use biqa::attention::{
    channel_attention, channel_hidden_width, spatial_attention, ChannelAttention, SpatialAttention,
};
use biqa::autodiff::{finite_diff_check, Tape, SUITE_EPS};
use biqa::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..3, 1usize..6, 1usize..6, 1usize..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spatial_matches_loops((n, h, w, c) in dims(), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = common::uniform(&mut rng, n * h * w * c, -2.0, 2.0);
        let k = common::uniform(&mut rng, 18, -1.0, 1.0);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(vec![n, h, w, c], x.clone()).unwrap());
        let kv = t.constant(Tensor::new(vec![3, 3, 2, 1], k.clone()).unwrap());
        let bv = t.constant(Tensor::from_f64(&[1], &[0.2]).unwrap());
        let y = spatial_attention(&mut t, xv, kv, bv).unwrap();
        let want = common::spatial_attention_ref(&x, n, h, w, c, &k, 0.2);
        for (a, b) in t.value(y).data().iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn channel_matches_loops((n, h, w, c) in dims(), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let hid = channel_hidden_width(c);
        let x = common::uniform(&mut rng, n * h * w * c, -2.0, 2.0);
        let w1 = common::uniform(&mut rng, 2 * c * hid, -1.0, 1.0);
        let b1 = common::uniform(&mut rng, hid, -0.5, 0.5);
        let w2 = common::uniform(&mut rng, hid * c, -1.0, 1.0);
        let b2 = common::uniform(&mut rng, c, -0.5, 0.5);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(vec![n, h, w, c], x.clone()).unwrap());
        let w1v = t.constant(Tensor::new(vec![2 * c, hid], w1.clone()).unwrap());
        let b1v = t.constant(Tensor::new(vec![hid], b1.clone()).unwrap());
        let w2v = t.constant(Tensor::new(vec![hid, c], w2.clone()).unwrap());
        let b2v = t.constant(Tensor::new(vec![c], b2.clone()).unwrap());
        let y = channel_attention(&mut t, xv, w1v, b1v, w2v, b2v).unwrap();
        let want = common::channel_attention_ref(&x, n, h, w, c, &w1, &b1, &w2, &b2);
        for (a, b) in t.value(y).data().iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gates_never_amplify((n, h, w, c) in dims(), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let sa = SpatialAttention::register(&mut store, "s", &mut rng).unwrap();
        let ca = ChannelAttention::register(&mut store, "c", c, &mut rng).unwrap();
        let x = common::uniform(&mut rng, n * h * w * c, -3.0, 3.0);
        let mut t = Tape::new();
        let xv = t.constant(Tensor::new(vec![n, h, w, c], x.clone()).unwrap());
        let s = sa.forward(&mut t, &store, xv).unwrap();
        let y = ca.forward(&mut t, &store, s).unwrap();
        for (o, i) in t.value(y).data().iter().zip(&x) {
            prop_assert!(o.abs() <= i.abs());
            prop_assert!(o * i >= 0.0);
        }
    }
}

#[test]
fn hidden_width_is_quarter_of_pooled_width() {
    for (c, h) in [
        (1, 1),
        (3, 1),
        (4, 1),
        (8, 2),
        (12, 3),
        (2048, 512),
        (2560, 640),
    ] {
        assert_eq!(channel_hidden_width(c), h, "C={c}");
    }
}

#[test]
fn zero_parameters_halve_the_input() {
    let x = Tensor::from_f64(
        &[1, 2, 2, 3],
        &[
            1.0, -2.0, 3.0, 0.5, 4.0, -6.0, 7.0, 8.0, 9.0, -1.0, 0.0, 2.5,
        ],
    )
    .unwrap();
    let mut t = Tape::<f64>::new();
    let xv = t.constant(x.clone());
    let k = t.constant(Tensor::zeros(&[3, 3, 2, 1]));
    let b = t.constant(Tensor::zeros(&[1]));
    let s = spatial_attention(&mut t, xv, k, b).unwrap();
    let w1 = t.constant(Tensor::zeros(&[6, 1]));
    let b1 = t.constant(Tensor::zeros(&[1]));
    let w2 = t.constant(Tensor::zeros(&[1, 3]));
    let b2 = t.constant(Tensor::zeros(&[3]));
    let c = channel_attention(&mut t, s, w1, b1, w2, b2).unwrap();
    let want: Vec<f64> = x.data().iter().map(|v| 0.25 * v).collect();
    assert_eq!(t.value(c).data(), &want[..]);
}

#[test]
fn gradients_through_both_blocks() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::new(vec![2, 3, 4, 5], common::uniform(&mut rng, 120, -1.0, 1.0)).unwrap();
    let mut store = ParamStore::<f64>::new();
    let sa = SpatialAttention::register(&mut store, "s", &mut rng).unwrap();
    let ca = ChannelAttention::register(&mut store, "c", 5, &mut rng).unwrap();
    let err = finite_diff_check(
        |t, v| {
            let s = sa.forward(t, &store, v)?;
            let y = ca.forward(t, &store, s)?;
            let y = t.mul(y, y)?;
            Ok(t.sum(y))
        },
        &x,
        SUITE_EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn channel_block_rejects_wrong_output_width() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 2, 4]));
    let w1 = t.constant(Tensor::zeros(&[8, 1]));
    let b1 = t.constant(Tensor::zeros(&[1]));
    let w2 = t.constant(Tensor::zeros(&[1, 3]));
    let b2 = t.constant(Tensor::zeros(&[3]));
    assert!(channel_attention(&mut t, x, w1, b1, w2, b2).is_err());
}
