//! Spatial and channel attention gates over `(N,H,W,C)` feature maps.
//!
//! Both blocks compute a sigmoid gate from pooled statistics of their input
//! and multiply it back onto the input:
//!
//! * spatial: channel-wise mean and max maps `(N,H,W,2)` -> 3x3 conv -> sigmoid
//!   -> one gate per pixel, shared by all channels;
//! * channel: spatial mean and max vectors `(N,2C)` -> dense + ReLU (width
//!   `max(1, 2C/8)`) -> dense + sigmoid -> one gate per channel, shared by all
//!   pixels.

use rand::Rng;

use crate::autodiff::{PoolAxes, PoolKind, Tape, Var};
use crate::error::{Error, Result};
use crate::init::{glorot_uniform, he_uniform};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Hidden width of the channel-attention bottleneck for `channels` inputs.
pub fn channel_hidden_width(channels: usize) -> usize {
    (2 * channels / 8).max(1)
}

/// Spatial attention from explicit tape variables.
///
/// `kernel` is `(3,3,2,1)` and `bias` is `(1)`.
pub fn spatial_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    kernel: Var,
    bias: Var,
) -> Result<Var> {
    if tape.value(x).rank() != 4 {
        return Err(Error::shape(format!(
            "spatial attention expects (N,H,W,C), got {:?}",
            tape.shape(x)
        )));
    }
    let avg = tape.pool(x, PoolKind::Avg, PoolAxes::Channel)?;
    let max = tape.pool(x, PoolKind::Max, PoolAxes::Channel)?;
    let cat = tape.concat_last_axis(&[avg, max])?;
    let logits = tape.conv2d_3x3(cat, kernel, bias)?;
    let gate = tape.sigmoid(logits);
    tape.mul(x, gate)
}

/// Channel attention from explicit tape variables.
///
/// Shapes: `w1 (2C,hidden)`, `b1 (hidden)`, `w2 (hidden,C)`, `b2 (C)`.
pub fn channel_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    let (n, _, _, c) = tape.value(x).dims4()?;
    if tape.shape(w2).get(1) != Some(&c) {
        return Err(Error::shape(format!(
            "channel attention: W_dense2 {:?} does not restore {c} channels",
            tape.shape(w2)
        )));
    }
    let avg = tape.pool(x, PoolKind::Avg, PoolAxes::Spatial)?;
    let max = tape.pool(x, PoolKind::Max, PoolAxes::Spatial)?;
    let cat = tape.concat_last_axis(&[avg, max])?;
    let flat = tape.reshape(cat, &[n, 2 * c])?;
    let h = tape.dense(flat, w1, b1)?;
    let h = tape.relu(h);
    let g = tape.dense(h, w2, b2)?;
    let g = tape.sigmoid(g);
    let gate = tape.reshape(g, &[n, 1, 1, c])?;
    tape.mul(x, gate)
}

/// Parameter handles of one spatial attention block.
#[derive(Clone, Copy, Debug)]
pub struct SpatialAttention {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl SpatialAttention {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        // sigmoid output: Glorot over the 3x3x2 -> 3x3x1 receptive field
        let kernel = store.insert(
            &format!("{prefix}.kernel"),
            glorot_uniform(&[3, 3, 2, 1], 18, 9, rng),
            true,
        )?;
        let bias = store.insert(&format!("{prefix}.bias"), Tensor::zeros(&[1]), true)?;
        Ok(Self { kernel, bias })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let k = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        spatial_attention(tape, x, k, b)
    }
}

/// Parameter handles of one channel attention block.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttention {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ChannelAttention {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = channel_hidden_width(channels);
        let w1 = store.insert(
            &format!("{prefix}.w1"),
            he_uniform(&[2 * channels, hidden], 2 * channels, rng),
            true,
        )?;
        let b1 = store.insert(&format!("{prefix}.b1"), Tensor::zeros(&[hidden]), true)?;
        let w2 = store.insert(
            &format!("{prefix}.w2"),
            glorot_uniform(&[hidden, channels], hidden, channels, rng),
            true,
        )?;
        let b2 = store.insert(&format!("{prefix}.b2"), Tensor::zeros(&[channels]), true)?;
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        channel_attention(tape, x, w1, b1, w2, b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_width_rule() {
        assert_eq!(channel_hidden_width(4), 1);
        assert_eq!(channel_hidden_width(1), 1);
        assert_eq!(channel_hidden_width(32), 8);
        assert_eq!(channel_hidden_width(48), 12);
    }

    #[test]
    fn channel_attention_shapes_at_c4() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(&[2, 1, 1, 4], 1.0));
        let w1 = t.constant(Tensor::zeros(&[8, 1]));
        let b1 = t.constant(Tensor::zeros(&[1]));
        let w2 = t.constant(Tensor::zeros(&[1, 4]));
        let b2 = t.constant(Tensor::zeros(&[4]));
        let y = channel_attention(&mut t, x, w1, b1, w2, b2).unwrap();
        assert_eq!(t.shape(y), &[2, 1, 1, 4]);
        assert!(t.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_pixel_spatial_gate_uses_center_tap() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[1, 1, 1, 3], &[1.0, 2.0, 6.0]).unwrap());
        let mut k = vec![0.0; 18];
        // center tap (1,1): avg weight 0.5, max weight -0.25; every other tap is junk
        for (i, v) in k.iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        k[8] = 0.5;
        k[9] = -0.25;
        let kv = t.constant(Tensor::from_f64(&[3, 3, 2, 1], &k).unwrap());
        let b = t.constant(Tensor::from_f64(&[1], &[0.3]).unwrap());
        let y = spatial_attention(&mut t, x, kv, b).unwrap();
        let gate = crate::autodiff::sigmoid(0.5 * 3.0 - 0.25 * 6.0 + 0.3);
        for (out, inp) in t.value(y).data().iter().zip([1.0, 2.0, 6.0]) {
            assert!((out - inp * gate).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_rank4() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros(&[2, 3]));
        let k = t.constant(Tensor::zeros(&[3, 3, 2, 1]));
        let b = t.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            spatial_attention(&mut t, x, k, b),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
