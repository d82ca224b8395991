//! The two-stream attention network.
//!
//! ```text
//! image ─┬─ backbone A ─ GAP ─ spatial attn ─ channel attn ─ flatten ─┐
//!        └─ backbone B ─ GAP ─ spatial attn ─ channel attn ─ flatten ─┴─ concat
//!   ─ [dense+ReLU ─ batch norm ─ dropout] x len(head_widths) ─ dense (linear)
//! ```
//!
//! After global average pooling each stream is a `(N,1,1,C)` tensor, so the
//! spatial gate is a single value per sample.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablation, BackboneSpec, ModelConfig, StageSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{ChannelAttention, SpatialAttention};
use crate::autodiff::{BatchStats, Mode, NormStats, Tape, Var};
use crate::error::{Error, Result};
use crate::init::{glorot_uniform, he_uniform};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Inputs for one forward pass. Toy-CNN streams read `images` `(N,H,W,3)`;
/// feature-file streams read their `(N,F)` feature matrix.
#[derive(Clone, Debug, Default)]
pub struct ModelInput<T> {
    pub images: Option<Tensor<T>>,
    pub features_a: Option<Tensor<T>>,
    pub features_b: Option<Tensor<T>>,
}

impl<T: Real> ModelInput<T> {
    pub fn images(images: Tensor<T>) -> Self {
        Self {
            images: Some(images),
            ..Self::default()
        }
    }

    pub fn batch_len(&self) -> Option<usize> {
        [&self.images, &self.features_a, &self.features_b]
            .into_iter()
            .flatten()
            .map(|t| t.shape()[0])
            .next()
    }
}

pub struct ForwardOutput<T> {
    /// `(N, num_outputs)`.
    pub prediction: Var,
    /// Post-ReLU conv activations of the toy backbones, by layer name
    /// (`a.s0.c0`, `a.s0.c1`, ...).
    pub activations: Vec<(String, Var)>,
    /// Flattened per-stream features just before fusion, by stream tag.
    pub stream_features: Vec<(String, Var)>,
    bn_stats: Vec<(ParamId, ParamId, BatchStats<T>)>,
    fused: Var,
}

impl<T> ForwardOutput<T> {
    pub fn activation(&self, name: &str) -> Option<Var> {
        self.activations
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug)]
enum Backbone {
    Toy {
        /// Per stage: the (kernel, bias) of each conv, and whether to pool after.
        stages: Vec<(Vec<(ParamId, ParamId)>, bool)>,
    },
    Features {
        width: usize,
    },
}

#[derive(Clone, Debug)]
struct Stream {
    tag: &'static str,
    backbone: Backbone,
    spatial: Option<SpatialAttention>,
    channel: Option<ChannelAttention>,
}

#[derive(Clone, Debug)]
struct HeadLayer {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    dropout: f64,
}

#[derive(Clone, Debug)]
struct Layout {
    streams: Vec<Stream>,
    head: Vec<HeadLayer>,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    store: ParamStore<T>,
    layout: Layout,
}

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<T: Real> Model<T> {
    /// Build the network described by `config` with parameters drawn from
    /// `seed`. Each stream and the head draw from their own RNG stream, so
    /// disabling one stream leaves the other's initial weights unchanged.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut streams = Vec::new();
        for (tag, enabled, spec, rng_stream) in [
            ("a", config.enable_stream_a, &config.stream_a, 1),
            ("b", config.enable_stream_b, &config.stream_b, 2),
        ] {
            if !enabled {
                continue;
            }
            let mut rng = component_rng(seed, rng_stream);
            let backbone = match spec {
                BackboneSpec::ToyCnn { stages } => {
                    let mut cin = 3;
                    let mut out = Vec::with_capacity(stages.len());
                    for (si, st) in stages.iter().enumerate() {
                        let mut convs = Vec::with_capacity(st.convs);
                        for ci in 0..st.convs {
                            let name = format!("{tag}.s{si}.c{ci}");
                            let k = store.insert(
                                &format!("{name}.kernel"),
                                he_uniform(&[3, 3, cin, st.out_channels], 9 * cin, &mut rng),
                                true,
                            )?;
                            let b = store.insert(
                                &format!("{name}.bias"),
                                Tensor::zeros(&[st.out_channels]),
                                true,
                            )?;
                            convs.push((k, b));
                            cin = st.out_channels;
                        }
                        out.push((convs, st.downsample));
                    }
                    Backbone::Toy { stages: out }
                }
                BackboneSpec::FeatureFile { width, .. } => Backbone::Features { width: *width },
            };
            let channels = spec.out_channels();
            let spatial = if config.enable_spatial_attention {
                Some(SpatialAttention::register(
                    &mut store,
                    &format!("{tag}.spatial"),
                    &mut rng,
                )?)
            } else {
                None
            };
            let channel = if config.enable_channel_attention {
                Some(ChannelAttention::register(
                    &mut store,
                    &format!("{tag}.channel"),
                    channels,
                    &mut rng,
                )?)
            } else {
                None
            };
            streams.push(Stream {
                tag,
                backbone,
                spatial,
                channel,
            });
        }

        let mut rng = component_rng(seed, 3);
        let mut fin = config.fused_width();
        let mut head = Vec::with_capacity(config.head_widths.len());
        for (i, (&width, &dropout)) in config
            .head_widths
            .iter()
            .zip(&config.head_dropout)
            .enumerate()
        {
            let p = format!("head.{i}");
            head.push(HeadLayer {
                w: store.insert(
                    &format!("{p}.w"),
                    he_uniform(&[fin, width], fin, &mut rng),
                    true,
                )?,
                b: store.insert(&format!("{p}.b"), Tensor::zeros(&[width]), true)?,
                gamma: store.insert(
                    &format!("{p}.bn.gamma"),
                    Tensor::full(&[width], T::one()),
                    true,
                )?,
                beta: store.insert(&format!("{p}.bn.beta"), Tensor::zeros(&[width]), true)?,
                running_mean: store.insert(
                    &format!("{p}.bn.running_mean"),
                    Tensor::zeros(&[width]),
                    false,
                )?,
                running_var: store.insert(
                    &format!("{p}.bn.running_var"),
                    Tensor::full(&[width], T::one()),
                    false,
                )?,
                dropout,
            });
            fin = width;
        }
        let out_w = store.insert(
            "head.out.w",
            glorot_uniform(
                &[fin, config.num_outputs],
                fin,
                config.num_outputs,
                &mut rng,
            ),
            true,
        )?;
        let out_b = store.insert("head.out.b", Tensor::zeros(&[config.num_outputs]), true)?;

        Ok(Self {
            config: config.clone(),
            store,
            layout: Layout {
                streams,
                head,
                out_w,
                out_b,
            },
        })
    }

    /// Rebuild a model around existing parameter values. Names and shapes must
    /// match what `config` would build, in order.
    pub fn from_store(config: &ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let mut model = Self::build(config, 0)?;
        if model.store.len() != store.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "config mismatch: config expects {} parameters, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for (want, got) in model.store.iter().zip(store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "config mismatch: expected `{}` {:?}, found `{}` {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        for (dst, src) in model.store.iter_mut().zip(store.iter()) {
            dst.value = src.value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Names of every recorded conv activation, in forward order.
    pub fn conv_layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for s in &self.layout.streams {
            if let Backbone::Toy { stages } = &s.backbone {
                for (si, (convs, _)) in stages.iter().enumerate() {
                    for ci in 0..convs.len() {
                        names.push(format!("{}.s{si}.c{ci}", s.tag));
                    }
                }
            }
        }
        names
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>> {
        self.forward_with(&self.store, tape, input, mode, rng)
    }

    /// Forward pass reading parameters from `store`, which must have this
    /// model's layout (e.g. a perturbed copy of [`Model::store`]).
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>> {
        if !store.names().eq(self.store.names()) {
            return Err(Error::shape(
                "forward_with: store layout differs from the model",
            ));
        }
        let cfg = &self.config;
        let mut activations = Vec::new();
        let mut stream_features = Vec::new();
        let mut image_var = None;

        for s in &self.layout.streams {
            let mut x = match &s.backbone {
                Backbone::Toy { stages } => {
                    let x = match image_var {
                        Some(v) => v,
                        None => {
                            let img = input.images.as_ref().ok_or_else(|| {
                                Error::shape(format!("stream {} needs images", s.tag))
                            })?;
                            let (_, h, w, c) = img.dims4()?;
                            if (h, w) != cfg.input_size || c != 3 {
                                return Err(Error::shape(format!(
                                    "images are {h}x{w}x{c}, model expects {}x{}x3",
                                    cfg.input_size.0, cfg.input_size.1
                                )));
                            }
                            let v = tape.constant(img.clone());
                            image_var = Some(v);
                            v
                        }
                    };
                    let mut x = x;
                    for (si, (convs, down)) in stages.iter().enumerate() {
                        for (ci, &(k, b)) in convs.iter().enumerate() {
                            let kv = tape.param(store, k);
                            let bv = tape.param(store, b);
                            x = tape.conv2d_3x3(x, kv, bv)?;
                            x = tape.relu(x);
                            activations.push((format!("{}.s{si}.c{ci}", s.tag), x));
                        }
                        if *down {
                            x = tape.max_pool_2x2(x)?;
                        }
                    }
                    x
                }
                Backbone::Features { width } => {
                    let feats = match s.tag {
                        "a" => input.features_a.as_ref(),
                        _ => input.features_b.as_ref(),
                    }
                    .ok_or_else(|| {
                        Error::shape(format!("stream {} needs feature vectors", s.tag))
                    })?;
                    let (n, f) = feats.dims2()?;
                    if f != *width {
                        return Err(Error::shape(format!(
                            "stream {} features have width {f}, expected {width}",
                            s.tag
                        )));
                    }
                    let v = tape.constant(feats.clone());
                    tape.reshape(v, &[n, 1, 1, f])?
                }
            };
            // GAP already yields (N,1,1,C), the shape the attention blocks take.
            x = tape.global_avg_pool(x)?;
            if let Some(sa) = &s.spatial {
                x = sa.forward(tape, store, x)?;
            }
            if let Some(ca) = &s.channel {
                x = ca.forward(tape, store, x)?;
            }
            let flat = tape.flatten(x)?;
            stream_features.push((s.tag.to_string(), flat));
        }

        let parts: Vec<Var> = stream_features.iter().map(|(_, v)| *v).collect();
        let mut x = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_last_axis(&parts)?
        };
        let fused = x;

        let mut bn_stats = Vec::new();
        for layer in &self.layout.head {
            let w = tape.param(store, layer.w);
            let b = tape.param(store, layer.b);
            x = tape.dense(x, w, b)?;
            x = tape.relu(x);
            let gamma = tape.param(store, layer.gamma);
            let beta = tape.param(store, layer.beta);
            let stats = match mode {
                Mode::Train => NormStats::Batch,
                Mode::Eval => NormStats::Running {
                    mean: store.value(layer.running_mean),
                    var: store.value(layer.running_var),
                },
            };
            let (y, batch) = tape.batchnorm(x, gamma, beta, stats, BN_EPS)?;
            if let Some(batch) = batch {
                bn_stats.push((layer.running_mean, layer.running_var, batch));
            }
            x = tape.dropout(y, layer.dropout, mode, rng)?;
        }
        let w = tape.param(store, self.layout.out_w);
        let b = tape.param(store, self.layout.out_b);
        let prediction = tape.dense(x, w, b)?;

        Ok(ForwardOutput {
            prediction,
            activations,
            stream_features,
            bn_stats,
            fused,
        })
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// statistics: `running = m * running + (1 - m) * batch`.
    pub fn commit_bn_stats(&mut self, out: &ForwardOutput<T>) {
        let m = T::of(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (mean_id, var_id, batch) in &out.bn_stats {
            for (r, &b) in self
                .store
                .entry_mut(*mean_id)
                .value
                .data_mut()
                .iter_mut()
                .zip(&batch.mean)
            {
                *r = m * *r + one_m * b;
            }
            for (r, &b) in self
                .store
                .entry_mut(*var_id)
                .value
                .data_mut()
                .iter_mut()
                .zip(&batch.var)
            {
                *r = m * *r + one_m * b;
            }
        }
    }

    /// Replace the head's running statistics with population statistics of
    /// `inputs`, computed layer by layer the way eval mode sees them (no
    /// dropout, earlier layers already normalized).
    pub fn recalibrate_bn(&mut self, inputs: &[ModelInput<T>]) -> Result<()> {
        let mut rows = 0;
        let mut data = Vec::new();
        let mut width = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for input in inputs {
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, input, Mode::Eval, &mut rng)?;
            let v = tape.value(out.fused);
            let (n, f) = v.dims2()?;
            rows += n;
            width = f;
            data.extend_from_slice(v.data());
        }
        if rows < 2 {
            return Err(Error::BatchTooSmall(rows));
        }
        let mut tape = Tape::new();
        let mut x = tape.constant(Tensor::new(vec![rows, width], data)?);
        let head = self.layout.head.clone();
        for layer in &head {
            let w = tape.param(&self.store, layer.w);
            let b = tape.param(&self.store, layer.b);
            x = tape.dense(x, w, b)?;
            x = tape.relu(x);
            let gamma = tape.param(&self.store, layer.gamma);
            let beta = tape.param(&self.store, layer.beta);
            let (y, batch) = tape.batchnorm(x, gamma, beta, NormStats::Batch, BN_EPS)?;
            let batch = batch.expect("batch statistics");
            self.store
                .entry_mut(layer.running_mean)
                .value
                .data_mut()
                .copy_from_slice(&batch.mean);
            self.store
                .entry_mut(layer.running_var)
                .value
                .data_mut()
                .copy_from_slice(&batch.var);
            x = y;
        }
        Ok(())
    }

    /// Eval-mode predictions, `(N, num_outputs)`.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        // eval mode draws no random numbers
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, input, Mode::Eval, &mut rng)?;
        Ok(tape.value(out.prediction).clone())
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }
}
