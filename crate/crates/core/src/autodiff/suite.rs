//! Finite-difference sweep over every differentiable tape operation and
//! both attention blocks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::finite_diff_check;
use super::{Mode, NormStats, PoolAxes, PoolKind, Tape, Var};
use crate::attention::{channel_attention, channel_hidden_width, spatial_attention};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SUITE_OPS: &[&str] = &[
    "relu",
    "sigmoid",
    "add",
    "add_broadcast",
    "mul",
    "mul_broadcast",
    "concat",
    "dense",
    "conv3x3",
    "avg_pool_spatial",
    "max_pool_spatial",
    "avg_pool_channel",
    "max_pool_channel",
    "global_avg_pool",
    "max_pool_2x2",
    "batchnorm_train",
    "batchnorm_eval",
    "dropout",
    "reshape",
    "flatten",
    "sum",
    "mean",
    "spatial_attention",
    "channel_attention",
];

pub const SUITE_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("sized")
}

/// Distinct values in (-1, 1) on a jittered grid: any two differ by at least
/// half the grid spacing and none lies within a quarter spacing of zero, so
/// central differences never step across a ReLU or max-pool kink.
fn spread_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let step = 2.0 / n as f64;
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    let data = slots
        .into_iter()
        .map(|k| -1.0 + (k as f64 + 0.5) * step + rng.random_range(-0.25..0.25) * step)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// Random arguments for `op`, plus any constant tensors its body needs.
/// Differentiated arguments and fixed constants of one trial.
type Trial = (Vec<Tensor<f64>>, Vec<Tensor<f64>>);

fn arguments(op: &str, rng: &mut ChaCha8Rng) -> Result<Trial> {
    let n = rng.random_range(2..4);
    let h = rng.random_range(2..6);
    let w = rng.random_range(2..6);
    let c = rng.random_range(1..5);
    let f = rng.random_range(2..6);
    let mut r = |s: &[usize]| rand_tensor(rng, s, -1.0, 1.0);
    let (mut args, consts) = match op {
        "relu" | "sigmoid" | "reshape" | "flatten" | "sum" | "mean" | "dropout" => {
            (vec![r(&[n, h, w, c])], vec![])
        }
        "add" | "mul" => (vec![r(&[n, f]), r(&[n, f])], vec![]),
        "add_broadcast" | "mul_broadcast" => (vec![r(&[n, h, w, c]), r(&[n, 1, 1, c])], vec![]),
        "concat" => (vec![r(&[n, h, w, c]), r(&[n, h, w, 2])], vec![]),
        "dense" => (vec![r(&[n, f]), r(&[f, c]), r(&[c])], vec![]),
        "conv3x3" => (vec![r(&[n, h, w, c]), r(&[3, 3, c, 2]), r(&[2])], vec![]),
        "avg_pool_spatial" | "max_pool_spatial" | "avg_pool_channel" | "max_pool_channel"
        | "global_avg_pool" => (vec![r(&[n, h, w, c])], vec![]),
        "max_pool_2x2" => (vec![r(&[n, 2 * h + 1, 2 * w, c])], vec![]),
        "batchnorm_train" => (vec![r(&[n + 1, f]), r(&[f]), r(&[f])], vec![]),
        "batchnorm_eval" => {
            let mean = r(&[f]);
            let var = rand_tensor(rng, &[f], 0.5, 2.0);
            let args = vec![
                rand_tensor(rng, &[n, f], -1.0, 1.0),
                rand_tensor(rng, &[f], -1.0, 1.0),
                rand_tensor(rng, &[f], -1.0, 1.0),
            ];
            (args, vec![mean, var])
        }
        "spatial_attention" => (vec![r(&[n, h, w, c]), r(&[3, 3, 2, 1]), r(&[1])], vec![]),
        "channel_attention" => {
            let c = c + 4;
            let k = channel_hidden_width(c);
            (
                vec![
                    r(&[n, h, w, c]),
                    r(&[2 * c, k]),
                    r(&[k]),
                    r(&[k, c]),
                    r(&[c]),
                ],
                vec![],
            )
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown gradient-suite op `{other}`"
            )))
        }
    };
    let shape = args[0].shape().to_vec();
    args[0] = spread_tensor(rng, &shape);
    Ok((args, consts))
}

fn apply(op: &str, t: &mut Tape<f64>, v: &[Var], consts: &[Tensor<f64>]) -> Result<Var> {
    match op {
        "relu" => Ok(t.relu(v[0])),
        "sigmoid" => Ok(t.sigmoid(v[0])),
        "add" | "add_broadcast" => t.add(v[0], v[1]),
        "mul" | "mul_broadcast" => t.mul(v[0], v[1]),
        "concat" => t.concat_last_axis(&[v[0], v[1]]),
        "dense" => t.dense(v[0], v[1], v[2]),
        "conv3x3" => t.conv2d_3x3(v[0], v[1], v[2]),
        "avg_pool_spatial" => t.pool(v[0], PoolKind::Avg, PoolAxes::Spatial),
        "max_pool_spatial" => t.pool(v[0], PoolKind::Max, PoolAxes::Spatial),
        "avg_pool_channel" => t.pool(v[0], PoolKind::Avg, PoolAxes::Channel),
        "max_pool_channel" => t.pool(v[0], PoolKind::Max, PoolAxes::Channel),
        "global_avg_pool" => t.global_avg_pool(v[0]),
        "max_pool_2x2" => t.max_pool_2x2(v[0]),
        "batchnorm_train" => Ok(t.batchnorm(v[0], v[1], v[2], NormStats::Batch, 1e-5)?.0),
        "batchnorm_eval" => {
            let stats = NormStats::Running {
                mean: &consts[0],
                var: &consts[1],
            };
            Ok(t.batchnorm(v[0], v[1], v[2], stats, 1e-5)?.0)
        }
        "dropout" => {
            // same mask on every evaluation
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            t.dropout(v[0], 0.4, Mode::Train, &mut rng)
        }
        "reshape" => {
            let n = t.shape(v[0])[0];
            let rest = t.value(v[0]).len() / n;
            t.reshape(v[0], &[rest, n])
        }
        "flatten" => t.flatten(v[0]),
        "sum" => Ok(t.sum(v[0])),
        "mean" => Ok(t.mean(v[0])),
        "spatial_attention" => spatial_attention(t, v[0], v[1], v[2]),
        "channel_attention" => channel_attention(t, v[0], v[1], v[2], v[3], v[4]),
        other => Err(Error::InvalidConfig(format!(
            "unknown gradient-suite op `{other}`"
        ))),
    }
}

/// Worst relative error of `op` over `trials` random draws, checking the
/// gradient with respect to every argument. Non-scalar outputs are reduced
/// with fixed random weights so every output element matters.
pub fn check_op(op: &'static str, trials: usize, seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (args, consts) = arguments(op, &mut rng)?;
        let out_shape = {
            let mut t = Tape::new();
            let vars: Vec<Var> = args.iter().map(|a| t.constant(a.clone())).collect();
            let out = apply(op, &mut t, &vars, &consts)?;
            t.shape(out).to_vec()
        };
        // magnitudes bounded away from zero keep every gradient element well
        // above central-difference round-off
        let mut weights = rand_tensor(&mut rng, &out_shape, 0.5, 1.5);
        for v in weights.data_mut() {
            if rng.random::<bool>() {
                *v = -*v;
            }
        }
        for i in 0..args.len() {
            let f = |t: &mut Tape<f64>, x: Var| -> Result<Var> {
                let vars: Vec<Var> = args
                    .iter()
                    .enumerate()
                    .map(|(j, a)| if j == i { x } else { t.constant(a.clone()) })
                    .collect();
                let out = apply(op, t, &vars, &consts)?;
                let w = t.constant(weights.clone());
                let p = t.mul(out, w)?;
                Ok(t.sum(p))
            };
            let e = finite_diff_check(f, &args[i], SUITE_EPS)?;
            worst = worst.max(e);
        }
    }
    Ok(OpCheck {
        name: op,
        trials,
        max_rel_error: worst,
    })
}

/// Run [`check_op`] for every name in `ops` (or all of [`SUITE_OPS`] when
/// `ops` is empty).
pub fn gradient_suite(ops: &[&str], trials: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let selected: Vec<&'static str> =
        if ops.is_empty() {
            SUITE_OPS.to_vec()
        } else {
            ops.iter()
                .map(|o| {
                    SUITE_OPS.iter().find(|s| *s == o).copied().ok_or_else(|| {
                        Error::InvalidConfig(format!("unknown gradient-suite op `{o}`"))
                    })
                })
                .collect::<Result<_>>()?
        };
    selected
        .into_iter()
        .enumerate()
        .map(|(k, op)| check_op(op, trials, seed.wrapping_add(k as u64)))
        .collect()
}
