use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::{adam_step, EarlyStopper, PlateauScheduler, StopSignal};
use crate::autodiff::{Mode, Tape};
use crate::data::{Dataset, Manifest};
use crate::error::{Error, Result};
use crate::metrics::{combined_loss, mae, plcc, srocc, LossConfig, MetricsReport};
use crate::model::{Checkpoint, Model, TrainMeta};
use crate::tensor::Tensor;

/// Batch size used for evaluation passes. Eval mode has no batch
/// dependence, so this only bounds memory.
pub const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_plcc: Option<f64>,
    pub val_srocc: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the restored epoch.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_plcc,val_srocc,lr";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| v.to_string());
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                opt(r.val_plcc),
                opt(r.val_srocc),
                r.lr
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.get(self.best_epoch)
    }
}

/// Loss and gradient for one batch. A batch whose targets are all equal has
/// no defined correlation, so it falls back to the MAE term alone.
pub fn batch_loss(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    match combined_loss(y, yhat, cfg) {
        Err(Error::DegenerateInput(_)) => {
            let grad = y
                .iter()
                .zip(yhat)
                .map(|(&a, &b)| cfg.lambda1 * (b - a).signum() * f64::from(b != a) / y.len() as f64)
                .collect();
            Ok((cfg.lambda1 * mae(y, yhat)?, grad))
        }
        other => other,
    }
}

/// Eval-mode predictions (first output) for every sample, in order.
pub fn predict_dataset(model: &Model<f32>, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let pred = model.predict(&data.batch(chunk))?;
        let k = model.config().num_outputs;
        out.extend(pred.data().chunks(k).map(|row| row[0] as f64));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub truth: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl Evaluation {
    /// `path,truth,prediction` rows.
    pub fn predictions_csv(&self, data: &Dataset) -> String {
        let mut s = String::from("path,truth,prediction\n");
        for ((p, t), y) in data.paths.iter().zip(&self.truth).zip(&self.predictions) {
            let _ = writeln!(s, "{},{t},{y}", p.display());
        }
        s
    }
}

pub fn evaluate(model: &Model<f32>, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptySplit("evaluation set is empty".into()));
    }
    let predictions = predict_dataset(model, data)?;
    Ok(Evaluation {
        report: MetricsReport::compute(&data.scores, &predictions)?,
        truth: data.scores.clone(),
        predictions,
    })
}

/// Load both manifests for `model`'s inputs and train.
pub fn train(
    model: &mut Model<f32>,
    train_manifest: &Manifest,
    val_manifest: &Manifest,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    let train_set = Dataset::from_manifest(train_manifest, model.config())?;
    let val_set = Dataset::from_manifest(val_manifest, model.config())?;
    train_datasets(model, &train_set, &val_set, cfg, |_| {})
}

/// The epoch loop. `on_epoch` sees each record as it is produced. On return
/// `model` holds the parameters of the best validation epoch.
pub fn train_datasets(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    if model.config().num_outputs != 1 {
        return Err(Error::InvalidConfig(
            "training targets are scalar scores, so num_outputs must be 1".into(),
        ));
    }
    if train_set.len() < cfg.batch_size {
        return Err(Error::EmptySplit(format!(
            "training split has {} samples, fewer than one batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    if val_set.len() < 2 {
        return Err(Error::EmptySplit(format!(
            "validation split needs at least 2 samples, has {}",
            val_set.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sched = PlateauScheduler::new(
        cfg.initial_lr,
        cfg.min_lr,
        cfg.plateau_factor,
        cfg.plateau_patience,
    );
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model<f32>)> = None;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks_exact(cfg.batch_size) {
            let input = train_set.batch(idx);
            let y = train_set.batch_scores(idx);
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &input, Mode::Train, &mut rng)?;
            let yhat: Vec<f64> = tape
                .value(out.prediction)
                .data()
                .iter()
                .map(|&v| v as f64)
                .collect();
            let (loss, grad) = batch_loss(&y, &yhat, &cfg.loss)?;
            let grad = Tensor::new(vec![idx.len(), 1], grad.iter().map(|&g| g as f32).collect())?;
            let l = tape.custom_scalar(out.prediction, loss as f32, grad)?;
            tape.backward(l)?;
            model.store_mut().zero_grads();
            tape.accumulate_param_grads(model.store_mut());
            model.commit_bn_stats(&out);
            step += 1;
            adam_step(model.store_mut(), lr, step)?;
            loss_sum += loss;
            batches += 1;
        }

        if cfg.recalibrate_bn {
            let all: Vec<usize> = (0..train_set.len()).collect();
            let chunks: Vec<_> = all.chunks(EVAL_BATCH).map(|c| train_set.batch(c)).collect();
            model.recalibrate_bn(&chunks)?;
        }
        let preds = predict_dataset(model, val_set)?;
        let (val_loss, _) = batch_loss(&val_set.scores, &preds, &cfg.loss)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_plcc: plcc(&val_set.scores, &preds).ok(),
            val_srocc: srocc(&val_set.scores, &preds).ok(),
            lr,
        };
        on_epoch(&record);
        history.records.push(record);

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            history.best_epoch = epoch - 1;
        }
        sched.step(val_loss);
        if stopper.step(val_loss) == StopSignal::Stop {
            break;
        }
    }

    let (best_loss, best_model) = best.expect("at least one epoch ran");
    *model = best_model;
    let ck = Checkpoint::from_model(
        model,
        TrainMeta {
            epoch: history.best_epoch + 1,
            best_val_loss: best_loss,
            seed: cfg.seed,
        },
    );
    Ok((ck, history))
}
