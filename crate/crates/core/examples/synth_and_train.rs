//! Render a synthetic dataset, train a small two-stream model on it and
//! score the held-out split.
//!
//! `cargo run --release --example synth_and_train -- [out_dir]`

use std::path::PathBuf;

use biqa::data::{synth_dataset, Dataset, DEFAULT_SPLIT};
use biqa::model::{BackboneSpec, Model, ModelConfig};
use biqa::training::{evaluate, train_datasets, TrainConfig};

fn main() -> biqa::Result<()> {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.path().into());

    let synth = synth_dataset(&out.join("data"), 60, 5, 64, 7)?;
    let [train, val, test] = synth.manifest.normalize_scores().split(DEFAULT_SPLIT, 7)?;
    println!(
        "{} images: {} train, {} val, {} test",
        synth.manifest.len(),
        train.len(),
        val.len(),
        test.len()
    );

    let cfg = ModelConfig {
        input_size: (64, 64),
        stream_a: BackboneSpec::toy(&[(8, 1, true), (16, 1, true), (32, 1, true)]),
        stream_b: BackboneSpec::toy(&[(12, 1, true), (24, 1, true)]),
        head_widths: vec![64, 32, 16],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 15,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut model = Model::build(&cfg, 1)?;
    println!("{} trainable parameters", model.store().num_trainable());

    let train_set = Dataset::from_manifest(&train, &cfg)?;
    let val_set = Dataset::from_manifest(&val, &cfg)?;
    let (ck, history) = train_datasets(&mut model, &train_set, &val_set, &tc, |r| {
        println!(
            "epoch {:2}  train {:.4}  val {:.4}  val srocc {}  lr {:.1e}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_srocc.map_or("-".into(), |v| format!("{v:.3}")),
            r.lr
        );
    })?;
    println!("best epoch {}", history.best_epoch + 1);

    let eval = evaluate(&model, &Dataset::from_manifest(&test, &cfg)?)?;
    println!("\ntest split\n{}", eval.report);
    ck.save(&out.join("best.ckpt"))?;
    history.save(&out.join("history.csv"))?;
    Ok(())
}
