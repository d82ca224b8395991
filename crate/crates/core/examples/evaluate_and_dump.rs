//! Score a manifest with a checkpoint and write per-image predictions.
//!
//! `cargo run --release --example evaluate_and_dump -- <checkpoint> <manifest> [predictions.csv]`
//!
//! Without arguments an untrained model is scored on a fresh synthetic set.

use std::path::PathBuf;

use biqa::data::{synth_dataset, Dataset, Manifest};
use biqa::model::{BackboneSpec, Checkpoint, Model, ModelConfig};
use biqa::training::evaluate;

fn main() -> biqa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir().expect("tempdir");
    let (model, manifest) = if args.len() >= 2 {
        (
            Checkpoint::load(args[0].as_ref())?.into_model()?,
            Manifest::load(args[1].as_ref())?,
        )
    } else {
        let synth = synth_dataset(tmp.path(), 8, 3, 16, 0)?;
        let cfg = ModelConfig {
            input_size: (16, 16),
            stream_a: BackboneSpec::toy(&[(4, 1, true)]),
            stream_b: BackboneSpec::toy(&[(4, 1, false)]),
            head_widths: vec![8, 8, 8],
            ..ModelConfig::default()
        };
        (Model::build(&cfg, 0)?, synth.manifest)
    };
    let data = Dataset::from_manifest(&manifest.normalize_scores(), model.config())?;
    let eval = evaluate(&model, &data)?;
    println!("{}", eval.report);
    let dump = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.path().join("predictions.csv"));
    std::fs::write(&dump, eval.predictions_csv(&data)).map_err(|e| biqa::Error::io(&dump, e))?;
    println!("\npredictions -> {}", dump.display());
    for line in eval.predictions_csv(&data).lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
