//! Train on precomputed per-image feature vectors instead of pixels.
//! The features here are simple image statistics written next to each
//! synthetic image.

use std::path::Path;

use biqa::data::{
    decode_image, feature_path, save_features, synth_dataset, Dataset, Image, DEFAULT_SPLIT,
};
use biqa::model::{BackboneSpec, Model, ModelConfig};
use biqa::training::{evaluate, train_datasets, TrainConfig};

/// Mean, spread and mean absolute horizontal/vertical gradient per channel.
fn stats(img: &Image) -> Vec<f32> {
    let (h, w) = (img.height, img.width);
    let mut f = Vec::new();
    for c in 0..3 {
        let v = |y: usize, x: usize| img.data[(y * w + x) * 3 + c];
        let n = (h * w) as f32;
        let mean = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| v(y, x))
            .sum::<f32>()
            / n;
        let var = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| (v(y, x) - mean).powi(2))
            .sum::<f32>()
            / n;
        let dx = (0..h)
            .flat_map(|y| (1..w).map(move |x| (y, x)))
            .map(|(y, x)| (v(y, x) - v(y, x - 1)).abs())
            .sum::<f32>();
        let dy = (1..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| (v(y, x) - v(y - 1, x)).abs())
            .sum::<f32>();
        f.extend([mean, var.sqrt(), dx / n, dy / n]);
    }
    f
}

fn main() -> biqa::Result<()> {
    let tmp = tempfile::tempdir().expect("tempdir");
    let synth = synth_dataset(tmp.path(), 40, 5, 32, 8)?;
    let dir = Path::new("stats");
    for s in &synth.manifest.samples {
        let img = synth.manifest.resolve(s);
        let out = feature_path(dir, &img);
        std::fs::create_dir_all(out.parent().unwrap()).map_err(|e| biqa::Error::io(&out, e))?;
        save_features(&out, &stats(&decode_image(&img)?))?;
    }

    let cfg = ModelConfig {
        stream_a: BackboneSpec::FeatureFile {
            width: 12,
            dir: dir.into(),
        },
        enable_stream_b: false,
        head_widths: vec![32, 16, 8],
        ..ModelConfig::default()
    };
    let [train, val, test] = synth.manifest.normalize_scores().split(DEFAULT_SPLIT, 8)?;
    let tc = TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 20,
        seed: 8,
        ..TrainConfig::default()
    };
    let mut model = Model::build(&cfg, 8)?;
    let (_, h) = train_datasets(
        &mut model,
        &Dataset::from_manifest(&train, &cfg)?,
        &Dataset::from_manifest(&val, &cfg)?,
        &tc,
        |_| {},
    )?;
    println!(
        "trained {} epochs, best {}",
        h.records.len(),
        h.best_epoch + 1
    );
    println!(
        "{}",
        evaluate(&model, &Dataset::from_manifest(&test, &cfg)?)?.report
    );
    Ok(())
}
