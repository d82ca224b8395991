//! Train briefly, then render Grad-CAM maps for images whose distortion
//! covers a single quadrant.
//!
//! `cargo run --release --example gradcam_heatmap -- [out_dir]`

use std::path::PathBuf;

use biqa::data::{decode_image, synth_dataset, Dataset, Region, DEFAULT_SPLIT};
use biqa::gradcam::{export_heatmap, gradcam, top_decile_fraction, CamTarget};
use biqa::model::{BackboneSpec, Model, ModelConfig};
use biqa::training::{train_datasets, TrainConfig};

fn main() -> biqa::Result<()> {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.path().into());
    let data_dir = out.join("data");
    let synth = synth_dataset(&data_dir, 30, 4, 32, 5)?;
    let [train, val, _] = synth.manifest.normalize_scores().split(DEFAULT_SPLIT, 5)?;
    let cfg = ModelConfig {
        input_size: (32, 32),
        stream_a: BackboneSpec::toy(&[(8, 1, true), (16, 1, true)]),
        stream_b: BackboneSpec::toy(&[(8, 1, true)]),
        head_widths: vec![32, 16, 8],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut model = Model::build(&cfg, 5)?;
    train_datasets(
        &mut model,
        &Dataset::from_manifest(&train, &cfg)?,
        &Dataset::from_manifest(&val, &cfg)?,
        &tc,
        |_| {},
    )?;
    println!("conv layers: {}", model.conv_layer_names().join(" "));

    let quadrant = synth
        .sidecar
        .iter()
        .filter(|r| r.level > 0 && r.region != Region::Whole)
        .take(4);
    for (i, row) in quadrant.enumerate() {
        let img = decode_image(&data_dir.join(&row.path))?;
        let map = gradcam(&model, &img, None, CamTarget::Score)?;
        let frac = top_decile_fraction(&map, |y, x| {
            row.region.contains(y, x, map.height, map.width)
        });
        let path = out.join(format!("cam{i}.ppm"));
        export_heatmap(&map, &img, &path, true)?;
        println!(
            "{} level {} {}: top-decile share {:.2} -> {}",
            row.path.display(),
            row.level,
            row.region,
            frac,
            path.display()
        );
    }
    Ok(())
}
