//! Train the full model and each single-component ablation on the same
//! split and compare validation SROCC.

use std::collections::BTreeSet;

use biqa::data::{synth_dataset, Dataset, DEFAULT_SPLIT};
use biqa::model::{Ablation, BackboneSpec, Model, ModelConfig};
use biqa::training::{train_datasets, TrainConfig};

fn main() -> biqa::Result<()> {
    let tmp = tempfile::tempdir().expect("tempdir");
    let synth = synth_dataset(tmp.path(), 24, 4, 24, 3)?;
    let [train, val, _] = synth.manifest.normalize_scores().split(DEFAULT_SPLIT, 3)?;
    let full = ModelConfig {
        input_size: (24, 24),
        stream_a: BackboneSpec::toy(&[(6, 1, true), (12, 1, true)]),
        stream_b: BackboneSpec::toy(&[(8, 1, true)]),
        head_widths: vec![32, 16, 8],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 6,
        seed: 2,
        ..TrainConfig::default()
    };

    let mut variants = vec![("full".to_string(), full.clone())];
    for a in Ablation::ALL {
        variants.push((a.name().to_string(), full.ablate(&BTreeSet::from([a]))?));
    }
    for (name, cfg) in variants {
        let train_set = Dataset::from_manifest(&train, &cfg)?;
        let val_set = Dataset::from_manifest(&val, &cfg)?;
        let mut model = Model::build(&cfg, 1)?;
        let (_, h) = train_datasets(&mut model, &train_set, &val_set, &tc, |_| {})?;
        let best = h.best().expect("one epoch");
        println!(
            "{name:<12} fused width {:4}  best val srocc {}",
            cfg.fused_width(),
            best.val_srocc.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
    }
    Ok(())
}
