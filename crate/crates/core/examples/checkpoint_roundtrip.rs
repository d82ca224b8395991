//! Save a model, load it back, and confirm predictions match bit for bit.
//! Truncated files and foreign headers are rejected on load.

use biqa::data::Image;
use biqa::model::{BackboneSpec, Checkpoint, Model, ModelConfig, ModelInput};

fn main() -> biqa::Result<()> {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = ModelConfig {
        input_size: (16, 16),
        stream_a: BackboneSpec::toy(&[(4, 1, true)]),
        stream_b: BackboneSpec::toy(&[(6, 1, true)]),
        head_widths: vec![16, 8, 4],
        ..ModelConfig::default()
    };
    let model = Model::build(&cfg, 42)?;
    let path = tmp.path().join("m.ckpt");
    model.save_checkpoint(&path)?;
    let bytes = std::fs::read(&path).map_err(|e| biqa::Error::io(&path, e))?;
    println!(
        "{} parameters, {} bytes on disk",
        model.store().len(),
        bytes.len()
    );

    let loaded = Model::load_checkpoint(&path)?;
    let input = ModelInput::images(Image::filled(16, 16, [0.3, 0.5, 0.7]).to_tensor());
    let (a, b) = (model.predict(&input)?, loaded.predict(&input)?);
    println!(
        "prediction {:?} vs {:?}, identical bits: {}",
        a.data(),
        b.data(),
        a.data()[0].to_bits() == b.data()[0].to_bits()
    );

    for (what, bad) in [
        ("truncated", bytes[..bytes.len() - 3].to_vec()),
        ("bad magic", [b"XXXX", &bytes[4..]].concat()),
    ] {
        match Checkpoint::from_bytes(&bad) {
            Err(e) => println!("{what}: rejected ({e})"),
            Ok(_) => println!("{what}: loaded"),
        }
    }
    Ok(())
}
