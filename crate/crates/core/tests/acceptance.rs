//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use biqa::attention::{channel_attention, channel_hidden_width, spatial_attention};
use biqa::autodiff::{
    gradient_suite, max_relative_error, max_relative_error_floor, param_gradients, Mode, Tape,
    SUITE_EPS,
};
use biqa::data::{
    decode_image, synth_dataset, Dataset, Manifest, Region, SidecarRow, DEFAULT_SPLIT,
};
use biqa::gradcam::{gradcam, top_decile_fraction, CamTarget};
use biqa::metrics::{combined_loss, krocc, plcc, srocc, LossConfig};
use biqa::model::{Ablation, BackboneSpec, Checkpoint, Model, ModelConfig, ModelInput};
use biqa::training::{evaluate, train_datasets, Evaluation, TrainConfig, TrainHistory};
use biqa::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

// ---------------------------------------------------------------------------
// 1. gradient suite

const PRIMITIVE_TOL: f64 = 1e-5;
const END_TO_END_TOL: f64 = 1e-4;
// Central differences at eps 1e-6 carry ~1e-11 of absolute round-off, so
// gradients below this size are compared absolutely.
const END_TO_END_FLOOR: f64 = 1e-6;

fn end_to_end_model() -> Result<(Model<f64>, ModelInput<f64>, Vec<f64>)> {
    let cfg = ModelConfig {
        input_size: (16, 16),
        stream_a: BackboneSpec::toy(&[(4, 2, true), (6, 1, true)]),
        stream_b: BackboneSpec::toy(&[(5, 1, true)]),
        head_widths: vec![8, 6, 4],
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::build(&cfg, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // non-trivial running statistics so eval-mode normalization is exercised
    for e in model.store_mut().iter_mut() {
        if e.name.ends_with("running_mean") {
            e.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5));
        } else if e.name.ends_with("running_var") {
            e.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }
    let n = 4;
    let images = Tensor::new(
        vec![n, 16, 16, 3],
        common::uniform(&mut rng, n * 16 * 16 * 3, 0.0, 1.0),
    )?;
    let weights = common::uniform(&mut rng, n, 0.5, 1.5);
    Ok((model, ModelInput::images(images), weights))
}

fn criterion_gradients() -> Result<Outcome> {
    let start = Instant::now();
    let checks = gradient_suite(&[], 10, 0)?;
    let worst_op = checks
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite is non-empty");

    // Eval mode: in train mode, batch-normalized columns that are constant
    // across the batch land exactly on the next ReLU's kink, where central
    // differences are not a valid reference.
    let (model, input, weights) = end_to_end_model()?;
    let objective = |t: &mut Tape<f64>, s: &biqa::ParamStore<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = model.forward_with(s, t, &input, Mode::Eval, &mut rng)?;
        let w = t.constant(Tensor::new(vec![weights.len(), 1], weights.clone())?);
        let p = t.mul(out.prediction, w)?;
        Ok(t.sum(p))
    };
    let mut worst_param = (String::new(), 0.0f64);
    let mut worst_raw = 0.0f64;
    for e in model.store().iter().filter(|e| e.trainable) {
        let (a, n) = param_gradients(model.store(), &e.name, objective, SUITE_EPS)?;
        let err = max_relative_error_floor(&a, &n, END_TO_END_FLOOR);
        worst_raw = worst_raw.max(max_relative_error(&a, &n));
        if err > worst_param.1 {
            worst_param = (e.name.clone(), err);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_op.max_rel_error <= PRIMITIVE_TOL
            && worst_param.1 <= END_TO_END_TOL
            && elapsed <= Duration::from_secs(120),
        format!(
            "{} ops, worst {} {:.2e}; end-to-end worst {} {:.2e} (floor {:.0e}; {:.2e} with floor 1e-8); {:.1}s",
            checks.len(),
            worst_op.name,
            worst_op.max_rel_error,
            worst_param.0,
            worst_param.1,
            END_TO_END_FLOOR,
            worst_raw,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. attention oracles

fn criterion_attention() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, h, w, c) = (
            rng.random_range(1..4),
            rng.random_range(1..7),
            rng.random_range(1..7),
            rng.random_range(1..9),
        );
        let x = common::uniform(&mut rng, n * h * w * c, -2.0, 2.0);
        let k = common::uniform(&mut rng, 18, -1.0, 1.0);
        let kb: f64 = rng.random_range(-0.5..0.5);
        let hid = channel_hidden_width(c);
        let w1 = common::uniform(&mut rng, 2 * c * hid, -1.0, 1.0);
        let b1 = common::uniform(&mut rng, hid, -0.5, 0.5);
        let w2 = common::uniform(&mut rng, hid * c, -1.0, 1.0);
        let b2 = common::uniform(&mut rng, c, -0.5, 0.5);

        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(vec![n, h, w, c], x.clone())?);
        let kv = t.constant(Tensor::new(vec![3, 3, 2, 1], k.clone())?);
        let bv = t.constant(Tensor::new(vec![1], vec![kb])?);
        let s = spatial_attention(&mut t, xv, kv, bv)?;
        let w1v = t.constant(Tensor::new(vec![2 * c, hid], w1.clone())?);
        let b1v = t.constant(Tensor::new(vec![hid], b1.clone())?);
        let w2v = t.constant(Tensor::new(vec![hid, c], w2.clone())?);
        let b2v = t.constant(Tensor::new(vec![c], b2.clone())?);
        let ch = channel_attention(&mut t, xv, w1v, b1v, w2v, b2v)?;

        let s_ref = common::spatial_attention_ref(&x, n, h, w, c, &k, kb);
        let c_ref = common::channel_attention_ref(&x, n, h, w, c, &w1, &b1, &w2, &b2);
        for (got, want) in t
            .value(s)
            .data()
            .iter()
            .zip(&s_ref)
            .chain(t.value(ch).data().iter().zip(&c_ref))
        {
            worst = worst.max((got - want).abs());
        }
    }

    let mut half_exact = true;
    for _ in 0..10 {
        let (n, h, w, c) = (2, 3, 4, 5);
        let x = common::uniform(&mut rng, n * h * w * c, -3.0, 3.0);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(vec![n, h, w, c], x.clone())?);
        let k = t.constant(Tensor::zeros(&[3, 3, 2, 1]));
        let b = t.constant(Tensor::zeros(&[1]));
        let s = spatial_attention(&mut t, xv, k, b)?;
        let hid = channel_hidden_width(c);
        let w1 = t.constant(Tensor::zeros(&[2 * c, hid]));
        let b1 = t.constant(Tensor::zeros(&[hid]));
        let w2 = t.constant(Tensor::zeros(&[hid, c]));
        let b2 = t.constant(Tensor::zeros(&[c]));
        let ch = channel_attention(&mut t, xv, w1, b1, w2, b2)?;
        for out in [s, ch] {
            half_exact &= t
                .value(out)
                .data()
                .iter()
                .zip(&x)
                .all(|(o, v)| *o == 0.5 * v);
        }
    }
    outcome(
        worst <= 1e-12 && half_exact,
        format!("max |diff| {worst:.1e} over 100 inputs; zero-initialized gates give 0.5x exactly: {half_exact}"),
    )
}

// ---------------------------------------------------------------------------
// 3. metric oracles

fn criterion_metrics() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut srocc_err, mut plcc_err) = (0.0f64, 0.0f64);
    let mut krocc_exact = true;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let a = common::tie_free(&mut rng, n);
        let b = common::tie_free(&mut rng, n);
        srocc_err = srocc_err.max((srocc(&a, &b)? - common::srocc_formula(&a, &b)).abs());
        krocc_exact &= krocc(&a, &b)? == common::krocc_pairs(&a, &b);
        let scale: f64 = rng.random_range(0.1..10.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let shift: f64 = rng.random_range(-5.0..5.0);
        let b2: Vec<f64> = b.iter().map(|v| sign * scale * v + shift).collect();
        plcc_err = plcc_err.max((plcc(&a, &b2)? - sign * plcc(&a, &b)?).abs());
    }
    let hand_s = srocc(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0])?;
    let hand_k = krocc(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0])?;
    let hand = (hand_s - 0.5).abs() < 1e-12 && (hand_k - 1.0 / 3.0).abs() < 1e-12;
    outcome(
        srocc_err <= 1e-12 && plcc_err <= 1e-12 && krocc_exact && hand,
        format!(
            "SROCC vs formula {srocc_err:.1e}, PLCC affine {plcc_err:.1e}, KROCC exact {krocc_exact}, hand examples {hand_s:.4}/{hand_k:.4}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. loss contract

fn criterion_loss() -> Result<Outcome> {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut zero_worst = 0.0f64;
    let mut grad_worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..20);
        let y = common::tie_free(&mut rng, n);
        zero_worst = zero_worst.max(combined_loss(&y, &y, &cfg)?.0.abs());

        let yhat: Vec<f64> = y.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        // stay clear of the MAE kinks
        if y.iter().zip(&yhat).any(|(a, b)| (a - b).abs() < 1e-3) {
            continue;
        }
        let (_, grad) = combined_loss(&y, &yhat, &cfg)?;
        let h = 1e-6;
        let numeric: Vec<f64> = (0..n)
            .map(|i| {
                let mut p = yhat.clone();
                p[i] += h;
                let fp = combined_loss(&y, &p, &cfg).map(|r| r.0)?;
                p[i] -= 2.0 * h;
                let fm = combined_loss(&y, &p, &cfg).map(|r| r.0)?;
                Ok((fp - fm) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        let a = Tensor::new(vec![n], grad)?;
        let nm = Tensor::new(vec![n], numeric)?;
        grad_worst = grad_worst.max(max_relative_error(&a, &nm));
    }
    let weights = (cfg.lambda1, cfg.lambda2) == (1.0, 10.0);
    outcome(
        zero_worst <= 1e-9 && grad_worst <= 1e-7 && weights,
        format!("loss at perfect prediction {zero_worst:.1e}, gradient rel. error {grad_worst:.1e}, weights ({}, {})", cfg.lambda1, cfg.lambda2),
    )
}

// ---------------------------------------------------------------------------
// shared desk-scale experiment (criteria 5-7)

const SYNTH_SEED: u64 = 7;
const SPLIT_SEED: u64 = 7;
const MODEL_SEED: u64 = 1;

fn desk_model_config() -> ModelConfig {
    ModelConfig {
        input_size: (64, 64),
        stream_a: BackboneSpec::toy(&[(8, 1, true), (16, 1, true), (32, 1, true)]),
        stream_b: BackboneSpec::toy(&[(12, 1, true), (24, 1, true)]),
        ..ModelConfig::default()
    }
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 30,
        seed: 3,
        ..TrainConfig::default()
    }
}

struct Desk {
    _dir: TempDir,
    sidecar: Vec<SidecarRow>,
    test: Manifest,
    train_set: Dataset,
    val_set: Dataset,
    model: Model<f32>,
    history: TrainHistory,
    eval: Evaluation,
    elapsed: Duration,
}

fn desk() -> &'static std::result::Result<Desk, String> {
    static DESK: OnceLock<std::result::Result<Desk, String>> = OnceLock::new();
    DESK.get_or_init(|| run_desk().map_err(|e| e.to_string()))
}

fn run_desk() -> Result<Desk> {
    let start = Instant::now();
    let dir = TempDir::new().map_err(|e| biqa::Error::Io {
        path: "tempdir".into(),
        source: e,
    })?;
    let synth = synth_dataset(dir.path(), 100, 5, 64, SYNTH_SEED)?;
    let [tr, va, te] = synth
        .manifest
        .normalize_scores()
        .split(DEFAULT_SPLIT, SPLIT_SEED)?;
    let cfg = desk_model_config();
    let train_set = Dataset::from_manifest(&tr, &cfg)?;
    let val_set = Dataset::from_manifest(&va, &cfg)?;
    let test_set = Dataset::from_manifest(&te, &cfg)?;
    let mut model = Model::build(&cfg, MODEL_SEED)?;
    let (_, history) = train_datasets(
        &mut model,
        &train_set,
        &val_set,
        &desk_train_config(),
        |_| {},
    )?;
    let eval = evaluate(&model, &test_set)?;
    Ok(Desk {
        _dir: dir,
        sidecar: synth.sidecar,
        test: te,
        train_set,
        val_set,
        model,
        history,
        eval,
        elapsed: start.elapsed(),
    })
}

fn desk_or_fail() -> std::result::Result<&'static Desk, Outcome> {
    desk().as_ref().map_err(|e| Outcome {
        pass: false,
        detail: format!("desk-scale training failed: {e}"),
    })
}

// ---------------------------------------------------------------------------
// 5. desk-scale end-to-end

fn criterion_end_to_end() -> Result<Outcome> {
    let d = match desk_or_fail() {
        Ok(d) => d,
        Err(o) => return Ok(o),
    };
    let r = &d.eval.report;
    let (s, p) = (r.srocc.unwrap_or(f64::NAN), r.plcc.unwrap_or(f64::NAN));
    outcome(
        s >= 0.8 && p >= 0.8 && d.elapsed <= Duration::from_secs(15 * 60),
        format!(
            "test n={} SROCC {s:.4} PLCC {p:.4}; best epoch {} of {}; {:.0}s",
            r.n,
            d.history.best_epoch + 1,
            d.history.records.len(),
            d.elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. ablation harness

fn best_val_srocc(h: &TrainHistory) -> f64 {
    h.best().and_then(|r| r.val_srocc).unwrap_or(f64::NAN)
}

fn criterion_ablation() -> Result<Outcome> {
    let d = match desk_or_fail() {
        Ok(d) => d,
        Err(o) => return Ok(o),
    };
    let full = best_val_srocc(&d.history);
    let mut pass = full.is_finite();
    let mut parts = vec![format!("full {full:.4}")];
    for ablation in [
        Ablation::NoStreamA,
        Ablation::NoStreamB,
        Ablation::NoSpatial,
        Ablation::NoChannel,
    ] {
        let cfg = desk_model_config().ablate(&BTreeSet::from([ablation]))?;
        let mut tc = desk_train_config();
        let single_stream = matches!(ablation, Ablation::NoStreamA | Ablation::NoStreamB);
        // attention ablations only need to train cleanly
        if !single_stream {
            tc.max_epochs = 3;
        }
        let mut model = Model::build(&cfg, MODEL_SEED)?;
        let (_, h) = train_datasets(&mut model, &d.train_set, &d.val_set, &tc, |_| {})?;
        let v = best_val_srocc(&h);
        if single_stream {
            pass &= full >= v - 0.05;
        }
        parts.push(format!("{ablation:?} {v:.4} ({} epochs)", h.records.len()));
    }
    outcome(pass, format!("validation SROCC: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 7. Grad-CAM localization

fn criterion_gradcam() -> Result<Outcome> {
    let d = match desk_or_fail() {
        Ok(d) => d,
        Err(o) => return Ok(o),
    };
    let (mut hits, mut total) = (0, 0);
    for s in &d.test.samples {
        let row = d
            .sidecar
            .iter()
            .find(|r| r.path == s.path)
            .expect("sidecar row");
        // level 0 is the undistorted original
        if row.region == Region::Whole || row.level == 0 {
            continue;
        }
        let img = decode_image(&d.test.resolve(s))?;
        let map = gradcam(&d.model, &img, None, CamTarget::Score)?;
        let frac = top_decile_fraction(&map, |y, x| {
            row.region.contains(y, x, map.height, map.width)
        });
        total += 1;
        if frac > 0.25 {
            hits += 1;
        }
    }
    let rate = hits as f64 / total.max(1) as f64;
    outcome(
        total > 0 && rate >= 0.7,
        format!("{hits}/{total} quadrant-distorted test images put > 25% of the top decile in the distorted quadrant ({:.0}%)", 100.0 * rate),
    )
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence

fn small_run(dir: &Path) -> Result<(Vec<u8>, String, Model<f32>, Dataset)> {
    let synth = synth_dataset(dir, 12, 3, 16, 11)?;
    let [tr, va, te] = synth.manifest.normalize_scores().split(DEFAULT_SPLIT, 5)?;
    let cfg = ModelConfig {
        input_size: (16, 16),
        stream_a: BackboneSpec::toy(&[(4, 1, true)]),
        stream_b: BackboneSpec::toy(&[(3, 1, false)]),
        head_widths: vec![16, 8, 4],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        initial_lr: 1e-3,
        max_epochs: 4,
        batch_size: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut model = Model::build(&cfg, 2)?;
    let train = Dataset::from_manifest(&tr, &cfg)?;
    let val = Dataset::from_manifest(&va, &cfg)?;
    let (ck, history) = train_datasets(&mut model, &train, &val, &tc, |_| {})?;
    let test = Dataset::from_manifest(&te, &cfg)?;
    Ok((ck.to_bytes(), history.to_csv(), model, test))
}

fn criterion_determinism() -> Result<Outcome> {
    let tmp = |_| {
        TempDir::new().map_err(|e| biqa::Error::Io {
            path: "tempdir".into(),
            source: e,
        })
    };
    let (d1, d2) = (tmp(())?, tmp(())?);
    let (ck1, h1, model, test) = small_run(d1.path())?;
    let (ck2, h2, _, _) = small_run(d2.path())?;
    let same_run = ck1 == ck2 && h1 == h2;

    let path = d1.path().join("model.ckpt");
    Checkpoint::from_bytes(&ck1)?.save(&path)?;
    let loaded = Checkpoint::load(&path)?.into_model()?;
    let idx: Vec<usize> = (0..test.len()).collect();
    let before = model.predict(&test.batch(&idx))?;
    let after = loaded.predict(&test.batch(&idx))?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let roundtrip =
        bits(&before) == bits(&after) && std::fs::read(&path).ok().as_deref() == Some(&ck1[..]);
    outcome(
        same_run && roundtrip,
        format!(
            "repeat run identical: {same_run} ({} checkpoint bytes, {} history lines); round-trip predictions bit-exact: {roundtrip}",
            ck1.len(),
            h1.lines().count()
        ),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient suite", criterion_gradients),
        ("attention oracles", criterion_attention),
        ("metric oracles", criterion_metrics),
        ("loss contract", criterion_loss),
        ("desk-scale end-to-end", criterion_end_to_end),
        ("ablation harness", criterion_ablation),
        ("grad-cam localization", criterion_gradcam),
        ("determinism and persistence", criterion_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
