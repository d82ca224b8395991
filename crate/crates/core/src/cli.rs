//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
//! model error. Results go to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::autodiff::{gradient_suite, SUITE_OPS};
use crate::data::{decode_image, synth_dataset, Dataset, Manifest};
use crate::error::{Error, Result};
use crate::gradcam::{export_heatmap, gradcam, CamTarget};
use crate::metrics::MetricsReport;
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::training::{evaluate, train_datasets, TrainConfig};

/// Worst relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "biqa",
    version,
    about = "Two-stream attention model for blind image quality assessment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic distortion dataset with manifest and sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        bases: usize,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split a manifest, train, and write the best checkpoint and history.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// key=value model config; defaults apply when omitted.
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// key=value training config; defaults apply when omitted.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the training config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a manifest with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dump_predictions: Option<PathBuf>,
    },
    /// Predict the quality score of one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Write a Grad-CAM heatmap for one image.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Conv activation name such as `a.s2.c0`; defaults to stream A's last conv.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Blend the map in red over the image (PPM) instead of a grayscale PGM.
        #[arg(long)]
        overlay: bool,
        /// `score` or `degradation`.
        #[arg(long, default_value = "score")]
        target: CamTarget,
    },
    /// Compare two files of one number per line.
    Metrics {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        /// `all` or a comma-separated list of operation names.
        #[arg(long, default_value = "all")]
        ops: String,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("{}: not a number: `{}`", path.display(), l.trim()),
            })
        })
        .collect()
}

fn report_text(report: &MetricsReport) -> String {
    format!(
        "{report}\n{}\n{}\n",
        MetricsReport::CSV_HEADER,
        report.csv_row()
    )
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Checkpoint::load(path)?.into_model()
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Synth {
            out: dir,
            bases,
            levels,
            size,
            seed,
        } => {
            let ds = synth_dataset(&dir, bases, levels, size, seed)?;
            let _ = writeln!(
                out,
                "wrote {} images to {}",
                ds.manifest.len(),
                dir.display()
            );
        }
        Command::Train {
            manifest,
            model_config,
            train_config,
            out: dir,
            seed,
        } => {
            let manifest = Manifest::load(&manifest)?.normalize_scores();
            let model_cfg = match model_config {
                Some(p) => ModelConfig::load(&p)?,
                None => ModelConfig::default(),
            };
            let mut train_cfg = match train_config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                train_cfg.seed = s;
            }
            train_cfg.validate()?;
            let [tr, va, te] = manifest.split(train_cfg.split, train_cfg.seed)?;
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            tr.save_relocated(&dir.join("train.csv"))?;
            va.save_relocated(&dir.join("val.csv"))?;
            te.save_relocated(&dir.join("test.csv"))?;
            let train_set = Dataset::from_manifest(&tr, &model_cfg)?;
            let val_set = Dataset::from_manifest(&va, &model_cfg)?;
            let test_set = Dataset::from_manifest(&te, &model_cfg)?;
            let mut model = Model::build(&model_cfg, train_cfg.seed)?;
            let (ck, history) =
                train_datasets(&mut model, &train_set, &val_set, &train_cfg, |r| {
                    let _ = writeln!(
                        err,
                        "epoch {:3}  train {:.4}  val {:.4}  lr {:.2e}",
                        r.epoch, r.train_loss, r.val_loss, r.lr
                    );
                })?;
            ck.save(&dir.join("best.ckpt"))?;
            history.save(&dir.join("history.csv"))?;
            write_file(&dir.join("model.cfg"), &model_cfg.to_text())?;
            write_file(&dir.join("train.cfg"), &train_cfg.to_text())?;
            let eval = evaluate(&model, &test_set)?;
            let text = report_text(&eval.report);
            write_file(&dir.join("test_report.txt"), &text)?;
            let _ = write!(out, "best epoch {}\n{text}", ck.meta.epoch);
        }
        Command::Eval {
            checkpoint,
            manifest,
            report,
            dump_predictions,
        } => {
            let model = load_model(&checkpoint)?;
            let manifest = Manifest::load(&manifest)?.normalize_scores();
            let data = Dataset::from_manifest(&manifest, model.config())?;
            let eval = evaluate(&model, &data)?;
            let text = report_text(&eval.report);
            if let Some(p) = report {
                write_file(&p, &text)?;
            }
            if let Some(p) = dump_predictions {
                write_file(&p, &eval.predictions_csv(&data))?;
            }
            let _ = write!(out, "{text}");
        }
        Command::Predict { checkpoint, image } => {
            let model = load_model(&checkpoint)?;
            let data = Dataset::from_paths(vec![image], vec![0.0], model.config())?;
            let pred = model.predict(&data.batch(&[0]))?;
            let line: Vec<String> = pred.data().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        Command::Gradcam {
            checkpoint,
            image,
            layer,
            out: path,
            overlay,
            target,
        } => {
            let model = load_model(&checkpoint)?;
            let img = decode_image(&image)?;
            let map = gradcam(&model, &img, layer.as_deref(), target)?;
            export_heatmap(&map, &img, &path, overlay)?;
            let _ = writeln!(out, "layer {} -> {}", map.layer, path.display());
        }
        Command::Metrics { truth, pred } => {
            let y = read_numbers(&truth)?;
            let p = read_numbers(&pred)?;
            let report = MetricsReport::compute(&y, &p)?;
            let _ = write!(out, "{}", report_text(&report));
        }
        Command::Gradcheck { ops, trials, seed } => {
            let names: Vec<&str> = if ops == "all" {
                Vec::new()
            } else {
                ops.split(',').map(str::trim).collect()
            };
            let checks = gradient_suite(&names, trials.max(1), seed)?;
            let mut table = String::from("op,trials,max_rel_error,status\n");
            let mut failed = false;
            for c in &checks {
                let ok = c.max_rel_error <= GRADCHECK_TOLERANCE;
                failed |= !ok;
                let _ = writeln!(
                    table,
                    "{},{},{:.3e},{}",
                    c.name,
                    c.trials,
                    c.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            let _ = write!(out, "{table}");
            if failed {
                let _ = writeln!(
                    err,
                    "gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}"
                );
                return Ok(2);
            }
            debug_assert!(checks.len() <= SUITE_OPS.len());
        }
    }
    Ok(0)
}
