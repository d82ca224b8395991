use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::metrics::LossConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub min_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    /// Re-estimate head batch-norm statistics on the training set, dropout
    /// off, after every epoch.
    pub recalibrate_bn: bool,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Train/val/test ratios used when a single manifest is split.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            min_lr: 1e-8,
            plateau_patience: 2,
            plateau_factor: 0.5,
            early_stop_patience: 10,
            recalibrate_bn: true,
            max_epochs: 100,
            batch_size: 10,
            seed: 0,
            loss: LossConfig::default(),
            split: crate::data::DEFAULT_SPLIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr && self.initial_lr.is_finite()) {
            return bad(format!(
                "need 0 < min_lr <= initial_lr, got {} and {}",
                self.min_lr, self.initial_lr
            ));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            ));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        self.loss.validate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "initial_lr={}", self.initial_lr);
        let _ = writeln!(s, "min_lr={}", self.min_lr);
        let _ = writeln!(s, "plateau_patience={}", self.plateau_patience);
        let _ = writeln!(s, "plateau_factor={}", self.plateau_factor);
        let _ = writeln!(s, "early_stop_patience={}", self.early_stop_patience);
        let _ = writeln!(s, "recalibrate_bn={}", self.recalibrate_bn);
        let _ = writeln!(s, "max_epochs={}", self.max_epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "lambda1={}", self.loss.lambda1);
        let _ = writeln!(s, "lambda2={}", self.loss.lambda2);
        let _ = writeln!(
            s,
            "split={},{},{}",
            self.split.0, self.split.1, self.split.2
        );
        s
    }

    /// Parse `key=value` lines; missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (line, k, v) in KvFile::parse(text)?.entries() {
            match k {
                "initial_lr" => c.initial_lr = KvFile::parse_value(line, v)?,
                "min_lr" => c.min_lr = KvFile::parse_value(line, v)?,
                "plateau_patience" => c.plateau_patience = KvFile::parse_value(line, v)?,
                "plateau_factor" => c.plateau_factor = KvFile::parse_value(line, v)?,
                "early_stop_patience" => c.early_stop_patience = KvFile::parse_value(line, v)?,
                "recalibrate_bn" => c.recalibrate_bn = KvFile::parse_value(line, v)?,
                "max_epochs" => c.max_epochs = KvFile::parse_value(line, v)?,
                "batch_size" => c.batch_size = KvFile::parse_value(line, v)?,
                "seed" => c.seed = KvFile::parse_value(line, v)?,
                "lambda1" => c.loss.lambda1 = KvFile::parse_value(line, v)?,
                "lambda2" => c.loss.lambda2 = KvFile::parse_value(line, v)?,
                "split" => {
                    let r: Vec<f64> = KvFile::parse_list(line, v)?;
                    if r.len() != 3 {
                        return Err(Error::Parse {
                            line,
                            msg: "split needs three ratios".into(),
                        });
                    }
                    c.split = (r[0], r[1], r[2]);
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
