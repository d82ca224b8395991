use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvFile;

/// One stage of a toy CNN backbone: `convs` x (3x3 conv + ReLU) with
/// `out_channels` filters, optionally followed by a 2x2 max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub out_channels: usize,
    pub convs: usize,
    pub downsample: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackboneSpec {
    ToyCnn {
        stages: Vec<StageSpec>,
    },
    /// Precomputed per-image features of width `width`, read from `dir`.
    FeatureFile {
        width: usize,
        dir: PathBuf,
    },
}

impl BackboneSpec {
    /// 3 stages, 16/32/64 channels, two conv-ReLU each, 2x downsample after each.
    pub fn default_toy() -> Self {
        Self::toy(&[(16, 2, true), (32, 2, true), (64, 2, true)])
    }

    pub fn toy(stages: &[(usize, usize, bool)]) -> Self {
        Self::ToyCnn {
            stages: stages
                .iter()
                .map(|&(out_channels, convs, downsample)| StageSpec {
                    out_channels,
                    convs,
                    downsample,
                })
                .collect(),
        }
    }

    /// Channel count of the features this backbone hands to pooling.
    pub fn out_channels(&self) -> usize {
        match self {
            Self::ToyCnn { stages } => stages.last().map_or(0, |s| s.out_channels),
            Self::FeatureFile { width, .. } => *width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::ToyCnn { stages } => {
                if stages.is_empty() {
                    return Err(Error::InvalidConfig(
                        "toy_cnn needs at least one stage".into(),
                    ));
                }
                if stages.iter().any(|s| s.out_channels == 0 || s.convs == 0) {
                    return Err(Error::InvalidConfig(
                        "toy_cnn stage widths and conv counts must be >= 1".into(),
                    ));
                }
            }
            Self::FeatureFile { width, .. } => {
                if *width == 0 {
                    return Err(Error::InvalidConfig("feature width must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ToyCnn { stages } => {
                write!(f, "toy_cnn:")?;
                for (i, s) in stages.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}x{}", s.out_channels, s.convs)?;
                    if s.downsample {
                        write!(f, "d")?;
                    }
                }
                Ok(())
            }
            Self::FeatureFile { width, dir } => write!(f, "feature_file:{width}:{}", dir.display()),
        }
    }
}

impl FromStr for BackboneSpec {
    type Err = String;

    /// `toy_cnn:16x2d,32x2d,64x2d` or `feature_file:<width>:<dir>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("backbone `{s}` lacks a `kind:` prefix"))?;
        match kind {
            "toy_cnn" => {
                let stages = rest
                    .split(',')
                    .map(|st| {
                        let st = st.trim();
                        let (body, downsample) = match st.strip_suffix('d') {
                            Some(b) => (b, true),
                            None => (st, false),
                        };
                        let (c, n) = body
                            .split_once('x')
                            .ok_or_else(|| format!("stage `{st}` is not <channels>x<convs>[d]"))?;
                        Ok(StageSpec {
                            out_channels: c
                                .parse()
                                .map_err(|_| format!("bad channels in `{st}`"))?,
                            convs: n.parse().map_err(|_| format!("bad conv count in `{st}`"))?,
                            downsample,
                        })
                    })
                    .collect::<std::result::Result<_, String>>()?;
                Ok(Self::ToyCnn { stages })
            }
            "feature_file" => {
                let (w, dir) = rest
                    .split_once(':')
                    .ok_or_else(|| "feature_file needs `<width>:<dir>`".to_string())?;
                Ok(Self::FeatureFile {
                    width: w.parse().map_err(|_| format!("bad feature width `{w}`"))?,
                    dir: PathBuf::from(dir),
                })
            }
            other => Err(format!("unknown backbone kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `(height, width)` of network inputs in pixels.
    pub input_size: (usize, usize),
    pub stream_a: BackboneSpec,
    pub stream_b: BackboneSpec,
    pub enable_stream_a: bool,
    pub enable_stream_b: bool,
    pub enable_spatial_attention: bool,
    pub enable_channel_attention: bool,
    pub head_widths: Vec<usize>,
    pub head_dropout: Vec<f64>,
    pub num_outputs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (224, 224),
            stream_a: BackboneSpec::default_toy(),
            stream_b: BackboneSpec::toy(&[(24, 2, true), (48, 2, true)]),
            enable_stream_a: true,
            enable_stream_b: true,
            enable_spatial_attention: true,
            enable_channel_attention: true,
            head_widths: vec![1024, 512, 256],
            head_dropout: vec![0.25, 0.25, 0.5],
            num_outputs: 1,
        }
    }
}

/// Components that can be removed for an ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    NoStreamA,
    NoStreamB,
    NoSpatial,
    NoChannel,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoStreamA,
        Ablation::NoStreamB,
        Ablation::NoSpatial,
        Ablation::NoChannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoStreamA => "no_stream_a",
            Ablation::NoStreamB => "no_stream_b",
            Ablation::NoSpatial => "no_spatial",
            Ablation::NoChannel => "no_channel",
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enable_stream_a && !self.enable_stream_b {
            return Err(Error::InvalidConfig(
                "at least one stream must be enabled".into(),
            ));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::InvalidConfig("input size must be positive".into()));
        }
        if self.head_widths.is_empty() || self.head_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "head widths must be non-empty and positive".into(),
            ));
        }
        if self.head_dropout.len() != self.head_widths.len() {
            return Err(Error::InvalidConfig(format!(
                "{} head widths but {} dropout rates",
                self.head_widths.len(),
                self.head_dropout.len()
            )));
        }
        if let Some(r) = self.head_dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::InvalidRate(*r));
        }
        if self.num_outputs == 0 {
            return Err(Error::InvalidConfig("num_outputs must be >= 1".into()));
        }
        for (enabled, spec) in [
            (self.enable_stream_a, &self.stream_a),
            (self.enable_stream_b, &self.stream_b),
        ] {
            if enabled {
                spec.validate()?;
                if let BackboneSpec::ToyCnn { stages } = spec {
                    let downs = stages.iter().filter(|s| s.downsample).count() as u32;
                    let min_side = self.input_size.0.min(self.input_size.1);
                    if min_side >> downs == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "{downs} downsampling stages do not fit a {min_side}-pixel input"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Width of the concatenated stream features fed to the head.
    pub fn fused_width(&self) -> usize {
        let a = if self.enable_stream_a {
            self.stream_a.out_channels()
        } else {
            0
        };
        let b = if self.enable_stream_b {
            self.stream_b.out_channels()
        } else {
            0
        };
        a + b
    }

    /// True when any enabled stream needs decoded images.
    pub fn needs_images(&self) -> bool {
        (self.enable_stream_a && matches!(self.stream_a, BackboneSpec::ToyCnn { .. }))
            || (self.enable_stream_b && matches!(self.stream_b, BackboneSpec::ToyCnn { .. }))
    }

    pub fn ablate(&self, switches: &BTreeSet<Ablation>) -> Result<Self> {
        let mut out = self.clone();
        for s in switches {
            match s {
                Ablation::NoStreamA => out.enable_stream_a = false,
                Ablation::NoStreamB => out.enable_stream_b = false,
                Ablation::NoSpatial => out.enable_spatial_attention = false,
                Ablation::NoChannel => out.enable_channel_attention = false,
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut s = String::new();
        s += &format!("input_size={}x{}\n", self.input_size.0, self.input_size.1);
        s += &format!("stream_a={}\n", self.stream_a);
        s += &format!("stream_b={}\n", self.stream_b);
        s += &format!("enable_stream_a={}\n", self.enable_stream_a);
        s += &format!("enable_stream_b={}\n", self.enable_stream_b);
        s += &format!(
            "enable_spatial_attention={}\n",
            self.enable_spatial_attention
        );
        s += &format!(
            "enable_channel_attention={}\n",
            self.enable_channel_attention
        );
        s += &format!(
            "head_widths={}\n",
            join(
                &self
                    .head_widths
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
            )
        );
        s += &format!(
            "head_dropout={}\n",
            join(
                &self
                    .head_dropout
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
            )
        );
        s += &format!("num_outputs={}\n", self.num_outputs);
        s
    }

    /// Parse `key=value` lines. Missing keys keep their defaults; unknown
    /// keys are rejected.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let mut cfg = Self::default();
        for (line, key, value) in kv.entries() {
            let bad = |msg: String| Error::Parse { line, msg };
            match key {
                "input_size" => {
                    let (h, w) = value
                        .split_once('x')
                        .ok_or_else(|| bad(format!("input_size `{value}` is not <h>x<w>")))?;
                    cfg.input_size = (
                        h.trim()
                            .parse()
                            .map_err(|_| bad(format!("bad height `{h}`")))?,
                        w.trim()
                            .parse()
                            .map_err(|_| bad(format!("bad width `{w}`")))?,
                    );
                }
                "stream_a" => cfg.stream_a = value.parse().map_err(bad)?,
                "stream_b" => cfg.stream_b = value.parse().map_err(bad)?,
                "enable_stream_a" => cfg.enable_stream_a = KvFile::parse_value(line, value)?,
                "enable_stream_b" => cfg.enable_stream_b = KvFile::parse_value(line, value)?,
                "enable_spatial_attention" => {
                    cfg.enable_spatial_attention = KvFile::parse_value(line, value)?
                }
                "enable_channel_attention" => {
                    cfg.enable_channel_attention = KvFile::parse_value(line, value)?
                }
                "head_widths" => cfg.head_widths = KvFile::parse_list(line, value)?,
                "head_dropout" => cfg.head_dropout = KvFile::parse_list(line, value)?,
                "num_outputs" => cfg.num_outputs = KvFile::parse_value(line, value)?,
                other => return Err(bad(format!("unknown model config key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
