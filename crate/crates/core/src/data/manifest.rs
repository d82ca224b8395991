//! Dataset manifests: `#range=<lo>,<hi>` plus `path,score` rows, paths
//! relative to the manifest's directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// As written in the manifest, relative to [`Manifest::root`].
    pub path: PathBuf,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub range: (f64, f64),
    pub samples: Vec<Sample>,
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut range = None;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() {
                continue;
            }
            if let Some(d) = s.strip_prefix('#') {
                if let Some(r) = d.trim().strip_prefix("range=") {
                    let (lo, hi) = r
                        .split_once(',')
                        .ok_or_else(|| parse_err(line, "range needs `lo,hi`"))?;
                    let lo: f64 = lo
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(line, "bad range low"))?;
                    let hi: f64 = hi
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(line, "bad range high"))?;
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(parse_err(line, format!("invalid range {lo},{hi}")));
                    }
                    range = Some((lo, hi));
                }
                continue;
            }
            let (p, sc) = s
                .rsplit_once(',')
                .ok_or_else(|| parse_err(line, format!("expected `path,score`, got `{s}`")))?;
            let score: f64 = sc
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad score `{}`", sc.trim())))?;
            if !score.is_finite() {
                return Err(parse_err(line, "score is not finite"));
            }
            let p = p.trim();
            if p.is_empty() {
                return Err(parse_err(line, "empty path"));
            }
            rows.push((line, PathBuf::from(p), score));
        }
        let (lo, hi) = range.ok_or(Error::MissingRange)?;
        let mut seen: HashMap<&Path, usize> = HashMap::new();
        for (line, path, score) in &rows {
            if let Some(first) = seen.insert(path, *line) {
                return Err(parse_err(
                    *line,
                    format!(
                        "duplicate path `{}` (first at line {first})",
                        path.display()
                    ),
                ));
            }
            if *score < lo || *score > hi {
                return Err(Error::ScoreOutOfRange {
                    line: *line,
                    score: *score,
                    lo,
                    hi,
                });
            }
        }
        Ok(Self {
            root,
            range: (lo, hi),
            samples: rows
                .into_iter()
                .map(|(_, path, score)| Sample { path, score })
                .collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#range={},{}\n", self.range.0, self.range.1);
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.path.display(), s.score);
        }
        out
    }

    /// Write into `path`. Sample paths are written as stored, so `path`
    /// should live in [`Manifest::root`].
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Write into `path` with sample paths re-expressed relative to the new
    /// file's directory (absolute when no relative form exists).
    pub fn save_relocated(&self, path: &Path) -> Result<()> {
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        let dir = abs(path.parent().unwrap_or(Path::new(".")))?;
        let mut out = self.clone();
        out.root = dir.clone();
        for s in &mut out.samples {
            let full = abs(&self.root.join(&s.path))?;
            s.path = full
                .strip_prefix(&dir)
                .map(Path::to_path_buf)
                .unwrap_or(full);
        }
        out.save(path)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.path)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.score).collect()
    }

    /// Map scores linearly from the manifest range onto `[0, 1]`.
    pub fn normalize_scores(&self) -> Self {
        let (lo, hi) = self.range;
        Self {
            root: self.root.clone(),
            range: (0.0, 1.0),
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    path: s.path.clone(),
                    score: (s.score - lo) / (hi - lo),
                })
                .collect(),
        }
    }

    /// Seeded shuffle, then contiguous train/val/test partition.
    pub fn split(&self, ratios: (f64, f64, f64), seed: u64) -> Result<[Manifest; 3]> {
        let (a, b, c) = ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be positive and sum to 1, got {a},{b},{c}"
            )));
        }
        let n = self.len();
        let n_train = (a * n as f64).round() as usize;
        let n_val = (b * n as f64).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::TooFewSamples { n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let part = |idx: &[usize]| Manifest {
            root: self.root.clone(),
            range: self.range,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        };
        Ok([
            part(&order[..n_train]),
            part(&order[n_train..n_train + n_val]),
            part(&order[n_train + n_val..]),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_happy_and_guards() {
        let m = Manifest::parse(
            "#range=0,100\na.ppm,10\nb.ppm,50\n# note\nc.ppm,100\n",
            "r".into(),
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.resolve(&m.samples[1]), PathBuf::from("r/b.ppm"));
        assert!(matches!(
            Manifest::parse("#range=0,100\na.ppm,120\n", "".into()),
            Err(Error::ScoreOutOfRange { line: 2, .. })
        ));
        assert!(matches!(
            Manifest::parse("a.ppm,1\n", "".into()),
            Err(Error::MissingRange)
        ));
        match Manifest::parse("#range=0,1\na,0.1\nb,0.2\na,0.3\n", "".into()) {
            Err(Error::Parse { line: 4, msg }) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalize_endpoints() {
        let m = Manifest::parse("#range=0,9\na,9\nb,0\nc,4.5\n", "".into()).unwrap();
        assert_eq!(m.normalize_scores().scores(), vec![1.0, 0.0, 0.5]);
    }
}
