//! Binary checkpoint files.
//!
//! ```text
//! "BIQA" | version u32 | len u32, model config text | len u32, metadata text
//!        | count u32 | count x (len u32, name | rank u32 | rank x u32 extents | f32 values)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BIQA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainMeta {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
}

impl TrainMeta {
    fn to_text(self) -> String {
        format!(
            "epoch={}\nbest_val_loss={}\nseed={}\n",
            self.epoch, self.best_val_loss, self.seed
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut meta = TrainMeta::default();
        for (line, k, v) in KvFile::parse(text)?.entries() {
            match k {
                "epoch" => meta.epoch = KvFile::parse_value(line, v)?,
                "best_val_loss" => meta.best_val_loss = KvFile::parse_value(line, v)?,
                "seed" => meta.seed = KvFile::parse_value(line, v)?,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown metadata key `{other}`"),
                    })
                }
            }
        }
        Ok(meta)
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
    pub meta: TrainMeta,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        std::str::from_utf8(b).map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, meta: TrainMeta) -> Self {
        Self {
            config: model.config().clone(),
            store: model.store().clone(),
            meta,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        put_bytes(&mut out, self.config.to_text().as_bytes());
        put_bytes(&mut out, self.meta.to_text().as_bytes());
        put_u32(&mut out, self.store.len());
        for e in self.store.iter() {
            put_bytes(&mut out, e.name.as_bytes());
            put_u32(&mut out, e.value.rank());
            for &d in e.value.shape() {
                put_u32(&mut out, d);
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let config = ModelConfig::from_text(r.text("config")?)
            .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let meta = TrainMeta::from_text(r.text("metadata")?)
            .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
        let count = r.u32("parameter count")?;
        // a reference build tells us which records are trainable
        let reference = Model::<f32>::build(&config, 0)
            .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let mut store = ParamStore::new();
        for i in 0..count {
            let name = r.text("parameter name")?.to_string();
            let rank = r.u32("rank")?;
            if rank == 0 || rank > 8 {
                return Err(Error::CorruptCheckpoint(format!(
                    "`{name}` has rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")?);
            }
            let len: usize = shape.iter().product();
            let bytes = r.take(len.saturating_mul(4), "values")?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let value = Tensor::new(shape, data)
                .map_err(|e| Error::CorruptCheckpoint(format!("`{name}`: {e}")))?;
            let trainable = reference
                .store()
                .iter()
                .nth(i)
                .filter(|e| e.name == name)
                .map(|e| e.trainable)
                .unwrap_or(true);
            store
                .insert(&name, value, trainable)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        }
        if r.pos != buf.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        // surfaces a config-mismatch error if records disagree with the config
        Model::from_store(&config, store.clone())?;
        Ok(Self {
            config,
            store,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn into_model(self) -> Result<Model<f32>> {
        Model::from_store(&self.config, self.store)
    }

    /// Load a model and insist it was built from `expected`.
    pub fn load_model_for(path: &Path, expected: &ModelConfig) -> Result<Model<f32>> {
        let ck = Self::load(path)?;
        if &ck.config != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "config mismatch: checkpoint was written for\n{}\nbut the caller expects\n{}",
                ck.config.to_text(),
                expected.to_text()
            )));
        }
        Model::from_store(expected, ck.store)
    }
}

impl Model<f32> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self, TrainMeta::default()).save(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Checkpoint::load(path)?.into_model()
    }
}
