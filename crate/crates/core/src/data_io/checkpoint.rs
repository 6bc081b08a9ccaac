use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::{AugmentConfig, PcaBasis};
use crate::error::{Error, Result};
use crate::model::{BranchedNetConfig, BranchedNetwork};
use crate::tensor_core::Tensor;
use crate::training::{OptimizerState, TrainConfig, TrainSession};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BRNCHNET";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// The JSON block of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: BranchedNetConfig,
    pub train: TrainConfig,
    /// With channel means resolved.
    pub augment: AugmentConfig,
    pub pca: Option<PcaBasis>,
    /// Finished epochs.
    pub epoch: usize,
    /// Next epoch index of the keyed augmentation and shuffle streams.
    pub rng_cursor: u64,
}

/// Config snapshot plus a named tensor table.
///
/// Tensor names: registry names for parameters, `buffer.<bn>.running_mean`
/// and `buffer.<bn>.running_var` for batch-norm statistics, and
/// `velocity.<param>` for momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_session(s: &TrainSession) -> Self {
        let mut tensors: Vec<(String, Tensor)> =
            s.net.named_params().map(|(n, t)| (n.to_string(), t.clone())).collect();
        for (name, stats) in s.net.named_running_stats() {
            tensors.push((format!("buffer.{name}.running_mean"), stats.mean.clone()));
            tensors.push((format!("buffer.{name}.running_var"), stats.var.clone()));
        }
        for (i, v) in s.optimizer.velocities().iter().enumerate() {
            tensors.push((format!("velocity.{}", s.net.param_name(i)), v.clone()));
        }
        Self {
            meta: CheckpointMeta {
                model: s.net.config().clone(),
                train: s.config.clone(),
                augment: s.augment.clone(),
                pca: s.pca.clone(),
                epoch: s.epochs_done,
                rng_cursor: s.epochs_done as u64,
            },
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str, like: &Tensor) -> Result<Tensor> {
        let t = self.tensor(name).ok_or_else(|| Error::Format {
            what: "checkpoint",
            record: name.to_string(),
            detail: "missing tensor".into(),
        })?;
        if t.shape() != like.shape() {
            return Err(Error::Format {
                what: "checkpoint",
                record: name.to_string(),
                detail: format!("shape {:?}, network expects {:?}", t.shape(), like.shape()),
            });
        }
        Ok(t.clone())
    }

    /// Network with the stored parameters and running statistics.
    pub fn network(&self) -> Result<BranchedNetwork> {
        let mut net = BranchedNetwork::new(&self.meta.model, self.meta.train.seed)?;
        let names: Vec<String> = net.param_names().map(String::from).collect();
        for name in &names {
            let t = self.require(name, net.param(name).expect("registry name"))?;
            net.set_param(name, t)?;
        }
        let stats: Vec<String> = net.named_running_stats().map(|(n, _)| n.to_string()).collect();
        for name in &stats {
            let rs = net.running_stats_mut(name).expect("stats name");
            let mean = self.require(&format!("buffer.{name}.running_mean"), &rs.mean)?;
            let var = self.require(&format!("buffer.{name}.running_var"), &rs.var)?;
            rs.mean = mean;
            rs.var = var;
        }
        let expected = names.len() * 2 + stats.len() * 2;
        if self.tensors.len() != expected {
            return Err(Error::Format {
                what: "checkpoint",
                record: "tensor table".into(),
                detail: format!("{} tensors, architecture needs {expected}", self.tensors.len()),
            });
        }
        Ok(net)
    }

    /// Session that continues exactly where the saved one stopped.
    pub fn to_session(&self) -> Result<TrainSession> {
        let net = self.network()?;
        let velocity = (0..net.num_params())
            .map(|i| self.require(&format!("velocity.{}", net.param_name(i)), net.param_at(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainSession {
            net,
            optimizer: OptimizerState::from_velocities(velocity),
            config: self.meta.train.clone(),
            augment: self.meta.augment.clone(),
            pca: self.meta.pca.clone(),
            epochs_done: self.meta.epoch,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "header")? != CHECKPOINT_MAGIC {
            return Err(fmt_err("header", "bad magic, not a checkpoint"));
        }
        let version = r.u32("header")?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt_err(
                "header",
                format!("version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let len = r.len64("config")?;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(len, "config")?).map_err(|e| fmt_err("config", e.to_string()))?;
        let count = r.len64("tensor table")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let at = format!("tensor #{i}");
            let name_len = r.u32(&at)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &at)?)
                .map_err(|_| fmt_err(&at, "name is not UTF-8"))?
                .to_string();
            let dtype = r.take(1, &name)?[0];
            if dtype != DTYPE_F64 {
                return Err(fmt_err(&name, format!("unknown dtype tag {dtype}")));
            }
            let rank = r.take(1, &name)?[0] as usize;
            let shape = (0..rank).map(|_| r.len64(&name)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| fmt_err(&name, "extent overflow"))?;
            let data = r
                .take(numel, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| fmt_err(&name, e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(
                "tensor table",
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self { meta, tensors })
    }
}

fn fmt_err(record: &str, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        record: record.to_string(),
        detail: detail.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, record: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| fmt_err(record, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, record: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, record)?.try_into().expect("4 bytes")))
    }

    fn len64(&mut self, record: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, record)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| fmt_err(record, "length overflow"))
    }
}

/// Writes to a temporary file beside `path`, then renames it into place.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
