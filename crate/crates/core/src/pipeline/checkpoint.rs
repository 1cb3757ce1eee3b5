//! `PADCKPT1` checkpoint files.
//!
//! Layout (little-endian): magic `PADCKPT1`; `u32` section count; per section
//! a `u32`-length-prefixed UTF-8 name, `u8` dtype (0 = f64, 1 = f32), `u32`
//! rank, `rank × u32` dims and the raw payload; then a `u32`-length-prefixed
//! UTF-8 JSON trailer `{"config": …, "meta": …}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Phase, Precision};
use crate::error::{PadError, Result};
use crate::model::{PadModel, ParamGroup, TEXT_PARAM};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PADCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    pub seed: u64,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation nDCG@10 per epoch.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub tensors: Vec<(String, Tensor)>,
    pub config: serde_json::Value,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: serde_json::Value,
    meta: CheckpointMeta,
}

/// Parameter groups a phase's checkpoint carries.
pub fn phase_groups(phase: Phase) -> &'static [ParamGroup] {
    use ParamGroup::*;
    match phase {
        Phase::Pretrain => &[IdTable, IdEncoder],
        Phase::Align => &[IdTable, IdEncoder, AlignTable, AlignMlp, AlignFuse, AlignEncoder],
        Phase::Finetune => &[
            IdTable,
            IdEncoder,
            AlignTable,
            AlignMlp,
            AlignFuse,
            AlignEncoder,
            LlmMlp,
            LlmEncoder,
            Gate,
        ],
    }
}

impl Checkpoint {
    /// Snapshot the phase's parameter groups. The frozen text matrix is never stored.
    pub fn from_model(model: &PadModel, precision: Precision, config: serde_json::Value, meta: CheckpointMeta) -> Self {
        let tensors = model
            .groups(phase_groups(meta.phase))
            .into_iter()
            .map(|id| {
                let p = model.store.get(id);
                (p.name.clone(), p.value.clone())
            })
            .collect();
        Checkpoint {
            precision,
            tensors,
            config,
            meta,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Sections must be exactly the parameters of the checkpoint's phase, with matching shapes.
    pub fn check_against(&self, model: &PadModel) -> Result<()> {
        let expected: Vec<String> = model
            .groups(phase_groups(self.meta.phase))
            .into_iter()
            .map(|id| model.store.get(id).name.clone())
            .collect();
        for (name, t) in &self.tensors {
            if !expected.contains(name) {
                return Err(PadError::Checkpoint(format!("unknown section '{name}'")));
            }
            let want = model.store.by_name(name).expect("expected names exist").value.shape();
            if t.shape() != want {
                return Err(PadError::Checkpoint(format!(
                    "section '{name}' has shape {:?}, model expects {want:?}",
                    t.shape()
                )));
            }
        }
        if let Some(missing) = expected.iter().find(|n| self.get(n).is_none()) {
            return Err(PadError::Checkpoint(format!("missing section '{missing}'")));
        }
        Ok(())
    }

    /// Copy the given groups into `model`.
    pub fn restore(&self, model: &mut PadModel, groups: &[ParamGroup]) -> Result<()> {
        self.check_against(model)?;
        for id in model.groups(groups) {
            let name = model.store.get(id).name.clone();
            let t = self.get(&name).ok_or_else(|| {
                PadError::Checkpoint(format!("{} checkpoint has no section '{name}'", self.meta.phase))
            })?;
            model.store.assign(id, t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&u32_len(self.tensors.len())?.to_le_bytes());
        for (name, t) in &self.tensors {
            if name == TEXT_PARAM {
                return Err(PadError::Checkpoint("the text matrix is never checkpointed".into()));
            }
            out.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match self.precision {
                Precision::F64 => 0,
                Precision::F32 => 1,
            });
            out.extend_from_slice(&u32_len(t.rank())?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&u32_len(d)?.to_le_bytes());
            }
            match self.precision {
                Precision::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Precision::F32 => t
                    .data()
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            }
        }
        let trailer = serde_json::to_string(&Trailer {
            config: self.config.clone(),
            meta: self.meta.clone(),
        })?;
        out.extend_from_slice(&u32_len(trailer.len())?.to_le_bytes());
        out.extend_from_slice(trailer.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(PadError::Checkpoint("bad magic; not a PADCKPT1 file".into()));
        }
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        let mut precision = None;
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| PadError::Checkpoint("section name is not UTF-8".into()))?
                .to_string();
            let dtype = match r.take(1)?[0] {
                0 => Precision::F64,
                1 => Precision::F32,
                t => return Err(PadError::Checkpoint(format!("section '{name}': unknown dtype tag {t}"))),
            };
            if *precision.get_or_insert(dtype) != dtype {
                return Err(PadError::Checkpoint("sections mix dtypes".into()));
            }
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| PadError::Checkpoint(format!("section '{name}': shape overflows")))?;
            let data: Vec<f64> = match dtype {
                Precision::F64 => r
                    .take(
                        numel
                            .checked_mul(8)
                            .ok_or_else(|| PadError::Checkpoint("payload overflows".into()))?,
                    )?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Precision::F32 => r
                    .take(
                        numel
                            .checked_mul(4)
                            .ok_or_else(|| PadError::Checkpoint("payload overflows".into()))?,
                    )?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            if tensors.iter().any(|(n, _): &(String, Tensor)| *n == name) {
                return Err(PadError::Checkpoint(format!("duplicate section '{name}'")));
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let len = r.u32()? as usize;
        let trailer: Trailer =
            serde_json::from_slice(r.take(len)?).map_err(|e| PadError::Checkpoint(format!("bad trailer: {e}")))?;
        if r.pos != bytes.len() {
            return Err(PadError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            precision: precision.unwrap_or(Precision::F64),
            tensors,
            config: trailer.config,
            meta: trailer.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| PadError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PadError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            PadError::Checkpoint(m) => PadError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| PadError::Checkpoint(format!("{n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| PadError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
