//! `PADV1` text-embedding files.
//!
//! Layout: the 5 magic bytes `PADV1`, u32 row count, u32 dimension (both
//! little-endian), then `rows × dim` little-endian f32 values in row-major
//! order. A companion UTF-8 index file holds one item id per line, one line
//! per row.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{PadError, Result};
use crate::tensor::Tensor;

pub const TEXT_MAGIC: &[u8; 5] = b"PADV1";

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddings {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl TextEmbeddings {
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Any vocabulary item without a row is an error.
    Strict,
    /// Missing items get a zero row and are reported back.
    ZeroFill,
}

pub fn write_text_file(path: &Path, index_path: &Path, emb: &TextEmbeddings) -> Result<()> {
    if emb.data.len() != emb.ids.len() * emb.dim {
        return Err(PadError::Format(format!(
            "{} ids x dim {} does not match {} values",
            emb.ids.len(),
            emb.dim,
            emb.data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(13 + emb.data.len() * 4);
    bytes.extend_from_slice(TEXT_MAGIC);
    bytes.extend_from_slice(&(emb.ids.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(emb.dim as u32).to_le_bytes());
    for v in &emb.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| PadError::io(path, e))?;
    let mut index = emb.ids.join("\n");
    index.push('\n');
    std::fs::write(index_path, index).map_err(|e| PadError::io(index_path, e))
}

pub fn read_text_file(path: &Path, index_path: &Path) -> Result<TextEmbeddings> {
    let bytes = std::fs::read(path).map_err(|e| PadError::io(path, e))?;
    let fmt = |msg: String| PadError::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 13 || &bytes[..5] != TEXT_MAGIC {
        return Err(fmt("missing PADV1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    if dim == 0 {
        return Err(fmt("dimension must be positive".into()));
    }
    let expected = 13 + rows * dim * 4;
    if bytes.len() != expected {
        return Err(fmt(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[13..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let index = std::fs::read_to_string(index_path).map_err(|e| PadError::io(index_path, e))?;
    let ids: Vec<String> = index.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if ids.len() != rows {
        return Err(fmt(format!(
            "{rows} rows but index {} lists {} ids",
            index_path.display(),
            ids.len()
        )));
    }
    Ok(TextEmbeddings { ids, dim, data })
}

/// Read a text file pair and arrange its rows by vocabulary order.
pub fn load_text_embeddings(
    path: &Path,
    index_path: &Path,
    vocabulary: &[String],
    policy: MissingPolicy,
) -> Result<(Tensor, Vec<String>)> {
    read_text_file(path, index_path)?
        .arrange(vocabulary, policy)
        .map_err(|e| match e {
            PadError::Format(m) => PadError::Format(format!("{}: {m}", index_path.display())),
            other => other,
        })
}

impl TextEmbeddings {
    /// `[vocabulary.len(), dim]` matrix in vocabulary order, plus the ids that were missing.
    pub fn arrange(&self, vocabulary: &[String], policy: MissingPolicy) -> Result<(Tensor, Vec<String>)> {
        let mut row_of: HashMap<&str, usize> = HashMap::with_capacity(self.ids.len());
        for (r, id) in self.ids.iter().enumerate() {
            if row_of.insert(id, r).is_some() {
                return Err(PadError::Format(format!("item {id:?} appears twice")));
            }
        }
        let mut out = Vec::with_capacity(vocabulary.len() * self.dim);
        let mut missing = Vec::new();
        for item in vocabulary {
            match row_of.get(item.as_str()) {
                Some(&r) => out.extend(self.row(r).iter().map(|&v| v as f64)),
                None => {
                    missing.push(item.clone());
                    out.extend(std::iter::repeat_n(0.0, self.dim));
                }
            }
        }
        if policy == MissingPolicy::Strict && !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
            return Err(PadError::Data(format!(
                "{} items have no text embedding: {}",
                missing.len(),
                shown.join(", ")
            )));
        }
        Ok((Tensor::new(vec![vocabulary.len(), self.dim], out)?, missing))
    }
}
