//! FDT1 tensor container.
//!
//! Layout: the magic `FDT1`, a little-endian `u32` header length, a UTF-8
//! JSON header, zero padding up to the next 8-byte boundary, then the blob
//! region. Tensor offsets are relative to the start of the blob region and
//! are themselves 8-byte aligned. Payloads are little-endian `f32`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FDT1";
const ALIGN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub tensors: Vec<EntryHeader>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// Decoded container contents, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub entries: Vec<(String, Tensor<f32>)>,
    pub meta: BTreeMap<String, String>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serializes tensors and metadata into FDT1 bytes.
pub fn encode(
    entries: &[(String, Tensor<f32>)],
    meta: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    if entries.is_empty() {
        return Err(Error::NoTensors);
    }
    let mut seen = HashSet::new();
    let mut headers = Vec::with_capacity(entries.len());
    let mut offset = 0usize;
    for (name, t) in entries {
        if name.is_empty() {
            return Err(Error::InvalidArgument("empty tensor name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
        let nbytes = t.len() * 4;
        headers.push(EntryHeader {
            name: name.clone(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset: offset as u64,
            nbytes: nbytes as u64,
        });
        offset = align_up(offset + nbytes);
    }
    let header = ContainerHeader {
        tensors: headers,
        meta: meta.clone(),
    };
    let text = serde_json::to_vec(&header)?;
    let blob_start = align_up(8 + text.len());

    let mut out = Vec::with_capacity(blob_start + offset);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.resize(blob_start, 0);
    for ((_, t), h) in entries.iter().zip(&header.tensors) {
        out.resize(blob_start + h.offset as usize, 0);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses FDT1 bytes. Every declared region is bounds-checked against the
/// buffer before any payload is copied.
pub fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::CorruptContainer("truncated header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptContainer("truncated header".into()))?;
    let header: ContainerHeader = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::CorruptContainer(format!("bad header: {e}")))?;
    if header.tensors.is_empty() {
        return Err(Error::NoTensors);
    }
    let blob_start = align_up(header_end);
    let blob = bytes.get(blob_start..).unwrap_or(&[]);

    let mut seen = HashSet::new();
    let mut regions: Vec<(u64, u64)> = Vec::with_capacity(header.tensors.len());
    let mut entries = Vec::with_capacity(header.tensors.len());
    for h in &header.tensors {
        if h.dtype != "f32" {
            return Err(Error::UnsupportedDtype(h.dtype.clone()));
        }
        if !seen.insert(h.name.as_str()) {
            return Err(Error::DuplicateName(h.name.clone()));
        }
        if h.shape.is_empty() || h.shape.contains(&0) {
            return Err(Error::CorruptContainer(format!(
                "bad shape for `{}`",
                h.name
            )));
        }
        let expected = h
            .shape
            .iter()
            .try_fold(4u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::CorruptContainer(format!("shape overflow for `{}`", h.name)))?;
        if expected != h.nbytes {
            return Err(Error::CorruptContainer(format!(
                "`{}` declares {} bytes for shape {:?}",
                h.name, h.nbytes, h.shape
            )));
        }
        if h.offset % ALIGN as u64 != 0 {
            return Err(Error::CorruptContainer(format!(
                "misaligned offset for `{}`",
                h.name
            )));
        }
        let end = h
            .offset
            .checked_add(h.nbytes)
            .filter(|&e| e <= blob.len() as u64)
            .ok_or_else(|| Error::CorruptContainer(format!("truncated blob for `{}`", h.name)))?;
        regions.push((h.offset, end));
        let raw = &blob[h.offset as usize..end as usize];
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((h.name.clone(), Tensor::new(h.shape.clone(), data)?));
    }
    regions.sort_unstable();
    if regions.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::CorruptContainer("overlapping blobs".into()));
    }
    Ok(Container {
        entries,
        meta: header.meta,
    })
}

pub fn write_container(
    path: impl AsRef<Path>,
    entries: &[(String, Tensor<f32>)],
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let bytes = encode(entries, meta)?;
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
