//! Portable named-tensor store (the `WTAR1` file format).
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! offset 0   magic "WTAR1" + three zero pad bytes
//! offset 8   u64: byte length of the JSON index
//! offset 16  index JSON (UTF-8), then zero padding to an 8-byte boundary
//! ...        raw f32 payloads, each starting at its 8-byte-aligned offset
//! ```
//!
//! The index holds `{"entries": [{name, dtype, shape, offset}...],
//! "metadata": {...}}` with entries sorted by name and absolute file
//! offsets, so any language can parse it with a JSON reader and one seek
//! per tensor. Metadata records provenance and an audit line per surgery
//! applied. Serialization is canonical: the same archive contents always
//! produce the same bytes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"WTAR1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a WTAR1 archive (bad magic)")]
    BadMagic,
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("unsupported dtype {0:?} (only f32)")]
    UnsupportedDtype(String),
    #[error("tensor values must be finite ({name})")]
    NonFinite { name: String },
    #[error("tensor {name}: {count} values do not fill shape {shape:?}")]
    ShapeMismatch {
        name: String,
        count: usize,
        shape: Vec<usize>,
    },
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("no tensor named {0}")]
    MissingTensor(String),
}

/// Dense f32 tensor: `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ArchiveError> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(ArchiveError::ShapeMismatch {
                name: String::new(),
                count: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Index {
    entries: Vec<IndexEntry>,
    metadata: BTreeMap<String, String>,
}

/// Named-tensor archive with provenance metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightArchive {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), ArchiveError> {
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(ArchiveError::NonFinite {
                name: name.to_string(),
            });
        }
        if self.entries.contains_key(name) {
            return Err(ArchiveError::DuplicateName(name.to_string()));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    /// Insert, replacing any existing entry of the same name.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<(), ArchiveError> {
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(ArchiveError::NonFinite {
                name: name.to_string(),
            });
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, ArchiveError> {
        self.entries
            .get(name)
            .ok_or_else(|| ArchiveError::MissingTensor(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: &str, value: &str) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    /// Append one line to the `history` metadata entry (the audit trail).
    pub fn append_history(&mut self, line: &str) {
        let entry = self.metadata.entry("history".to_string()).or_default();
        if !entry.is_empty() {
            entry.push('\n');
        }
        entry.push_str(line);
    }

    pub fn history(&self) -> Vec<&str> {
        self.metadata
            .get("history")
            .map(|h| h.lines().collect())
            .unwrap_or_default()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let align = |n: usize| n.div_ceil(8) * 8;
        let mut index = Index {
            entries: Vec::with_capacity(self.entries.len()),
            metadata: self.metadata.clone(),
        };
        for (name, t) in &self.entries {
            index.entries.push(IndexEntry {
                name: name.clone(),
                dtype: "f32".to_string(),
                shape: t.shape.clone(),
                offset: 0,
            });
        }
        // Offsets depend on the index length and vice versa. Grow the
        // reserved index region until the encoding fits, then pad with
        // trailing spaces (valid JSON whitespace); guaranteed to terminate.
        let mut index_len = 0usize;
        let index_bytes = loop {
            let mut off = align(16 + index_len);
            for (entry, t) in index.entries.iter_mut().zip(self.entries.values()) {
                entry.offset = off as u64;
                off = align(off + t.data.len() * 4);
            }
            let mut encoded = serde_json::to_vec(&index).expect("index serializes");
            if encoded.len() <= index_len {
                encoded.resize(index_len, b' ');
                break encoded;
            }
            index_len = encoded.len();
        };

        let total = index
            .entries
            .last()
            .zip(self.entries.values().next_back())
            .map(|(e, t)| align(e.offset as usize + t.data.len() * 4))
            .unwrap_or_else(|| align(16 + index_bytes.len()));
        let mut out = vec![0u8; total];
        out[..5].copy_from_slice(MAGIC);
        out[8..16].copy_from_slice(&(index_bytes.len() as u64).to_le_bytes());
        out[16..16 + index_bytes.len()].copy_from_slice(&index_bytes);
        for (entry, t) in index.entries.iter().zip(self.entries.values()) {
            let start = entry.offset as usize;
            for (i, v) in t.data.iter().enumerate() {
                out[start + i * 4..start + i * 4 + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < 16 || &bytes[..5] != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let index_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let index_end = 16usize
            .checked_add(index_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ArchiveError::Corrupt("index length exceeds file".to_string()))?;
        let index: Index = serde_json::from_slice(&bytes[16..index_end])
            .map_err(|e| ArchiveError::Corrupt(format!("index JSON: {e}")))?;

        let mut archive = WeightArchive {
            entries: BTreeMap::new(),
            metadata: index.metadata,
        };
        for entry in index.entries {
            if entry.dtype != "f32" {
                return Err(ArchiveError::UnsupportedDtype(entry.dtype));
            }
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start
                .checked_add(count * 4)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| {
                    ArchiveError::Corrupt(format!("payload of {} exceeds file", entry.name))
                })?;
            if start % 8 != 0 {
                return Err(ArchiveError::Corrupt(format!(
                    "payload of {} is not 8-byte aligned",
                    entry.name
                )));
            }
            let data: Vec<f32> = bytes[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if archive.entries.contains_key(&entry.name) {
                return Err(ArchiveError::DuplicateName(entry.name));
            }
            archive
                .entries
                .insert(entry.name, Tensor::new(entry.shape, data)?);
        }
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<(), ArchiveError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ArchiveError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightArchive {
        let mut a = WeightArchive::new();
        a.insert(
            "head.weight",
            Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        )
        .unwrap();
        a.insert(
            "stem.conv1.weight",
            Tensor::new(vec![1, 1, 1, 1], vec![0.5]).unwrap(),
        )
        .unwrap();
        a.set_metadata("source", "test");
        a
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let a = sample();
        let bytes = a.to_bytes();
        let b = WeightArchive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(bytes, b.to_bytes());
    }

    #[test]
    fn layout_is_parseable_by_hand() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..5], b"WTAR1");
        let index_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let index: serde_json::Value = serde_json::from_slice(&bytes[16..16 + index_len]).unwrap();
        let entries = index["entries"].as_array().unwrap();
        assert_eq!(entries.len(), 2);
        // Entries sorted by name; offsets 8-byte aligned.
        assert_eq!(entries[0]["name"], "head.weight");
        let off = entries[0]["offset"].as_u64().unwrap() as usize;
        assert_eq!(off % 8, 0);
        let first = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        assert_eq!(first, 1.0);
    }

    #[test]
    fn serialization_is_canonical() {
        let a = sample();
        assert_eq!(a.to_bytes(), a.to_bytes());
        let b = sample();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(ArchiveError::BadMagic)
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            WeightArchive::from_bytes(&bytes[..bytes.len() - 8]),
            Err(ArchiveError::Corrupt(_))
        ));
    }

    #[test]
    fn non_finite_tensors_rejected() {
        let mut a = WeightArchive::new();
        let t = Tensor::new(vec![1], vec![f32::NAN]).unwrap();
        assert!(matches!(a.insert("x", t), Err(ArchiveError::NonFinite { .. })));
    }

    #[test]
    fn shape_count_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = WeightArchive::new();
        a.insert("x", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        assert!(matches!(
            a.insert("x", Tensor::new(vec![1], vec![2.0]).unwrap()),
            Err(ArchiveError::DuplicateName(_))
        ));
    }

    #[test]
    fn history_accumulates_lines() {
        let mut a = sample();
        a.append_history("first op");
        a.append_history("second op");
        assert_eq!(a.history(), vec!["first op", "second op"]);
    }

    #[test]
    fn empty_archive_round_trips() {
        let a = WeightArchive::new();
        let b = WeightArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
    }
}
