//! On-disk feature store: a data file of appended records plus a
//! companion index keyed by image id hash. Little-endian f32 payloads,
//! bit-exact round trips.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureTag, FeatureVector};

const DATA_MAGIC: &[u8; 4] = b"FSTD";
const INDEX_MAGIC: &[u8; 4] = b"FSTI";
const STORE_VERSION: u16 = 1;

/// Fingerprint for entries produced without a network (hog, lbp).
pub const NO_NETWORK: u64 = 0;

pub fn id_hash(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredFeature {
    /// Truncated hash of the producing network's parameters, or
    /// [`NO_NETWORK`] for handcrafted descriptors.
    pub fingerprint: u64,
    pub vector: FeatureVector,
}

#[derive(Debug)]
pub struct FeatureStore {
    base: PathBuf,
    entries: BTreeMap<(String, FeatureTag), StoredFeature>,
}

impl FeatureStore {
    fn data_path(base: &Path) -> PathBuf {
        base.with_extension("dat")
    }

    fn index_path(base: &Path) -> PathBuf {
        base.with_extension("idx")
    }

    pub fn exists(base: &Path) -> bool {
        Self::data_path(base).exists()
    }

    /// Fresh empty store; nothing touches disk until [`save`](Self::save).
    pub fn create(base: &Path) -> Self {
        FeatureStore {
            base: base.to_path_buf(),
            entries: BTreeMap::new(),
        }
    }

    pub fn open_or_create(base: &Path) -> Result<Self> {
        if Self::exists(base) {
            Self::open(base)
        } else {
            Ok(Self::create(base))
        }
    }

    pub fn open(base: &Path) -> Result<Self> {
        let data_path = Self::data_path(base);
        let index_path = Self::index_path(base);
        let data = std::fs::read(&data_path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", data_path.display())))?;
        if !index_path.exists() {
            return Err(Error::Format(format!(
                "feature store {} has no index file {}",
                data_path.display(),
                index_path.display()
            )));
        }
        let index = std::fs::read(&index_path)?;
        let offsets = parse_index(&index, &index_path)?;

        let mut entries = BTreeMap::new();
        check_magic(&data, DATA_MAGIC, &data_path)?;
        for (hash, tag_code, offset) in offsets {
            let tag = FeatureTag::from_code(tag_code).map_err(|_| {
                Error::Format(format!("index contains unknown feature tag {tag_code}"))
            })?;
            let (id, stored) = parse_record(&data, offset as usize, &data_path)?;
            if stored.vector.tag() != tag || id_hash(&id) != hash {
                return Err(Error::Format(format!(
                    "index entry disagrees with record at offset {offset} in {}",
                    data_path.display()
                )));
            }
            entries.insert((id, tag), stored);
        }
        Ok(FeatureStore {
            base: base.to_path_buf(),
            entries,
        })
    }

    /// Insert or replace the vector for (id, tag of the vector).
    pub fn insert(&mut self, id: &str, vector: FeatureVector, fingerprint: u64) {
        self.entries.insert(
            (id.to_string(), vector.tag()),
            StoredFeature {
                fingerprint,
                vector,
            },
        );
    }

    pub fn get(&self, id: &str, tag: FeatureTag) -> Option<&StoredFeature> {
        self.entries.get(&(id.to_string(), tag))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_tag(&self, tag: FeatureTag) -> bool {
        self.entries.keys().any(|(_, t)| *t == tag)
    }

    /// Distinct fingerprints present for a tag, ascending.
    pub fn fingerprints(&self, tag: FeatureTag) -> Vec<u64> {
        let mut fps: Vec<u64> = self
            .entries
            .iter()
            .filter(|((_, t), _)| *t == tag)
            .map(|(_, s)| s.fingerprint)
            .collect();
        fps.sort_unstable();
        fps.dedup();
        fps
    }

    /// Write both files. Entries land sorted by (id, tag) so equal
    /// contents give equal bytes regardless of insertion history.
    pub fn save(&self) -> Result<()> {
        let mut data = Vec::new();
        data.extend_from_slice(DATA_MAGIC);
        data.extend_from_slice(&STORE_VERSION.to_le_bytes());
        let mut index_entries = Vec::new();
        for ((id, tag), stored) in &self.entries {
            let offset = data.len() as u64;
            index_entries.push((id_hash(id), tag.code(), offset));
            let id_bytes = id.as_bytes();
            data.extend_from_slice(&(id_bytes.len() as u16).to_le_bytes());
            data.extend_from_slice(id_bytes);
            data.push(tag.code());
            data.extend_from_slice(&stored.fingerprint.to_le_bytes());
            data.extend_from_slice(&(stored.vector.values().len() as u32).to_le_bytes());
            for v in stored.vector.values() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut index = Vec::new();
        index.extend_from_slice(INDEX_MAGIC);
        index.extend_from_slice(&STORE_VERSION.to_le_bytes());
        index.extend_from_slice(&(index_entries.len() as u32).to_le_bytes());
        for (hash, code, offset) in index_entries {
            index.extend_from_slice(&hash.to_le_bytes());
            index.push(code);
            index.extend_from_slice(&offset.to_le_bytes());
        }

        write_atomic(&Self::data_path(&self.base), &data)?;
        write_atomic(&Self::index_path(&self.base), &index)?;
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn check_magic(data: &[u8], magic: &[u8; 4], path: &Path) -> Result<()> {
    if data.len() < 6 || &data[..4] != magic {
        return Err(Error::Format(format!(
            "{} is not a feature store file (bad magic)",
            path.display()
        )));
    }
    let version = u16::from_le_bytes([data[4], data[5]]);
    if version != STORE_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature store version {version}"
        )));
    }
    Ok(())
}

fn parse_index(bytes: &[u8], path: &Path) -> Result<Vec<(u64, u8, u64)>> {
    check_magic(bytes, INDEX_MAGIC, path)?;
    let mut cur = &bytes[6..];
    let mut count_buf = [0u8; 4];
    cur.read_exact(&mut count_buf)
        .map_err(|_| Error::Format(format!("truncated index {}", path.display())))?;
    let count = u32::from_le_bytes(count_buf);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut entry = [0u8; 17];
        cur.read_exact(&mut entry)
            .map_err(|_| Error::Format(format!("truncated index {}", path.display())))?;
        let hash = u64::from_le_bytes(entry[..8].try_into().unwrap());
        let code = entry[8];
        let offset = u64::from_le_bytes(entry[9..].try_into().unwrap());
        out.push((hash, code, offset));
    }
    if !cur.is_empty() {
        return Err(Error::Format(format!(
            "trailing bytes after index {}",
            path.display()
        )));
    }
    Ok(out)
}

fn parse_record(data: &[u8], offset: usize, path: &Path) -> Result<(String, StoredFeature)> {
    let truncated = || Error::Format(format!("truncated record in {}", path.display()));
    let mut cur = data.get(offset..).ok_or_else(truncated)?;
    let mut u16_buf = [0u8; 2];
    cur.read_exact(&mut u16_buf).map_err(|_| truncated())?;
    let id_len = u16::from_le_bytes(u16_buf) as usize;
    let mut id_bytes = vec![0u8; id_len];
    cur.read_exact(&mut id_bytes).map_err(|_| truncated())?;
    let id = String::from_utf8(id_bytes)
        .map_err(|_| Error::Format(format!("non-utf8 image id in {}", path.display())))?;
    let mut code = [0u8; 1];
    cur.read_exact(&mut code).map_err(|_| truncated())?;
    let tag = FeatureTag::from_code(code[0])
        .map_err(|_| Error::Format(format!("unknown feature tag {}", code[0])))?;
    let mut u64_buf = [0u8; 8];
    cur.read_exact(&mut u64_buf).map_err(|_| truncated())?;
    let fingerprint = u64::from_le_bytes(u64_buf);
    let mut u32_buf = [0u8; 4];
    cur.read_exact(&mut u32_buf).map_err(|_| truncated())?;
    let len = u32::from_le_bytes(u32_buf) as usize;
    if len != tag.expected_len() {
        return Err(Error::Format(format!(
            "stored {} vector has length {len}, contract says {}",
            tag.as_str(),
            tag.expected_len()
        )));
    }
    let mut values = Vec::with_capacity(len);
    let mut f32_buf = [0u8; 4];
    for _ in 0..len {
        cur.read_exact(&mut f32_buf).map_err(|_| truncated())?;
        values.push(f32::from_le_bytes(f32_buf));
    }
    let vector = FeatureVector::new(tag, values)
        .map_err(|e| Error::Format(format!("invalid stored vector: {e}")))?;
    Ok((id, StoredFeature { fingerprint, vector }))
}
