//! Named-tensor weight container: `[b"WGT0"] [u32 manifest_len] [JSON manifest] [f32 LE blob]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const WEIGHT_MAGIC: [u8; 4] = *b"WGT0";
const NETS: [&str; 4] = ["ann", "snn", "init", "out"];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerMetadata {
    /// Upsampling convention the weights were trained with. Only `false`
    /// (half-pixel centers) is executed by this runtime.
    #[serde(default)]
    pub align_corners: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default)]
    metadata: ContainerMetadata,
    tensors: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
struct Stored {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightContainer {
    pub metadata: ContainerMetadata,
    tensors: BTreeMap<String, Stored>,
}

fn validate_name(name: &str) -> Result<()> {
    let parts: Vec<&str> = name.split('.').collect();
    let ok = parts.len() == 3
        && NETS.contains(&parts[0])
        && parts[1].parse::<usize>().is_ok()
        && !parts[2].is_empty();
    if ok {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "tensor name {name:?} is not <net>.<layer_index>.<param> with net in {NETS:?}"
        )))
    }
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        validate_name(name)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::contract(format!(
                "tensor {name}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        self.tensors.insert(
            name.to_string(),
            Stored {
                shape: shape.to_vec(),
                data,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .get(name)
            .map(|s| (s.shape.as_slice(), s.data.as_slice()))
    }

    /// Fetches a tensor and checks it has exactly `shape`.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let stored = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("weight container has no tensor {name}")))?;
        if stored.shape != shape {
            return Err(Error::contract(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                stored.shape
            )));
        }
        Ok(&stored.data)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|s| s.data.len()).sum()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut offset = 0u64;
        self.tensors
            .iter()
            .map(|(name, s)| {
                let length = (s.data.len() * 4) as u64;
                let entry = ManifestEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: s.shape.clone(),
                    offset,
                    length,
                };
                offset += length;
                entry
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            metadata: self.metadata.clone(),
            tensors: self.manifest(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let blob_len: usize = self.tensors.values().map(|s| s.data.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + json.len() + blob_len);
        out.extend_from_slice(&WEIGHT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for s in self.tensors.values() {
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let parse_err = |location: String, message: String| Error::Parse {
            source_name: source_name.to_string(),
            location,
            message,
        };
        if bytes.len() < 8 || bytes[..4] != WEIGHT_MAGIC {
            return Err(parse_err("offset 0".into(), "missing WGT0 magic".into()));
        }
        let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let blob_start = 8 + manifest_len;
        if bytes.len() < blob_start {
            return Err(parse_err(
                "offset 4".into(),
                format!("manifest length {manifest_len} exceeds file size"),
            ));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[8..blob_start])
            .map_err(|e| parse_err("manifest".into(), e.to_string()))?;
        let blob = &bytes[blob_start..];
        let mut container = WeightContainer {
            metadata: manifest.metadata,
            tensors: BTreeMap::new(),
        };
        for entry in manifest.tensors {
            if entry.dtype != "f32" {
                return Err(parse_err(
                    format!("tensor {}", entry.name),
                    format!("unsupported dtype {}", entry.dtype),
                ));
            }
            let count: usize = entry.shape.iter().product();
            let (start, len) = (entry.offset as usize, entry.length as usize);
            if len != count * 4 || start.checked_add(len).is_none_or(|end| end > blob.len()) {
                return Err(parse_err(
                    format!("tensor {}", entry.name),
                    "byte range inconsistent with shape or blob size".into(),
                ));
            }
            let data = blob[start..start + len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            container.insert(&entry.name, &entry.shape, data)?;
        }
        Ok(container)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_names() {
        let mut c = WeightContainer::new();
        assert!(c.insert("ann.0.conv1_w", &[1], vec![0.0]).is_ok());
        assert!(c.insert("bogus.0.w", &[1], vec![0.0]).is_err());
        assert!(c.insert("snn.x.w", &[1], vec![0.0]).is_err());
        assert!(c.insert("snn.1", &[1], vec![0.0]).is_err());
        assert!(c.insert("snn.1.w", &[2], vec![0.0]).is_err());
    }

    #[test]
    fn bytes_round_trip_and_layout() {
        let mut c = WeightContainer::new();
        c.insert("snn.2.bn_gamma", &[3], vec![1.0, -2.0, 0.5])
            .unwrap();
        c.insert("ann.1.conv1_w", &[1, 1, 1, 1], vec![4.25])
            .unwrap();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"WGT0");
        let back = WeightContainer::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, c);
        // blob is sorted by name, so ann.* comes first
        let m = c.manifest();
        assert_eq!(m[0].name, "ann.1.conv1_w");
        assert_eq!((m[1].offset, m[1].length), (4, 12));
        assert!(c.require("snn.2.bn_gamma", &[2]).is_err());
        assert!(c.require("snn.9.bn_gamma", &[3]).is_err());
    }

    #[test]
    fn truncated_blob_is_a_parse_error() {
        let mut c = WeightContainer::new();
        c.insert("out.10.conv_w", &[2], vec![1.0, 2.0]).unwrap();
        let bytes = c.to_bytes();
        let err = WeightContainer::from_bytes(&bytes[..bytes.len() - 2], "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(WeightContainer::from_bytes(b"nope", "mem").is_err());
    }
}
