//! Named parameter registry and its on-disk format.
//!
//! File layout:
//!
//! ```text
//! LORT-WEIGHTS 1\n
//! <header byte count, decimal>\n
//! <JSON header: optional model config + manifest of (name, shape, offset, dtype)>
//! <little-endian f32 blob>
//! ```
//!
//! Offsets in the manifest are byte offsets into the blob.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::config::ModelConfig;
use crate::error::{Error, Result};

const MAGIC: &str = "LORT-WEIGHTS 1";
pub const DTYPE_TAG: &str = "f32-le";

/// How a parameter starts out before any training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations under a dotted prefix.
#[derive(Debug, Default)]
pub struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

pub const WEIGHT_STD: f64 = 0.02;

impl SpecBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> &mut Self {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        self
    }

    /// `{name}.weight` with shape `[d0, d1, kh, kw]` and a zero `{name}.bias` of `bias_len`.
    pub fn conv(&mut self, name: &str, shape: [usize; 4], bias_len: usize) -> &mut Self {
        self.push(format!("{name}.weight"), &shape, Init::Normal(WEIGHT_STD));
        self.push(format!("{name}.bias"), &[bias_len], Init::Constant(0.0))
    }

    /// A convolution whose weights also start at zero.
    pub fn zero_conv(&mut self, name: &str, shape: [usize; 4], bias_len: usize) -> &mut Self {
        self.push(format!("{name}.weight"), &shape, Init::Constant(0.0));
        self.push(format!("{name}.bias"), &[bias_len], Init::Constant(0.0))
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> &mut Self {
        self.push(format!("{name}.gain"), &[channels], Init::Constant(1.0));
        self.push(format!("{name}.shift"), &[channels], Init::Constant(0.0))
    }

    pub fn prelu(&mut self, name: &str, channels: usize) -> &mut Self {
        self.push(format!("{name}.slope"), &[channels], Init::Constant(0.25))
    }

    pub fn extend(&mut self, other: SpecBuilder) -> &mut Self {
        self.specs.extend(other.specs);
        self
    }

    pub fn build(self) -> Vec<ParamSpec> {
        self.specs
    }
}

/// Ordered map from dotted parameter path to array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: Vec<(String, DenseArray)>,
    index: HashMap<String, usize>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draw every parameter from its [`Init`] with a seeded generator.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for spec in specs {
            let arr = match spec.init {
                Init::Constant(v) => DenseArray::filled(&spec.shape, v),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    DenseArray::from_fn(&spec.shape, |_| dist.sample(&mut rng))
                }
            };
            store.insert(&spec.name, arr);
        }
        store
    }

    /// Every parameter zero, whatever its declared init.
    pub fn zeros(specs: &[ParamSpec]) -> Self {
        let mut store = Self::new();
        for spec in specs {
            store.insert(&spec.name, DenseArray::zeros(&spec.shape));
        }
        store
    }

    pub fn insert(&mut self, name: &str, value: DenseArray) {
        match self.index.get(name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push((name.to_string(), value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&DenseArray> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::MissingWeights(vec![name.to_string()]))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }

    /// All parameters flattened in manifest order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.total_params());
        for (_, a) in &self.entries {
            v.extend_from_slice(a.data());
        }
        v
    }

    /// Overwrite all parameters from a flat vector in manifest order.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, store holds {}",
                flat.len(),
                self.total_params()
            )));
        }
        let mut at = 0;
        for (_, a) in &mut self.entries {
            let n = a.len();
            a.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Check presence and shape of every declared parameter.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        let missing: Vec<String> = specs
            .iter()
            .filter(|s| !self.contains(&s.name))
            .map(|s| s.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingWeights(missing));
        }
        for s in specs {
            let found = self.get(&s.name)?.shape();
            if found != s.shape.as_slice() {
                return Err(Error::WeightShape {
                    name: s.name.clone(),
                    expected: s.shape.clone(),
                    found: found.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Scoped view under `prefix`.
    pub fn scope(&self, prefix: &str) -> Params<'_> {
        Params {
            store: self,
            prefix: prefix.to_string(),
        }
    }

    pub fn to_bytes(&self, config: Option<&ModelConfig>) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for (name, a) in &self.entries {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: a.shape().to_vec(),
                offset,
                dtype: DTYPE_TAG.to_string(),
            });
            offset += a.len() * 4;
        }
        let header = Header {
            config: config.cloned(),
            total_scalars: self.total_params(),
            entries,
        };
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + offset + 32);
        out.extend_from_slice(format!("{MAGIC}\n{}\n", json.len()).as_bytes());
        out.extend_from_slice(json.as_bytes());
        for (_, a) in &self.entries {
            for &v in a.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Option<ModelConfig>)> {
        let bad = |m: &str| Error::WeightFile(m.to_string());
        let (line1, rest) = split_line(bytes).ok_or_else(|| bad("missing magic line"))?;
        if line1 != MAGIC.as_bytes() {
            return Err(bad("bad magic line"));
        }
        let (line2, rest) = split_line(rest).ok_or_else(|| bad("missing header length"))?;
        let header_len: usize = std::str::from_utf8(line2)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("header length is not a number"))?;
        if rest.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| Error::WeightFile(format!("header: {e}")))?;
        let blob = &rest[header_len..];
        if blob.len() != header.total_scalars * 4 {
            return Err(Error::WeightFile(format!(
                "blob holds {} bytes, manifest declares {} scalars ({} bytes)",
                blob.len(),
                header.total_scalars,
                header.total_scalars * 4
            )));
        }
        let mut store = Self::new();
        let mut expected_offset = 0;
        for e in header.entries {
            if e.dtype != DTYPE_TAG {
                return Err(Error::WeightFile(format!(
                    "entry `{}` has dtype `{}`, only `{DTYPE_TAG}` is supported",
                    e.name, e.dtype
                )));
            }
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + n * 4 > blob.len() {
                return Err(Error::WeightFile(format!(
                    "entry `{}` has inconsistent offset {}",
                    e.name, e.offset
                )));
            }
            let data = blob[e.offset..e.offset + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            store.insert(&e.name, DenseArray::new(&e.shape, data)?);
            expected_offset += n * 4;
        }
        if expected_offset != blob.len() {
            return Err(bad("manifest does not cover the whole blob"));
        }
        Ok((store, header.config))
    }

    pub fn save(&self, path: &Path, config: Option<&ModelConfig>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes(config))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<ModelConfig>)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn split_line(b: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = b.iter().position(|&c| c == b'\n')?;
    Some((&b[..i], &b[i + 1..]))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<ModelConfig>,
    total_scalars: usize,
    entries: Vec<ManifestEntry>,
}

/// Read-only view of the parameters under one dotted prefix.
#[derive(Debug, Clone)]
pub struct Params<'a> {
    store: &'a WeightStore,
    prefix: String,
}

impl<'a> Params<'a> {
    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn scope(&self, name: &str) -> Params<'a> {
        Params {
            store: self.store,
            prefix: self.path(name),
        }
    }

    pub fn get(&self, name: &str) -> Result<&'a DenseArray> {
        self.store.get(&self.path(name))
    }

    pub fn get_opt(&self, name: &str) -> Option<&'a DenseArray> {
        self.store.get(&self.path(name)).ok()
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_specs() -> Vec<ParamSpec> {
        let mut b = SpecBuilder::new();
        b.conv("a.conv", [2, 3, 3, 3], 2).norm("a.norm", 2).prelu("a.act", 2);
        b.build()
    }

    #[test]
    fn initialization_follows_declared_init() {
        let store = WeightStore::initialize(&small_specs(), 3);
        assert_eq!(store.total_params(), 54 + 2 + 4 + 2);
        assert!(store.get("a.conv.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store.get("a.norm.gain").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(store.get("a.act.slope").unwrap().data().iter().all(|&v| v == 0.25));
        let w = store.get("a.conv.weight").unwrap();
        assert!(w.data().iter().any(|&v| v != 0.0));
        assert_eq!(WeightStore::initialize(&small_specs(), 3), store);
    }

    #[test]
    fn file_roundtrip_preserves_f32_values() {
        let store = WeightStore::initialize(&small_specs(), 9);
        let bytes = store.to_bytes(None);
        let (back, cfg) = WeightStore::from_bytes(&bytes).unwrap();
        assert!(cfg.is_none());
        assert_eq!(back.names().collect::<Vec<_>>(), store.names().collect::<Vec<_>>());
        for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let bytes = WeightStore::initialize(&small_specs(), 1).to_bytes(None);
        let err = WeightStore::from_bytes(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::WeightFile(_)));
        assert!(WeightStore::from_bytes(b"nonsense\n").is_err());
    }

    #[test]
    fn validate_lists_missing_names() {
        let specs = small_specs();
        let mut store = WeightStore::new();
        store.insert("a.conv.weight", DenseArray::zeros(&[2, 3, 3, 3]));
        match store.validate(&specs).unwrap_err() {
            Error::MissingWeights(names) => {
                assert_eq!(names.len(), 4);
                assert!(names.contains(&"a.norm.gain".to_string()));
            }
            e => panic!("unexpected {e}"),
        }
        store.insert("a.conv.weight", DenseArray::zeros(&[2, 3, 1, 1]));
        for s in &specs[1..] {
            store.insert(&s.name, DenseArray::zeros(&s.shape));
        }
        assert!(matches!(store.validate(&specs), Err(Error::WeightShape { .. })));
    }

    #[test]
    fn scoped_lookup() {
        let store = WeightStore::initialize(&small_specs(), 0);
        let p = store.scope("a");
        assert_eq!(p.get("conv.bias").unwrap().len(), 2);
        assert_eq!(p.scope("norm").path("gain"), "a.norm.gain");
        assert!(p.get("missing").is_err());
    }
}
