//! Bit-exact checkpoint containers.
//!
//! Wire format: magic `TAEC`, u16-LE format version, u32-LE manifest length,
//! a JSON manifest (kind, config, entry index), then entry payloads
//! back-to-back. Every payload is 64-bit little-endian (f64 or i64) and
//! carries its own CRC32 in the manifest; saves are atomic (temp + rename).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TAEC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Payload {
    fn dtype(&self) -> &'static str {
        match self {
            Payload::F64(_) => "f64",
            Payload::I64(_) => "i64",
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::I64(v) => v.len(),
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 8);
        match self {
            Payload::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::I64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    len_bytes: u64,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    config: serde_json::Value,
    entries: Vec<ManifestEntry>,
}

/// A named-entry container with a JSON manifest. Entries serialize in
/// sorted-name order, so identical contents yield identical bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Container { kind: kind.to_string(), config, entries: BTreeMap::new() }
    }

    pub fn put_f64(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        self.put(name, shape, Payload::F64(values))
    }

    pub fn put_i64(&mut self, name: &str, shape: Vec<usize>, values: Vec<i64>) -> Result<()> {
        self.put(name, shape, Payload::I64(values))
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.put_f64(name, t.shape().to_vec(), t.values().to_vec())
    }

    fn put(&mut self, name: &str, shape: Vec<usize>, payload: Payload) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != payload.len() {
            return Err(Error::dim("container entry", &shape, payload.len()));
        }
        if self.entries.insert(name.to_string(), Entry { shape, payload }).is_some() {
            return Err(Error::Data(format!("duplicate container entry {name}")));
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Data(format!("missing container entry {name}")))
    }

    pub fn f64_entry(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let e = self.entry(name)?;
        match &e.payload {
            Payload::F64(v) => Ok((&e.shape, v)),
            Payload::I64(_) => Err(Error::Data(format!("entry {name} is i64, expected f64"))),
        }
    }

    pub fn i64_entry(&self, name: &str) -> Result<(&[usize], &[i64])> {
        let e = self.entry(name)?;
        match &e.payload {
            Payload::I64(v) => Ok((&e.shape, v)),
            Payload::F64(_) => Err(Error::Data(format!("entry {name} is f64, expected i64"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, values) = self.f64_entry(name)?;
        Tensor::new(shape.to_vec(), values.to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payloads = Vec::with_capacity(self.entries.len());
        let mut manifest_entries = Vec::with_capacity(self.entries.len());
        for (name, e) in &self.entries {
            let bytes = e.payload.to_le_bytes();
            manifest_entries.push(ManifestEntry {
                name: name.clone(),
                dtype: e.payload.dtype().to_string(),
                shape: e.shape.clone(),
                len_bytes: bytes.len() as u64,
                crc32: crc32fast::hash(&bytes),
            });
            payloads.push(bytes);
        }
        let manifest = Manifest {
            kind: self.kind.clone(),
            config: self.config.clone(),
            entries: manifest_entries,
        };
        let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        for p in payloads {
            out.extend_from_slice(&p);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Truncated(format!("{} bytes is below the header size", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let manifest_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if bytes.len() < 10 + manifest_len {
            return Err(Error::Truncated("manifest extends past end of file".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[10..10 + manifest_len])
            .map_err(|e| Error::Data(format!("bad manifest: {e}")))?;
        let mut entries = BTreeMap::new();
        let mut off = 10 + manifest_len;
        for me in manifest.entries {
            let len = me.len_bytes as usize;
            if bytes.len() < off + len {
                return Err(Error::Truncated(format!("entry {} extends past end of file", me.name)));
            }
            let raw = &bytes[off..off + len];
            off += len;
            if crc32fast::hash(raw) != me.crc32 {
                return Err(Error::Crc(me.name));
            }
            let n: usize = me.shape.iter().product();
            if n * 8 != len {
                return Err(Error::dim("container entry", &me.shape, len));
            }
            let payload = match me.dtype.as_str() {
                "f64" => Payload::F64(
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                "i64" => Payload::I64(
                    raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                other => return Err(Error::Data(format!("unknown dtype {other}"))),
            };
            entries.insert(me.name, Entry { shape: me.shape, payload });
        }
        if off != bytes.len() {
            return Err(Error::Truncated(format!("{} trailing bytes", bytes.len() - off)));
        }
        Ok(Container { kind: manifest.kind, config: manifest.config, entries })
    }

    /// Atomic write (temp file + rename). Returns the CRC32 of the file.
    pub fn save(&self, path: &Path) -> Result<u32> {
        let bytes = self.to_bytes();
        let checksum = crc32fast::hash(&bytes);
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(checksum)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
