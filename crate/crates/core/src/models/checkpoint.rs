//! Binary checkpoint container.
//!
//! ```text
//! "UNSR"                 4-byte magic
//! u16                    format version
//! u32 + bytes            metadata block: UTF-8 `key = value` lines, keys sorted
//! per parameter:
//!   u32 + bytes          name
//!   u32                  rank
//!   u32 × rank           extents
//!   f32 × numel          values
//! u32                    CRC32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Architecture, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UNSR";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Decoded container: metadata plus named tensors, independent of what they hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub records: Vec<(String, Tensor)>,
}

pub fn encode_container(c: &Container) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let mut meta = String::new();
    for (k, v) in &c.metadata {
        meta.push_str(k);
        meta.push_str(" = ");
        meta.push_str(v);
        meta.push('\n');
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for (name, t) in &c.records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint"));
    }
    if bytes.len() < 6 + 4 {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes([
        bytes[body_end],
        bytes[body_end + 1],
        bytes[body_end + 2],
        bytes[body_end + 3],
    ]);
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::format(body_end as u64, "CRC mismatch (truncated or corrupt file)"));
    }

    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: 6,
    };
    let meta_len = r.u32("metadata length")? as usize;
    let meta_start = r.pos;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| Error::format(meta_start as u64, "metadata is not UTF-8"))?;
    let mut metadata = BTreeMap::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::format(meta_start as u64, format!("bad metadata line `{line}`")))?;
        metadata.insert(k.to_string(), v.to_string());
    }

    let mut records = Vec::new();
    while r.pos < body_end {
        let at = r.pos as u64;
        let name_len = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "record name")?)
            .map_err(|_| Error::format(at, "record name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format(at, format!("implausible rank {rank} for `{name}`")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let raw = r.take(n * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))?;
        records.push((name, t));
    }
    Ok(Container { metadata, records })
}

pub fn write_container(c: &Container, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_container(c)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

/// A loaded model plus everything else stored alongside it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: BTreeMap<String, String>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::format(0, format!("bad integer list `{s}`")))
        })
        .collect()
}

pub(crate) fn spec_metadata(spec: &ModelSpec) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("architecture".into(), spec.architecture.to_string());
    m.insert("widths".into(), join(&spec.widths));
    m.insert("strides".into(), join(&spec.strides));
    m.insert("input_shape".into(), join(&spec.input_shape));
    m.insert("num_classes".into(), spec.num_classes.to_string());
    m.insert("init_seed".into(), spec.init_seed.to_string());
    m
}

fn spec_from_metadata(m: &BTreeMap<String, String>) -> Result<ModelSpec> {
    let get = |k: &str| {
        m.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(0, format!("missing metadata key `{k}`")))
    };
    let architecture: Architecture = get("architecture")?.parse()?;
    Ok(ModelSpec {
        architecture,
        widths: split(get("widths")?)?,
        strides: split(get("strides")?)?,
        input_shape: split(get("input_shape")?)?,
        num_classes: get("num_classes")?
            .parse()
            .map_err(|_| Error::format(0, "bad num_classes"))?,
        init_seed: get("init_seed")?.parse().map_err(|_| Error::format(0, "bad init_seed"))?,
    })
}

/// Writes `model` with its spec and any extra metadata (training settings, dataset name, ...).
pub fn save_checkpoint(model: &Model, extra: &BTreeMap<String, String>, path: impl AsRef<Path>) -> Result<()> {
    let mut metadata = extra.clone();
    metadata.extend(spec_metadata(model.spec()));
    let c = Container {
        metadata,
        records: model
            .params()
            .iter()
            .map(|(n, t)| {
                let mut t = t.clone();
                t.zero_grad();
                (n.clone(), t.with_requires_grad(false))
            })
            .collect(),
    };
    write_container(&c, path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let c = decode_container(bytes)?;
    let spec = spec_from_metadata(&c.metadata)?;
    let model = Model::from_parts(spec, c.records).map_err(|e| Error::format(0, e.to_string()))?;
    Ok(Checkpoint {
        model,
        metadata: c.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;

    fn model() -> Model {
        build_model(&ModelSpec::smallcnn(vec![1, 8, 8], vec![4, 8], vec![1, 2], 3, 9)).unwrap()
    }

    fn encoded(m: &Model) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(m, &BTreeMap::new(), &p).unwrap();
        std::fs::read(p).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let ck = decode_checkpoint(&encoded(&m)).unwrap();
        assert_eq!(ck.model.spec(), m.spec());
        for ((na, ta), (nb, tb)) in ck.model.params().iter().zip(m.params()) {
            assert_eq!(na, nb);
            let ba: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn corrupt_magic_rejected() {
        let mut b = encoded(&model());
        b[0] = b'X';
        assert!(matches!(decode_checkpoint(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut b = encoded(&model());
        b[4] = 9;
        assert!(matches!(decode_checkpoint(&b), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncation_rejected() {
        let b = encoded(&model());
        assert!(decode_checkpoint(&b[..b.len() - 10]).is_err());
        assert!(decode_checkpoint(&b[..3]).is_err());
    }

    #[test]
    fn unknown_architecture_rejected() {
        let mut c = decode_container(&encoded(&model())).unwrap();
        c.metadata.insert("architecture".into(), "resnet".into());
        let err = decode_checkpoint(&encode_container(&c)).unwrap_err();
        assert!(err.to_string().contains("unknown architecture"), "{err}");
    }

    #[test]
    fn header_layout() {
        let b = encoded(&model());
        assert_eq!(&b[..4], b"UNSR");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        let crc = u32::from_le_bytes(b[b.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&b[..b.len() - 4]));
    }
}
