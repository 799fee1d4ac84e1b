//! `SSTA`: the tensor container used for fitted models and encoder weights.
//!
//! ```text
//! "SSTA" | u32 version = 1 | u32 config_len | config (UTF-8 JSON)
//!        | u32 entries | entries x { u32 name_len | name | u32 rank | rank x u32 extent | u64 offset }
//!        | u64 payload_len | payload_len x f32
//! ```
//!
//! `offset` counts f32 elements from the start of the payload. Names carry a
//! section prefix such as `planes/`, `fusion/`, `mlp/` or `encoder/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSTA_MAGIC: [u8; 4] = *b"SSTA";
pub const SSTA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose name starts with `prefix`, in manifest order.
    pub fn section(&self, prefix: &str) -> Vec<Tensor> {
        self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.clone()).collect()
    }
}

pub fn write_container_to(mut w: impl Write, config: &serde_json::Value, tensors: &[(String, &Tensor)]) -> Result<()> {
    for (name, t) in tensors {
        if !t.all_finite() {
            return Err(Error::NonFinite(format!("tensor {name}")));
        }
    }
    let cfg = serde_json::to_vec(config)?;
    w.write_all(&SSTA_MAGIC)?;
    w.write_u32::<LittleEndian>(SSTA_VERSION)?;
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(&cfg)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    let mut offset = 0u64;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u64::<LittleEndian>(offset)?;
        offset += t.len() as u64;
    }
    w.write_u64::<LittleEndian>(offset)?;
    for (_, t) in tensors {
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_container(path: impl AsRef<Path>, config: &serde_json::Value, tensors: &[(String, &Tensor)]) -> Result<()> {
    write_container_to(BufWriter::new(File::create(path)?), config, tensors)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("container is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_container_from(mut r: impl Read) -> Result<Container> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != SSTA_MAGIC {
        return Err(Error::Magic { expected: SSTA_MAGIC, found: magic });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != SSTA_VERSION {
        return Err(Error::Version(version));
    }
    let cfg_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg).map_err(truncated)?;
    let config = serde_json::from_slice(&cfg)?;
    let entries = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut manifest = Vec::with_capacity(entries.min(1 << 16));
    for _ in 0..entries {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("tensor name: {e}")))?;
        let rank = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let offset = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        manifest.push((name, shape, offset));
    }
    let total = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 4 * total {
        return Err(Error::Length { expected: 4 * total, found: payload.len() });
    }
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, shape, offset) in manifest {
        let n: usize = shape.iter().product();
        if offset + n > total {
            return Err(Error::Format(format!("tensor {name} runs past the payload")));
        }
        let data = payload[4 * offset..4 * (offset + n)]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    Ok(Container { config, tensors })
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    read_container_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(t: &[(String, &Tensor)]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_container_to(&mut buf, &serde_json::json!({"k": 1}), t).unwrap();
        buf
    }

    #[test]
    fn round_trip_at_f32() {
        let a = Tensor::new(&[2, 3], vec![0.1, -2.5, 3.0, 1e-3, 7.0, 0.3]).unwrap();
        let b = Tensor::scalar(0.25);
        let bytes = encode(&[("x/a".into(), &a), ("y/b".into(), &b)]);
        let c = read_container_from(bytes.as_slice()).unwrap();
        assert_eq!(c.config["k"], 1);
        let a2 = c.get("x/a").unwrap();
        assert_eq!(a2.shape(), &[2, 3]);
        for (x, y) in a.data().iter().zip(a2.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
        assert_eq!(c.section("y/"), vec![b]);
    }

    #[test]
    fn rejects_damage() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let mut bytes = encode(&[("a".into(), &a)]);
        bytes[0] = b'X';
        assert!(matches!(read_container_from(bytes.as_slice()), Err(Error::Magic { .. })));
        let mut bytes = encode(&[("a".into(), &a)]);
        bytes.pop();
        assert!(matches!(read_container_from(bytes.as_slice()), Err(Error::Length { .. })));
        let nan = Tensor::from_vec(vec![f64::NAN]);
        assert!(write_container_to(Vec::new(), &serde_json::Value::Null, &[("n".into(), &nan)]).is_err());
    }
}
