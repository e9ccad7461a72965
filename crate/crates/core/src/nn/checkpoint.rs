//! Binary checkpoint format:
//!
//! ```text
//! "SDNN" | u32 version (= 1) | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 values
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDNN";
pub const VERSION: u32 = 1;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces every tensor; shapes must match.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::shape("parameter count changed"));
        }
        for ((name, slot), t) in self.entries.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::shape(format!("parameter {name} changed shape")));
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.round_to_f32());
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// SHA-256 over names, shapes and exact values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ShapeTable(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in self.entries.iter().zip(&other.entries) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::ShapeTable(format!(
                    "expected {n1}{:?}, found {n2}{:?}",
                    t1.shape(),
                    t2.shape()
                )));
            }
        }
        Ok(())
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated,
        _ => Error::Io(e),
    })
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, to_u32(params.len(), "tensor count")?)?;
    for (name, t) in params.iter() {
        put_u32(&mut w, to_u32(name.len(), "name length")?)?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, to_u32(t.shape().len(), "rank")?)?;
        for &d in t.shape() {
            put_u32(&mut w, to_u32(d, "dimension")?)?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = get_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = get_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len.min(1 << 16)];
        if name_len > name.len() {
            return Err(Error::Format(format!("tensor name of {name_len} bytes")));
        }
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| get_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= 1 << 28)
            .ok_or_else(|| Error::Format(format!("tensor {name} has dims {dims:?}")))?;
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut r, &mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.push(name, Tensor::new(dims, data)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.push(
            "conv.weight",
            Tensor::new(vec![2, 1, 3], vec![0.5, -0.25, 1.0, 2.0, 3.5, -8.0]).unwrap(),
        );
        p.push("conv.bias", Tensor::new(vec![2], vec![0.125, 0.0]).unwrap());
        p
    }

    fn bytes(p: &ParamSet) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(&mut out, p).unwrap();
        out
    }

    #[test]
    fn round_trip() {
        let p = sample();
        let q = read_checkpoint(&bytes(&p)[..]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn layout_bytes() {
        let b = bytes(&sample());
        assert_eq!(&b[..4], b"SDNN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 11);
        assert_eq!(&b[16..27], b"conv.weight");
    }

    #[test]
    fn corrupted_magic() {
        let mut b = bytes(&sample());
        b[0] = b'X';
        assert!(matches!(read_checkpoint(&b[..]), Err(Error::BadMagic)));
    }

    #[test]
    fn bumped_version() {
        let mut b = bytes(&sample());
        b[4] = 2;
        assert!(matches!(
            read_checkpoint(&b[..]),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncated() {
        let b = bytes(&sample());
        for cut in [3, 10, 20, b.len() - 1] {
            assert!(
                matches!(read_checkpoint(&b[..cut]), Err(Error::Truncated)),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn layout_mismatch() {
        let p = sample();
        let mut q = ParamSet::new();
        q.push("conv.weight", Tensor::zeros(&[2, 1, 4]));
        q.push("conv.bias", Tensor::zeros(&[2]));
        assert!(matches!(p.check_layout(&q), Err(Error::ShapeTable(_))));
        assert!(p.check_layout(&sample()).is_ok());
    }
}
