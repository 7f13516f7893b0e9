//! `EMB1` embedding archives.
//!
//! ```text
//! "EMB1"  u32 D  u32 count
//! count × ( u16 key_len  key (utf-8)  D × f32 )
//! ```
//!
//! All integers and floats are little-endian. Records keep insertion order so
//! a read/write cycle is byte-identical.

use std::path::Path;

use indexmap::IndexMap;

use super::binary::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::FeatureVector;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingArchive {
    dim: usize,
    records: IndexMap<String, Vec<f32>>,
}

impl EmbeddingArchive {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let key = key.into();
        if values.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if key.len() > u16::MAX as usize {
            return Err(Error::parse("EMB1", format!("key longer than {} bytes", u16::MAX)));
        }
        if self.records.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        self.records.insert(key, values);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.records.get(key).map(|v| v.as_slice())
    }

    pub fn feature(&self, key: &str) -> Option<FeatureVector> {
        self.get(key).map(|v| FeatureVector::observed(v.to_vec()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(ARCHIVE_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.records.len() as u32);
        for (k, v) in &self.records {
            w.u16(k.len() as u16);
            w.bytes(k.as_bytes());
            for &x in v {
                w.f32(x);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "EMB1");
        if r.take(4)? != ARCHIVE_MAGIC {
            return Err(Error::parse("EMB1", "bad magic"));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut archive = Self::new(dim);
        for _ in 0..count {
            let klen = r.u16()? as usize;
            let key = std::str::from_utf8(r.take(klen)?)
                .map_err(|_| Error::parse("EMB1", "key is not utf-8"))?
                .to_string();
            let raw = r.take(dim * 4).map_err(|_| Error::parse("EMB1", format!("record {key:?} truncated (dim {dim})")))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            archive.insert(key, values)?;
        }
        if !r.is_empty() {
            return Err(Error::parse(
                "EMB1",
                format!("{} trailing bytes; dimension mismatch?", r.remaining()),
            ));
        }
        Ok(archive)
    }
}

pub fn read_embedding_archive(path: &Path) -> Result<EmbeddingArchive> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingArchive::from_bytes(&buf)
}

pub fn write_embedding_archive(archive: &EmbeddingArchive, path: &Path) -> Result<()> {
    std::fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_archive_is_header_only() {
        let a = EmbeddingArchive::new(1152);
        let b = a.to_bytes();
        assert_eq!(b.len(), 12);
        assert_eq!(&b[..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1152);
        assert_eq!(EmbeddingArchive::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn thousand_records_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = EmbeddingArchive::new(64);
        for i in 0..1000 {
            let v = (0..64).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect();
            a.insert(format!("{i}/frame_{}/{}", i * 7, i % 3), v).unwrap();
        }
        let bytes = a.to_bytes();
        let back = EmbeddingArchive::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for ((k1, v1), (k2, v2)) in a.iter().zip(back.iter()) {
            assert_eq!(k1, k2);
            let b1: Vec<u32> = v1.iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u32> = v2.iter().map(|x| x.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn duplicate_key_rejected_on_insert_and_read() {
        let mut a = EmbeddingArchive::new(2);
        a.insert("k", vec![1.0, 2.0]).unwrap();
        assert!(matches!(a.insert("k", vec![0.0, 0.0]), Err(Error::DuplicateKey(_))));

        // hand-build a file containing the same key twice
        let mut bytes = a.to_bytes();
        bytes[8] = 2;
        bytes.extend_from_slice(&bytes[12..].to_vec());
        assert!(matches!(EmbeddingArchive::from_bytes(&bytes), Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn dim_mismatch() {
        let mut a = EmbeddingArchive::new(3);
        assert!(matches!(a.insert("k", vec![1.0]), Err(Error::DimMismatch { expected: 3, actual: 1 })));
        a.insert("k", vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = a.to_bytes();
        bytes[4] = 2;
        assert!(EmbeddingArchive::from_bytes(&bytes).is_err());
        assert!(EmbeddingArchive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
