//! USTF tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                               |
//! |--------------|---------------------------------------|
//! | 4            | magic `USTF`                          |
//! | 2            | version (`u16`, currently 1)          |
//! | 2            | number of dimensions (`u16`)          |
//! | 4 per axis   | dimension sizes (`u32`)               |
//! | 4 per value  | `f32` payload, row-major              |
//!
//! A file may hold several records back to back (checkpoints do this).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"USTF";
pub const VERSION: u16 = 1;

/// One tensor record.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: vec![data.len()],
            });
        }
        if dims.len() > u16::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::invalid("tensor dimensions exceed the container limits"));
        }
        Ok(Self { dims, data })
    }

    /// Narrows an `f64` array to `f32`.
    pub fn from_array(a: &ArrayD<f64>) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_array2(a: &Array2<f64>) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.dims), self.data.iter().map(|&v| v as f64).collect())
            .expect("record length matches dims")
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::invalid(format!("expected a 2-D tensor, found dims {:?}", self.dims)));
        }
        Ok(Array2::from_shape_vec(
            (self.dims[0], self.dims[1]),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("record length matches dims"))
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.reserve(4 * self.data.len());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes one record from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> std::result::Result<(Self, usize), String> {
        let take = |at: usize, n: usize| -> std::result::Result<&[u8], String> {
            bytes
                .get(at..at + n)
                .ok_or_else(|| format!("truncated at byte {at} (need {n} more)"))
        };
        if take(0, 4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes(take(4, 2)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let ndim = u16::from_le_bytes(take(6, 2)?.try_into().unwrap()) as usize;
        let mut at = 8;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(at, 4)?.try_into().unwrap()) as usize);
            at += 4;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("dimension product overflows")?;
        let payload = take(at, n.checked_mul(4).ok_or("payload size overflows")?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self { dims, data }, at + 4 * n))
    }
}

/// Writes `bytes` through a temporary file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes records back to back.
pub fn write_records(path: &Path, records: &[TensorRecord]) -> Result<()> {
    let mut bytes = Vec::new();
    for r in records {
        r.encode(&mut bytes);
    }
    write_atomic(path, &bytes)
}

pub fn write_tensor(path: &Path, record: &TensorRecord) -> Result<()> {
    write_records(path, std::slice::from_ref(record))
}

/// Reads every record in a file.
pub fn read_records(path: &Path) -> Result<Vec<TensorRecord>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (r, used) = TensorRecord::decode(&bytes[at..]).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason: format!("record {}: {reason}", records.len()),
        })?;
        records.push(r);
        at += used;
    }
    if records.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "empty file".into(),
        });
    }
    Ok(records)
}

/// Reads a file holding exactly one record.
pub fn read_tensor(path: &Path) -> Result<TensorRecord> {
    let mut records = read_records(path)?;
    if records.len() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected one tensor, found {}", records.len()),
        });
    }
    Ok(records.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let r = TensorRecord::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]).unwrap();
        let mut b = Vec::new();
        r.encode(&mut b);
        assert_eq!(&b[..4], b"USTF");
        assert_eq!(&b[4..8], &[1, 0, 2, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 16 + 24);
    }

    #[test]
    fn rejects_corruption() {
        let r = TensorRecord::new(vec![4], vec![0.0; 4]).unwrap();
        let mut b = Vec::new();
        r.encode(&mut b);
        assert!(TensorRecord::decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(TensorRecord::decode(&bad).is_err());
        let mut bad = b;
        bad[4] = 2;
        assert!(TensorRecord::decode(&bad).is_err());
        assert!(TensorRecord::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn file_round_trip_with_several_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("multi.ustf");
        let a = TensorRecord::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = TensorRecord::new(vec![3], vec![-1.0, 0.0, 1.0]).unwrap();
        write_records(&p, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_records(&p).unwrap(), vec![a, b]);
        assert!(read_tensor(&p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let n: usize = dims.iter().product();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n)
                .map(|_| loop {
                    let v = f32::from_bits(rng.random::<u32>());
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect();
            let r = TensorRecord::new(dims, data).unwrap();
            let mut b = Vec::new();
            r.encode(&mut b);
            let (back, used) = TensorRecord::decode(&b).unwrap();
            prop_assert_eq!(used, b.len());
            prop_assert_eq!(back.dims, r.dims);
            prop_assert!(back.data.iter().zip(&r.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
