//! Named-tensor checkpoint container.
//!
//! Little-endian binary: magic "VSPT", format version u32, entry count u32,
//! then per entry: name length u32, UTF-8 name, rank u32, extents u32[],
//! raw f32 payload. Readers reject unknown versions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VSPT";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered collection of named f32 tensors.
#[derive(Default, Clone)]
pub struct Checkpoint {
    entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn insert_raw(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        self.entries.push((name.to_string(), shape, data));
    }

    pub fn insert<T: Scalar>(&mut self, name: &str, tensor: &Tensor<T>) {
        let data = tensor
            .data()
            .iter()
            .map(|v| v.to_f64() as f32)
            .collect::<Vec<f32>>();
        self.insert_raw(name, tensor.shape(), data);
    }

    pub fn get_raw(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let (shape, data) = self.get_raw(name).ok_or_else(|| {
            TensorError::CheckpointFormat(format!("missing entry \"{name}\""))
        })?;
        Tensor::from_vec(
            shape,
            data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
    }

    /// Copy a stored entry into an existing tensor (shape must match).
    pub fn load_into<T: Scalar>(&self, name: &str, tensor: &Tensor<T>) -> Result<()> {
        let (shape, data) = self.get_raw(name).ok_or_else(|| {
            TensorError::CheckpointFormat(format!("missing entry \"{name}\""))
        })?;
        if shape != tensor.shape().as_slice() {
            return Err(TensorError::CheckpointFormat(format!(
                "entry \"{name}\" has shape {shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        let converted: Vec<T> = data.iter().map(|&v| T::from_f64(v as f64)).collect();
        tensor.set_data(&converted);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, shape, data) in &self.entries {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &e in shape {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::CheckpointFormat(format!(
                "bad magic {magic:?}"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(TensorError::CheckpointFormat(format!(
                "unknown format version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| TensorError::CheckpointFormat(format!("bad name: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf));
            }
            entries.push((name, shape, data));
        }
        Ok(Checkpoint { entries })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
