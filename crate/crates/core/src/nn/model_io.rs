//! Little-endian model container: magic `LASC`, version, tensor count, then per
//! tensor `u16` name length, UTF-8 name, dtype code, rank, `u32` dims and payload.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::params::{DType, ModelParams};
use super::NnError;
use crate::quantize::{truncate_to_16, widen_to_32};

pub const MODEL_MAGIC: &[u8; 4] = b"LASC";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Params(#[from] NnError),
}

pub fn write_model<W: Write>(mut w: W, params: &ModelParams) -> Result<(), ModelIoError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let count = u32::try_from(params.len())
        .map_err(|_| ModelIoError::Malformed("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| ModelIoError::Malformed(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.dtype.code()])?;
        let ndim = u8::try_from(t.shape.len())
            .map_err(|_| ModelIoError::Malformed(format!("{name}: rank too large")))?;
        w.write_all(&[ndim])?;
        for &d in &t.shape {
            let d = u32::try_from(d)
                .map_err(|_| ModelIoError::Malformed(format!("{name}: dimension too large")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in &t.data {
            match t.dtype {
                DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::T16 => buf.extend_from_slice(&truncate_to_16((v as f32).to_bits()).to_le_bytes()),
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], ModelIoError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ModelIoError::Malformed("truncated file".into()),
        _ => ModelIoError::Io(e),
    })?;
    Ok(b)
}

/// Parse a model; t16 payloads are widened back to 32-bit values.
pub fn read_model<R: Read>(mut r: R) -> Result<ModelParams, ModelIoError> {
    if &take::<4, _>(&mut r)? != MODEL_MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != MODEL_VERSION {
        return Err(ModelIoError::Version(version));
    }
    let count = u32::from_le_bytes(take(&mut r)?);
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| ModelIoError::Malformed("truncated tensor name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelIoError::Malformed("tensor name is not UTF-8".into()))?;
        let [code] = take::<1, _>(&mut r)?;
        let dtype = DType::from_code(code).ok_or(ModelIoError::DType(code))?;
        let [ndim] = take::<1, _>(&mut r)?;
        let shape = (0..ndim)
            .map(|_| take::<4, _>(&mut r).map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| ModelIoError::Malformed(format!("{name}: size overflow")))?;
        let width = (dtype.bits() / 8) as usize;
        let mut raw = Vec::new();
        r.by_ref()
            .take((n * width) as u64)
            .read_to_end(&mut raw)?;
        if raw.len() != n * width {
            return Err(ModelIoError::Malformed(format!("{name}: truncated payload")));
        }
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            DType::T16 => raw
                .chunks_exact(2)
                .map(|c| widen_to_32(u16::from_le_bytes([c[0], c[1]])) as f64)
                .collect(),
        };
        params.insert(name, shape, data, dtype)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelIoError::Malformed("trailing bytes after last tensor".into()));
    }
    Ok(params)
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<(), ModelIoError> {
    let mut buf = Vec::new();
    write_model(&mut buf, params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams, ModelIoError> {
    let bytes = fs::read(path)?;
    read_model(bytes.as_slice())
}
