//! "PGCK" parameter checkpoint format.
//!
//! Layout: magic `PGCK`, version u16 = 1 (little-endian), then repeated
//! records: name length u16, UTF-8 name, rank u8, one u32 per dim, payload
//! of little-endian f64 values. The record list is the manifest.

use std::io::{self, Read, Write};

use super::{Param, Tensor};

pub const MAGIC: &[u8; 4] = b"PGCK";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic, not a PGCK file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("record name is not valid UTF-8")]
    BadName,
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("shape mismatch for {name}: file {file:?} vs model {model:?}")]
    ShapeMismatch {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn save<W: Write>(w: &mut W, params: &[(String, Param)]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, p) in params {
        let v = p.borrow();
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[v.value.shape().len() as u8])?;
        for d in v.value.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for x in v.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_to_bytes(params: &[(String, Param)]) -> Vec<u8> {
    let mut buf = Vec::new();
    save(&mut buf, params).expect("writing to Vec cannot fail");
    buf
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    })
}

pub fn load<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v = [0u8; 2];
    read_exact(r, &mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let mut out = Vec::new();
    loop {
        let mut len2 = [0u8; 2];
        match r.read(&mut len2[..1])? {
            0 => break, // clean EOF between records
            _ => read_exact(r, &mut len2[1..])?,
        }
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let mut rank = [0u8; 1];
        read_exact(r, &mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            read_exact(r, &mut d)?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut x = [0u8; 8];
        for _ in 0..n {
            read_exact(r, &mut x)?;
            data.push(f64::from_le_bytes(x));
        }
        out.push((name, Tensor::from_parts(shape, data)));
    }
    Ok(out)
}

/// Write loaded tensors into a named parameter list, matching by name.
pub fn restore(
    params: &[(String, Param)],
    loaded: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    for (name, p) in params {
        let t = loaded
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        let model_shape = p.borrow().value.shape().to_vec();
        if t.shape() != model_shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                file: t.shape().to_vec(),
                model: model_shape,
            });
        }
        p.set_value(t.clone());
    }
    Ok(())
}
