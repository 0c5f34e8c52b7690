//! `PGRD` grid files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `PGRD` |
//! | 4     | u32 version = 1 |
//! | 12    | u32 nx, ny, nz |
//! | 1     | dtype: 0 = f32, 1 = f64 |
//! | ...   | values, x fastest |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GridDims, ScalarField3D};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PGRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::format("PGRD", format!("unknown dtype code {other}"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub dims: GridDims,
    pub dtype: Dtype,
}

pub fn write<W: Write>(mut w: W, field: &ScalarField3D, dtype: Dtype) -> Result<()> {
    let d = field.dims();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for n in d.as_array() {
        let n = u32::try_from(n).map_err(|_| Error::format("PGRD", "dimension exceeds u32"))?;
        w.write_all(&n.to_le_bytes())?;
    }
    w.write_all(&[dtype.code()])?;
    let mut buf = Vec::with_capacity(d.len() * dtype.width());
    match dtype {
        Dtype::F32 => field
            .values()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => field
            .values()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::format("PGRD", format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format("PGRD", format!("unsupported version {version}")));
    }
    let nx = read_u32(r)? as usize;
    let ny = read_u32(r)? as usize;
    let nz = read_u32(r)? as usize;
    let dims = GridDims::new(nx, ny, nz)?;
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let dtype = Dtype::from_code(code[0])?;
    Ok(Header {
        version,
        dims,
        dtype,
    })
}

pub fn read<R: Read>(mut r: R) -> Result<ScalarField3D> {
    let header = read_header(&mut r)?;
    let n = header.dims.len();
    let mut raw = vec![0u8; n * header.dtype.width()];
    r.read_exact(&mut raw)?;
    let values = match header.dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    ScalarField3D::from_vec(header.dims, values)
}

pub fn save(path: impl AsRef<Path>, field: &ScalarField3D, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w, field, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ScalarField3D> {
    read(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
