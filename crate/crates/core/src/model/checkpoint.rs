//! PPNW checkpoints: `PPNW`, u32 version, u32 length + architecture JSON,
//! u64 step, then per tensor a u16-length name, u8 rank, u32 dims and f32
//! data, all little-endian.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::arch::ArchSpec;
use super::network::NetworkWeights;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PPNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub weights: NetworkWeights<f32>,
    pub step: u64,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("PPNW", reason)
}

pub fn write<W: Write, T: Real>(
    mut w: W,
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    step: u64,
) -> Result<()> {
    if !weights.matches(arch) {
        return Err(Error::Shape("weights do not match architecture".into()));
    }
    let json = serde_json::to_vec(arch)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&step.to_le_bytes())?;
    for (i, conv) in weights.convs.iter().enumerate() {
        let tensors: [(String, Vec<usize>, &[T]); 2] = [
            (format!("conv{i:02}.kernel"), conv.kernel_shape().to_vec(), &conv.kernel),
            (format!("conv{i:02}.bias"), vec![conv.out_channels], &conv.bias),
        ];
        for (name, dims, data) in tensors {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[dims.len() as u8])?;
            for d in dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let arch: ArchSpec =
        serde_json::from_slice(&json).map_err(|e| bad(format!("architecture: {e}")))?;
    arch.validate()?;
    let step = u64::from_le_bytes(read_array(&mut r)?);

    let mut weights = NetworkWeights::<f32>::zeros(&arch);
    for (i, conv) in weights.convs.iter_mut().enumerate() {
        let kshape = conv.kernel_shape().to_vec();
        let expected: [(String, Vec<usize>, &mut Vec<f32>); 2] = [
            (format!("conv{i:02}.kernel"), kshape, &mut conv.kernel),
            (format!("conv{i:02}.bias"), vec![conv.out_channels], &mut conv.bias),
        ];
        for (name, shape, data) in expected {
            let nlen = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)?;
            if nbuf != name.as_bytes() {
                return Err(bad(format!(
                    "expected tensor {name}, found {}",
                    String::from_utf8_lossy(&nbuf)
                )));
            }
            let rank = read_array::<1, _>(&mut r)?[0] as usize;
            let dims = (0..rank)
                .map(|_| Ok(u32::from_le_bytes(read_array(&mut r)?) as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != shape {
                return Err(bad(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
            }
            let mut raw = vec![0u8; data.len() * 4];
            r.read_exact(&mut raw)?;
            for (v, b) in data.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
            }
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        arch,
        weights,
        step,
    })
}

pub fn save<T: Real>(
    path: impl AsRef<Path>,
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    step: u64,
) -> Result<()> {
    write(BufWriter::new(fs::File::create(path)?), arch, weights, step)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read(BufReader::new(fs::File::open(path)?))
}
