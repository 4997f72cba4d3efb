//! Flat binary tensor format used for feature, embedding, and checkpoint
//! payloads.
//!
//! Layout: the 4-byte magic `FMAT`, a little-endian `u32` rank, one
//! little-endian `u32` per dimension, then the row-major payload as
//! little-endian `f32`. Values are stored single-precision; reading widens
//! back to `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FMAT";
const MAX_RANK: u32 = 8;

pub fn write_fmat(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_fmat(r: &mut impl Read) -> Result<Tensor> {
    let bad = |msg: &str| Error::Data(format!("fmat: {msg}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not an FMAT payload"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| bad("truncated rank"))?;
    let rank = u32::from_le_bytes(u32buf);
    if rank == 0 || rank > MAX_RANK {
        return Err(bad(&format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel = 1usize;
    for _ in 0..rank {
        r.read_exact(&mut u32buf)
            .map_err(|_| bad("truncated dims"))?;
        let d = u32::from_le_bytes(u32buf) as usize;
        if d == 0 {
            return Err(bad("zero dimension"));
        }
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| bad("dimension overflow"))?;
        shape.push(d);
    }
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        r.read_exact(&mut u32buf)
            .map_err(|_| bad("truncated payload"))?;
        data.push(f32::from_le_bytes(u32buf) as f64);
    }
    Tensor::new(shape, data)
}

pub fn write_fmat_file(path: &Path, t: &Tensor) -> Result<()> {
    let name = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(name.as_str(), e))?;
    let mut w = BufWriter::new(file);
    write_fmat(&mut w, t).map_err(|e| Error::io(name.as_str(), e))?;
    w.flush().map_err(|e| Error::io(name.as_str(), e))
}

pub fn read_fmat_file(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    read_fmat(&mut r)
}
