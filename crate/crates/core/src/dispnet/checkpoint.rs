//! Binary parameter files: `DISPNET1`, a tensor count, then for each tensor
//! its name, shape and little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DISPNET1";

pub fn write_params(ps: &ParamSet, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(ps.tensor_count() as u32).to_le_bytes())?;
    for id in ps.ids() {
        let name = ps.name(id).as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = ps.shape(id);
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in ps.get(id) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params(r: &mut impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a DISPNET1 checkpoint".into()));
    }
    let mut ps = ParamSet::new();
    for _ in 0..read_u32(r)? {
        let len = read_u32(r)? as usize;
        if len > 4096 {
            return Err(Error::Format(format!("tensor name length {len} is implausible")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let size = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(size) = size.filter(|&s| s <= 1 << 28) else {
            return Err(Error::Format(format!("tensor {name} has implausible shape {shape:?}")));
        };
        let values = (0..size).map(|_| read_u64(r).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        ps.add(&name, &shape, values).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(ps)
}

pub fn save(ps: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(ps, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    read_params(&mut BufReader::new(File::open(path)?))
}
