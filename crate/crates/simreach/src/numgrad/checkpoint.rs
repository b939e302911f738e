//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SRCKPT01"
//! mlen    u32      length of the JSON metadata blob
//! meta    mlen bytes (JSON object, e.g. the architecture profile)
//! count   u32      number of tensors
//! repeat count times:
//!   nlen  u32      name length
//!   name  nlen bytes (UTF-8)
//!   ndim  u32
//!   dims  ndim x u32
//!   data  product(dims) x f64 little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::optim::Params;
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SRCKPT01";

pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: Params,
}

pub fn save_checkpoint(path: &Path, meta: &serde_json::Value, params: &Params) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let meta_bytes = serde_json::to_vec(meta)?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, details: &str) -> Error {
    Error::Format {
        path: path.display().to_string(),
        details: details.to_string(),
    }
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| bad(path, "truncated file"))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad(path, "truncated file"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic string"));
    }
    let mlen = read_u32(&mut r, path)? as usize;
    let mut meta_bytes = vec![0u8; mlen];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| bad(path, "truncated metadata"))?;
    let meta: serde_json::Value =
        serde_json::from_slice(&meta_bytes).map_err(|_| bad(path, "metadata is not JSON"))?;
    let count = read_u32(&mut r, path)? as usize;
    let mut params = Params::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; nlen];
        r.read_exact(&mut name_bytes)
            .map_err(|_| bad(path, "truncated tensor name"))?;
        let name =
            String::from_utf8(name_bytes).map_err(|_| bad(path, "tensor name is not UTF-8"))?;
        let ndim = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| bad(path, "truncated tensor data"))?;
            *v = f64::from_le_bytes(buf);
        }
        params.insert(&name, Tensor::new(shape, data)?);
    }
    Ok(Checkpoint { meta, params })
}
