//! Binary tensor and checkpoint containers.
//!
//! Tensor file ("TNSR"): magic, version byte 0x01, u8 rank, rank
//! little-endian u64 dims, then little-endian f32 payload.
//!
//! Checkpoint file ("CKPT"): magic, u32 record count, then repeated
//! (u16 name length, UTF-8 name, embedded TNSR record). Records are written
//! in registry order, so save -> load -> save is byte-stable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const FORMAT_VERSION: u8 = 0x01;

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counting<R> {
    fn new(inner: R) -> Self {
        Counting { inner, offset: 0 }
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            msg: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

fn write_tensor_record<E: Scalar, W: Write>(w: &mut W, t: &Tensor<E>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[FORMAT_VERSION])?;
    let rank = t.dims().len();
    if rank > u8::MAX as usize {
        return Err(Error::Contract(format!("rank {rank} exceeds format limit")));
    }
    w.write_all(&[rank as u8])?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor_record<E: Scalar, R: Read>(r: &mut Counting<R>) -> Result<Tensor<E>> {
    let magic_at = r.offset;
    let mut magic = [0u8; 4];
    r.fill(&mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format { offset: magic_at, msg: format!("bad magic {magic:?}") });
    }
    let mut version = [0u8; 1];
    r.fill(&mut version, "version")?;
    if version[0] != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version[0], expected: FORMAT_VERSION });
    }
    let mut rank = [0u8; 1];
    r.fill(&mut rank, "rank")?;
    let mut dims = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 8];
        r.fill(&mut d, "dims")?;
        dims.push(u64::from_le_bytes(d) as usize);
    }
    let numel: usize = dims.iter().product();
    let payload_at = r.offset;
    let mut payload = vec![0u8; numel * 4];
    r.fill(&mut payload, "payload")?;
    let data: Vec<E> = payload
        .chunks_exact(4)
        .map(|c| E::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::from_vec(dims, data).map_err(|e| Error::Format {
        offset: payload_at,
        msg: format!("inconsistent dims: {e}"),
    })
}

pub fn save_tensor<E: Scalar>(t: &Tensor<E>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_record(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<E: Scalar>(path: &Path) -> Result<Tensor<E>> {
    let mut r = Counting::new(BufReader::new(File::open(path)?));
    let t = read_tensor_record(&mut r)?;
    // reject trailing garbage so truncation errors are symmetric with bloat
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(Error::Format { offset: r.offset, msg: "trailing bytes after payload".into() });
    }
    Ok(t)
}

/// Extra non-parameter records (e.g. the serialized run configuration)
/// stored alongside parameters. Byte strings are encoded as rank-1 tensors
/// with one value per byte, keeping the container format uniform.
pub fn bytes_to_record(bytes: &[u8]) -> Tensor<f32> {
    Tensor::from_vec(vec![bytes.len().max(1)], {
        if bytes.is_empty() {
            vec![0.0]
        } else {
            bytes.iter().map(|&b| b as f32).collect()
        }
    })
    .expect("consistent dims")
}

pub fn record_to_bytes(t: &Tensor<f32>) -> Result<Vec<u8>> {
    t.data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..256.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Format { offset: 0, msg: format!("non-byte value {v} in byte record") })
            }
        })
        .collect()
}

/// Write a checkpoint: header records first (in map order), then parameters
/// in registry order.
pub fn save_checkpoint<E: Scalar>(
    params: &ModelParams<E>,
    header: &IndexMap<String, Tensor<f32>>,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let count = header.len() + params.len();
    w.write_all(&(count as u32).to_le_bytes())?;
    for (name, t) in header.iter() {
        write_named(&mut w, name, t)?;
    }
    for (name, t) in params.iter() {
        write_named(&mut w, name, t)?;
    }
    w.flush()?;
    Ok(())
}

fn write_named<E: Scalar, W: Write>(w: &mut W, name: &str, t: &Tensor<E>) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Contract(format!("record name too long: {name:?}")));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    write_tensor_record(w, t)
}

/// Read a checkpoint. Records whose names start with "__" are returned in
/// the header map; the rest become parameters, in file order.
pub fn load_checkpoint<E: Scalar>(
    path: &Path,
) -> Result<(ModelParams<E>, IndexMap<String, Tensor<f32>>)> {
    let mut r = Counting::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    r.fill(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let mut count = [0u8; 4];
    r.fill(&mut count, "record count")?;
    let count = u32::from_le_bytes(count);
    let mut params = ModelParams::new();
    let mut header = IndexMap::new();
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.fill(&mut len, "name length")?;
        let name_at = r.offset;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.fill(&mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            offset: name_at,
            msg: "record name is not UTF-8".into(),
        })?;
        if name.starts_with("__") {
            let t: Tensor<f32> = read_tensor_record(&mut r)?;
            header.insert(name, t);
        } else {
            let t: Tensor<E> = read_tensor_record(&mut r)?;
            params.insert(&name, t)?;
        }
    }
    Ok((params, header))
}
