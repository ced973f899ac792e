//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "DGRLCKPT"
//! version      u32
//! in_channels  u32
//! kernel_size  u32
//! zero_final   u8
//! init_seed    u64
//! n_widths     u32, then n_widths x u32
//! n_tensors    u32, then per tensor: ndim u32, dims ndim x u32, data f32 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DGRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let cfg = params.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg.in_channels as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.kernel_size as u32).to_le_bytes());
    buf.push(u8::from(cfg.zero_final));
    buf.extend_from_slice(&cfg.init_seed.to_le_bytes());
    buf.extend_from_slice(&(cfg.widths.len() as u32).to_le_bytes());
    for &w in &cfg.widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not a checkpoint file");
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.pos -= 4;
        return r.fail(format!(
            "unsupported checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        ));
    }
    let in_channels = r.u32("in_channels")? as usize;
    let kernel_size = r.u32("kernel_size")? as usize;
    let zero_final = match r.u8("zero_final")? {
        0 => false,
        1 => true,
        other => {
            r.pos -= 1;
            return r.fail(format!("zero_final flag must be 0 or 1, got {other}"));
        }
    };
    let init_seed = r.u64("init_seed")?;
    let n_widths = r.u32("width count")? as usize;
    if n_widths > 1024 {
        return r.fail(format!("implausible width count {n_widths}"));
    }
    let widths = (0..n_widths)
        .map(|_| r.u32("width").map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        widths,
        kernel_size,
        in_channels,
        init_seed,
        zero_final,
    };
    let cfg_end = r.pos;
    if let Err(e) = config.validate() {
        r.pos = cfg_end;
        return r.fail(format!("invalid config block: {e}"));
    }
    let n_tensors = r.u32("tensor count")? as usize;
    if n_tensors != config.layer_channels().len() * 2 {
        r.pos -= 4;
        return r.fail(format!("tensor count {n_tensors} does not match the config"));
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for i in 0..n_tensors {
        let ndim = r.u32("tensor rank")? as usize;
        if ndim == 0 || ndim > 8 {
            r.pos -= 4;
            return r.fail(format!("tensor {i} has invalid rank {ndim}"));
        }
        let shape = (0..ndim)
            .map(|_| r.u32("tensor dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let start = r.pos;
        let t = Tensor::from_vec(&shape, data).or_else(|e| {
            r.pos = start;
            r.fail(format!("tensor {i}: {e}"))
        })?;
        tensors.push(t);
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    ModelParams::from_parts(config, tensors).or_else(|e| r.fail(format!("inconsistent parameters: {e}")))
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
