//! Versioned binary checkpoint container: config snapshot, charset string,
//! and named tensor records with an integrity checksum. Round trips are
//! bit-exact.

use crate::error::{Error, Result};
use crate::module::Module;
use crate::tensor::{Dtype, Real};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TXSRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum TensorRecord {
    F32(Vec<usize>, Vec<f32>),
    F64(Vec<usize>, Vec<f64>),
}

impl TensorRecord {
    fn dtype(&self) -> Dtype {
        match self {
            TensorRecord::F32(..) => Dtype::F32,
            TensorRecord::F64(..) => Dtype::F64,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            TensorRecord::F32(s, _) | TensorRecord::F64(s, _) => s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    /// key=value text; includes the full run configuration plus
    /// checkpoint-specific keys (kind, role, ...).
    pub config: String,
    /// Printable members of the charset, blank implicit at index 0.
    pub charset: String,
    pub tensors: Vec<(String, TensorRecord)>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    push_u32(buf, b.len() as u32);
    buf.extend_from_slice(b);
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated file".to_string()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8".to_string()))
    }
}

impl Checkpoint {
    pub fn from_module<T: Real, M: Module<T>>(config: String, charset: String, model: &M) -> Self {
        let mut tensors = Vec::new();
        model.visit_params(&mut |name, t| {
            let rec = match T::DTYPE {
                Dtype::F32 => TensorRecord::F32(
                    t.shape().to_vec(),
                    t.data().iter().map(|v| v.to_f64() as f32).collect(),
                ),
                Dtype::F64 => TensorRecord::F64(
                    t.shape().to_vec(),
                    t.data().iter().map(|v| v.to_f64()).collect(),
                ),
            };
            tensors.push((name.to_string(), rec));
        });
        Checkpoint {
            version: VERSION,
            config,
            charset,
            tensors,
        }
    }

    /// Writes every stored tensor into the matching parameter of `model`.
    /// Names, shapes, dtypes, and the full name set must match exactly.
    pub fn apply<T: Real, M: Module<T>>(&self, model: &mut M) -> Result<()> {
        let mut expected = Vec::new();
        model.visit_params(&mut |name, _| expected.push(name.to_string()));
        let stored: Vec<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
        if expected != stored {
            return Err(Error::Checkpoint(format!(
                "parameter names mismatch: model has {} params, checkpoint has {}",
                expected.len(),
                stored.len()
            )));
        }
        let mut idx = 0usize;
        let mut failure: Option<Error> = None;
        model.visit_params_mut(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            let (_, rec) = &self.tensors[idx];
            idx += 1;
            if rec.shape() != t.shape() || rec.dtype() != T::DTYPE {
                failure = Some(Error::Checkpoint(format!(
                    "tensor {name}: stored {:?} {:?}, model wants {:?} {:?}",
                    rec.dtype(),
                    rec.shape(),
                    T::DTYPE,
                    t.shape()
                )));
                return;
            }
            match rec {
                TensorRecord::F32(_, data) => {
                    for (dst, &src) in t.data_mut().iter_mut().zip(data) {
                        *dst = T::from_f64(src as f64);
                    }
                }
                TensorRecord::F64(_, data) => {
                    for (dst, &src) in t.data_mut().iter_mut().zip(data) {
                        *dst = T::from_f64(src);
                    }
                }
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        push_u32(&mut p, self.version);
        push_bytes(&mut p, self.config.as_bytes());
        push_bytes(&mut p, self.charset.as_bytes());
        push_u32(&mut p, self.tensors.len() as u32);
        for (name, rec) in &self.tensors {
            push_bytes(&mut p, name.as_bytes());
            match rec {
                TensorRecord::F32(shape, data) => {
                    p.push(0u8);
                    push_u32(&mut p, shape.len() as u32);
                    for &d in shape {
                        push_u64(&mut p, d as u64);
                    }
                    for v in data {
                        p.extend_from_slice(&v.to_le_bytes());
                    }
                }
                TensorRecord::F64(shape, data) => {
                    p.push(1u8);
                    push_u32(&mut p, shape.len() as u32);
                    for &d in shape {
                        push_u64(&mut p, d as u64);
                    }
                    for v in data {
                        p.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        p
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = self.payload();
        let digest = Sha256::digest(&payload);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&digest)?;
        f.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 40 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let stored_digest = &bytes[8..40];
        let payload = &bytes[40..];
        let digest = Sha256::digest(payload);
        if digest.as_slice() != stored_digest {
            return Err(Error::Checkpoint("checksum failure".to_string()));
        }
        let mut r = Reader {
            data: payload,
            pos: 0,
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "version {version} unsupported (expected {VERSION})"
            )));
        }
        let config = r.string()?;
        let charset = r.string()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let rec = match dtype {
                0 => {
                    let raw = r.take(numel * 4)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    TensorRecord::F32(shape, data)
                }
                1 => {
                    let raw = r.take(numel * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    TensorRecord::F64(shape, data)
                }
                other => {
                    return Err(Error::Checkpoint(format!("unknown dtype tag {other}")));
                }
            };
            tensors.push((name, rec));
        }
        Ok(Checkpoint {
            version,
            config,
            charset,
            tensors,
        })
    }
}

/// Extra key=value lines stored alongside the run config in checkpoints.
pub fn meta_lines(kind: &str, extras: &[(&str, &str)]) -> String {
    let mut s = format!("# checkpoint\nkind = {kind}\n");
    for (k, v) in extras {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

/// Splits checkpoint config text into (meta pairs, run-config text).
pub fn split_meta(config: &str) -> (Vec<(String, String)>, String) {
    let mut meta = Vec::new();
    let mut rest = String::new();
    for line in config.lines() {
        let trimmed = line.split('#').next().unwrap_or("").trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some((k, v)) = trimmed.split_once('=') {
            let k = k.trim();
            if k == "kind" || k == "role" {
                meta.push((k.to_string(), v.trim().to_string()));
                continue;
            }
        }
        rest.push_str(line);
        rest.push('\n');
    }
    (meta, rest)
}
