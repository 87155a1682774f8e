//! Versioned binary checkpoints: named `f64` tensors with shapes, fixed
//! little-endian layout, and a SHA-256 integrity footer. Every trainable
//! model persists through this container.

use crate::error::{Error, Result};
use crate::math::Mat;
use crate::nn::Params;
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GRCK";
const VERSION: u32 = 1;

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(kind: &str) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(kind);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn mat(&mut self, name: &str, m: &Mat) {
        self.str(name);
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.as_slice() {
            self.f64(v);
        }
    }

    /// Append the SHA-256 footer and write the file.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        std::fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

pub struct Reader {
    bytes: Vec<u8>,
    pos: usize,
    path: std::path::PathBuf,
}

impl Reader {
    /// Open, verify magic/version/checksum, and check the kind tag.
    pub fn open(path: &Path, expected_kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::corrupt(path, "file too short"));
        }
        let (body, footer) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != footer {
            return Err(Error::corrupt(path, "checksum mismatch"));
        }
        if &body[0..4] != MAGIC {
            return Err(Error::corrupt(path, "bad magic"));
        }
        let mut r = Reader {
            bytes: body.to_vec(),
            pos: 4,
            path: path.to_path_buf(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: VERSION,
            });
        }
        let kind = r.str()?;
        if kind != expected_kind {
            return Err(Error::corrupt(
                path,
                format!("kind `{kind}`, expected `{expected_kind}`"),
            ));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::corrupt(&self.path, "unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::corrupt(&self.path, "invalid utf-8 string"))
    }

    pub fn mat(&mut self) -> Result<(String, Mat)> {
        let name = self.str()?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok((name, Mat::from_vec(rows, cols, data)))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Persist a parameter set (names, shapes, values).
pub fn save_params(path: &Path, kind: &str, params: &Params) -> Result<()> {
    let mut w = Writer::new(kind);
    w.u32(params.len() as u32);
    for (name, mat) in params.iter() {
        w.mat(name, mat);
    }
    w.finish(path)
}

/// Load a checkpoint into an existing registry. Names and shapes must match
/// the registry exactly (same architecture config).
pub fn load_params(path: &Path, kind: &str, params: &mut Params) -> Result<()> {
    let mut r = Reader::open(path, kind)?;
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::corrupt(
            path,
            format!("{count} tensors, registry expects {}", params.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for id in params.ids().collect::<Vec<_>>() {
        let (name, mat) = r.mat()?;
        if name != params.name(id) {
            return Err(Error::corrupt(
                path,
                format!("tensor `{name}` where `{}` expected", params.name(id)),
            ));
        }
        if mat.shape() != params.get(id).shape() {
            return Err(Error::corrupt(
                path,
                format!("tensor `{name}` has shape {:?}, expected {:?}", mat.shape(), params.get(id).shape()),
            ));
        }
        values.push(mat);
    }
    params.set_values(&values);
    Ok(())
}
