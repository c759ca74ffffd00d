//! Binary parameter archive.
//!
//! ```text
//! b"APVGCKPT" | u32 version | str dtype | str stage | str config hash | u32 count
//! count x ( str name | u32 rank | u64 dims[rank] | little-endian values )
//! ```
//! `str` is a u32 byte length followed by UTF-8.

use std::fs;
use std::path::Path;

use apvg_tensor::{ParamStore, Scalar, Tensor};

use crate::config::{PipelineConfig, Stage};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"APVGCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub stage: Stage,
    pub config_hash: String,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(stage: Stage, cfg: &PipelineConfig) -> Self {
        Self {
            stage,
            config_hash: cfg.stage_hash(stage),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    /// Adds every entry of `store`, frozen ones included, under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore<T>) {
        for e in store.entries() {
            self.push(format!("{prefix}{}", e.name), e.value.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str, path: &Path) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("missing tensor `{name}`"),
        })
    }

    /// Overwrites every entry of `store` from `prefix`-named tensors.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore<T>, path: &Path) -> Result<()> {
        for e in store.entries_mut() {
            let name = format!("{prefix}{}", e.name);
            let t = self.get(&name).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("missing tensor `{name}`"),
            })?;
            if t.shape() != e.value.shape() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!("`{name}` has shape {:?}, model expects {:?}", t.shape(), e.value.shape()),
                });
            }
            e.value = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, T::DTYPE);
        put_str(&mut out, self.stage.name());
        put_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.err("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let dtype = r.string()?;
        if dtype != T::DTYPE {
            return Err(r.err(format!("stored as {dtype}, requested {}", T::DTYPE)));
        }
        let stage_name = r.string()?;
        let stage = Stage::parse(&stage_name).ok_or_else(|| r.err(format!("unknown stage `{stage_name}`")))?;
        let config_hash = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * T::BYTES)?;
            let data = raw.chunks(T::BYTES).map(T::read_le).collect();
            tensors.push((name, Tensor::from_vec(&shape, data)));
        }
        if r.at != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        Ok(Self {
            stage,
            config_hash,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads `path`, refusing a file written for another stage or config.
    pub fn load(path: &Path, stage: Stage, cfg: &PipelineConfig) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingPrerequisite {
                stage: stage.name().to_string(),
                path: path.to_path_buf(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes, path)?;
        if ck.stage != stage {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("holds stage `{}`, expected `{}`", ck.stage.name(), stage.name()),
            });
        }
        let expected = cfg.stage_hash(stage);
        if ck.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                path: path.to_path_buf(),
                found: ck.config_hash,
                expected,
            });
        }
        Ok(ck)
    }
}

/// Short content id of a file, used in run manifests.
pub fn artifact_id(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)[..10].iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(self.err("truncated"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("invalid utf-8"))
    }
}
