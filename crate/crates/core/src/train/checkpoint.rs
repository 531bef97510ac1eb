//! `MSQK` checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "MSQK" | version u32 | config_len u32 | config text
//! step u64 | epoch u64 | adam_t u64 | skipped u64
//! n_tensors u32
//! per tensor: name_len u32 | name | rank u32 | dims u32* | param f64* | m f64* | v f64*
//! crc32 u32 over every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::adam::Adam;
use super::config::TrainConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSQK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training exactly.
///
/// Per-step randomness is derived from `config.seed` and the step counter,
/// so no generator state is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub adam: Adam,
    pub step: u64,
    pub epoch: u64,
    pub skipped_steps: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.origin.to_string(),
                field,
                detail: "unexpected end of data".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, field: &'static str) -> Result<String> {
        let n = self.u32(field)? as usize;
        let raw = self.take(n, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            path: self.origin.to_string(),
            field,
            detail: "not UTF-8".into(),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        for v in [self.step, self.epoch, self.adam.t, self.skipped_steps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (i, (name, t)) in self.params.iter().enumerate() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for src in [t, &self.adam.m[i], &self.adam.v[i]] {
                for &x in src.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            if bytes.len() >= 4 && &bytes[..4] != CHECKPOINT_MAGIC {
                return Err(Error::Format {
                    path: origin.to_string(),
                    field: "magic",
                    detail: "not an MSQK checkpoint".into(),
                });
            }
            return Err(Error::Checksum(format!("{origin}: file truncated")));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Checksum(format!("{origin}: CRC mismatch")));
        }
        let mut r = Reader {
            buf: body,
            pos: 4,
            origin,
        };
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let config = TrainConfig::parse(&r.string("config")?)?;
        let step = r.u64("step")?;
        let epoch = r.u64("epoch")?;
        let adam_t = r.u64("adam_t")?;
        let skipped_steps = r.u64("skipped")?;
        let n = r.u32("n_tensors")? as usize;
        let mut params = ParamStore::new();
        let (mut ms, mut vs) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let name = r.string("tensor_name")?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut next = |field| Tensor::new(&shape, r.f64s(len, field)?);
            params.add(name, next("param")?);
            ms.push(next("adam_m")?);
            vs.push(next("adam_v")?);
        }
        if r.pos != body.len() {
            return Err(Error::Format {
                path: origin.to_string(),
                field: "trailer",
                detail: format!("{} unexpected bytes", body.len() - r.pos),
            });
        }
        let mut adam = Adam::new(&params, config.lr);
        adam.m = ms;
        adam.v = vs;
        adam.t = adam_t;
        Ok(Self {
            config,
            params,
            adam,
            step,
            epoch,
            skipped_steps,
        })
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy())
            .unwrap_or_default()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&ckpt.to_bytes())
        .map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}
