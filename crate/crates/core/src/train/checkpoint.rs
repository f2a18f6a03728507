//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "ACNV"  u32 version  u64 step
//! u32 len, descriptor text (key=value lines)
//! u32 count, then per record: u32 name_len, name, u32 ndim, u64 dims[ndim], f64 values
//! u8 has_optimizer
//!   if 1: f64 lr, f64 beta1, f64 beta2, f64 epsilon, u64 adam_step,
//!         u32 count, records as above (first and second moments)
//! ```
//!
//! Records are parameters followed by `<layer>.running_mean` and
//! `<layer>.running_var` for every initialized batchnorm.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::optim::{Moments, OptimizerState};
use crate::error::{Error, Result};
use crate::init::RngSeed;
use crate::model::{ArchitectureDescriptor, Model};

pub const MAGIC: &[u8; 4] = b"ACNV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild a model and resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub arch: ArchitectureDescriptor,
    pub records: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerState>,
}

const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

impl Checkpoint {
    pub fn capture(model: &Model, step: u64, optimizer: Option<&OptimizerState>) -> Self {
        let mut records: Vec<TensorRecord> = model
            .parameters()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: t.shape().to_vec(),
                values: t.to_vec(),
            })
            .collect();
        for (name, stats) in model.statistics() {
            let s = stats.lock().expect("stats lock poisoned");
            if !s.initialized {
                continue;
            }
            records.push(TensorRecord {
                name: format!("{name}{MEAN_SUFFIX}"),
                shape: vec![s.mean.len()],
                values: s.mean.clone(),
            });
            records.push(TensorRecord {
                name: format!("{name}{VAR_SUFFIX}"),
                shape: vec![s.var.len()],
                values: s.var.clone(),
            });
        }
        Checkpoint {
            step,
            arch: model.arch().clone(),
            records,
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuilds the model. Every parameter must be present with its exact
    /// shape; unknown records are errors.
    pub fn restore(&self) -> Result<Model> {
        let model = Model::new(self.arch.clone(), RngSeed(0))?;
        let params = model.parameters();
        let stats = model.statistics();
        let mut seen = vec![false; params.len()];
        for r in &self.records {
            if let Some(i) = params.iter().position(|(n, _)| *n == r.name) {
                let t = &params[i].1;
                if t.shape() != r.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{} has shape {:?}, model expects {:?}",
                        r.name,
                        r.shape,
                        t.shape()
                    )));
                }
                t.data_mut().copy_from_slice(&r.values);
                seen[i] = true;
                continue;
            }
            let (layer, is_mean) = if let Some(l) = r.name.strip_suffix(MEAN_SUFFIX) {
                (l, true)
            } else if let Some(l) = r.name.strip_suffix(VAR_SUFFIX) {
                (l, false)
            } else {
                return Err(Error::Checkpoint(format!("unknown record {}", r.name)));
            };
            let Some((_, slot)) = stats.iter().find(|(n, _)| n == layer) else {
                return Err(Error::Checkpoint(format!("unknown record {}", r.name)));
            };
            let mut s = slot.lock().expect("stats lock poisoned");
            if r.values.len() != s.channels() {
                return Err(Error::Checkpoint(format!(
                    "{} has {} channels, model expects {}",
                    r.name,
                    r.values.len(),
                    s.channels()
                )));
            }
            if is_mean {
                s.mean.copy_from_slice(&r.values);
            } else {
                s.var.copy_from_slice(&r.values);
            }
            s.initialized = true;
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Checkpoint(format!("missing parameter {}", params[i].0)));
        }
        drop(stats);
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let desc = self.arch.to_text();
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        write_records(&mut out, &self.records);
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                for v in [o.learning_rate, o.beta1, o.beta2, o.epsilon] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&o.step.to_le_bytes());
                let mut recs = Vec::with_capacity(2 * o.moments.len());
                for m in &o.moments {
                    for (suffix, v) in [("first", &m.first), ("second", &m.second)] {
                        recs.push(TensorRecord {
                            name: format!("{}.{suffix}", m.name),
                            shape: vec![v.len()],
                            values: v.clone(),
                        });
                    }
                }
                write_records(&mut out, &recs);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let step = r.u64()?;
        let len = r.u32()? as usize;
        let desc = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("descriptor is not UTF-8".into()))?;
        let arch = ArchitectureDescriptor::from_text(desc)?;
        let records = read_records(&mut r)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let learning_rate = r.f64()?;
                let beta1 = r.f64()?;
                let beta2 = r.f64()?;
                let epsilon = r.f64()?;
                let adam_step = r.u64()?;
                let recs = read_records(&mut r)?;
                if recs.len() % 2 != 0 {
                    return Err(Error::Checkpoint("unpaired optimizer moments".into()));
                }
                let mut moments = Vec::with_capacity(recs.len() / 2);
                for pair in recs.chunks(2) {
                    let (Some(name), Some(second_name)) =
                        (pair[0].name.strip_suffix(".first"), pair[1].name.strip_suffix(".second"))
                    else {
                        return Err(Error::Checkpoint(format!("malformed moment record {}", pair[0].name)));
                    };
                    if name != second_name {
                        return Err(Error::Checkpoint(format!("moment records {name} and {second_name} differ")));
                    }
                    moments.push(Moments {
                        name: name.to_string(),
                        first: pair[0].values.clone(),
                        second: pair[1].values.clone(),
                    });
                }
                Some(OptimizerState {
                    learning_rate,
                    beta1,
                    beta2,
                    epsilon,
                    step: adam_step,
                    moments,
                })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            step,
            arch,
            records,
            optimizer,
        })
    }

    /// Writes to a sibling temp file, then renames over `path`, so a crash
    /// never leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn write_records(out: &mut Vec<u8>, records: &[TensorRecord]) {
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_records(r: &mut Reader<'_>) -> Result<Vec<TensorRecord>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
            return Err(Error::Checkpoint(format!("record {name} overruns the file")));
        }
        let values = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
        out.push(TensorRecord { name, shape, values });
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
