//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `FPSR`, `u32` version, `u32`-prefixed TOML
//! config, `u64` step, three `u64` optimizer step counts (generator, IDWT,
//! discriminator), `u32` history length followed by the records, `u32`
//! tensor count followed by named tensor records (`u32` name length, name,
//! `u8` dtype, `u8` rank, `u32` dims, payload), and the end marker `FEND`.

use std::path::Path;

use super::{StepRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::tensor::{DType, Element, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FPSR";
const END: &[u8; 4] = b"FEND";
const RECORD_VALUES: usize = 19;

/// Full training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    /// Step counts of the generator, IDWT and discriminator optimizers.
    pub optimizer_steps: [u64; 3],
    /// Most recent step records.
    pub history: Vec<StepRecord>,
    /// Named tensors in a fixed order: parameters, then optimizer moments.
    pub tensors: Vec<(String, Tensor)>,
}

fn record_values(r: &StepRecord) -> [f64; RECORD_VALUES] {
    let l = &r.losses;
    let mut out = [0.0; RECORD_VALUES];
    let values = l
        .adv_g
        .iter()
        .chain(&l.adv_d)
        .chain(&l.wavelet)
        .chain([&l.pixel, &l.total_g, &l.total_d])
        .chain(&r.attention);
    for (slot, v) in out.iter_mut().zip(values) {
        *slot = *v;
    }
    out
}

fn record_from_values(step: u64, v: &[f64; RECORD_VALUES]) -> StepRecord {
    let four = |i: usize| [v[i], v[i + 1], v[i + 2], v[i + 3]];
    StepRecord {
        step,
        losses: LossReport {
            adv_g: four(0),
            adv_d: four(4),
            wavelet: four(8),
            pixel: v[12],
            total_g: v[13],
            total_d: v[14],
        },
        attention: four(15),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("file truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<&'a str> {
        let len = self.u32()? as usize;
        std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("string field is not UTF-8".into()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = self.config.to_toml();
        put_u32(&mut out, config.len());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for s in self.optimizer_steps {
            out.extend_from_slice(&s.to_le_bytes());
        }
        put_u32(&mut out, self.history.len());
        for r in &self.history {
            out.extend_from_slice(&r.step.to_le_bytes());
            for v in record_values(r) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            out.push(f32::DTYPE.code());
            out.push(u8::try_from(t.shape().len()).expect("rank fits in u8"));
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out.extend_from_slice(END);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let config = TrainConfig::from_toml(r.string()?)?;
        let step = r.u64()?;
        let optimizer_steps = [r.u64()?, r.u64()?, r.u64()?];
        let history_len = r.u32()? as usize;
        let mut history = Vec::with_capacity(history_len.min(1 << 16));
        for _ in 0..history_len {
            let s = r.u64()?;
            let mut v = [0.0; RECORD_VALUES];
            for slot in &mut v {
                *slot = r.f64()?;
            }
            history.push(record_from_values(s, &v));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?.to_owned();
            let dtype = DType::from_code(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype")))?;
            if dtype != DType::F32 {
                return Err(Error::Checkpoint(format!("{name}: expected f32 data")));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            let width = dtype.size();
            let payload = r.take(numel.checked_mul(width).ok_or_else(|| {
                Error::Checkpoint(format!("{name}: shape overflows"))
            })?)?;
            let data = payload.chunks_exact(width).map(f32::read_le).collect();
            let tensor = Tensor::new(&shape, data)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            tensors.push((name, tensor));
        }
        if r.take(4)? != END {
            return Err(Error::Checkpoint("missing end marker".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after end marker".into()));
        }
        Ok(Self {
            config,
            step,
            optimizer_steps,
            history,
            tensors,
        })
    }

    /// Writes via a temporary sibling file and a rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
