//! Single-file checkpoints: a configuration snapshot, every named parameter
//! and buffer as little-endian `f32` with its shape, and optional training
//! state. Identical inputs produce identical bytes.
//!
//! Layout: `SKMB`, `u32` version, length-prefixed config JSON, `u64` tensor
//! count, then per tensor a length-prefixed name, `u32` rank, `u64` dims and
//! the data; finally a `u8` flag and, when set, the training state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use skinmamba_tensor::Tensor;

use crate::error::{Error, Result};
use crate::module::Module;

const MAGIC: &[u8; 4] = b"SKMB";
const VERSION: u32 = 1;

/// Optimizer moments and bookkeeping needed to resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: u64,
    pub step: u64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<u64>,
    /// First and second AdamW moments keyed by parameter name.
    pub moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub train_state: Option<TrainState>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_module(config_json: impl Into<String>, module: &impl Module<f32>) -> Self {
        let tensors = module.named_params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        Self { config_json: config_json.into(), tensors, train_state: None }
    }

    /// Copy every stored tensor into the module. Names and shapes must
    /// match exactly in both directions.
    pub fn restore_into(&self, module: &mut impl Module<f32>) -> Result<()> {
        let mut stored: BTreeMap<&str, &Tensor<f32>> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut problems = Vec::new();
        module.visit_mut("", &mut |name, p| match stored.remove(name) {
            Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
            Some(t) => problems.push(format!("{name}: stored {:?}, model {:?}", t.shape(), p.value.shape())),
            None => problems.push(format!("{name}: missing")),
        });
        problems.extend(stored.keys().map(|n| format!("{n}: not in model")));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(bad(format!("parameters do not match the model: {}", problems.join("; "))))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        put_str(&mut w, &self.config_json);
        put_u64(&mut w, self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            put_str(&mut w, name);
            put_tensor(&mut w, t);
        }
        match &self.train_state {
            None => w.push(0),
            Some(s) => {
                w.push(1);
                put_u64(&mut w, s.epoch);
                put_u64(&mut w, s.step);
                put_opt_f64(&mut w, s.best_metric);
                put_opt_f64(&mut w, s.best_epoch.map(|e| e as f64));
                put_u64(&mut w, s.moments.len() as u64);
                for (name, (m, v)) in &s.moments {
                    put_str(&mut w, name);
                    put_tensor(&mut w, m);
                    put_tensor(&mut w, v);
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config_json = r.string()?;
        let n = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            tensors.push((r.string()?, r.tensor()?));
        }
        let train_state = match r.take(1)?[0] {
            0 => None,
            1 => {
                let epoch = r.u64()?;
                let step = r.u64()?;
                let best_metric = r.opt_f64()?;
                let best_epoch = r.opt_f64()?.map(|e| e as u64);
                let mut moments = BTreeMap::new();
                for _ in 0..r.u64()? {
                    let name = r.string()?;
                    moments.insert(name, (r.tensor()?, r.tensor()?));
                }
                Some(TrainState { epoch, step, best_metric, best_epoch, moments })
            }
            f => return Err(bad(format!("bad training-state flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config_json, tensors, train_state })
    }

    /// Write through a temporary sibling and rename, so readers never see
    /// a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u64(w, s.len() as u64);
    w.extend_from_slice(s.as_bytes());
}

fn put_opt_f64(w: &mut Vec<u8>, v: Option<f64>) {
    match v {
        None => w.push(0),
        Some(x) => {
            w.push(1);
            w.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn put_tensor(w: &mut Vec<u8>, t: &Tensor<f32>) {
    put_u32(w, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(w, d as u64);
    }
    for v in t.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("length overflows"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("name is not UTF-8"))
    }

    fn opt_f64(&mut self) -> Result<Option<f64>> {
        Ok(match self.take(1)?[0] {
            0 => None,
            _ => Some(f64::from_le_bytes(self.take(8)?.try_into().expect("length checked"))),
        })
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.len()?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflows"))?;
        let bytes = self.take(numel.checked_mul(4).ok_or_else(|| bad("shape overflows"))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect();
        Ok(Tensor::new(shape, data))
    }
}
