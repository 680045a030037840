//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BNET" | version u32 | config length u32 | config text (utf-8)
//! state: epoch u64 | optimizer step u64 | lookahead counter u64
//!        | data rng (seed u64, stream u64, word u128)
//!        | dropout rng (same) | best test acc f64 | best epoch u64
//!        | norm mean 3 x f64 | norm std 3 x f64
//! tensor count u32
//! per tensor: name length u32 | name | rank u32 | dims u32 x rank | f32 payload
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{Lookahead, Optimizer};
use crate::rng::RngState;

pub const MAGIC: &[u8; 4] = b"BNET";
pub const VERSION: u32 = 1;

/// Counters and random-stream positions needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: u64,
    pub optimizer_step: u64,
    pub lookahead_counter: u64,
    pub data_rng: RngState,
    pub dropout_rng: RngState,
    pub best_test_acc: f64,
    /// 0 while no epoch has been evaluated.
    pub best_epoch: u64,
    pub norm: NormStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
    pub tensors: Vec<NamedTensor>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len_u32(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in u32")))?;
        self.u32(n);
        Ok(())
    }
    fn rng(&mut self, s: &RngState) {
        self.u64(s.seed);
        self.u64(s.stream);
        self.u128(s.word_pos);
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
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn rng(&mut self) -> Result<RngState> {
        Ok(RngState {
            seed: self.u64()?,
            stream: self.u64()?,
            word_pos: self.u128()?,
        })
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8 in checkpoint".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let config = self.config.to_text();
        w.len_u32(config.len())?;
        w.0.extend_from_slice(config.as_bytes());

        let s = &self.state;
        w.u64(s.epoch);
        w.u64(s.optimizer_step);
        w.u64(s.lookahead_counter);
        w.rng(&s.data_rng);
        w.rng(&s.dropout_rng);
        w.f64(s.best_test_acc);
        w.u64(s.best_epoch);
        s.norm.mean.iter().chain(&s.norm.std).for_each(|&v| w.f64(v));

        w.len_u32(self.tensors.len())?;
        for t in &self.tensors {
            w.len_u32(t.name.len())?;
            w.0.extend_from_slice(t.name.as_bytes());
            w.len_u32(t.shape.len())?;
            for &d in &t.shape {
                w.len_u32(d)?;
            }
            for v in &t.data {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::parse(&r.string()?)?;
        let mut state = TrainState {
            epoch: r.u64()?,
            optimizer_step: r.u64()?,
            lookahead_counter: r.u64()?,
            data_rng: r.rng()?,
            dropout_rng: r.rng()?,
            best_test_acc: r.f64()?,
            best_epoch: r.u64()?,
            norm: NormStats::identity(),
        };
        for i in 0..6 {
            let v = r.f64()?;
            if i < 3 {
                state.norm.mean[i] = v;
            } else {
                state.norm.std[i - 3] = v;
            }
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let data = r
                .take(bytes)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self { config, state, tensors })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Snapshot of the model, its batch-norm statistics and the optimiser
    /// and Lookahead buffers.
    pub fn capture(
        config: &TrainConfig,
        state: TrainState,
        model: &Model<f32>,
        optimizer: &Optimizer<f32>,
        lookahead: Option<&Lookahead<f32>>,
    ) -> Self {
        let mut tensors = Vec::new();
        let params: Vec<_> = model.params().iter().collect();
        for p in &params {
            tensors.push(NamedTensor {
                name: format!("param.{}", p.name),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            });
        }
        for (name, stats) in model.buffers().iter() {
            for (which, values) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                tensors.push(NamedTensor {
                    name: format!("bn.{name}.{which}"),
                    shape: vec![values.len()],
                    data: values.clone(),
                });
            }
        }
        for (which, i, values) in optimizer.buffers() {
            tensors.push(NamedTensor {
                name: format!("optim.{which}.{}", params[i].name),
                shape: params[i].tensor.shape().to_vec(),
                data: values.to_vec(),
            });
        }
        if let Some(la) = lookahead {
            for (p, slow) in params.iter().zip(la.slow_weights()) {
                tensors.push(NamedTensor {
                    name: format!("lookahead.slow.{}", p.name),
                    shape: p.tensor.shape().to_vec(),
                    data: slow.clone(),
                });
            }
        }
        Self {
            config: config.clone(),
            state,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies saved values into a model built from `self.config` and into
    /// freshly created optimiser and Lookahead state.
    pub fn restore(
        &self,
        model: &mut Model<f32>,
        optimizer: &mut Optimizer<f32>,
        lookahead: Option<&mut Lookahead<f32>>,
    ) -> Result<()> {
        let by_name: HashMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let fetch = |name: String, shape: &[usize]| -> Result<Vec<f32>> {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, model expects {shape:?}",
                    t.shape
                )));
            }
            Ok(t.data.clone())
        };

        let names: Vec<(String, Vec<usize>)> = model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec()))
            .collect();
        for (i, (name, shape)) in names.iter().enumerate() {
            let values = fetch(format!("param.{name}"), shape)?;
            model.params_mut().set_values(i, &values)?;
        }
        for (name, stats) in model.buffers_mut().iter_mut() {
            let c = [stats.mean.len()];
            stats.mean = fetch(format!("bn.{name}.running_mean"), &c)?;
            stats.var = fetch(format!("bn.{name}.running_var"), &c)?;
        }

        let load_all = |prefix: &str| -> Result<Vec<Vec<f32>>> {
            names
                .iter()
                .map(|(name, shape)| fetch(format!("{prefix}.{name}"), shape))
                .collect()
        };
        let first = load_all("optim.first")?;
        let has_second = optimizer.buffers().any(|(which, _, _)| which == "second");
        let second = if has_second { load_all("optim.second")? } else { Vec::new() };
        optimizer.restore(self.state.optimizer_step, first, second)?;
        if let Some(la) = lookahead {
            la.restore(self.state.lookahead_counter, load_all("lookahead.slow")?)?;
        }
        Ok(())
    }
}
