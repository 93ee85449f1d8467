//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SFUSCKPT"
//! version      u32      1
//! header_len   u32
//! header       JSON     {"config": ModelConfig, "metadata": any, "optimizer_step": u64|null}
//! count        u32      number of tensors
//! per tensor:  name_len u32, name UTF-8, ndim u32, dims u64×ndim, payload f64×product(dims)
//! ```
//!
//! Tensor names: parameter names as registered by the model,
//! `<bn name>.running_mean` / `.running_var`, and optionally
//! `adam.m.<param>` / `adam.v.<param>`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::{build_model, SfusNet};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"SFUSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: serde_json::Value,
    pub optimizer_step: Option<u64>,
    pub tensors: IndexMap<String, Tensor<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: serde_json::Value,
    optimizer_step: Option<u64>,
}

fn vec_tensor<T: Scalar>(v: &[T]) -> Tensor<f64> {
    Tensor::new(&[v.len()], v.iter().map(|x| x.as_f64()).collect()).expect("1-D")
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &SfusNet<T>, metadata: serde_json::Value, optimizer: Option<&AdamState<T>>) -> Self {
        let mut tensors = IndexMap::new();
        let params = model.params();
        for (name, v) in params.names().iter().zip(params.values()) {
            tensors.insert(name.clone(), v.cast());
        }
        for (name, s) in model.running_stat_names().iter().zip(model.running_stats()) {
            tensors.insert(format!("{name}.running_mean"), vec_tensor(&s.mean));
            tensors.insert(format!("{name}.running_var"), vec_tensor(&s.var));
        }
        if let Some(st) = optimizer {
            for ((name, m), p) in params.names().iter().zip(&st.m).zip(params.values()) {
                tensors.insert(format!("adam.m.{name}"), vec_tensor(m).reshape(p.shape()).expect("moment shape"));
            }
            for ((name, v), p) in params.names().iter().zip(&st.v).zip(params.values()) {
                tensors.insert(format!("adam.v.{name}"), vec_tensor(v).reshape(p.shape()).expect("moment shape"));
            }
        }
        Checkpoint {
            config: model.config().clone(),
            metadata,
            optimizer_step: optimizer.map(|s| s.step),
            tensors,
        }
    }

    fn tensor(&self, name: &str) -> Result<&Tensor<f64>> {
        self.tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Rebuilds the model and loads every parameter and running statistic.
    pub fn to_model<T: Scalar>(&self) -> Result<SfusNet<T>> {
        let mut model: SfusNet<T> = build_model(&self.config, 0)?;
        let names = model.params().names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let t = self.tensor(name)?;
            let slot = &mut model.params_mut().values_mut()[i];
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!("{name}: stored {:?}, model {:?}", t.shape(), slot.shape())));
            }
            *slot = t.cast();
        }
        let bn_names = model.running_stat_names().to_vec();
        for (i, name) in bn_names.iter().enumerate() {
            let mean = self.tensor(&format!("{name}.running_mean"))?;
            let var = self.tensor(&format!("{name}.running_var"))?;
            let slot = &mut model.running_stats_mut()[i];
            if mean.len() != slot.channels() || var.len() != slot.channels() {
                return Err(Error::Checkpoint(format!("{name}: running stats have wrong length")));
            }
            slot.mean = mean.data().iter().map(|&x| T::of(x)).collect();
            slot.var = var.data().iter().map(|&x| T::of(x)).collect();
        }
        Ok(model)
    }

    /// Optimizer moments, when the checkpoint carries them.
    pub fn optimizer_state<T: Scalar>(&self, model: &SfusNet<T>) -> Result<Option<AdamState<T>>> {
        let Some(step) = self.optimizer_step else { return Ok(None) };
        let mut st = AdamState::new(model.params().values());
        for (i, name) in model.params().names().iter().enumerate() {
            st.m[i] = self.tensor(&format!("adam.m.{name}"))?.data().iter().map(|&x| T::of(x)).collect();
            st.v[i] = self.tensor(&format!("adam.v.{name}"))?.data().iter().map(|&x| T::of(x)).collect();
        }
        st.step = step;
        Ok(Some(st))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            optimizer_step: self.optimizer_step,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = IndexMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config: header.config, metadata: header.metadata, optimizer_step: header.optimizer_step, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
