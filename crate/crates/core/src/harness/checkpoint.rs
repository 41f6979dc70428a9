//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! file   := magic:"MPAC" version:u32 model:str meta:str n_params:u32 param*n_params
//! str    := byte_len:u32 utf8
//! param  := name:str group:i32 rows:u32 cols:u32 value:f64*(rows*cols)
//! ```
//!
//! `model` is the model config as `key = value` text and `meta` the run
//! metadata in the same form. Group `-1` is shared; `k >= 0` is decoder `k`
//! of the multi-decoder bank. Values are row-major `f64`, so checkpoints
//! from `f32` runs reload bit-exactly.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::harness::config::{AgentTypes, Precision};
use crate::kv::{kv_config, KvConfig};
use crate::model::{Model, ModelConfig};
use crate::nn::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MPAC";
pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

kv_config! {
    /// Provenance of a checkpoint's parameters.
    #[derive(Debug, Clone, PartialEq)]
    pub struct CheckpointMeta {
        /// Precision the parameters were trained in.
        precision: Precision = Precision::F64,
        /// Optimizer step the parameters were captured at.
        step: usize = 0,
        /// Validation NLL at that step; NaN without a validation split.
        val_nll: f64 = f64::NAN,
        /// Training seed.
        seed: u64 = 0,
        /// Target agent types the run trained on.
        agent_types: AgentTypes = AgentTypes::all(),
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ParamStore<f64>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &Model<S>, meta: CheckpointMeta) -> Self {
        Self { model: model.config().clone(), meta, params: model.params().cast() }
    }

    /// Rebuilds the model; the parameter layout must match the config exactly.
    pub fn to_model<S: Scalar>(&self) -> Result<Model<S>> {
        let mut model = Model::<S>::new(self.model.clone(), 0)?;
        let layout = model.params();
        for (i, (mine, theirs)) in layout.entries().iter().zip(self.params.entries()).enumerate() {
            if mine.group != theirs.group {
                return Err(Error::Corrupt {
                    kind: KIND,
                    detail: format!("parameter {i} ({}) has group {:?}, expected {:?}", theirs.name, theirs.group, mine.group),
                });
            }
        }
        model
            .params_mut()
            .copy_values_from(&self.params.cast())
            .map_err(|detail| Error::Corrupt { kind: KIND, detail })?;
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.model.to_kv());
        w.str(&self.meta.to_kv());
        w.len(self.params.len());
        for e in self.params.entries() {
            w.str(&e.name);
            w.i32(e.group.code());
            w.len(e.value.rows());
            w.len(e.value.cols());
            e.value.data().iter().for_each(|&v| w.f64(v));
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, KIND);
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let model = ModelConfig::from_kv_str(&r.str()?, "checkpoint model config")?;
        let meta = CheckpointMeta::from_kv_str(&r.str()?, "checkpoint metadata")?;
        let n = r.count(16)?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let group = ParamGroup::from_code(r.i32()?);
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = rows.checked_mul(cols).filter(|l| l.saturating_mul(8) <= r.remaining());
            let Some(len) = len else {
                return Err(r.corrupt(format!("parameter {name} shape {rows}x{cols} exceeds file")));
            };
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if params.find(&name).is_some() {
                return Err(r.corrupt(format!("duplicate parameter {name}")));
            }
            params.add(name, group, Matrix::from_vec(rows, cols, data));
        }
        r.finish()?;
        Ok(Self { model, meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
