//! JSON checkpoints.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "model": "collective",
//!   "config": { ...ModelConfig... },
//!   "window": 20,
//!   "temperature": 1.13,
//!   "tensors": { "gru.wz": { "shape": [32, 66], "data": [ ...row-major... ] }, ... }
//! }
//! ```
//!
//! `model` is one of `gcn`, `ego`, `collective`. Tensor names and shapes are
//! those reported by [`Params::tensors`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gcn::GcnParams;
use super::gru::GruParams;
use super::temporal::{TemporalKind, TemporalModel};
use super::{Matrix, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: String,
    pub config: ModelConfig,
    pub window: usize,
    pub temperature: f64,
    pub tensors: BTreeMap<String, TensorData>,
}

fn dump<P: Params>(p: &P) -> BTreeMap<String, TensorData> {
    p.tensors()
        .into_iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                TensorData {
                    shape: [t.rows(), t.cols()],
                    data: t.data().to_vec(),
                },
            )
        })
        .collect()
}

fn load_into<P: Params>(p: &mut P, tensors: &BTreeMap<String, TensorData>) -> Result<()> {
    for (name, t) in p.tensors_mut() {
        let src = tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if src.shape != [t.rows(), t.cols()] || src.data.len() != t.rows() * t.cols() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} does not match {:?}",
                src.shape,
                [t.rows(), t.cols()]
            )));
        }
        *t = Matrix::from_vec(t.rows(), t.cols(), src.data.clone());
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_gcn(p: &GcnParams, cfg: &ModelConfig, temperature: f64) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: "gcn".into(),
            config: cfg.clone(),
            window: 1,
            temperature,
            tensors: dump(p),
        }
    }

    pub fn from_temporal(m: &TemporalModel, cfg: &ModelConfig) -> Self {
        let model = match m.kind {
            TemporalKind::Ego => "ego",
            TemporalKind::Collective => "collective",
        };
        let mut config = cfg.clone();
        config.collective_mode = m.mode;
        config.horizon = m.horizon;
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: model.into(),
            config,
            window: m.window,
            temperature: m.temperature,
            tensors: dump(&m.params),
        }
    }

    fn check(&self, expected: &str) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        if self.model != expected {
            return Err(Error::Checkpoint(format!(
                "expected a {expected} checkpoint, found {}",
                self.model
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Checkpoint("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn to_gcn(&self) -> Result<GcnParams> {
        self.check("gcn")?;
        let c = &self.config;
        let mut p = GcnParams::new(&mut stream(0, &[]), 2 * c.feature_dim, c.gcn_hidden, c.embed_dim, 1.0);
        load_into(&mut p, &self.tensors)?;
        Ok(p)
    }

    pub fn to_temporal(&self, kind: TemporalKind) -> Result<TemporalModel> {
        self.check(match kind {
            TemporalKind::Ego => "ego",
            TemporalKind::Collective => "collective",
        })?;
        let c = &self.config;
        let mut params = GruParams::new(&mut stream(0, &[]), c.gru_input(kind), c.gru_hidden, 1.0);
        load_into(&mut params, &self.tensors)?;
        Ok(TemporalModel {
            kind,
            mode: c.collective_mode,
            window: self.window,
            horizon: c.horizon,
            params,
            temperature: self.temperature,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
