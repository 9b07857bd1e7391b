//! `GPRC` checkpoint files.
//!
//! Layout (little-endian): magic `GPRC`, `u16` version 1, `u32` header
//! length and a UTF-8 JSON header, `u32` entry count, then per entry a
//! `u16`-prefixed UTF-8 name, `u8` ndim, `u32` dims and an f32 payload.
//! Optimizer moments are stored as extra entries prefixed `adam.m/` and
//! `adam.v/`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use voxinv_core::nets::Architecture;
use voxinv_core::params::{ParamKind, ParamStore};
use voxinv_core::train::{AdamState, EpochRecord, TrainOutcome};
use voxinv_core::Tensor;

use crate::error::{Error, Result};
use crate::io::{read, write_atomic};
use crate::model::Model;
use crate::volume::{put_dims, Cursor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GPRC";
pub const CHECKPOINT_VERSION: u16 = 1;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    /// Epochs run in the stage that produced this checkpoint.
    pub epoch: usize,
    /// Epoch whose parameters are stored.
    pub best_epoch: usize,
    /// Learning rate the next epoch would use.
    pub lr: f64,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub dataset_fingerprint: String,
    pub optimizer: Option<AdamMeta>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

impl Checkpoint {
    /// Snapshot of an untrained or externally trained model.
    pub fn from_model(model: &Model, lr: f64, fingerprint: &str) -> Self {
        Self {
            header: CheckpointHeader {
                architecture: model.architecture(),
                epoch: 0,
                best_epoch: 0,
                lr,
                best_val_loss: None,
                history: Vec::new(),
                dataset_fingerprint: fingerprint.to_string(),
                optimizer: None,
            },
            params: model.params().clone(),
            optimizer: None,
        }
    }

    /// Best parameters of a finished stage together with the final
    /// optimizer state.
    pub fn from_outcome(arch: Architecture, outcome: &TrainOutcome<f32>, fingerprint: &str) -> Self {
        let o = &outcome.optimizer;
        Self {
            header: CheckpointHeader {
                architecture: arch,
                epoch: outcome.history.len(),
                best_epoch: outcome.best_epoch,
                lr: outcome.next_lr,
                best_val_loss: outcome.best_val_loss.is_finite().then_some(outcome.best_val_loss),
                history: outcome.history.clone(),
                dataset_fingerprint: fingerprint.to_string(),
                optimizer: Some(AdamMeta { beta1: o.beta1, beta2: o.beta2, eps: o.eps, t: o.t }),
            },
            params: outcome.best_params.clone(),
            optimizer: Some(outcome.optimizer.clone()),
        }
    }

    /// Builds the network described by the header with these parameters.
    pub fn instantiate(&self) -> Result<Model> {
        let mut m = Model::build(self.header.architecture, 0)?;
        m.params_mut().copy_values_from(&self.params)?;
        Ok(m)
    }

    /// Loads the parameters into an existing network of the same
    /// architecture.
    pub fn load_into(&self, model: &mut Model) -> Result<()> {
        if model.architecture() != self.header.architecture {
            return Err(voxinv_core::Error::ArchitectureMismatch(format!(
                "checkpoint holds {:?}, network is {:?}",
                self.header.architecture,
                model.architecture()
            ))
            .into());
        }
        model.params_mut().copy_values_from(&self.params)?;
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Json {
            context: "checkpoint header".into(),
            message: e.to_string(),
        })?;
        out.extend_from_slice(&u32::try_from(header.len()).map_err(|_| Error::DimOverflow)?.to_le_bytes());
        out.extend_from_slice(&header);

        let mut entries: Vec<(String, &Tensor<f32>, Option<&[f32]>)> = Vec::new();
        for e in self.params.entries() {
            entries.push((e.name.clone(), &e.tensor, None));
        }
        if let Some(opt) = &self.optimizer {
            for (i, e) in self.params.entries().iter().enumerate() {
                if e.kind == ParamKind::Trainable {
                    entries.push((format!("{M_PREFIX}{}", e.name), &e.tensor, Some(&opt.m[i])));
                    entries.push((format!("{V_PREFIX}{}", e.name), &e.tensor, Some(&opt.v[i])));
                }
            }
        }
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, tensor, payload) in entries {
            let bytes = name.as_bytes();
            out.extend_from_slice(&u16::try_from(bytes.len()).map_err(|_| Error::DimOverflow)?.to_le_bytes());
            out.extend_from_slice(bytes);
            put_dims(&mut out, tensor.shape())?;
            for x in payload.unwrap_or(tensor.data()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        c.magic(CHECKPOINT_MAGIC)?;
        let version = c.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadVersion(version));
        }
        let hlen = c.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(c.take(hlen)?).map_err(|e| Error::Json {
            context: "checkpoint header".into(),
            message: e.to_string(),
        })?;
        let count = c.u32()? as usize;
        let mut raw: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
        for _ in 0..count {
            let n = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(n)?)
                .map_err(|_| Error::Corrupt("entry name is not UTF-8".into()))?
                .to_string();
            let (dims, len) = c.dims()?;
            let data = c.f32s(len)?;
            if raw.insert(name.clone(), (dims, data)).is_some() {
                return Err(Error::Corrupt(format!("duplicate entry {name}")));
            }
        }
        c.finish()?;

        let mut params = Model::build(header.architecture, 0)?.params().clone();
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let (dims, data) = raw.remove(name).ok_or_else(|| {
                voxinv_core::Error::ArchitectureMismatch(format!("missing parameter {name}"))
            })?;
            if dims != shape {
                return Err(voxinv_core::Error::ArchitectureMismatch(format!(
                    "{name} has shape {dims:?}, architecture needs {shape:?}"
                ))
                .into());
            }
            Ok(data)
        };
        for e in params.entries_mut() {
            let data = take(&e.name, e.tensor.shape())?;
            e.tensor.data_mut().copy_from_slice(&data);
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(meta) => {
                let mut state = AdamState::new(&params);
                state.beta1 = meta.beta1;
                state.beta2 = meta.beta2;
                state.eps = meta.eps;
                state.t = meta.t;
                for (i, e) in params.entries().iter().enumerate() {
                    if e.kind == ParamKind::Trainable {
                        state.m[i] = take(&format!("{M_PREFIX}{}", e.name), e.tensor.shape())?;
                        state.v[i] = take(&format!("{V_PREFIX}{}", e.name), e.tensor.shape())?;
                    }
                }
                Some(state)
            }
        };
        if let Some(name) = raw.keys().next() {
            return Err(voxinv_core::Error::ArchitectureMismatch(format!("unexpected entry {name}")).into());
        }
        Ok(Self { header, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use voxinv_core::nets::{DenoiserConfig, InverterConfig};

    #[test]
    fn round_trip_preserves_outputs() {
        let m = Model::build(Architecture::Denoiser(DenoiserConfig { modules: 1, channels: 2, reduction: 2 }), 3).unwrap();
        let ck = Checkpoint::from_model(&m, 0.001, "abc");
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        let x = Tensor::from_fn(&[4, 4, 4], |i| (i % 5) as f32 * 0.2);
        assert_eq!(back.instantiate().unwrap().forward(&x).unwrap(), m.forward(&x).unwrap());
        assert_eq!(back.header, ck.header);
    }

    #[test]
    fn corruption_and_mismatch() {
        let arch = Architecture::Inverter(InverterConfig { depth: 1, channels: 2, msfa: true });
        let m = Model::build(arch, 0).unwrap();
        let bytes = Checkpoint::from_model(&m, 0.001, "").encode().unwrap();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut other = Model::build(Architecture::Inverter(InverterConfig { depth: 2, channels: 2, msfa: true }), 0).unwrap();
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert!(matches!(
            ck.load_into(&mut other),
            Err(Error::Core(voxinv_core::Error::ArchitectureMismatch(_)))
        ));
    }
}
