//! Single-file checkpoints.
//!
//! Layout: the magic bytes [`CHECKPOINT_MAGIC`], a little-endian `u64` header
//! length, a compact JSON header (configs, training counters, RNG states,
//! optimizer settings and a tensor index), then the raw little-endian tensor
//! payload in index order. Saving the same state twice yields identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use depthgaze_autograd::{Float, Optimizer, OptimizerKind, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::error::{GazeError, Result};
use crate::model::Model;
use crate::types::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DGCKPT1\n";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    da_present: bool,
    epoch: usize,
    step: u64,
    best_auc: Option<(usize, f64)>,
    optimizer: OptimizerKind,
    optimizer_steps: Vec<u64>,
    loss_optimizer_steps: Vec<u64>,
    source_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    tensors: Vec<TensorEntry>,
}

fn ckpt_err(msg: impl Into<String>) -> GazeError {
    GazeError::Checkpoint(msg.into())
}

struct Payload<'a, T> {
    entries: Vec<TensorEntry>,
    parts: Vec<&'a Tensor<T>>,
    offset: u64,
}

impl<'a, T: Float> Payload<'a, T> {
    fn push(&mut self, group: &str, name: &str, t: &'a Tensor<T>) {
        let len = (t.len() * std::mem::size_of::<T>()) as u64;
        self.entries.push(TensorEntry {
            group: group.into(),
            name: name.into(),
            shape: t.shape().to_vec(),
            offset: self.offset,
            len,
        });
        self.offset += len;
        self.parts.push(t);
    }

    fn push_store(&mut self, prefix: &str, store: &'a ParamStore<T>, opt: &'a Optimizer<T>) {
        for (_, name, t) in store.iter() {
            self.push(prefix, name, t);
        }
        for (i, (_, name, _)) in store.iter().enumerate() {
            self.push(&format!("{prefix}.m"), name, &opt.first_moments()[i]);
        }
        for (i, (_, name, _)) in store.iter().enumerate() {
            if let Some(v) = opt.second_moments().get(i) {
                self.push(&format!("{prefix}.v"), name, v);
            }
        }
    }
}

pub fn save_checkpoint<T: Float>(trainer: &Trainer<T>, path: &Path) -> Result<()> {
    let mut payload = Payload {
        entries: Vec::new(),
        parts: Vec::new(),
        offset: 0,
    };
    payload.push_store("param", &trainer.model.params, &trainer.optimizer);
    payload.push_store("loss", &trainer.loss_params, &trainer.loss_optimizer);
    let header = Header {
        dtype: T::DTYPE.to_string(),
        model_config: trainer.model.config().clone(),
        train_config: trainer.config.clone(),
        da_present: trainer.model.has_da(),
        epoch: trainer.epoch,
        step: trainer.step,
        best_auc: trainer.best_auc,
        optimizer: trainer.optimizer.kind(),
        optimizer_steps: trainer.optimizer.steps().to_vec(),
        loss_optimizer_steps: trainer.loss_optimizer.steps().to_vec(),
        source_rng: trainer.source_rng.clone(),
        target_rng: trainer.target_rng.clone(),
        tensors: payload.entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + payload.offset as usize);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in payload.parts {
        bytes.extend_from_slice(&T::to_le_bytes_vec(t.data()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GazeError::io(dir, e))?;
    }
    // write-then-rename keeps the previous checkpoint valid if interrupted
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| GazeError::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| GazeError::io(&tmp, e))?;
    f.sync_all().map_err(|e| GazeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GazeError::io(path, e))
}

fn decode<T: Float>(dtype: &str, bytes: &[u8], shape: &[usize]) -> Result<Tensor<T>> {
    let data: Vec<T> = match dtype {
        d if d == T::DTYPE => T::from_le_bytes_slice(bytes),
        "f32" => f32::from_le_bytes_slice(bytes).into_iter().map(|v| T::of(v as f64)).collect(),
        "f64" => f64::from_le_bytes_slice(bytes).into_iter().map(T::of).collect(),
        other => return Err(ckpt_err(format!("unsupported dtype {other}"))),
    };
    Ok(Tensor::new(shape, data)?)
}

fn restore_store<T: Float>(
    store: &mut ParamStore<T>,
    opt_kind: OptimizerKind,
    steps: Vec<u64>,
    prefix: &str,
    header: &Header,
    payload: &[u8],
) -> Result<Optimizer<T>> {
    let mut groups: [Vec<Tensor<T>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
    for (gi, suffix) in ["", ".m", ".v"].iter().enumerate() {
        let group = format!("{prefix}{suffix}");
        let entries: Vec<&TensorEntry> = header.tensors.iter().filter(|e| e.group == group).collect();
        if entries.is_empty() && gi == 2 {
            continue;
        }
        if entries.len() != names.len() {
            return Err(ckpt_err(format!(
                "group {group} has {} tensors, model expects {}",
                entries.len(),
                names.len()
            )));
        }
        for (e, name) in entries.iter().zip(&names) {
            if &e.name != name {
                return Err(ckpt_err(format!("tensor {} found where {name} was expected", e.name)));
            }
            let (lo, hi) = (e.offset as usize, (e.offset + e.len) as usize);
            let bytes = payload
                .get(lo..hi)
                .ok_or_else(|| ckpt_err(format!("payload truncated at {}", e.name)))?;
            groups[gi].push(decode(&header.dtype, bytes, &e.shape)?);
        }
    }
    let [values, first, second] = groups;
    for (id, v) in store.ids().collect::<Vec<_>>().into_iter().zip(values) {
        if store.get(id).shape() != v.shape() {
            return Err(ckpt_err(format!(
                "shape of {} is {:?}, checkpoint has {:?}",
                store.name(id),
                store.get(id).shape(),
                v.shape()
            )));
        }
        store.set(id, v)?;
    }
    Ok(Optimizer::from_state(opt_kind, steps, first, second)?)
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<Trainer<T>> {
    let bytes = fs::read(path).map_err(|e| GazeError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ckpt_err(format!("{} is not a checkpoint", path.display())));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + hlen).ok_or_else(|| ckpt_err("header truncated"))?;
    let header: Header = serde_json::from_slice(json)?;
    let payload = &bytes[16 + hlen..];
    if header.model_config.da_enabled != header.da_present {
        return Err(ckpt_err("domain-adaptation presence flag disagrees with config"));
    }
    let model = Model::<T>::new(&header.model_config)?;
    let mut trainer = Trainer::with_model(model, &header.train_config);
    trainer.optimizer = restore_store(
        &mut trainer.model.params,
        header.optimizer,
        header.optimizer_steps.clone(),
        "param",
        &header,
        payload,
    )?;
    trainer.loss_optimizer = restore_store(
        &mut trainer.loss_params,
        header.optimizer,
        header.loss_optimizer_steps.clone(),
        "loss",
        &header,
        payload,
    )?;
    trainer.source_rng = header.source_rng;
    trainer.target_rng = header.target_rng;
    trainer.epoch = header.epoch;
    trainer.step = header.step;
    trainer.best_auc = header.best_auc;
    Ok(trainer)
}
