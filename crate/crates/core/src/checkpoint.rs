//! Versioned JSON checkpoints.
//!
//! Arrays are stored as base64 of little-endian `f64` bytes, so a
//! save/load round trip is bit-exact. The envelope also records the model
//! dimensions, the concatenation layout and the training config, and
//! optionally the optimizer and early-stopping state needed to resume.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dims, ModelParams, CONCAT_LAYOUT, SLOTS};
use crate::optim::AdamState;
use crate::trainer::{EarlyStopping, TrainConfig, TrainState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    /// Base64 of little-endian f64 values.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerBlob {
    pub step: u64,
    pub m: Vec<TensorBlob>,
    pub v: Vec<TensorBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressBlob {
    pub epochs_done: usize,
    pub stopper: EarlyStopping,
    pub best_params: Vec<TensorBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_size: usize,
    pub dim: usize,
    pub max_len: usize,
    pub concat_layout: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub params: Vec<TensorBlob>,
    #[serde(default)]
    pub optimizer: Option<OptimizerBlob>,
    #[serde(default)]
    pub progress: Option<ProgressBlob>,
}

fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(name: &str, text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("slot `{name}`: corrupt payload: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "slot `{name}`: payload holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn blobs(params: &ModelParams) -> Vec<TensorBlob> {
    params
        .slices()
        .iter()
        .zip(params.shapes())
        .zip(SLOTS)
        .map(|((data, shape), info)| TensorBlob {
            name: info.name.to_string(),
            shape,
            data: encode(data),
        })
        .collect()
}

fn restore(blobs: &[TensorBlob], dims: Dims) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(dims);
    if blobs.len() != SLOTS.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter slots, found {}",
            SLOTS.len(),
            blobs.len()
        )));
    }
    let shapes = params.shapes();
    for (((blob, info), shape), dst) in blobs.iter().zip(SLOTS).zip(shapes).zip(params.slices_mut()) {
        if blob.name != info.name {
            return Err(Error::Checkpoint(format!(
                "expected slot `{}`, found `{}`",
                info.name, blob.name
            )));
        }
        if blob.shape != shape {
            return Err(Error::Checkpoint(format!(
                "slot `{}`: shape {:?} does not match model shape {:?}",
                info.name, blob.shape, shape
            )));
        }
        dst.copy_from_slice(&decode(info.name, &blob.data, dst.len())?);
    }
    Ok(params)
}

impl Checkpoint {
    /// Parameters only, for inference.
    pub fn from_params(params: &ModelParams, config: &TrainConfig) -> Self {
        let dims = params.dims();
        Self {
            format_version: FORMAT_VERSION,
            vocab_size: dims.vocab_size,
            dim: dims.dim,
            max_len: dims.max_len,
            concat_layout: CONCAT_LAYOUT.to_string(),
            seed: config.seed,
            config: config.clone(),
            params: blobs(params),
            optimizer: None,
            progress: None,
        }
    }

    /// Full training state, for resuming.
    pub fn from_state(state: &TrainState) -> Self {
        let mut ck = Self::from_params(&state.params, &state.config);
        ck.optimizer = Some(OptimizerBlob {
            step: state.opt.step,
            m: blobs(&state.opt.m),
            v: blobs(&state.opt.v),
        });
        ck.progress = Some(ProgressBlob {
            epochs_done: state.epochs_done,
            stopper: state.stopper.clone(),
            best_params: blobs(&state.best_params),
        });
        ck
    }

    pub fn dims(&self) -> Dims {
        Dims {
            vocab_size: self.vocab_size,
            dim: self.dim,
            max_len: self.max_len,
        }
    }

    fn check_header(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.concat_layout != CONCAT_LAYOUT {
            return Err(Error::Checkpoint(format!(
                "concat layout `{}` is not supported (expected `{CONCAT_LAYOUT}`)",
                self.concat_layout
            )));
        }
        if self.dim != self.config.dim {
            return Err(Error::Checkpoint(format!(
                "envelope dim {} disagrees with config dim {}",
                self.dim, self.config.dim
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.check_header()?;
        restore(&self.params, self.dims())
    }

    /// Restores a resumable state; fails if the checkpoint holds parameters only.
    pub fn train_state(&self) -> Result<TrainState> {
        let params = self.params()?;
        let (Some(opt), Some(progress)) = (&self.optimizer, &self.progress) else {
            return Err(Error::Checkpoint(
                "checkpoint has no optimizer state to resume from".into(),
            ));
        };
        Ok(TrainState {
            config: self.config.clone(),
            opt: AdamState {
                step: opt.step,
                m: restore(&opt.m, self.dims())?,
                v: restore(&opt.v, self.dims())?,
            },
            epochs_done: progress.epochs_done,
            stopper: progress.stopper.clone(),
            best_params: restore(&progress.best_params, self.dims())?,
            history: Vec::new(),
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        ck.check_header()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, config: &TrainConfig) -> Result<()> {
    Checkpoint::from_params(params, config).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.params()?, ck.config))
}
