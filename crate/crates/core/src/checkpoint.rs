//! Versioned checkpoint container.
//!
//! Layout: magic `CCKP`, format version (u32 LE), header length (u64 LE), a
//! compact JSON header, then `TNSR` tensors in header order: parameters, Adam
//! first moments, Adam second moments, best-so-far parameters (if any),
//! normalization means and standard deviations.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::features::NormalizationStats;
use crate::layers::Network;
use crate::optim::{Hyperparams, OptimizerState, Stage};
use crate::params::{Param, ParamSpec, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::TrainOptions;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Format(format!("invalid rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Training progress needed to resume exactly where a run stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub best_dev_ler: Option<f64>,
    pub best_epoch: Option<usize>,
    pub evals_since_best: usize,
    pub finished: bool,
    pub rng: RngState,
    pub options: TrainOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    stage: Stage,
    hyper: Hyperparams,
    step: u64,
    moments: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: NetworkConfig,
    alphabet: Vec<String>,
    params: Vec<ParamSpec>,
    optimizer: OptimizerHeader,
    has_best: bool,
    meta: TrainingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub config: NetworkConfig,
    pub alphabet: Alphabet,
    pub params: Parameters<S>,
    pub optimizer: OptimizerState<S>,
    /// Best-on-dev parameters so far, used when switching to fine-tuning.
    pub best_params: Option<Parameters<S>>,
    pub stats: NormalizationStats,
    pub meta: TrainingMeta,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            dtype: S::DTYPE.name().to_string(),
            config: self.config.clone(),
            alphabet: self.alphabet.symbols()[1..].to_vec(),
            params: self.params.specs(),
            optimizer: OptimizerHeader {
                stage: self.optimizer.stage,
                hyper: self.optimizer.hyper,
                step: self.optimizer.step,
                moments: !self.optimizer.first.is_empty(),
            },
            has_best: self.best_params.is_some(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut sets = vec![&self.params];
        if header.optimizer.moments {
            sets.push(&self.optimizer.first);
            sets.push(&self.optimizer.second);
        }
        if let Some(best) = &self.best_params {
            sets.push(best);
        }
        for set in sets {
            for p in set.iter() {
                p.tensor.encode_into(&mut out);
            }
        }
        out.extend_from_slice(&self.stats.encode());
        out
    }

    /// Decodes and validates parameter shapes against the stored network.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format(
                "not a checkpoint (missing CCKP magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.dtype != S::DTYPE.name() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, requested {}",
                header.dtype,
                S::DTYPE.name()
            )));
        }
        let mut off = 16 + hlen;
        let mut read_set = |specs: &[ParamSpec]| -> Result<Parameters<S>> {
            let mut params = Vec::with_capacity(specs.len());
            for spec in specs {
                let (tensor, used) = Tensor::<S>::decode_exact(&bytes[off..])?;
                off += used;
                if tensor.shape() != spec.shape {
                    return Err(Error::Format(format!(
                        "tensor {} has shape {:?}, header says {:?}",
                        spec.name,
                        tensor.shape(),
                        spec.shape
                    )));
                }
                params.push(Param {
                    name: spec.name.clone(),
                    class: spec.class,
                    tensor,
                });
            }
            Ok(Parameters::new(params))
        };
        let params = read_set(&header.params)?;
        let (first, second) = if header.optimizer.moments {
            (read_set(&header.params)?, read_set(&header.params)?)
        } else {
            (Parameters::default(), Parameters::default())
        };
        let best_params = if header.has_best {
            Some(read_set(&header.params)?)
        } else {
            None
        };
        let (stats, used) = NormalizationStats::decode(&bytes[off..])?;
        off += used;
        if off != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                bytes.len() - off
            )));
        }
        let network = Network::new(header.config.clone())?;
        network.check_params(&params)?;
        let alphabet = Alphabet::new(header.alphabet)?;
        if alphabet.size() != header.config.alphabet_size {
            return Err(Error::Format(format!(
                "alphabet has {} symbols, network emits {}",
                alphabet.size(),
                header.config.alphabet_size
            )));
        }
        if stats.bands() != header.config.input.bands
            || stats.channels() != header.config.input.channels
        {
            return Err(Error::Format(
                "normalization statistics do not match the input geometry".into(),
            ));
        }
        Ok(Checkpoint {
            config: header.config,
            alphabet,
            params,
            optimizer: OptimizerState {
                stage: header.optimizer.stage,
                hyper: header.optimizer.hyper,
                step: header.optimizer.step,
                first,
                second,
            },
            best_params,
            stats,
            meta: header.meta,
        })
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

/// Element type stored in a checkpoint file, read from its header.
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<crate::scalar::DType> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint",
            path.display()
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    #[derive(Deserialize)]
    struct Dtype {
        dtype: String,
    }
    let h: Dtype = serde_json::from_slice(
        bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?,
    )?;
    match h.dtype.as_str() {
        "f32" => Ok(crate::scalar::DType::F32),
        "f64" => Ok(crate::scalar::DType::F64),
        other => Err(Error::Format(format!("unknown checkpoint dtype {other}"))),
    }
}
