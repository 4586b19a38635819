//! JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "triplet-tagger-checkpoint",
//!   "version": 1,
//!   "config": { EncoderConfig },
//!   "entity_types": ["ITEM", ...],
//!   "vocab_hash": "<sha256 of the token list>",
//!   "vocab": ["<pad>", "<unk>", ...],
//!   "tensors": [{"name": "token_emb", "shape": [v, d], "data": [...]}, ...],
//!   "training": null | {
//!     "config": { TrainConfig },
//!     "progress": {"epoch", "step_in_epoch", "global_step"},
//!     "optimizer": {"step", "m": [tensors], "v": [tensors]},
//!     "history": {"records": [...]}
//!   }
//! }
//! ```
//!
//! Tensors appear in [`Parameters::names`] order. Floats are written in
//! shortest round-trip form, so save → load → save reproduces the bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{repair_bio, TagScheme, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{predict_tags, EncoderConfig, EncoderWeights, Parameters, TokenBatch};
use crate::tensor::Tensor;
use crate::trainer::{encode_title, AdamState, History, ModelSpec, Progress, TrainConfig, Trainer};

const PREDICT_BATCH: usize = 64;

pub const CHECKPOINT_FORMAT: &str = "triplet-tagger-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerFile {
    step: u64,
    m: Vec<NamedTensor>,
    v: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingFile {
    config: TrainConfig,
    progress: Progress,
    optimizer: OptimizerFile,
    history: History,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: EncoderConfig,
    entity_types: Vec<String>,
    vocab_hash: String,
    vocab: Vocabulary,
    tensors: Vec<NamedTensor>,
    training: Option<TrainingFile>,
}

/// Optimizer and schedule state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub config: TrainConfig,
    pub progress: Progress,
    pub adam: AdamState,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub vocab: Vocabulary,
    pub scheme: TagScheme,
    pub training: Option<TrainingState>,
}

fn to_named(names: &[String], weights: &EncoderWeights<Tensor>) -> Vec<NamedTensor> {
    names
        .iter()
        .zip(weights.values())
        .map(|(name, t)| NamedTensor {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn from_named(config: &EncoderConfig, tensors: Vec<NamedTensor>, what: &str) -> Result<EncoderWeights<Tensor>> {
    let expected = Parameters::init(*config, 0)?;
    let names = expected.names();
    if tensors.len() != names.len() {
        return Err(Error::Data(format!(
            "checkpoint {what}: {} tensors, the config needs {}",
            tensors.len(),
            names.len()
        )));
    }
    let mut values = Vec::with_capacity(tensors.len());
    for ((nt, name), want) in tensors.into_iter().zip(&names).zip(expected.tensors()) {
        if nt.name != *name {
            return Err(Error::Data(format!(
                "checkpoint {what}: found tensor {:?} where {name:?} was expected",
                nt.name
            )));
        }
        if nt.shape != want.shape() {
            return Err(Error::Data(format!(
                "checkpoint {what}: tensor {name} has shape {:?}, the config needs {:?}",
                nt.shape,
                want.shape()
            )));
        }
        let t = Tensor::new(nt.shape, nt.data)
            .map_err(|e| Error::Data(format!("checkpoint {what}: tensor {name}: {e}")))?;
        if !t.is_finite() {
            return Err(Error::Data(format!("checkpoint {what}: tensor {name} is not finite")));
        }
        values.push(t);
    }
    Ok(EncoderWeights::from_values(config.n_layers, values).expect("count checked above"))
}

impl Checkpoint {
    pub fn new(params: Parameters, vocab: Vocabulary, scheme: TagScheme) -> Result<Self> {
        let c = params.config();
        if c.vocab_size != vocab.len() {
            return Err(Error::Data(format!(
                "vocab_size {} does not match a vocabulary of {}",
                c.vocab_size,
                vocab.len()
            )));
        }
        if c.n_tags != scheme.num_tags() {
            return Err(Error::Data(format!(
                "n_tags {} does not match a tag scheme with {} tags",
                c.n_tags,
                scheme.num_tags()
            )));
        }
        Ok(Self {
            params,
            vocab,
            scheme,
            training: None,
        })
    }

    /// Snapshot of a trainer, including optimizer state and history.
    pub fn from_trainer(trainer: &Trainer, vocab: Vocabulary, scheme: TagScheme) -> Result<Self> {
        let mut c = Self::new(trainer.params.clone(), vocab, scheme)?;
        c.training = Some(TrainingState {
            config: trainer.config.clone(),
            progress: trainer.progress,
            adam: trainer.adam.clone(),
            history: trainer.history.clone(),
        });
        Ok(c)
    }

    /// Trainer continuing from the stored state.
    pub fn into_trainer(self) -> Result<(Trainer, Vocabulary, TagScheme)> {
        let state = self
            .training
            .ok_or_else(|| Error::Data("checkpoint has no training state to resume from".into()))?;
        state.config.validate()?;
        let trainer = Trainer {
            params: self.params,
            adam: state.adam,
            config: state.config,
            progress: state.progress,
            history: state.history,
        };
        Ok((trainer, self.vocab, self.scheme))
    }

    pub fn config(&self) -> &EncoderConfig {
        self.params.config()
    }

    /// Data error naming the first field that differs from `expected`.
    pub fn expect_config(&self, expected: &EncoderConfig) -> Result<()> {
        match self.config().first_mismatch(expected) {
            None => Ok(()),
            Some(field) => {
                let value = |c: &EncoderConfig| match field {
                    "vocab_size" => c.vocab_size,
                    "max_len" => c.max_len,
                    "d_model" => c.d_model,
                    "n_heads" => c.n_heads,
                    "n_layers" => c.n_layers,
                    "d_ff" => c.d_ff,
                    _ => c.n_tags,
                };
                Err(Error::Data(format!(
                    "checkpoint config mismatch: {field} is {} but {} was expected",
                    value(self.config()),
                    value(expected)
                )))
            }
        }
    }

    /// Checks every spec-controlled field; the vocabulary size comes from the checkpoint.
    pub fn expect_spec(&self, spec: &ModelSpec, scheme: &TagScheme) -> Result<()> {
        if self.scheme != *scheme {
            return Err(Error::Data(format!(
                "checkpoint tag scheme {:?} differs from {:?}",
                self.scheme.entity_types(),
                scheme.entity_types()
            )));
        }
        self.expect_config(&spec.encoder_config(self.vocab.len(), scheme.num_tags()))
    }

    pub fn to_json(&self) -> String {
        let names = self.params.names();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: *self.config(),
            entity_types: self.scheme.entity_types().to_vec(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.clone(),
            tensors: to_named(&names, &self.params.weights),
            training: self.training.as_ref().map(|t| TrainingFile {
                config: t.config.clone(),
                progress: t.progress,
                optimizer: OptimizerFile {
                    step: t.adam.step,
                    m: to_named(&names, &t.adam.m),
                    v: to_named(&names, &t.adam.v),
                },
                history: t.history.clone(),
            }),
        };
        let mut s = serde_json::to_string(&file).expect("checkpoints always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint: format is {:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        if file.vocab.hash() != file.vocab_hash {
            return Err(Error::Data(
                "checkpoint vocab_hash does not match its vocabulary".into(),
            ));
        }
        file.config
            .validate()
            .map_err(|e| Error::Data(format!("checkpoint config: {e}")))?;
        let weights = from_named(&file.config, file.tensors, "parameters")?;
        let params = Parameters::from_weights(file.config, weights)?;
        let scheme = TagScheme::new(file.entity_types)?;
        let mut c = Self::new(params, file.vocab, scheme)?;
        if let Some(t) = file.training {
            c.training = Some(TrainingState {
                adam: AdamState {
                    step: t.optimizer.step,
                    m: from_named(&file.config, t.optimizer.m, "optimizer m")?,
                    v: from_named(&file.config, t.optimizer.v, "optimizer v")?,
                },
                config: t.config,
                progress: t.progress,
                history: t.history,
            });
        }
        Ok(c)
    }

    /// Predicted BIO tags for tokenized titles, with stray `I-X` tags
    /// repaired to `B-X`.
    pub fn tag_titles<S: AsRef<str>>(&self, titles: &[Vec<S>]) -> Result<Vec<Vec<String>>> {
        let max_len = self.config().max_len;
        let mut out = Vec::with_capacity(titles.len());
        for chunk in titles.chunks(PREDICT_BATCH) {
            let ids = chunk
                .iter()
                .map(|t| encode_title(t, &self.vocab, max_len))
                .collect::<Result<Vec<_>>>()?;
            let batch = TokenBatch::from_sequences(&ids)?;
            for (row, title) in predict_tags(&self.params, &batch)?.into_iter().zip(chunk) {
                let mut tags = self.scheme.decode(&row[..title.len()])?;
                repair_bio(&mut tags)?;
                out.push(tags);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Parameters and vocabulary of a checkpoint used as the starting point of a
/// new run. Its architecture and tag scheme must match `spec` and `scheme`.
pub fn warm_start(path: &Path, spec: &ModelSpec, scheme: &TagScheme) -> Result<(Parameters, Vocabulary)> {
    let c = Checkpoint::load(path)?;
    c.expect_spec(spec, scheme)?;
    Ok((c.params, c.vocab))
}
