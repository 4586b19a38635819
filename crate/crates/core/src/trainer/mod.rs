//! Multi-task training: title tagging plus the title/description triplet loss,
//! combined into one loss and one backward pass per optimizer step.

mod adam;
mod history;
mod sampling;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use history::{History, StepRecord, HISTORY_CSV_HEADER};
pub use sampling::{sample_negative, sample_negative_index};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, CatalogItem, TagScheme, Vocabulary, UNK_ID};
use crate::error::{Error, Result};
use crate::model::{encode_on, pool_on, tag_logits_on, Dropout, EncoderConfig, EncoderWeights, Parameters, TokenBatch};
use crate::objectives::{multitask_loss_on, ner_loss_on, sigmoid_score, triplet_loss_on};
use crate::seed;
use crate::tensor::{Graph, Tensor};

/// Labels of independent RNG streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const NEGATIVES: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Tagging loss only; descriptions are never encoded.
    Baseline,
    /// Tagging loss plus `lambda` times the triplet loss.
    Multitask,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Multitask => "multitask",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub dropout: f64,
    pub warm_start: Option<PathBuf>,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            lambda: 1.0,
            seed: 0,
            adam: AdamConfig::default(),
            dropout: 0.0,
            warm_start: None,
            mode: Mode::Multitask,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Data("train config: batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Data(format!("train config: lr must be > 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Data(format!(
                "train config: lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Data(format!(
                "train config: dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        self.adam.validate()
    }
}

/// Encoder hyperparameters that do not depend on the data; the vocabulary
/// size and tag count are filled in from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Tokens seen fewer times than this map to `<unk>`.
    pub min_freq: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            max_len: 48,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            min_freq: 1,
        }
    }
}

impl ModelSpec {
    pub fn encoder_config(&self, vocab_size: usize, n_tags: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: self.max_len,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            n_tags,
        }
    }
}

/// An item mapped to ids: title tokens, gold tag ids and description tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub title: Vec<usize>,
    pub tags: Vec<usize>,
    pub description: Vec<usize>,
}

/// Title ids; titles longer than `max_len` are rejected.
pub fn encode_title<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    if tokens.is_empty() {
        return Err(Error::Data("empty title".into()));
    }
    if tokens.len() > max_len {
        return Err(Error::Data(format!(
            "title has {} tokens, the model accepts at most {max_len}",
            tokens.len()
        )));
    }
    Ok(vocab.encode(tokens))
}

/// Tokenized description truncated to `max_len`; an empty one becomes `[<unk>]`.
pub fn encode_description(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.encode(&tokenize(text));
    ids.truncate(max_len);
    if ids.is_empty() {
        ids.push(UNK_ID);
    }
    ids
}

pub fn encode_examples(
    items: &[CatalogItem],
    vocab: &Vocabulary,
    scheme: &TagScheme,
    max_len: usize,
) -> Result<Vec<Example>> {
    items
        .iter()
        .map(|item| {
            let title = encode_title(item.title_tokens(), vocab, max_len)
                .map_err(|e| Error::Data(format!("item {:?}: {e}", item.id())))?;
            Ok(Example {
                title,
                tags: scheme.encode(item.title_tags())?,
                description: encode_description(item.description(), vocab, max_len),
            })
        })
        .collect()
}

/// Padded inputs of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepBatch {
    titles: TokenBatch,
    gold: Vec<usize>,
    descriptions: Option<(TokenBatch, TokenBatch)>,
}

impl StepBatch {
    /// Titles and gold tags only.
    pub fn titles_only(anchors: &[&Example], pad_tag: usize) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let titles = TokenBatch::from_sequences(&anchors.iter().map(|e| &e.title[..]).collect::<Vec<_>>())?;
        let seq = titles.seq();
        let mut gold = Vec::with_capacity(anchors.len() * seq);
        for e in anchors {
            if e.tags.len() != e.title.len() {
                return Err(Error::Data(format!(
                    "{} tags for a title of {} tokens",
                    e.tags.len(),
                    e.title.len()
                )));
            }
            gold.extend_from_slice(&e.tags);
            gold.extend(std::iter::repeat_n(pad_tag, seq - e.tags.len()));
        }
        Ok(Self {
            titles,
            gold,
            descriptions: None,
        })
    }

    /// Titles plus each anchor's own description and one negative description.
    pub fn with_triplets(anchors: &[&Example], negatives: &[&Example], pad_tag: usize) -> Result<Self> {
        if negatives.len() != anchors.len() {
            return Err(Error::Contract(format!(
                "{} negatives for {} anchors",
                negatives.len(),
                anchors.len()
            )));
        }
        let mut batch = Self::titles_only(anchors, pad_tag)?;
        let pos = TokenBatch::from_sequences(&anchors.iter().map(|e| &e.description[..]).collect::<Vec<_>>())?;
        let neg = TokenBatch::from_sequences(&negatives.iter().map(|e| &e.description[..]).collect::<Vec<_>>())?;
        batch.descriptions = Some((pos, neg));
        Ok(batch)
    }

    pub fn titles(&self) -> &TokenBatch {
        &self.titles
    }

    pub fn len(&self) -> usize {
        self.titles.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ner: f64,
    pub triplet: Option<f64>,
    /// Batch mean of `σ(d_i)`.
    pub sigmoid_score: Option<f64>,
    /// Batch mean of `d_i = c_p − c_n`.
    pub mean_d: Option<f64>,
}

/// Forward and backward pass. Returns the losses and one gradient per
/// parameter tensor, in [`Parameters::names`] order.
pub fn step_gradients(
    params: &Parameters,
    batch: &StepBatch,
    mode: Mode,
    lambda: f64,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(StepLosses, EncoderWeights<Tensor>)> {
    let config = params.config();
    let mut graph = Graph::new();
    let w = params.bind(&mut graph, true)?;
    let (rate, mut rng) = match dropout {
        Some((rate, rng)) if rate > 0.0 => (rate, Some(rng)),
        _ => (0.0, None),
    };
    let mut encode = |graph: &mut Graph, tokens: &TokenBatch| {
        let d = rng.as_mut().map(|r| Dropout { rate, rng: r });
        encode_on(graph, &w, config, tokens, d).map(|e| e.output)
    };

    let title_states = encode(&mut graph, &batch.titles)?;
    let logits = tag_logits_on(&mut graph, &w, title_states)?;
    let ner = ner_loss_on(&mut graph, logits, &batch.gold, batch.titles.mask())?;

    let (total, triplet_out) = match mode {
        Mode::Baseline => (ner, None),
        Mode::Multitask => {
            let (pos, neg) = batch
                .descriptions
                .as_ref()
                .ok_or_else(|| Error::Contract("multitask step needs description batches".into()))?;
            let t = pool_on(&mut graph, title_states, &batch.titles)?;
            let p_states = encode(&mut graph, pos)?;
            let p = pool_on(&mut graph, p_states, pos)?;
            let n_states = encode(&mut graph, neg)?;
            let n = pool_on(&mut graph, n_states, neg)?;
            let trip = triplet_loss_on(&mut graph, t, p, n)?;
            let total = multitask_loss_on(&mut graph, ner, trip.loss, lambda)?;
            (total, Some(trip))
        }
    };

    let total_value = graph.value(total).item()?;
    if !total_value.is_finite() {
        return Err(Error::Numeric(format!("training loss is {total_value}")));
    }
    let mut grads = graph.backward(total)?;
    let grads = w.try_map(|&v| {
        grads
            .take(v)
            .ok_or_else(|| Error::Contract("parameter without a gradient".into()))
    })?;

    let losses = match triplet_out {
        None => StepLosses {
            total: total_value,
            ner: total_value,
            triplet: None,
            sigmoid_score: None,
            mean_d: None,
        },
        Some(trip) => {
            let n = trip.scores.len() as f64;
            let mean_d = trip.scores.iter().map(|s| s.d_i).sum::<f64>() / n;
            let mean_sigmoid = trip.scores.iter().map(|s| sigmoid_score(s.d_i)).sum::<f64>() / n;
            StepLosses {
                total: total_value,
                ner: graph.value(ner).item()?,
                triplet: Some(graph.value(trip.loss).item()?),
                sigmoid_score: Some(mean_sigmoid),
                mean_d: Some(mean_d),
            }
        }
    };
    Ok((losses, grads))
}

/// One optimizer step on `batch`.
pub fn train_step(
    params: &mut Parameters,
    state: &mut AdamState,
    batch: &StepBatch,
    config: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let (losses, grads) = step_gradients(
        params,
        batch,
        config.mode,
        config.lambda,
        Some((config.dropout, dropout_rng)),
    )?;
    optimizer_step(params, &grads, state, config.lr, &config.adam)?;
    Ok(losses)
}

/// Position in the epoch schedule: `epoch` epochs are complete and
/// `step_in_epoch` batches of the next one are done.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: usize,
}

/// Resumable training loop. Batch order and negatives depend only on
/// `(seed, epoch, step)`, so a run restored from a checkpoint continues
/// exactly as an uninterrupted one would.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: Parameters,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub progress: Progress,
    pub history: History,
}

impl Trainer {
    pub fn new(params: Parameters, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: AdamState::new(&params),
            params,
            config,
            progress: Progress::default(),
            history: History::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch >= self.config.epochs
    }

    /// Example indices of `epoch` in training order.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::stream(self.config.seed, &[streams::SHUFFLE, epoch as u64]));
        order
    }

    /// Trains until all epochs are done or `max_steps` steps were taken in
    /// this call. Returns the number of steps taken.
    pub fn run(&mut self, data: &[Example], max_steps: Option<usize>) -> Result<usize> {
        if data.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        if self.config.mode == Mode::Multitask && data.len() < 2 {
            return Err(Error::Data(
                "multitask training needs at least 2 items for negatives".into(),
            ));
        }
        let pad_tag = self.params.config().pad_tag();
        let bs = self.config.batch_size;
        let steps_per_epoch = data.len().div_ceil(bs);
        let mut taken = 0;
        while !self.is_finished() && max_steps.is_none_or(|m| taken < m) {
            let epoch = self.progress.epoch;
            let order = self.epoch_order(epoch, data.len());
            let step = self.progress.step_in_epoch;
            let idx = &order[step * bs..((step + 1) * bs).min(data.len())];
            let anchors: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let path = [epoch as u64, step as u64];
            let batch = match self.config.mode {
                Mode::Baseline => StepBatch::titles_only(&anchors, pad_tag)?,
                Mode::Multitask => {
                    let mut rng = seed::stream(self.config.seed, &[streams::NEGATIVES, path[0], path[1]]);
                    let negatives = idx
                        .iter()
                        .map(|&i| sample_negative(&mut rng, i, data))
                        .collect::<Result<Vec<_>>>()?;
                    StepBatch::with_triplets(&anchors, &negatives, pad_tag)?
                }
            };
            let mut dropout_rng = seed::stream(self.config.seed, &[streams::DROPOUT, path[0], path[1]]);
            let losses = train_step(&mut self.params, &mut self.adam, &batch, &self.config, &mut dropout_rng)?;
            self.progress.global_step += 1;
            self.history.push(StepRecord {
                epoch: epoch + 1,
                step: self.progress.global_step,
                loss_total: losses.total,
                loss_ner: losses.ner,
                loss_triplet: losses.triplet,
                sigmoid_score: losses.sigmoid_score,
            });
            log::debug!(
                "epoch {} step {}: loss {:.6}",
                epoch + 1,
                self.progress.global_step,
                losses.total
            );
            self.progress.step_in_epoch += 1;
            if self.progress.step_in_epoch == steps_per_epoch {
                self.progress.epoch += 1;
                self.progress.step_in_epoch = 0;
            }
            taken += 1;
        }
        Ok(taken)
    }
}

/// Runs every epoch of `config` starting from `params`.
pub fn train(config: &TrainConfig, params: Parameters, data: &[Example]) -> Result<(Parameters, History)> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut trainer = Trainer::new(params, config.clone())?;
    trainer.run(data, None)?;
    Ok((trainer.params, trainer.history))
}

/// Fresh parameters and vocabulary for `items`, seeded from `config.seed`.
pub fn initialize(
    config: &TrainConfig,
    spec: &ModelSpec,
    items: &[CatalogItem],
    scheme: &TagScheme,
) -> Result<(Parameters, Vocabulary)> {
    let vocab = Vocabulary::build(items, spec.min_freq)?;
    let enc = spec.encoder_config(vocab.len(), scheme.num_tags());
    let params = Parameters::init(enc, seed::derive_seed(config.seed, &[streams::INIT]))?;
    Ok((params, vocab))
}
