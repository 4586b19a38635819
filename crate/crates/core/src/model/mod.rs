//! Desk-scale transformer encoder with a token-tagging head.
//!
//! The same encoder embeds titles and descriptions: a sentence embedding is
//! the masked mean of the final token states ([`pool_sentence`]). Prediction
//! ([`predict_tags`]) only ever sees title tokens.

mod weights;

pub use weights::{EncoderWeights, LayerWeights};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Tags scored by the head. The pad tag is not among them; it is emitted
    /// with id `n_tags` at masked positions.
    pub n_tags: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("n_tags", self.n_tags),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Data(format!("encoder config: {name} must be >= 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Data(format!(
                "encoder config: d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Name of the first field that differs from `other`.
    pub fn first_mismatch(&self, other: &EncoderConfig) -> Option<&'static str> {
        [
            ("vocab_size", self.vocab_size, other.vocab_size),
            ("max_len", self.max_len, other.max_len),
            ("d_model", self.d_model, other.d_model),
            ("n_heads", self.n_heads, other.n_heads),
            ("n_layers", self.n_layers, other.n_layers),
            ("d_ff", self.d_ff, other.d_ff),
            ("n_tags", self.n_tags, other.n_tags),
        ]
        .into_iter()
        .find(|(_, a, b)| a != b)
        .map(|(name, _, _)| name)
    }

    pub fn pad_tag(&self) -> usize {
        self.n_tags
    }

    fn expected_shapes(&self) -> EncoderWeights<Vec<usize>> {
        let (d, f) = (self.d_model, self.d_ff);
        let layer = LayerWeights {
            ln1_gamma: vec![d],
            ln1_beta: vec![d],
            wq: vec![d, d],
            bq: vec![d],
            wk: vec![d, d],
            bk: vec![d],
            wv: vec![d, d],
            bv: vec![d],
            wo: vec![d, d],
            bo: vec![d],
            ln2_gamma: vec![d],
            ln2_beta: vec![d],
            w1: vec![d, f],
            b1: vec![f],
            w2: vec![f, d],
            b2: vec![d],
        };
        EncoderWeights {
            token_emb: vec![self.vocab_size, d],
            pos_emb: vec![self.max_len, d],
            layers: vec![layer; self.n_layers],
            final_gamma: vec![d],
            final_beta: vec![d],
            tag_w: vec![d, self.n_tags],
            tag_b: vec![self.n_tags],
        }
    }
}

/// Encoder parameters. Every tensor is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: EncoderConfig,
    pub weights: EncoderWeights<Tensor>,
}

enum InitKind {
    Uniform,
    Ones,
    Zeros,
}

impl Parameters {
    /// Seeded init: matrices and embeddings ~ U(±1/sqrt(d_model)), layer-norm
    /// gains 1, every bias and layer-norm shift 0.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let shapes = config.expected_shapes();
        let names = shapes.names();
        let bound = 1.0 / (config.d_model as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(names.len());
        for (name, shape) in names.iter().zip(shapes.values()) {
            let leaf = name.rsplit('.').next().unwrap();
            let kind = if leaf.ends_with("gamma") {
                InitKind::Ones
            } else if leaf.ends_with("beta") || leaf.starts_with('b') || leaf == "tag_b" {
                InitKind::Zeros
            } else {
                InitKind::Uniform
            };
            let n: usize = shape.iter().product();
            let data = match kind {
                InitKind::Ones => vec![1.0; n],
                InitKind::Zeros => vec![0.0; n],
                InitKind::Uniform => (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect(),
            };
            values.push(Tensor::new(shape.clone(), data)?);
        }
        let weights = EncoderWeights::from_values(config.n_layers, values).expect("layout");
        Ok(Self { config, weights })
    }

    /// Wraps existing tensors, checking every shape against `config`.
    pub fn from_weights(config: EncoderConfig, weights: EncoderWeights<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.expected_shapes();
        if weights.layers.len() != config.n_layers {
            return Err(Error::Data(format!(
                "expected {} layers, found {}",
                config.n_layers,
                weights.layers.len()
            )));
        }
        for ((name, want), got) in shapes.names().iter().zip(shapes.values()).zip(weights.values()) {
            if got.shape() != want.as_slice() {
                return Err(Error::Data(format!(
                    "tensor {name} has shape {:?}, config needs {want:?}",
                    got.shape()
                )));
            }
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> Vec<String> {
        self.weights.names()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.values()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.values_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor on `graph`. With `trainable`, all of them
    /// require grad; nothing is ever frozen.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Result<EncoderWeights<Var>> {
        self.weights.try_map(|t| graph.leaf(t.clone(), trainable))
    }
}

/// Padded token ids with a validity mask, row-major `[batch, seq]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    ids: Vec<usize>,
    mask: Vec<bool>,
    batch: usize,
    seq: usize,
}

pub const PAD_ID: usize = 0;

impl TokenBatch {
    pub fn new(ids: Vec<usize>, mask: Vec<bool>, batch: usize, seq: usize) -> Result<Self> {
        if batch == 0 || seq == 0 || ids.len() != batch * seq || mask.len() != batch * seq {
            return Err(Error::Dimension(format!(
                "token batch {batch}x{seq} with {} ids and {} mask entries",
                ids.len(),
                mask.len()
            )));
        }
        for b in 0..batch {
            if !mask[b * seq..(b + 1) * seq].iter().any(|&m| m) {
                return Err(Error::Contract(format!("token batch row {b} has no real tokens")));
            }
        }
        Ok(Self { ids, mask, batch, seq })
    }

    /// Right-pads each sequence with [`PAD_ID`] to the longest one.
    pub fn from_sequences<S: AsRef<[usize]>>(seqs: &[S]) -> Result<Self> {
        let seq = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq);
        let mut mask = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD_ID, seq - s.len()));
            mask.extend(std::iter::repeat_n(true, s.len()));
            mask.extend(std::iter::repeat_n(false, seq - s.len()));
        }
        Self::new(ids, mask, seqs.len(), seq)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [usize] {
        &mut self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        if self.seq > config.max_len {
            return Err(Error::Dimension(format!(
                "sequence length {} exceeds max_len {}",
                self.seq, config.max_len
            )));
        }
        if let Some(&bad) = self.ids.iter().find(|&&i| i >= config.vocab_size) {
            return Err(Error::Dimension(format!(
                "token id {bad} out of range for vocab of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Training-time dropout applied to each sublayer output before the residual add.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub struct Encoded {
    /// `[batch, seq, d_model]`
    pub output: Var,
    /// Attention probabilities per layer, `[batch·heads, seq, seq]`.
    pub attention: Vec<Var>,
}

fn maybe_dropout(graph: &mut Graph, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let n = graph.value(x).len();
            let keep: Vec<bool> = (0..n).map(|_| d.rng.gen::<f64>() >= d.rate).collect();
            graph.dropout(x, &keep, d.rate)
        }
        _ => Ok(x),
    }
}

fn linear(graph: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = graph.matmul(x, w)?;
    graph.add_bias(y, b)
}

/// Forward pass of the encoder stack on the tape.
pub fn encode_on(
    graph: &mut Graph,
    w: &EncoderWeights<Var>,
    config: &EncoderConfig,
    batch: &TokenBatch,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Encoded> {
    batch.validate(config)?;
    let (b, s, d, h) = (batch.batch, batch.seq, config.d_model, config.n_heads);
    let dh = d / h;

    let tok = graph.gather(w.token_emb, &batch.ids)?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let pos = graph.gather(w.pos_emb, &positions)?;
    let x = graph.add(tok, pos)?;
    let mut x = graph.reshape(x, &[b, s, d])?;

    let mut keep = Vec::with_capacity(b * h * s * s);
    for bi in 0..b {
        let row_mask = &batch.mask[bi * s..(bi + 1) * s];
        for _ in 0..h * s {
            keep.extend_from_slice(row_mask);
        }
    }

    let mut attention = Vec::with_capacity(w.layers.len());
    for layer in &w.layers {
        let hn = graph.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, LAYER_NORM_EPS)?;
        let q = linear(graph, hn, layer.wq, layer.bq)?;
        let k = linear(graph, hn, layer.wk, layer.bk)?;
        let v = linear(graph, hn, layer.wv, layer.bv)?;
        let q = graph.split_heads(q, h)?;
        let k = graph.split_heads(k, h)?;
        let v = graph.split_heads(v, h)?;
        let scores = graph.batch_matmul(q, k, true)?;
        let scores = graph.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = graph.masked_softmax_rows(scores, &keep)?;
        attention.push(probs);
        let ctx = graph.batch_matmul(probs, v, false)?;
        let ctx = graph.merge_heads(ctx, h)?;
        let attn_out = linear(graph, ctx, layer.wo, layer.bo)?;
        let attn_out = maybe_dropout(graph, attn_out, &mut dropout)?;
        x = graph.add(x, attn_out)?;

        let hn = graph.layer_norm(x, layer.ln2_gamma, layer.ln2_beta, LAYER_NORM_EPS)?;
        let f = linear(graph, hn, layer.w1, layer.b1)?;
        let f = graph.gelu(f)?;
        let f = linear(graph, f, layer.w2, layer.b2)?;
        let f = maybe_dropout(graph, f, &mut dropout)?;
        x = graph.add(x, f)?;
    }
    let output = graph.layer_norm(x, w.final_gamma, w.final_beta, LAYER_NORM_EPS)?;
    Ok(Encoded { output, attention })
}

/// Masked mean over token states: `[b, s, d] -> [b, d]`.
pub fn pool_on(graph: &mut Graph, encoded: Var, batch: &TokenBatch) -> Result<Var> {
    graph.masked_mean(encoded, &batch.mask)
}

/// Tag head: `[b, s, d] -> [b, s, n_tags]`.
pub fn tag_logits_on(graph: &mut Graph, w: &EncoderWeights<Var>, encoded: Var) -> Result<Var> {
    linear(graph, encoded, w.tag_w, w.tag_b)
}

/// Inference-only encoding, `[batch, seq, d_model]`.
pub fn encode(params: &Parameters, batch: &TokenBatch) -> Result<Tensor> {
    let mut graph = Graph::new();
    let w = params.bind(&mut graph, false)?;
    let enc = encode_on(&mut graph, &w, params.config(), batch, None)?;
    Ok(graph.value(enc.output).clone())
}

/// Mean of the unmasked rows of `encoded[b, s, d]`, giving `[b, d]`.
pub fn pool_sentence(encoded: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let mut graph = Graph::new();
    let x = graph.constant(encoded.clone())?;
    let y = graph.masked_mean(x, mask)?;
    Ok(graph.value(y).clone())
}

pub fn tag_logits(params: &Parameters, encoded: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let w = params.bind(&mut graph, false)?;
    let x = graph.constant(encoded.clone())?;
    let y = tag_logits_on(&mut graph, &w, x)?;
    Ok(graph.value(y).clone())
}

/// Sentence embeddings `[b, d]` for a batch of token sequences.
pub fn embed_sentences(params: &Parameters, batch: &TokenBatch) -> Result<Tensor> {
    let mut graph = Graph::new();
    let w = params.bind(&mut graph, false)?;
    let enc = encode_on(&mut graph, &w, params.config(), batch, None)?;
    let pooled = pool_on(&mut graph, enc.output, batch)?;
    Ok(graph.value(pooled).clone())
}

/// Argmax per position with ties going to the lowest tag id.
pub fn argmax_tags(logits: &Tensor, mask: &[bool], pad_tag: usize) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            if !mask[r] {
                return pad_tag;
            }
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Tag ids `[b][s]` for a batch of titles. Descriptions never enter here.
pub fn predict_tags(params: &Parameters, titles: &TokenBatch) -> Result<Vec<Vec<usize>>> {
    let mut graph = Graph::new();
    let w = params.bind(&mut graph, false)?;
    let enc = encode_on(&mut graph, &w, params.config(), titles, None)?;
    let logits = tag_logits_on(&mut graph, &w, enc.output)?;
    let flat = argmax_tags(graph.value(logits), titles.mask(), params.config().pad_tag());
    Ok(flat.chunks(titles.seq()).map(<[usize]>::to_vec).collect())
}
