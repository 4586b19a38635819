//! Loss functions: title/description cosine scores, the log-sigmoid triplet
//! loss, token cross-entropy and their linear multi-task combination.
//!
//! Each loss exists twice: a plain `f64` evaluation for reporting and tests,
//! and an `_on` variant that records onto a [`Graph`] for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::graph::{cosine, neg_log_sigmoid, sigmoid};
use crate::tensor::{Graph, Tensor, Var};

/// Added to `‖a‖‖b‖` so zero vectors have a defined cosine.
pub const COSINE_EPS: f64 = 1e-8;

/// Cosine scores of one (title, positive description, negative description) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletScores {
    pub c_p: f64,
    pub c_n: f64,
    /// `c_p − c_n`; training pushes this up.
    pub d_i: f64,
}

impl TripletScores {
    pub fn new(c_p: f64, c_n: f64) -> Self {
        Self {
            c_p,
            c_n,
            d_i: c_p - c_n,
        }
    }
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} has non-finite components")))
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with {} and {} dims",
            a.len(),
            b.len()
        )));
    }
    check_finite(a, "cosine input")?;
    check_finite(b, "cosine input")?;
    Ok(cosine(a, b, COSINE_EPS))
}

/// `σ(d_i) = e^{d_i} / (1 + e^{d_i})`, the probability that the positive
/// description outranks the negative one. Reported, never minimised.
pub fn sigmoid_score(d_i: f64) -> f64 {
    sigmoid(d_i)
}

/// `−ln σ(d_i)` for the scores of one triple.
pub fn triplet_loss_from_scores(scores: &TripletScores) -> f64 {
    neg_log_sigmoid(scores.d_i)
}

/// Triplet loss of a title embedding against its own description (`pos`) and
/// another item's description (`neg`).
pub fn triplet_loss(title: &[f64], pos: &[f64], neg: &[f64]) -> Result<(f64, TripletScores)> {
    let c_p = cosine_similarity(title, pos)?;
    let c_n = cosine_similarity(title, neg)?;
    let scores = TripletScores::new(c_p, c_n);
    Ok((triplet_loss_from_scores(&scores), scores))
}

/// Mean token cross-entropy over positions where `mask` is set.
/// `logits` is `[..., K]` and `gold`/`mask` have one entry per row.
pub fn ner_loss(logits: &Tensor, gold: &[usize], mask: &[bool]) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone())?;
    let l = ner_loss_on(&mut g, x, gold, mask)?;
    g.value(l).item()
}

/// `l_ner + λ · l_triplet`.
pub fn multitask_loss(l_ner: f64, l_triplet: f64, lambda: f64) -> Result<f64> {
    if !l_ner.is_finite() || !l_triplet.is_finite() {
        return Err(Error::Numeric(format!(
            "multitask loss of non-finite parts ({l_ner}, {l_triplet})"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(l_ner + lambda * l_triplet)
}

/// Batched triplet loss on the tape: mean over rows of `−ln σ(c_p − c_n)`
/// for `[b, d]` title, positive and negative embeddings.
pub struct TripletOutput {
    pub loss: Var,
    pub scores: Vec<TripletScores>,
}

pub fn triplet_loss_on(graph: &mut Graph, title: Var, pos: Var, neg: Var) -> Result<TripletOutput> {
    let c_p = graph.cosine_rows(title, pos, COSINE_EPS)?;
    let c_n = graph.cosine_rows(title, neg, COSINE_EPS)?;
    let d = graph.sub(c_p, c_n)?;
    let per_row = graph.neg_log_sigmoid(d)?;
    let loss = graph.mean(per_row)?;
    let scores = graph
        .value(c_p)
        .data()
        .iter()
        .zip(graph.value(c_n).data())
        .map(|(&p, &n)| TripletScores::new(p, n))
        .collect();
    Ok(TripletOutput { loss, scores })
}

pub fn ner_loss_on(graph: &mut Graph, logits: Var, gold: &[usize], mask: &[bool]) -> Result<Var> {
    if gold.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} gold tags for {} mask entries",
            gold.len(),
            mask.len()
        )));
    }
    let labels: Vec<Option<usize>> = gold.iter().zip(mask).map(|(&g, &m)| m.then_some(g)).collect();
    graph.cross_entropy(logits, &labels)
}

pub fn multitask_loss_on(graph: &mut Graph, ner: Var, triplet: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let weighted = graph.scale(triplet, lambda)?;
    graph.add(ner, weighted)
}
