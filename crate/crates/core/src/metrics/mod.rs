//! Sequence-labelling evaluation: entity-level precision/recall with exact
//! span matching, sentence exact match, token accuracy, and a comparison table.

mod render;

pub use render::{format_percent, render_comparison, Comparison};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_valid_bio, Tag};
use crate::error::{Error, Result};

/// Half-open token range `[start, end)` labelled with an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

/// Maximal `B-X (I-X)*` runs of a valid BIO sequence.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<EntitySpan>> {
    if !is_valid_bio(tags) {
        return Err(Error::Contract("extract_spans needs valid BIO tags".into()));
    }
    let mut spans: Vec<EntitySpan> = Vec::new();
    for (i, t) in tags.iter().enumerate() {
        match Tag::parse(t.as_ref())? {
            Tag::Outside => {}
            Tag::Begin(ty) => spans.push(EntitySpan {
                start: i,
                end: i + 1,
                entity_type: ty,
            }),
            Tag::Inside(_) => spans.last_mut().expect("valid BIO").end = i + 1,
        }
    }
    Ok(spans)
}

/// Inverse of [`extract_spans`] for non-overlapping spans.
pub fn tags_from_spans(spans: &[EntitySpan], len: usize) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for s in spans {
        tags[s.start] = format!("B-{}", s.entity_type);
        for t in &mut tags[s.start + 1..s.end] {
            *t = format!("I-{}", s.entity_type);
        }
    }
    tags
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

pub fn span_counts(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<SpanCounts> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut c = SpanCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        c.gold += g.len();
        c.pred += p.len();
        c.correct += p.iter().filter(|s| g.contains(s)).count();
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged `(precision, recall)`; a zero denominator yields 0.
pub fn span_prf(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<(f64, f64)> {
    let c = span_counts(gold, pred)?;
    Ok((ratio(c.correct, c.pred), ratio(c.correct, c.gold)))
}

fn check_aligned<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Data("cannot score an empty corpus".into()));
    }
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {i}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Fraction of sentences whose predicted tag sequence equals the gold one.
pub fn exact_match_rate<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64> {
    check_aligned(gold, pred)?;
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.iter().zip(p.iter()).all(|(a, b)| a.as_ref() == b.as_ref()))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Fraction of all tokens tagged correctly.
pub fn token_accuracy<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64> {
    check_aligned(gold, pred)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        total += g.len();
        hits += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
    }
    if total == 0 {
        return Err(Error::Data("cannot score sentences without tokens".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportCounts {
    pub n_sentences: usize,
    pub n_tokens: usize,
    pub n_gold_spans: usize,
    pub n_pred_spans: usize,
    pub n_correct_spans: usize,
}

/// Set when a metric's denominator was zero and the metric was reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportFlags {
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub algorithm: String,
    pub precision: f64,
    pub recall: f64,
    pub exact_match: f64,
    pub token_accuracy: f64,
    #[serde(default)]
    pub counts: ReportCounts,
    #[serde(default)]
    pub flags: ReportFlags,
}

impl MetricsReport {
    /// Scores predicted tag sequences against gold ones. Both must be valid BIO.
    pub fn compute<S: AsRef<str>>(algorithm: &str, gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<Self> {
        check_aligned(gold, pred)?;
        let gold_spans = gold.iter().map(|g| extract_spans(g)).collect::<Result<Vec<_>>>()?;
        let pred_spans = pred.iter().map(|p| extract_spans(p)).collect::<Result<Vec<_>>>()?;
        let c = span_counts(&gold_spans, &pred_spans)?;
        Ok(Self {
            algorithm: algorithm.to_string(),
            precision: ratio(c.correct, c.pred),
            recall: ratio(c.correct, c.gold),
            exact_match: exact_match_rate(gold, pred)?,
            token_accuracy: token_accuracy(gold, pred)?,
            counts: ReportCounts {
                n_sentences: gold.len(),
                n_tokens: gold.iter().map(Vec::len).sum(),
                n_gold_spans: c.gold,
                n_pred_spans: c.pred,
                n_correct_spans: c.correct,
            },
            flags: ReportFlags {
                precision_undefined: c.pred == 0,
                recall_undefined: c.gold == 0,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}
