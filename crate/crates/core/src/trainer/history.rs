use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Losses of one optimizer step. `epoch` and `step` count from 1; `step` is
/// global across epochs. The triplet fields are absent in baseline mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_ner: f64,
    pub loss_triplet: Option<f64>,
    /// Batch mean of `σ(c_p − c_n)`.
    pub sigmoid_score: Option<f64>,
}

/// Append-only log with one record per optimizer step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    records: Vec<StepRecord>,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,step,loss_total,loss_ner,loss_triplet,sigmoid_score";

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean of `f` over the records of each epoch, in epoch order.
    pub fn epoch_means(&self, f: impl Fn(&StepRecord) -> Option<f64>) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.records {
            let Some(x) = f(r) else { continue };
            match out.last_mut() {
                Some((e, sum, n)) if *e == r.epoch => {
                    *sum += x;
                    *n += 1;
                }
                _ => out.push((r.epoch, x, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }

    /// CSV with [`HISTORY_CSV_HEADER`]; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from(HISTORY_CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.loss_total,
                r.loss_ner,
                opt(r.loss_triplet),
                opt(r.sigmoid_score)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, step: usize, total: f64, trip: Option<f64>) -> StepRecord {
        StepRecord {
            epoch,
            step,
            loss_total: total,
            loss_ner: total,
            loss_triplet: trip,
            sigmoid_score: trip.map(|_| 0.5),
        }
    }

    #[test]
    fn csv_layout() {
        let mut h = History::new();
        h.push(rec(1, 1, 1.5, Some(0.25)));
        h.push(rec(1, 2, 0.75, None));
        assert_eq!(
            h.to_csv(),
            "epoch,step,loss_total,loss_ner,loss_triplet,sigmoid_score\n1,1,1.5,1.5,0.25,0.5\n1,2,0.75,0.75,,\n"
        );
    }

    #[test]
    fn epoch_means_group_by_epoch() {
        let mut h = History::new();
        h.push(rec(1, 1, 1.0, None));
        h.push(rec(1, 2, 3.0, None));
        h.push(rec(2, 3, 1.0, None));
        assert_eq!(h.epoch_means(|r| Some(r.loss_total)), [(1, 2.0), (2, 1.0)]);
        assert!(h.epoch_means(|r| r.loss_triplet).is_empty());
    }
}
