//! Finite-difference gradient suite: one check per tape op plus the
//! end-to-end tagging, triplet and multitask losses on a small encoder.

use rand::Rng;

use crate::error::Result;
use crate::model::{encode_on, pool_on, tag_logits_on, EncoderConfig, EncoderWeights, Parameters, TokenBatch};
use crate::objectives::{multitask_loss_on, ner_loss_on, triplet_loss_on, COSINE_EPS};
use crate::seed;
use crate::tensor::gradcheck::grad_check_with_fault;
use crate::tensor::{Graph, OpKind, Tensor, Var};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Names of the end-to-end loss checks, reported after the per-op checks.
pub const LOSS_CHECKS: [&str; 3] = ["ner_loss", "triplet_loss", "multitask_loss"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRAD_CHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    /// One line per check: name, max relative error, `ok` or `FAIL`.
    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let status = if c.passed() { "ok" } else { "FAIL" };
            s.push_str(&format!("{:<width$}  {:.3e}  {status}\n", c.name, c.max_rel_error));
        }
        s
    }
}

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output component matters.
fn weighted_sum(g: &mut Graph, y: Var, salt: u64) -> Result<Var> {
    let w = random(&mut seed::stream(0x5eed, &[salt]), g.shape(y));
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn op_case(kind: OpKind, point: u64) -> Case {
    let mut rng = seed::stream(point, &[kind as u64]);
    let mut r = |shape: &[usize]| random(&mut rng, shape);
    let salt = kind as u64;
    match kind {
        OpKind::MatMul => (
            vec![r(&[3, 4]), r(&[4, 5])],
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::BatchMatMul => (
            vec![r(&[2, 3, 4]), r(&[2, 4, 2])],
            Box::new(move |g, v| {
                let y = g.batch_matmul(v[0], v[1], false)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::BatchMatMulTransposed => (
            vec![r(&[2, 3, 4]), r(&[2, 5, 4])],
            Box::new(move |g, v| {
                let y = g.batch_matmul(v[0], v[1], true)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Add => (
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Sub => (
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.sub(v[0], v[1])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Mul => (
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                g.sum(y)
            }),
        ),
        OpKind::AddBias => (
            vec![r(&[2, 3, 4]), r(&[4])],
            Box::new(move |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Scale => (
            vec![r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.scale(v[0], -1.7)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Gelu => (
            vec![r(&[3, 5]).scaled(3.0)],
            Box::new(move |g, v| {
                let y = g.gelu(v[0])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Dropout => {
            let keep: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
            (
                vec![r(&[3, 4])],
                Box::new(move |g, v| {
                    let y = g.dropout(v[0], &keep, 0.25)?;
                    weighted_sum(g, y, salt)
                }),
            )
        }
        OpKind::SoftmaxRows => (
            vec![r(&[3, 5]).scaled(2.0)],
            Box::new(move |g, v| {
                let y = g.softmax_rows(v[0])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::MaskedSoftmaxRows => {
            let keep: Vec<bool> = (0..15).map(|i| i % 5 < 3 || i == 14).collect();
            (
                vec![r(&[3, 5]).scaled(2.0)],
                Box::new(move |g, v| {
                    let y = g.masked_softmax_rows(v[0], &keep)?;
                    weighted_sum(g, y, salt)
                }),
            )
        }
        OpKind::LayerNorm => (
            vec![r(&[2, 3, 6]), r(&[6]), r(&[6])],
            Box::new(move |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Gather => (
            vec![r(&[5, 3])],
            Box::new(move |g, v| {
                let y = g.gather(v[0], &[4, 0, 4, 2])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Reshape => (
            vec![r(&[2, 6])],
            Box::new(move |g, v| {
                let y = g.reshape(v[0], &[3, 4])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::SplitHeads => (
            vec![r(&[2, 3, 4])],
            Box::new(move |g, v| {
                let y = g.split_heads(v[0], 2)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::MergeHeads => (
            vec![r(&[4, 3, 2])],
            Box::new(move |g, v| {
                let y = g.merge_heads(v[0], 2)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::MaskedMean => {
            let mask = vec![true, true, false, true, false, false];
            (
                vec![r(&[2, 3, 4])],
                Box::new(move |g, v| {
                    let y = g.masked_mean(v[0], &mask)?;
                    weighted_sum(g, y, salt)
                }),
            )
        }
        OpKind::CosineRows => (
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.cosine_rows(v[0], v[1], COSINE_EPS)?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::NegLogSigmoid => (
            vec![r(&[6]).scaled(4.0)],
            Box::new(move |g, v| {
                let y = g.neg_log_sigmoid(v[0])?;
                weighted_sum(g, y, salt)
            }),
        ),
        OpKind::Sum => (vec![r(&[3, 4])], Box::new(|g, v| g.sum(v[0]))),
        OpKind::Mean => (vec![r(&[3, 4])], Box::new(|g, v| g.mean(v[0]))),
        OpKind::CrossEntropy => {
            let gold = vec![Some(2), None, Some(0), Some(4)];
            (
                vec![r(&[2, 2, 5]).scaled(2.0)],
                Box::new(move |g, v| g.cross_entropy(v[0], &gold)),
            )
        }
    }
}

trait Scaled {
    fn scaled(self, k: f64) -> Self;
}

impl Scaled for Tensor {
    fn scaled(mut self, k: f64) -> Self {
        self.data_mut().iter_mut().for_each(|x| *x *= k);
        self
    }
}

/// Model used by the end-to-end checks: 2 layers, 16 dims.
pub fn check_model_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 12,
        max_len: 6,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 32,
        n_tags: 5,
    }
}

fn loss_case(name: &str) -> Result<Case> {
    let config = check_model_config();
    let params = Parameters::init(config, 21)?;
    let titles = TokenBatch::from_sequences(&[vec![2, 5, 7], vec![3, 9]])?;
    let gold = vec![1, 2, 0, 3, 4, config.pad_tag()];
    let pos = TokenBatch::from_sequences(&[vec![5, 7, 8, 4], vec![9, 3, 10]])?;
    let neg = TokenBatch::from_sequences(&[vec![11, 6], vec![4, 2, 8, 8, 1]])?;
    let kind = name.to_string();
    let n_layers = config.n_layers;
    let f = move |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let w = EncoderWeights::from_values(n_layers, v.to_vec()).expect("one var per tensor");
        let t_states = encode_on(g, &w, &config, &titles, None)?.output;
        let ner_loss = |g: &mut Graph| -> Result<Var> {
            let logits = tag_logits_on(g, &w, t_states)?;
            ner_loss_on(g, logits, &gold, titles.mask())
        };
        let triplet = |g: &mut Graph| -> Result<Var> {
            let t = pool_on(g, t_states, &titles)?;
            let p_states = encode_on(g, &w, &config, &pos, None)?.output;
            let p = pool_on(g, p_states, &pos)?;
            let n_states = encode_on(g, &w, &config, &neg, None)?.output;
            let n = pool_on(g, n_states, &neg)?;
            Ok(triplet_loss_on(g, t, p, n)?.loss)
        };
        match kind.as_str() {
            "ner_loss" => ner_loss(g),
            "triplet_loss" => triplet(g),
            _ => {
                let l_ner = ner_loss(g)?;
                let l_trip = triplet(g)?;
                multitask_loss_on(g, l_ner, l_trip, 0.7)
            }
        }
    };
    let inputs = params.tensors().into_iter().cloned().collect();
    Ok((inputs, Box::new(f)))
}

fn run_case(name: &str, (inputs, f): Case, fault: Option<OpKind>) -> Result<CheckResult> {
    let max_rel_error = grad_check_with_fault(|g, v| f(g, v), &inputs, GRAD_CHECK_STEP, fault)?;
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error,
    })
}

/// Check of one op at the random point labelled `point`.
pub fn op_check(kind: OpKind, point: u64, fault: Option<OpKind>) -> Result<CheckResult> {
    run_case(kind.name(), op_case(kind, point), fault)
}

/// Runs every check. With `fault`, the analytic pass of each check uses a
/// corrupted backward rule for that op, which the suite must flag.
pub fn grad_check_suite(fault: Option<OpKind>) -> Result<SuiteReport> {
    let mut checks = Vec::with_capacity(OpKind::ALL.len() + LOSS_CHECKS.len());
    for kind in OpKind::ALL {
        checks.push(op_check(kind, 0, fault)?);
    }
    for name in LOSS_CHECKS {
        checks.push(run_case(name, loss_case(name)?, fault)?);
    }
    Ok(SuiteReport { checks })
}
