use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderWeights, Parameters};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Data(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Data(format!("adam eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: EncoderWeights<Tensor>,
    pub v: EncoderWeights<Tensor>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros = params
            .weights
            .try_map(|t| Ok(Tensor::zeros(t.shape())))
            .expect("zero tensors always build");
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn optimizer_step(
    params: &mut Parameters,
    grads: &EncoderWeights<Tensor>,
    state: &mut AdamState,
    lr: f64,
    adam: &AdamConfig,
) -> Result<()> {
    let names = params.names();
    let grads = grads.values();
    if grads.len() != names.len() {
        return Err(Error::Dimension(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            names.len()
        )));
    }
    for ((name, g), p) in names.iter().zip(&grads).zip(params.tensors()) {
        if g.shape() != p.shape() {
            return Err(Error::Dimension(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    let tensors = params.tensors_mut();
    let ms = state.m.values_mut();
    let vs = state.v.values_mut();
    for (((p, g), m), v) in tensors.into_iter().zip(grads).zip(ms).zip(vs) {
        let g = g.data();
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;

    fn tiny() -> Parameters {
        let cfg = EncoderConfig {
            vocab_size: 5,
            max_len: 4,
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            n_tags: 3,
        };
        Parameters::init(cfg, 1).unwrap()
    }

    fn grads_filled(p: &Parameters, value: f64) -> EncoderWeights<Tensor> {
        p.weights.try_map(|t| Ok(Tensor::full(t.shape(), value))).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = tiny();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = grads_filled(&p, 0.0);
        optimizer_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let lr = 1e-3;
        for g in [0.37, -2.5] {
            let mut p = tiny();
            let before = p.clone();
            let mut s = AdamState::new(&p);
            let grads = grads_filled(&p, g);
            optimizer_step(&mut p, &grads, &mut s, lr, &AdamConfig::default()).unwrap();
            for (a, b) in p.tensors().iter().zip(before.tensors()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    let delta = x - y;
                    assert!((delta + lr * g.signum()).abs() <= lr * 1e-6, "{delta}");
                }
            }
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let mut p = tiny();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let mut g = grads_filled(&p, 0.1);
        g.tag_b.data_mut()[0] = f64::NAN;
        let err = optimizer_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("tag_b"));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
