use crate::error::Result;

/// Per-block tensors of a pre-norm transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

const LAYER_NAMES: [&str; 16] = [
    "ln1_gamma",
    "ln1_beta",
    "wq",
    "bq",
    "wk",
    "bk",
    "wv",
    "bv",
    "wo",
    "bo",
    "ln2_gamma",
    "ln2_beta",
    "w1",
    "b1",
    "w2",
    "b2",
];

impl<T> LayerWeights<T> {
    fn refs(&self) -> [&T; 16] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn refs_mut(&mut self) -> [&mut T; 16] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn from_iter<I: Iterator<Item = T>>(it: &mut I) -> Option<Self> {
        Some(Self {
            ln1_gamma: it.next()?,
            ln1_beta: it.next()?,
            wq: it.next()?,
            bq: it.next()?,
            wk: it.next()?,
            bk: it.next()?,
            wv: it.next()?,
            bv: it.next()?,
            wo: it.next()?,
            bo: it.next()?,
            ln2_gamma: it.next()?,
            ln2_beta: it.next()?,
            w1: it.next()?,
            b1: it.next()?,
            w2: it.next()?,
            b2: it.next()?,
        })
    }
}

/// Every trainable tensor of the encoder + tag head, generic over the slot
/// type so the same layout serves stored tensors, tape handles and optimizer
/// moments. Iteration order is fixed and matches [`EncoderWeights::names`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    pub token_emb: T,
    pub pos_emb: T,
    pub layers: Vec<LayerWeights<T>>,
    pub final_gamma: T,
    pub final_beta: T,
    pub tag_w: T,
    pub tag_b: T,
}

impl<T> EncoderWeights<T> {
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["token_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.layers.len() {
            names.extend(LAYER_NAMES.iter().map(|n| format!("layers.{i}.{n}")));
        }
        names.extend(["final_gamma", "final_beta", "tag_w", "tag_b"].map(String::from));
        names
    }

    pub fn values(&self) -> Vec<&T> {
        let mut out = vec![&self.token_emb, &self.pos_emb];
        for layer in &self.layers {
            out.extend(layer.refs());
        }
        out.extend([&self.final_gamma, &self.final_beta, &self.tag_w, &self.tag_b]);
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.refs_mut());
        }
        out.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.tag_w,
            &mut self.tag_b,
        ]);
        out
    }

    pub fn count(&self) -> usize {
        4 + 16 * self.layers.len() + 2
    }

    /// Rebuilds a layout with `n_layers` blocks from values in iteration order.
    pub fn from_values(n_layers: usize, values: Vec<T>) -> Option<Self> {
        if values.len() != 6 + 16 * n_layers {
            return None;
        }
        let mut it = values.into_iter();
        let token_emb = it.next()?;
        let pos_emb = it.next()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(LayerWeights::from_iter(&mut it)?);
        }
        Some(Self {
            token_emb,
            pos_emb,
            layers,
            final_gamma: it.next()?,
            final_beta: it.next()?,
            tag_w: it.next()?,
            tag_b: it.next()?,
        })
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<EncoderWeights<U>> {
        let n_layers = self.layers.len();
        let mapped = self.values().into_iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Ok(EncoderWeights::from_values(n_layers, mapped).expect("same layout"))
    }
}
