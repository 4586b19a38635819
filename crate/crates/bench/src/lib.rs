//! Fixtures shared by the benchmarks.

use triplet_tagger::corpus::generate_synthetic;
use triplet_tagger::trainer::{encode_examples, initialize, Example};
use triplet_tagger::{ModelSpec, Parameters, TagScheme, TrainConfig};

/// The desk-scale model: 2 layers, 64 dims, 4 heads.
pub fn desk_spec() -> ModelSpec {
    ModelSpec {
        max_len: 48,
        d_model: 64,
        n_heads: 4,
        n_layers: 2,
        d_ff: 128,
        min_freq: 1,
    }
}

/// Freshly initialized parameters and `n` encoded synthetic items.
pub fn fixture(n: usize, spec: &ModelSpec) -> (Parameters, Vec<Example>) {
    let scheme = TagScheme::default();
    let items = generate_synthetic(1, n).expect("synthetic catalog");
    let (params, vocab) = initialize(&TrainConfig::default(), spec, &items, &scheme).expect("init");
    let data = encode_examples(&items, &vocab, &scheme, spec.max_len).expect("encode");
    (params, data)
}
