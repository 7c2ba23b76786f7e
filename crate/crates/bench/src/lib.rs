//! Shared input builders for the attention benchmarks.

use amd_mil::aggregators::{AggregatorParams, AttentionConfig};
use amd_mil::numerics::{Matrix, Rng};

/// Deterministic token sequence of `tokens` rows and `dim` columns.
pub fn random_tokens(tokens: usize, dim: usize, seed: u64) -> Matrix<f32> {
    let mut rng = Rng::new(seed);
    Matrix::new(
        tokens,
        dim,
        (0..tokens * dim).map(|_| rng.normal() as f32).collect(),
    )
    .expect("sized data")
}

/// Config plus params for a benchmark model.
pub fn bench_model(
    dim: usize,
    agents: usize,
    seed: u64,
) -> (AttentionConfig, AggregatorParams<f32>) {
    let mut cfg = AttentionConfig::new(dim);
    cfg.agent_count = agents;
    cfg.landmark_count = agents;
    cfg.cnn_groups = 1;
    let mut rng = Rng::new(seed);
    let params = AggregatorParams::init(&cfg, 2, &mut rng);
    (cfg, params)
}
