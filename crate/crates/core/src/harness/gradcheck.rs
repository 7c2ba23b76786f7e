//! Finite-difference verification of every analytic backward pass.
//!
//! Runs the full bag → aggregator → head → cross-entropy pipeline at f64 and
//! compares the accumulated analytic gradients of each trainable parameter
//! against central differences of the loss.

use crate::aggregators::AttentionConfig;
use crate::error::Result;
use crate::mil::{pipeline_loss, pipeline_loss_and_grad, AggregatorVariant, ModelParams};
use crate::numerics::{finite_diff_grad, grad_relative_error, Matrix, Rng};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub variant: AggregatorVariant,
    /// (parameter name, max relative error) per trainable tensor.
    pub per_param: Vec<(&'static str, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Check one variant on a random bag of `n_instances` instances.
pub fn gradcheck_variant(
    variant: AggregatorVariant,
    n_instances: usize,
    cfg: &AttentionConfig,
    classes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let d = cfg.feature_dim;
    let features = Matrix::<f64>::new(
        n_instances,
        d,
        (0..n_instances * d).map(|_| rng.normal()).collect(),
    )?;
    let label = rng.next_below(classes);
    let mut params = ModelParams::<f64>::init(variant, cfg, classes, &mut rng);

    params.zero_grads();
    pipeline_loss_and_grad(&features, label, variant, &mut params, cfg)?;

    let h = 1e-5;
    let mut per_param = Vec::new();
    for name in variant.trainable_names() {
        let at = params.get(name).expect("trainable exists").value.clone();
        let numeric = finite_diff_grad(
            |candidate| {
                let mut probe = params.clone();
                probe.get_mut(name).expect("trainable exists").value = candidate.clone();
                pipeline_loss(&features, label, variant, &probe, cfg)
            },
            &at,
            h,
        )?;
        let analytic = &params.get(name).expect("trainable exists").grad;
        per_param.push((*name, grad_relative_error(analytic, &numeric)));
    }
    Ok(GradCheckReport { variant, per_param })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(variant: AggregatorVariant, tol: f64) {
        let mut cfg = AttentionConfig::new(8);
        cfg.agent_count = 4;
        cfg.landmark_count = 4;
        cfg.cnn_groups = 4;
        let report = gradcheck_variant(variant, 7, &cfg, 2, 99).unwrap();
        for (name, err) in &report.per_param {
            assert!(
                *err <= tol,
                "{variant}/{name}: rel error {err:.3e} exceeds {tol:.0e}"
            );
        }
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        check(AggregatorVariant::Dense, 1e-4);
    }

    #[test]
    fn nystrom_backward_matches_finite_differences() {
        check(AggregatorVariant::Nystrom, 1e-4);
    }

    #[test]
    fn pooling_agent_backward_matches_finite_differences() {
        check(AggregatorVariant::PoolingAgent, 1e-4);
    }

    #[test]
    fn trainable_agent_backward_matches_finite_differences() {
        check(AggregatorVariant::TrainableAgent, 1e-4);
    }

    #[test]
    fn amd_backward_matches_finite_differences() {
        check(AggregatorVariant::Amd, 1e-4);
    }

    #[test]
    fn amd_mask_only_backward_matches_finite_differences() {
        check(AggregatorVariant::AmdMask, 1e-4);
    }

    #[test]
    fn baseline_backwards_match_finite_differences() {
        check(AggregatorVariant::Mean, 1e-4);
        check(AggregatorVariant::Max, 1e-4);
        check(AggregatorVariant::Abmil, 1e-4);
    }
}
