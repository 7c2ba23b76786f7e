//! The classifier pipeline: features → chosen aggregator → linear head →
//! softmax, with a single analytic backward used by both the trainer and the
//! gradient checks.

use super::baselines::{
    abmil_backward, abmil_forward, max_pool_aggregate, mean_pool_aggregate, AbmilCache,
};
use super::{AggregatorVariant, Bag, ModelParams};
use crate::aggregators::{
    agent_backward, agent_forward, amd_backward, amd_forward, attention_scores, dense_backward,
    dense_forward, nystrom_backward, nystrom_forward, pooling_agent, qkv_backward, qkv_project,
    segment_mean_unpool, AgentCache, AggregatorParams, AmdCache, AttentionConfig, AttentionGrads,
    DenseCache, NystromCache,
};
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, softmax_rows, Matrix, ParamTensor, Scalar};

/// Class token prepended at row 0; instances shift to rows 1..N.
pub fn prepend_class_token<T: Scalar>(
    features: &Matrix<T>,
    class_token: &ParamTensor<T>,
) -> Result<Matrix<T>> {
    if class_token.value.rows() != 1 || class_token.value.cols() != features.cols() {
        return Err(Error::shape(
            "prepend_class_token",
            class_token.value.shape(),
            features.shape(),
        ));
    }
    let mut data = Vec::with_capacity((features.rows() + 1) * features.cols());
    data.extend_from_slice(class_token.value.row(0));
    data.extend_from_slice(features.data());
    Matrix::new(features.rows() + 1, features.cols(), data)
}

/// Opaque intermediates exposed for tests and visualization.
#[derive(Debug)]
pub struct Intermediates<T> {
    pub v_a: Option<Matrix<T>>,
    pub mask_proj: Option<Matrix<T>>,
    pub tau: Option<T>,
    pub q_a: Option<Matrix<T>>,
    pub k_a: Option<Matrix<T>>,
}

impl<T> Default for Intermediates<T> {
    fn default() -> Self {
        Intermediates {
            v_a: None,
            mask_proj: None,
            tau: None,
            q_a: None,
            k_a: None,
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutput<T> {
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    /// Per-instance attention, length N.
    pub attention: Vec<T>,
    pub intermediates: Intermediates<T>,
}

enum ForwardCache<T> {
    Pooled,
    Abmil(AbmilCache<T>),
    Dense {
        h: Matrix<T>,
        cache: DenseCache<T>,
    },
    Nystrom {
        h: Matrix<T>,
        cache: NystromCache<T>,
    },
    Agent {
        h: Matrix<T>,
        cache: AgentCache<T>,
        pooled_agent: bool,
    },
    Amd {
        cache: AmdCache<T>,
    },
}

struct Forward<T> {
    /// Row the head reads: class-token output or pooled bag vector.
    readout: Matrix<T>,
    attention: Vec<T>,
    intermediates: Intermediates<T>,
    cache: ForwardCache<T>,
}

fn attention_params<T: Scalar>(params: &ModelParams<T>) -> Result<&AggregatorParams<T>> {
    match params {
        ModelParams::Attention(p) => Ok(p),
        _ => Err(Error::Config(
            "token-based aggregator needs attention parameters".into(),
        )),
    }
}

fn run_forward<T: Scalar>(
    features: &Matrix<T>,
    variant: AggregatorVariant,
    params: &ModelParams<T>,
    cfg: &AttentionConfig,
) -> Result<Forward<T>> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::Domain("pipeline_forward: empty bag".into()));
    }
    match variant {
        AggregatorVariant::Mean => {
            let pooled = mean_pool_aggregate(features)?;
            let readout = Matrix::new(1, features.cols(), pooled)?;
            let uniform = T::one() / T::from(n).unwrap();
            Ok(Forward {
                readout,
                attention: vec![uniform; n],
                intermediates: Intermediates::default(),
                cache: ForwardCache::Pooled,
            })
        }
        AggregatorVariant::Max => {
            let pooled = max_pool_aggregate(features)?;
            let readout = Matrix::new(1, features.cols(), pooled.clone())?;
            // attention proxy: share of feature dims where the instance wins
            let mut counts = vec![T::zero(); n];
            for (c, &colmax) in pooled.iter().enumerate() {
                for (r, cnt) in counts.iter_mut().enumerate() {
                    if features.at(r, c) == colmax {
                        *cnt = *cnt + T::one();
                        break;
                    }
                }
                let _ = c;
            }
            let inv = T::one() / T::from(features.cols()).unwrap();
            Ok(Forward {
                readout,
                attention: counts.into_iter().map(|c| c * inv).collect(),
                intermediates: Intermediates::default(),
                cache: ForwardCache::Pooled,
            })
        }
        AggregatorVariant::Abmil => {
            let abmil = match params {
                ModelParams::Abmil(p) => p,
                _ => {
                    return Err(Error::Config(
                        "abmil aggregator needs gated-attention parameters".into(),
                    ))
                }
            };
            let (pooled, cache) = abmil_forward(features, abmil)?;
            Ok(Forward {
                readout: Matrix::new(1, features.cols(), pooled)?,
                attention: cache.weights.clone(),
                intermediates: Intermediates::default(),
                cache: ForwardCache::Abmil(cache),
            })
        }
        AggregatorVariant::Dense => {
            let p = attention_params(params)?;
            let h = prepend_class_token(features, &p.class_token)?;
            let (q, k, v) = qkv_project(&h, p)?;
            let (out, cache) = dense_forward(&q, &k, &v)?;
            let attention = cache.scores.row(0)[1..].to_vec();
            Ok(Forward {
                readout: Matrix::new(1, out.cols(), out.row(0).to_vec())?,
                attention,
                intermediates: Intermediates::default(),
                cache: ForwardCache::Dense { h, cache },
            })
        }
        AggregatorVariant::Nystrom => {
            let p = attention_params(params)?;
            let h = prepend_class_token(features, &p.class_token)?;
            let (q, k, v) = qkv_project(&h, p)?;
            let (out, cache) = nystrom_forward(&q, &k, &v, cfg)?;
            let attention = cache.score_row0()?[1..].to_vec();
            Ok(Forward {
                readout: Matrix::new(1, out.cols(), out.row(0).to_vec())?,
                attention,
                intermediates: Intermediates::default(),
                cache: ForwardCache::Nystrom { h, cache },
            })
        }
        AggregatorVariant::PoolingAgent | AggregatorVariant::TrainableAgent => {
            let p = attention_params(params)?;
            let h = prepend_class_token(features, &p.class_token)?;
            let (q, k, v) = qkv_project(&h, p)?;
            let pooled_agent = variant == AggregatorVariant::PoolingAgent;
            let agent = if pooled_agent {
                pooling_agent(&q, cfg.agent_count)?
            } else {
                p.agent.value.clone()
            };
            let (out, cache) = agent_forward(&q, &k, &v, &agent)?;
            let attention = attention_scores(&cache.q_a, &cache.k_a, cfg)?;
            let intermediates = Intermediates {
                v_a: Some(cache.v_a.clone()),
                q_a: Some(cache.q_a.clone()),
                k_a: Some(cache.k_a.clone()),
                ..Intermediates::default()
            };
            Ok(Forward {
                readout: Matrix::new(1, out.cols(), out.row(0).to_vec())?,
                attention,
                intermediates,
                cache: ForwardCache::Agent {
                    h,
                    cache,
                    pooled_agent,
                },
            })
        }
        AggregatorVariant::AmdMask | AggregatorVariant::Amd => {
            let p = attention_params(params)?;
            let h = prepend_class_token(features, &p.class_token)?;
            let denoise = variant == AggregatorVariant::Amd;
            let (outputs, cache) = amd_forward(&h, p, cfg, denoise)?;
            let attention = attention_scores(&outputs.q_a, &outputs.k_a, cfg)?;
            let intermediates = Intermediates {
                v_a: Some(outputs.v_a),
                mask_proj: Some(outputs.mask_proj),
                tau: Some(outputs.tau),
                q_a: Some(outputs.q_a),
                k_a: Some(outputs.k_a),
            };
            Ok(Forward {
                readout: Matrix::new(1, outputs.out.cols(), outputs.out.row(0).to_vec())?,
                attention,
                intermediates,
                cache: ForwardCache::Amd { cache },
            })
        }
    }
}

fn head_of<T: Scalar>(params: &ModelParams<T>) -> &ParamTensor<T> {
    match params {
        ModelParams::Pooled { head } => head,
        ModelParams::Abmil(p) => &p.head,
        ModelParams::Attention(p) => &p.head,
    }
}

/// Full forward pass producing logits, probabilities, and per-instance
/// attention.
pub fn pipeline_forward<T: Scalar>(
    bag: &Bag<T>,
    variant: AggregatorVariant,
    params: &ModelParams<T>,
    cfg: &AttentionConfig,
) -> Result<PipelineOutput<T>> {
    let fwd = run_forward(&bag.features, variant, params, cfg)?;
    let logits = fwd.readout.matmul_nt(&head_of(params).value)?;
    let probabilities = softmax_rows(&logits);
    Ok(PipelineOutput {
        logits: logits.row(0).to_vec(),
        probabilities: probabilities.row(0).to_vec(),
        attention: fwd.attention,
        intermediates: fwd.intermediates,
    })
}

/// Cross-entropy loss of the pipeline on one bag; forward only.
pub fn pipeline_loss<T: Scalar>(
    features: &Matrix<T>,
    label: usize,
    variant: AggregatorVariant,
    params: &ModelParams<T>,
    cfg: &AttentionConfig,
) -> Result<T> {
    let fwd = run_forward(features, variant, params, cfg)?;
    let logits = fwd.readout.matmul_nt(&head_of(params).value)?;
    cross_entropy(&logits, label).map(|(loss, _)| loss)
}

/// Loss plus analytic backward: gradients are accumulated into `params`.
pub fn pipeline_loss_and_grad<T: Scalar>(
    features: &Matrix<T>,
    label: usize,
    variant: AggregatorVariant,
    params: &mut ModelParams<T>,
    cfg: &AttentionConfig,
) -> Result<T> {
    let fwd = run_forward(features, variant, params, cfg)?;
    let logits = fwd.readout.matmul_nt(&head_of(params).value)?;
    let (loss, d_logits) = cross_entropy(&logits, label)?;

    // head backward and the gradient reaching the readout row
    let d_readout = d_logits.matmul(&head_of(params).value)?;
    let d_head = d_logits.matmul_tn(&fwd.readout)?;
    match params {
        ModelParams::Pooled { head } => head.grad.add_scaled(&d_head, T::one())?,
        ModelParams::Abmil(p) => p.head.grad.add_scaled(&d_head, T::one())?,
        ModelParams::Attention(p) => p.head.grad.add_scaled(&d_head, T::one())?,
    }

    match fwd.cache {
        ForwardCache::Pooled => {}
        ForwardCache::Abmil(cache) => {
            let abmil = match params {
                ModelParams::Abmil(p) => p,
                _ => unreachable!("forward checked the params family"),
            };
            abmil_backward(&cache, d_readout.row(0), abmil)?;
        }
        ForwardCache::Dense { h, cache } => {
            let p = match params {
                ModelParams::Attention(p) => p,
                _ => unreachable!("forward checked the params family"),
            };
            let mut d_out = Matrix::zeros(h.rows(), h.cols());
            d_out.row_mut(0).copy_from_slice(d_readout.row(0));
            let grads = dense_backward(&cache, &d_out)?;
            finish_token_backward(&h, grads, p, None)?;
        }
        ForwardCache::Nystrom { h, cache } => {
            let p = match params {
                ModelParams::Attention(p) => p,
                _ => unreachable!("forward checked the params family"),
            };
            let mut d_out = Matrix::zeros(h.rows(), h.cols());
            d_out.row_mut(0).copy_from_slice(d_readout.row(0));
            let grads = nystrom_backward(&cache, &d_out)?;
            finish_token_backward(&h, grads, p, None)?;
        }
        ForwardCache::Agent {
            h,
            cache,
            pooled_agent,
        } => {
            let p = match params {
                ModelParams::Attention(p) => p,
                _ => unreachable!("forward checked the params family"),
            };
            let mut d_out = Matrix::zeros(h.rows(), h.cols());
            d_out.row_mut(0).copy_from_slice(d_readout.row(0));
            let grads = agent_backward(&cache, &d_out)?;
            finish_token_backward(&h, grads, p, Some(pooled_agent))?;
        }
        ForwardCache::Amd { cache } => {
            let p = match params {
                ModelParams::Attention(p) => p,
                _ => unreachable!("forward checked the params family"),
            };
            let h_rows = features.rows() + 1;
            let mut d_out = Matrix::zeros(h_rows, features.cols());
            d_out.row_mut(0).copy_from_slice(d_readout.row(0));
            let d_h = amd_backward(&cache, &d_out, p)?;
            accumulate_class_token(&d_h, p)?;
        }
    }
    Ok(loss)
}

fn finish_token_backward<T: Scalar>(
    h: &Matrix<T>,
    grads: AttentionGrads<T>,
    params: &mut AggregatorParams<T>,
    pooled_agent: Option<bool>,
) -> Result<()> {
    let AttentionGrads {
        mut d_q,
        d_k,
        d_v,
        d_agent,
        d_w_denoise,
    } = grads;
    if let Some(d_agent) = d_agent {
        match pooled_agent {
            Some(true) => {
                // A = segment_mean_pool(Q): route the agent gradient back into Q
                d_q.add_scaled(&segment_mean_unpool(&d_agent, h.rows())?, T::one())?;
            }
            _ => params.agent.grad.add_scaled(&d_agent, T::one())?,
        }
    }
    if let Some(d_w_denoise) = d_w_denoise {
        params.w_denoise.grad.add_scaled(&d_w_denoise, T::one())?;
    }
    let d_h = qkv_backward(h, &d_q, &d_k, &d_v, params)?;
    accumulate_class_token(&d_h, params)
}

fn accumulate_class_token<T: Scalar>(
    d_h: &Matrix<T>,
    params: &mut AggregatorParams<T>,
) -> Result<()> {
    let d_token = Matrix::new(1, d_h.cols(), d_h.row(0).to_vec())?;
    params.class_token.grad.add_scaled(&d_token, T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_bag(rng: &mut Rng, n: usize, d: usize) -> Bag<f64> {
        Bag {
            features: Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap(),
            label: 1,
            instance_labels: None,
            id: "test".into(),
        }
    }

    #[test]
    fn class_token_sits_at_row_zero() {
        let mut rng = Rng::new(51);
        let features = Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let token = ParamTensor::gaussian(1, 3, 1.0, &mut rng);
        let h = prepend_class_token(&features, &token).unwrap();
        assert_eq!(h.shape(), (2, 3));
        assert_eq!(h.row(0), token.value.row(0));
        assert_eq!(h.row(1), features.row(0));

        let zero_token = ParamTensor::<f64>::zeros(1, 3);
        let h = prepend_class_token(&features, &zero_token).unwrap();
        assert!(h.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropping_the_token_row_recovers_features() {
        let mut rng = Rng::new(52);
        let features = Matrix::new(7, 4, (0..28).map(|_| rng.normal()).collect()).unwrap();
        let token = ParamTensor::gaussian(1, 4, 1.0, &mut rng);
        let h = prepend_class_token(&features, &token).unwrap();
        let recovered = Matrix::new(7, 4, h.data()[4..].to_vec()).unwrap();
        assert_eq!(recovered, features);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut rng = Rng::new(53);
        let cfg = AttentionConfig::new(4);
        let bag = random_bag(&mut rng, 5, 4);
        let params = ModelParams::<f64>::Pooled {
            head: ParamTensor::zeros(2, 4),
        };
        let out = pipeline_forward(&bag, AggregatorVariant::Mean, &params, &cfg).unwrap();
        assert!((out.probabilities[0] - 0.5).abs() < 1e-12);
        assert!((out.probabilities[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_and_max_agree_on_constant_bags() {
        let mut rng = Rng::new(54);
        let cfg = AttentionConfig::new(3);
        let params = ModelParams::<f64>::init(
            AggregatorVariant::Mean,
            &AttentionConfig::new(3),
            2,
            &mut rng,
        );
        let row = [0.4, -0.2, 1.0];
        let bag = Bag {
            features: Matrix::new(6, 3, row.repeat(6)).unwrap(),
            label: 0,
            instance_labels: None,
            id: "const".into(),
        };
        let mean_out = pipeline_forward(&bag, AggregatorVariant::Mean, &params, &cfg).unwrap();
        let max_out = pipeline_forward(&bag, AggregatorVariant::Max, &params, &cfg).unwrap();
        for (a, b) in mean_out.logits.iter().zip(&max_out.logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn amd_output_shapes_and_normalization() {
        let mut rng = Rng::new(55);
        let mut cfg = AttentionConfig::new(8);
        cfg.agent_count = 3;
        cfg.cnn_groups = 2;
        let params = ModelParams::<f64>::init(AggregatorVariant::Amd, &cfg, 2, &mut rng);
        let bag = random_bag(&mut rng, 5, 8);
        let out = pipeline_forward(&bag, AggregatorVariant::Amd, &params, &cfg).unwrap();
        assert_eq!(out.attention.len(), 5);
        assert_eq!(out.probabilities.len(), 2);
        let total: f64 = out.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(out.intermediates.v_a.is_some());
        assert!(out.intermediates.tau.is_some());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mut rng = Rng::new(56);
        let mut cfg = AttentionConfig::new(6);
        cfg.agent_count = 2;
        cfg.cnn_groups = 3;
        let params = ModelParams::<f64>::init(AggregatorVariant::Amd, &cfg, 2, &mut rng);
        let bag = random_bag(&mut rng, 4, 6);
        let a = pipeline_forward(&bag, AggregatorVariant::Amd, &params, &cfg).unwrap();
        let b = pipeline_forward(&bag, AggregatorVariant::Amd, &params, &cfg).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.attention, b.attention);
    }

    #[test]
    fn unknown_params_family_is_a_config_error() {
        let mut rng = Rng::new(57);
        let cfg = AttentionConfig::new(4);
        let params = ModelParams::<f64>::Pooled {
            head: ParamTensor::gaussian(2, 4, 0.5, &mut rng),
        };
        let bag = random_bag(&mut rng, 3, 4);
        assert!(matches!(
            pipeline_forward(&bag, AggregatorVariant::Amd, &params, &cfg),
            Err(Error::Config(_))
        ));
    }
}
