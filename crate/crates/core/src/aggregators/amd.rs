//! Trainable-agent aggregator with the mask-denoise mechanism.
//!
//! The agent-aggregated values V_A are projected into a mask matrix M and a
//! scalar threshold τ; entries of V_A whose mask score clears the threshold
//! are kept, the rest zeroed, and a learned denoise projection of V_A is
//! added back to compensate. The binary comparison is treated as constant in
//! the backward pass: gradients flow through the kept V_A entries and the
//! denoise path, never through τ or the comparison itself.

use super::dense::{qkv_backward, qkv_project};
use super::{AggregatorParams, AttentionConfig, ThresholdMode};
use crate::error::{Error, Result};
use crate::numerics::{real, softmax_rows, softmax_rows_backward, Matrix, Scalar};

/// Mask projection M = V_A·W_Mᵀ plus the scalar threshold τ for the
/// configured mode.
pub fn mask_threshold<T: Scalar>(
    v_a: &Matrix<T>,
    params: &AggregatorParams<T>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<T>, T)> {
    v_a.ensure_finite("mask_threshold")?;
    let mask_proj = v_a.matmul_nt(&params.w_mask.value)?;
    let tau = match cfg.threshold_mode {
        ThresholdMode::Linear => {
            // mean over agents of the 1-D projection V_A·W_τᵀ
            v_a.matmul_nt(&params.w_tau.value)?.mean_all()
        }
        ThresholdMode::Mean => mask_proj.mean_all(),
        ThresholdMode::Cnn => {
            // fixed group-averaging kernels over the feature dim, then the
            // mean across groups
            let groups = cfg.cnn_groups;
            let group_size = v_a.cols() / groups;
            let mut acc = T::zero();
            for r in 0..v_a.rows() {
                let row = v_a.row(r);
                for g in 0..groups {
                    let seg = &row[g * group_size..(g + 1) * group_size];
                    let seg_mean: T = seg.iter().copied().sum::<T>() / real::<T>(group_size as f64);
                    acc = acc + seg_mean;
                }
            }
            acc / real::<T>((v_a.rows() * groups) as f64)
        }
    };
    Ok((mask_proj, tau))
}

/// Binary mask 1[M > τ].
pub fn binary_mask<T: Scalar>(mask_proj: &Matrix<T>, tau: T) -> Matrix<T> {
    mask_proj.map(|m| if m > tau { T::one() } else { T::zero() })
}

/// V_MD[i][j] = V_A[i][j]·1[M[i][j] > τ] + DN[i][j] with DN = V_A·W_DNᵀ.
pub fn mask_denoise<T: Scalar>(
    v_a: &Matrix<T>,
    mask_proj: &Matrix<T>,
    tau: T,
    params: &AggregatorParams<T>,
) -> Result<Matrix<T>> {
    if v_a.shape() != mask_proj.shape() {
        return Err(Error::shape("mask_denoise", v_a.shape(), mask_proj.shape()));
    }
    let kept = v_a.hadamard(&binary_mask(mask_proj, tau))?;
    let denoise = v_a.matmul_nt(&params.w_denoise.value)?;
    kept.add(&denoise)
}

/// Everything the forward pass exposes for classification, visualization,
/// and tests.
pub struct AmdOutputs<T> {
    /// Refined token features, (N+1)×D.
    pub out: Matrix<T>,
    /// Agent-aggregated values, n×D.
    pub v_a: Matrix<T>,
    /// Mask projection, n×D.
    pub mask_proj: Matrix<T>,
    pub tau: T,
    /// Raw (pre-softmax) query-agent map, (N+1)×n.
    pub q_a: Matrix<T>,
    /// Raw (pre-softmax) agent-key map, n×(N+1).
    pub k_a: Matrix<T>,
}

pub struct AmdCache<T> {
    s_q: Matrix<T>,
    s_k: Matrix<T>,
    v_a: Matrix<T>,
    mask: Matrix<T>,
    v_md: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    h: Matrix<T>,
    denoise: bool,
}

/// Full pipeline from the token sequence: QKV projection, raw agent maps,
/// value aggregation, mask-threshold, mask-denoise (when `denoise` is set;
/// the mask-only ablation clears it), and broadcast back through σ(Q_A).
pub fn amd_forward<T: Scalar>(
    h: &Matrix<T>,
    params: &AggregatorParams<T>,
    cfg: &AttentionConfig,
    denoise: bool,
) -> Result<(AmdOutputs<T>, AmdCache<T>)> {
    let (q, k, v) = qkv_project(h, params)?;
    let agent = &params.agent.value;
    let q_a = q.matmul_nt(agent)?;
    let k_a = agent.matmul_nt(&k)?;
    let s_q = softmax_rows(&q_a);
    let s_k = softmax_rows(&k_a);
    let v_a = s_k.matmul(&v)?;
    let (mask_proj, tau) = mask_threshold(&v_a, params, cfg)?;
    let mask = binary_mask(&mask_proj, tau);
    let mut v_md = v_a.hadamard(&mask)?;
    if denoise {
        v_md.add_scaled(&v_a.matmul_nt(&params.w_denoise.value)?, T::one())?;
    }
    let out = s_q.matmul(&v_md)?;
    Ok((
        AmdOutputs {
            out,
            v_a: v_a.clone(),
            mask_proj,
            tau,
            q_a,
            k_a,
        },
        AmdCache {
            s_q,
            s_k,
            v_a,
            mask,
            v_md,
            q,
            k,
            v,
            h: h.clone(),
            denoise,
        },
    ))
}

/// Backward of `amd_forward`. Accumulates the projection, agent, and denoise
/// gradients into `params` and returns the gradient wrt the token sequence.
/// The mask projection and threshold receive no gradient by construction.
pub fn amd_backward<T: Scalar>(
    cache: &AmdCache<T>,
    d_out: &Matrix<T>,
    params: &mut AggregatorParams<T>,
) -> Result<Matrix<T>> {
    let d_s_q = d_out.matmul_nt(&cache.v_md)?;
    let d_v_md = cache.s_q.matmul_tn(d_out)?;
    let d_q_a = softmax_rows_backward(&cache.s_q, &d_s_q)?;

    let mut d_v_a = d_v_md.hadamard(&cache.mask)?;
    if cache.denoise {
        params
            .w_denoise
            .grad
            .add_scaled(&d_v_md.matmul_tn(&cache.v_a)?, T::one())?;
        d_v_a.add_scaled(&d_v_md.matmul(&params.w_denoise.value)?, T::one())?;
    }

    let d_s_k = d_v_a.matmul_nt(&cache.v)?;
    let d_v = cache.s_k.matmul_tn(&d_v_a)?;
    let d_k_a = softmax_rows_backward(&cache.s_k, &d_s_k)?;

    let d_q = d_q_a.matmul(&params.agent.value)?;
    let mut d_agent = d_q_a.matmul_tn(&cache.q)?;
    d_agent.add_scaled(&d_k_a.matmul(&cache.k)?, T::one())?;
    let d_k = d_k_a.matmul_tn(&params.agent.value)?;
    params.agent.grad.add_scaled(&d_agent, T::one())?;

    qkv_backward(&cache.h, &d_q, &d_k, &d_v, params)
}

/// Per-instance attention scores extracted from the agent maps (class token
/// excluded).
///
/// The default composes the softmax-normalized factors, matching the
/// information flow of the forward pass; with `raw_eq13` the literal product
/// of the un-normalized maps is rendered instead.
pub fn attention_scores<T: Scalar>(
    q_a: &Matrix<T>,
    k_a: &Matrix<T>,
    cfg: &AttentionConfig,
) -> Result<Vec<T>> {
    if q_a.cols() != k_a.rows() {
        return Err(Error::shape("attention_scores", q_a.shape(), k_a.shape()));
    }
    let tokens = q_a.rows();
    if k_a.cols() != tokens {
        return Err(Error::shape("attention_scores", q_a.shape(), k_a.shape()));
    }
    if tokens <= 1 {
        return Ok(Vec::new());
    }
    let (row0, maps) = if cfg.raw_eq13 {
        (q_a.row(0).to_vec(), k_a.clone())
    } else {
        let s_q = softmax_rows(q_a);
        (s_q.row(0).to_vec(), softmax_rows(k_a))
    };
    let mut scores = vec![T::zero(); tokens - 1];
    for (j, &w) in row0.iter().enumerate() {
        let krow = maps.row(j);
        for (i, s) in scores.iter_mut().enumerate() {
            *s = *s + w * krow[i + 1];
        }
    }
    Ok(scores)
}
