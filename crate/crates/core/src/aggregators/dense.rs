//! Exact dense self-attention; the oracle the approximations are measured
//! against.

use super::{AggregatorParams, AttentionGrads};
use crate::error::{Error, Result};
use crate::numerics::{linear_forward, real, softmax_rows, softmax_rows_backward, Matrix, Scalar};

/// Project the token sequence into queries, keys, and values.
pub fn qkv_project<T: Scalar>(
    h: &Matrix<T>,
    params: &AggregatorParams<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let q = linear_forward(h, &params.w_q, None)?;
    let k = linear_forward(h, &params.w_k, None)?;
    let v = linear_forward(h, &params.w_v, None)?;
    Ok((q, k, v))
}

/// Backward of `qkv_project`: accumulates projection gradients into the
/// params and returns the gradient wrt the token sequence.
pub fn qkv_backward<T: Scalar>(
    h: &Matrix<T>,
    d_q: &Matrix<T>,
    d_k: &Matrix<T>,
    d_v: &Matrix<T>,
    params: &mut AggregatorParams<T>,
) -> Result<Matrix<T>> {
    params.w_q.grad.add_scaled(&d_q.matmul_tn(h)?, T::one())?;
    params.w_k.grad.add_scaled(&d_k.matmul_tn(h)?, T::one())?;
    params.w_v.grad.add_scaled(&d_v.matmul_tn(h)?, T::one())?;
    let mut d_h = d_q.matmul(&params.w_q.value)?;
    d_h.add_scaled(&d_k.matmul(&params.w_k.value)?, T::one())?;
    d_h.add_scaled(&d_v.matmul(&params.w_v.value)?, T::one())?;
    Ok(d_h)
}

pub struct DenseCache<T> {
    /// Row-stochastic score matrix.
    pub scores: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
}

/// softmax(Q·Kᵀ/√d_q)·V with d_q equal to the feature dimension.
pub fn dense_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<(Matrix<T>, DenseCache<T>)> {
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::shape("self_attention_dense", q.shape(), k.shape()));
    }
    let scale = real::<T>(1.0 / (q.cols() as f64).sqrt());
    let scores = softmax_rows(&q.matmul_nt(k)?.scale(scale));
    let out = scores.matmul(v)?;
    Ok((
        out,
        DenseCache {
            scores,
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
        },
    ))
}

/// Forward-only convenience wrapper.
pub fn self_attention_dense<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    dense_forward(q, k, v).map(|(out, _)| out)
}

pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    d_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    let scale = real::<T>(1.0 / (cache.q.cols() as f64).sqrt());
    let d_scores = d_out.matmul_nt(&cache.v)?;
    let d_v = cache.scores.matmul_tn(d_out)?;
    let d_logits = softmax_rows_backward(&cache.scores, &d_scores)?.scale(scale);
    let d_q = d_logits.matmul(&cache.k)?;
    let d_k = d_logits.matmul_tn(&cache.q)?;
    Ok(AttentionGrads {
        d_q,
        d_k,
        d_v,
        d_agent: None,
        d_w_denoise: None,
    })
}
