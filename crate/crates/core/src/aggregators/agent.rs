//! Agent attention: a small set of agent rows mediates between queries and
//! keys, dropping the cost from quadratic to linear in the token count.

use super::AttentionGrads;
use crate::error::{Error, Result};
use crate::numerics::{real, softmax_rows, softmax_rows_backward, Matrix, Scalar};

/// Mean-pool rows into `m` contiguous segments, zero-padding the tail when
/// the row count is not a multiple of `m`. Used both for Nyström landmarks
/// and for pooled agents.
pub fn segment_mean_pool<T: Scalar>(x: &Matrix<T>, m: usize) -> Result<Matrix<T>> {
    let rows = x.rows();
    if m == 0 {
        return Err(Error::Config("segment count must be >= 1".into()));
    }
    if m > rows {
        return Err(Error::Config(format!(
            "segment count {m} exceeds row count {rows}"
        )));
    }
    let seg_len = rows.div_ceil(m);
    let inv = real::<T>(1.0 / seg_len as f64);
    let mut out = Matrix::zeros(m, x.cols());
    for j in 0..m {
        let start = j * seg_len;
        let end = ((j + 1) * seg_len).min(rows);
        let orow = out.row_mut(j);
        for r in start..end {
            for (o, &v) in orow.iter_mut().zip(x.row(r)) {
                *o = *o + v;
            }
        }
        // rows beyond `rows` are the zero padding; they contribute nothing
        // but still count in the divisor
        for o in orow.iter_mut() {
            *o = *o * inv;
        }
    }
    Ok(out)
}

/// Backward of `segment_mean_pool`: spread each segment gradient evenly over
/// the real rows it covered (padding rows absorb and drop their share).
pub fn segment_mean_unpool<T: Scalar>(d_pooled: &Matrix<T>, rows: usize) -> Result<Matrix<T>> {
    let m = d_pooled.rows();
    let seg_len = rows.div_ceil(m);
    let inv = real::<T>(1.0 / seg_len as f64);
    let mut out = Matrix::zeros(rows, d_pooled.cols());
    for j in 0..m {
        let start = j * seg_len;
        let end = ((j + 1) * seg_len).min(rows);
        for r in start..end {
            for (o, &g) in out.row_mut(r).iter_mut().zip(d_pooled.row(j)) {
                *o = g * inv;
            }
        }
    }
    Ok(out)
}

/// Agent matrix derived from Q by segment mean-pooling.
pub fn pooling_agent<T: Scalar>(q: &Matrix<T>, n: usize) -> Result<Matrix<T>> {
    segment_mean_pool(q, n)
}

/// V_A = σ(A·Kᵀ)·V, the agent-aggregated values.
pub fn agent_aggregate_values<T: Scalar>(
    k: &Matrix<T>,
    v: &Matrix<T>,
    agent: &Matrix<T>,
) -> Result<Matrix<T>> {
    if agent.cols() != k.cols() {
        return Err(Error::shape(
            "agent_aggregate_values",
            agent.shape(),
            k.shape(),
        ));
    }
    softmax_rows(&agent.matmul_nt(k)?).matmul(v)
}

pub struct AgentCache<T> {
    /// Raw query-agent map Q·Aᵀ.
    pub q_a: Matrix<T>,
    /// Raw agent-key map A·Kᵀ.
    pub k_a: Matrix<T>,
    /// σ(Q·Aᵀ), row-stochastic over agents.
    pub s_q: Matrix<T>,
    /// σ(A·Kᵀ), row-stochastic over tokens.
    pub s_k: Matrix<T>,
    /// Agent-aggregated values σ(A·Kᵀ)·V.
    pub v_a: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    agent: Matrix<T>,
}

/// σ(Q·Aᵀ)·σ(A·Kᵀ)·V. No √d scaling inside these softmaxes, unlike the
/// dense path.
pub fn agent_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    agent: &Matrix<T>,
) -> Result<(Matrix<T>, AgentCache<T>)> {
    if agent.cols() != q.cols() {
        return Err(Error::shape("agent_attention", agent.shape(), q.shape()));
    }
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::shape("agent_attention", q.shape(), k.shape()));
    }
    let q_a = q.matmul_nt(agent)?;
    let k_a = agent.matmul_nt(k)?;
    let s_q = softmax_rows(&q_a);
    let s_k = softmax_rows(&k_a);
    let v_a = s_k.matmul(v)?;
    let out = s_q.matmul(&v_a)?;
    Ok((
        out,
        AgentCache {
            q_a,
            k_a,
            s_q,
            s_k,
            v_a,
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            agent: agent.clone(),
        },
    ))
}

/// Forward-only convenience wrapper.
pub fn agent_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    agent: &Matrix<T>,
) -> Result<Matrix<T>> {
    agent_forward(q, k, v, agent).map(|(out, _)| out)
}

pub fn agent_backward<T: Scalar>(
    cache: &AgentCache<T>,
    d_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    let d_s_q = d_out.matmul_nt(&cache.v_a)?;
    let d_v_a = cache.s_q.matmul_tn(d_out)?;
    let d_q_a = softmax_rows_backward(&cache.s_q, &d_s_q)?;

    let d_s_k = d_v_a.matmul_nt(&cache.v)?;
    let d_v = cache.s_k.matmul_tn(&d_v_a)?;
    let d_k_a = softmax_rows_backward(&cache.s_k, &d_s_k)?;

    let d_q = d_q_a.matmul(&cache.agent)?;
    let mut d_agent = d_q_a.matmul_tn(&cache.q)?;
    d_agent.add_scaled(&d_k_a.matmul(&cache.k)?, T::one())?;
    let d_k = d_k_a.matmul_tn(&cache.agent)?;

    Ok(AttentionGrads {
        d_q,
        d_k,
        d_v,
        d_agent: Some(d_agent),
        d_w_denoise: None,
    })
}
