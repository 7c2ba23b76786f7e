//! Nyström approximation of dense self-attention: landmark rows built from
//! contiguous segment means stand in for the full score matrix, stitched
//! together through an iteratively approximated pseudo-inverse.

use super::agent::{segment_mean_pool, segment_mean_unpool};
use super::{AttentionConfig, AttentionGrads};
use crate::error::{Error, Result};
use crate::numerics::{real, softmax_rows, softmax_rows_backward, Matrix, Scalar};

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Landmark matrices Q̃ and K̃: rows partitioned into `m` contiguous
/// segments (zero-padded at the tail), each landmark the mean of its
/// segment.
pub fn nystrom_landmarks<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    m: usize,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if m > q.rows() {
        return Err(Error::Config(format!(
            "landmark count {m} exceeds token count {}",
            q.rows()
        )));
    }
    Ok((segment_mean_pool(q, m)?, segment_mean_pool(k, m)?))
}

pub struct PinvCache<T> {
    input: Matrix<T>,
    /// Iterate entering each refinement step; `iterates[0]` is Z₀.
    iterates: Vec<Matrix<T>>,
    inv_norm: T,
    argmax_row: usize,
    argmax_col: usize,
}

/// Iterative Moore–Penrose approximation of a square row-stochastic score
/// matrix, initialized at Z₀ = S̃ᵀ/(max row sum · max col sum).
pub fn pseudo_inverse_iter<T: Scalar>(s: &Matrix<T>, iters: usize) -> Result<Matrix<T>> {
    pseudo_inverse_cached(s, iters).map(|(z, _)| z)
}

pub fn pseudo_inverse_cached<T: Scalar>(
    s: &Matrix<T>,
    iters: usize,
) -> Result<(Matrix<T>, PinvCache<T>)> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::shape("pseudo_inverse_iter", s.shape(), (n, n)));
    }
    if iters == 0 {
        return Err(Error::Config(
            "pseudo-inverse needs at least 1 iteration".into(),
        ));
    }
    let (row_norm, argmax_row) = max_abs_row_sum(s);
    let (col_norm, argmax_col) = max_abs_col_sum(s);
    if row_norm == T::zero() || col_norm == T::zero() {
        return Err(Error::Numeric(
            "pseudo_inverse_iter: zero matrix has no scaled initializer".into(),
        ));
    }
    let inv_norm = T::one() / (row_norm * col_norm);
    let mut z = s.transpose().scale(inv_norm);
    let mut iterates = Vec::with_capacity(iters);
    let identity = Matrix::<T>::identity(n);
    let quarter = real::<T>(0.25);
    for _ in 0..iters {
        iterates.push(z.clone());
        let (t3, _, _, _) = refinement_factors(s, &z, &identity)?;
        z = z.matmul(&t3)?.scale(quarter);
        if z.max_abs().to_f64().unwrap() > DIVERGENCE_LIMIT || !z.is_finite() {
            return Err(Error::Numeric(
                "pseudo_inverse_iter: iteration diverged".into(),
            ));
        }
    }
    Ok((
        z,
        PinvCache {
            input: s.clone(),
            iterates,
            inv_norm,
            argmax_row,
            argmax_col,
        },
    ))
}

/// Factors (T3, T2, T1, P) of one refinement step
/// Z' = ¼·Z·(13I − P·(15I − P·(7I − P))) with P = S·Z.
type RefinementFactors<T> = (Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>);

fn refinement_factors<T: Scalar>(
    s: &Matrix<T>,
    z: &Matrix<T>,
    identity: &Matrix<T>,
) -> Result<RefinementFactors<T>> {
    let seven = real::<T>(7.0);
    let fifteen = real::<T>(15.0);
    let thirteen = real::<T>(13.0);
    let p = s.matmul(z)?;
    let t1 = identity.scale(seven).sub(&p)?;
    let t2 = identity.scale(fifteen).sub(&p.matmul(&t1)?)?;
    let t3 = identity.scale(thirteen).sub(&p.matmul(&t2)?)?;
    Ok((t3, t2, t1, p))
}

/// Backward through the pseudo-inverse iteration, including the norm-scaled
/// transpose initializer (subgradients at the argmax row/column).
pub fn pseudo_inverse_backward<T: Scalar>(
    cache: &PinvCache<T>,
    d_z_final: &Matrix<T>,
) -> Result<Matrix<T>> {
    let s = &cache.input;
    let n = s.rows();
    let identity = Matrix::<T>::identity(n);
    let quarter = real::<T>(0.25);
    let mut d_z = d_z_final.clone();
    let mut d_s = Matrix::zeros(n, n);

    for z in cache.iterates.iter().rev() {
        let (t3, t2, t1, p) = refinement_factors(s, z, &identity)?;
        let _ = t1;
        let d_t3 = z.matmul_tn(&d_z)?.scale(quarter);
        let mut d_z_new = d_z.matmul_nt(&t3)?.scale(quarter);
        let mut d_p = d_t3.matmul_nt(&t2)?.scale(-T::one());
        let d_t2 = p.matmul_tn(&d_t3)?.scale(-T::one());
        d_p.add_scaled(&d_t2.matmul_nt(&t1)?, -T::one())?;
        let d_t1 = p.matmul_tn(&d_t2)?.scale(-T::one());
        d_p.add_scaled(&d_t1, -T::one())?;
        d_s.add_scaled(&d_p.matmul_nt(z)?, T::one())?;
        d_z_new.add_scaled(&s.matmul_tn(&d_p)?, T::one())?;
        d_z = d_z_new;
    }

    // Z₀ = Sᵀ·inv_norm with inv_norm = 1/(r·c)
    d_s.add_scaled(&d_z.transpose(), cache.inv_norm)?;
    let mut d_inv_norm = T::zero();
    for i in 0..n {
        for j in 0..n {
            d_inv_norm = d_inv_norm + d_z.at(i, j) * s.at(j, i);
        }
    }
    let (row_norm, _) = max_abs_row_sum(s);
    let (col_norm, _) = max_abs_col_sum(s);
    // d(1/(r·c)) = -inv_norm/r · dr - inv_norm/c · dc
    let d_r = -d_inv_norm * cache.inv_norm / row_norm;
    let d_c = -d_inv_norm * cache.inv_norm / col_norm;
    for j in 0..n {
        let v = s.at(cache.argmax_row, j);
        d_s.set(
            cache.argmax_row,
            j,
            d_s.at(cache.argmax_row, j) + d_r * v.signum(),
        );
    }
    for i in 0..n {
        let v = s.at(i, cache.argmax_col);
        d_s.set(
            i,
            cache.argmax_col,
            d_s.at(i, cache.argmax_col) + d_c * v.signum(),
        );
    }
    Ok(d_s)
}

fn max_abs_row_sum<T: Scalar>(m: &Matrix<T>) -> (T, usize) {
    let mut best = T::neg_infinity();
    let mut idx = 0;
    for r in 0..m.rows() {
        let s: T = m.row(r).iter().map(|v| v.abs()).sum();
        if s > best {
            best = s;
            idx = r;
        }
    }
    (best, idx)
}

fn max_abs_col_sum<T: Scalar>(m: &Matrix<T>) -> (T, usize) {
    let mut best = T::neg_infinity();
    let mut idx = 0;
    for c in 0..m.cols() {
        let mut s = T::zero();
        for r in 0..m.rows() {
            s = s + m.at(r, c).abs();
        }
        if s > best {
            best = s;
            idx = c;
        }
    }
    (best, idx)
}

pub struct NystromCache<T> {
    /// softmax(Q·K̃ᵀ/√d), (N+1)×m.
    pub f_map: Matrix<T>,
    /// softmax(Q̃·Kᵀ/√d), m×(N+1).
    pub b_map: Matrix<T>,
    /// softmax(Q̃·K̃ᵀ/√d), m×m.
    pub a_map: Matrix<T>,
    pinv: PinvCache<T>,
    z: Matrix<T>,
    bv: Matrix<T>,
    zbv: Matrix<T>,
    q_l: Matrix<T>,
    k_l: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
}

impl<T: Scalar> NystromCache<T> {
    /// Class-token row of the assembled approximate score matrix.
    pub fn score_row0(&self) -> Result<Vec<T>> {
        let f0 = Matrix::new(1, self.f_map.cols(), self.f_map.row(0).to_vec())?;
        let row = f0.matmul(&self.z)?.matmul(&self.b_map)?;
        Ok(row.row(0).to_vec())
    }
}

/// Ŝ·V with Ŝ = softmax(Q·K̃ᵀ/√d)·Z*·softmax(Q̃·Kᵀ/√d). The landmark count
/// is clamped to the token count, so short bags degrade to length-1 segments.
pub fn nystrom_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<T>, NystromCache<T>)> {
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::shape("nystrom_attention", q.shape(), k.shape()));
    }
    let m = cfg.landmark_count.min(q.rows());
    let (q_l, k_l) = nystrom_landmarks(q, k, m)?;
    let scale = real::<T>(1.0 / (q.cols() as f64).sqrt());
    let f_map = softmax_rows(&q.matmul_nt(&k_l)?.scale(scale));
    let b_map = softmax_rows(&q_l.matmul_nt(k)?.scale(scale));
    let a_map = softmax_rows(&q_l.matmul_nt(&k_l)?.scale(scale));
    let (z, pinv) = pseudo_inverse_cached(&a_map, cfg.nystrom_iters)?;
    let bv = b_map.matmul(v)?;
    let zbv = z.matmul(&bv)?;
    let out = f_map.matmul(&zbv)?;
    Ok((
        out,
        NystromCache {
            f_map,
            b_map,
            a_map,
            pinv,
            z,
            bv,
            zbv,
            q_l,
            k_l,
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
        },
    ))
}

/// Forward-only convenience wrapper.
pub fn nystrom_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
) -> Result<Matrix<T>> {
    nystrom_forward(q, k, v, cfg).map(|(out, _)| out)
}

pub fn nystrom_backward<T: Scalar>(
    cache: &NystromCache<T>,
    d_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    let scale = real::<T>(1.0 / (cache.q.cols() as f64).sqrt());
    let rows = cache.q.rows();

    let d_f = d_out.matmul_nt(&cache.zbv)?;
    let d_zbv = cache.f_map.matmul_tn(d_out)?;
    let d_z = d_zbv.matmul_nt(&cache.bv)?;
    let d_bv = cache.z.matmul_tn(&d_zbv)?;
    let d_b = d_bv.matmul_nt(&cache.v)?;
    let d_v = cache.b_map.matmul_tn(&d_bv)?;
    let d_a_map = pseudo_inverse_backward(&cache.pinv, &d_z)?;

    let d_logits_f = softmax_rows_backward(&cache.f_map, &d_f)?.scale(scale);
    let mut d_q = d_logits_f.matmul(&cache.k_l)?;
    let mut d_k_l = d_logits_f.matmul_tn(&cache.q)?;

    let d_logits_b = softmax_rows_backward(&cache.b_map, &d_b)?.scale(scale);
    let mut d_q_l = d_logits_b.matmul(&cache.k)?;
    let mut d_k = d_logits_b.matmul_tn(&cache.q_l)?;

    let d_logits_a = softmax_rows_backward(&cache.a_map, &d_a_map)?.scale(scale);
    d_q_l.add_scaled(&d_logits_a.matmul(&cache.k_l)?, T::one())?;
    d_k_l.add_scaled(&d_logits_a.matmul_tn(&cache.q_l)?, T::one())?;

    d_q.add_scaled(&segment_mean_unpool(&d_q_l, rows)?, T::one())?;
    d_k.add_scaled(&segment_mean_unpool(&d_k_l, rows)?, T::one())?;

    Ok(AttentionGrads {
        d_q,
        d_k,
        d_v,
        d_agent: None,
        d_w_denoise: None,
    })
}
