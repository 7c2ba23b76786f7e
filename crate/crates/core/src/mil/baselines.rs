//! Non-attention baselines: mean pooling, max pooling, and the gated
//! attention aggregator.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamTensor, Rng, Scalar};

/// Hidden width of the gated attention scorer.
pub const ABMIL_HIDDEN: usize = 128;

/// Columnwise mean of the instance features.
pub fn mean_pool_aggregate<T: Scalar>(features: &Matrix<T>) -> Result<Vec<T>> {
    if features.rows() == 0 {
        return Err(Error::Domain("mean_pool_aggregate: empty bag".into()));
    }
    Ok(features.col_mean().row(0).to_vec())
}

/// Columnwise max of the instance features.
pub fn max_pool_aggregate<T: Scalar>(features: &Matrix<T>) -> Result<Vec<T>> {
    if features.rows() == 0 {
        return Err(Error::Domain("max_pool_aggregate: empty bag".into()));
    }
    let mut out = features.row(0).to_vec();
    for r in 1..features.rows() {
        for (o, &v) in out.iter_mut().zip(features.row(r)) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Gated attention parameters: tanh and sigmoid gates of width
/// [`ABMIL_HIDDEN`] feeding a scalar score per instance.
#[derive(Clone, Debug)]
pub struct AbmilParams<T> {
    pub gate_v: ParamTensor<T>,
    pub gate_u: ParamTensor<T>,
    pub gate_w: ParamTensor<T>,
    pub head: ParamTensor<T>,
}

impl<T: Scalar> AbmilParams<T> {
    pub fn init(d: usize, classes: usize, hidden: usize, rng: &mut Rng) -> Self {
        let std_in = 1.0 / (d as f64).sqrt();
        let std_hidden = 1.0 / (hidden as f64).sqrt();
        AbmilParams {
            gate_v: ParamTensor::gaussian(hidden, d, std_in, rng),
            gate_u: ParamTensor::gaussian(hidden, d, std_in, rng),
            gate_w: ParamTensor::gaussian(1, hidden, std_hidden, rng),
            head: ParamTensor::gaussian(classes, d, std_in, rng),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &ParamTensor<T>)> {
        vec![
            ("gate_v", &self.gate_v),
            ("gate_u", &self.gate_u),
            ("gate_w", &self.gate_w),
            ("head", &self.head),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor<T>)> {
        vec![
            ("gate_v", &mut self.gate_v),
            ("gate_u", &mut self.gate_u),
            ("gate_w", &mut self.gate_w),
            ("head", &mut self.head),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> AbmilParams<U> {
        AbmilParams {
            gate_v: ParamTensor::new(self.gate_v.value.cast()),
            gate_u: ParamTensor::new(self.gate_u.value.cast()),
            gate_w: ParamTensor::new(self.gate_w.value.cast()),
            head: ParamTensor::new(self.head.value.cast()),
        }
    }
}

pub struct AbmilCache<T> {
    pub weights: Vec<T>,
    tanh_gate: Matrix<T>,
    sigm_gate: Matrix<T>,
    features: Matrix<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Gated attention pooling: a_i = softmax_i(w·(tanh(V h_i) ∘ σ(U h_i))),
/// G = Σ a_i h_i.
pub fn abmil_forward<T: Scalar>(
    features: &Matrix<T>,
    params: &AbmilParams<T>,
) -> Result<(Vec<T>, AbmilCache<T>)> {
    if features.rows() == 0 {
        return Err(Error::Domain("abmil_aggregate: empty bag".into()));
    }
    let tanh_gate = features.matmul_nt(&params.gate_v.value)?.map(|x| x.tanh());
    let sigm_gate = features.matmul_nt(&params.gate_u.value)?.map(sigmoid);
    let gated = tanh_gate.hadamard(&sigm_gate)?;
    let scores = gated.matmul_nt(&params.gate_w.value)?; // N×1
    let max = scores
        .data()
        .iter()
        .fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut weights: Vec<T> = scores.data().iter().map(|&s| (s - max).exp()).collect();
    let total: T = weights.iter().copied().sum();
    for w in &mut weights {
        *w = *w / total;
    }
    let mut pooled = vec![T::zero(); features.cols()];
    for (i, &w) in weights.iter().enumerate() {
        for (p, &f) in pooled.iter_mut().zip(features.row(i)) {
            *p = *p + w * f;
        }
    }
    Ok((
        pooled,
        AbmilCache {
            weights,
            tanh_gate,
            sigm_gate,
            features: features.clone(),
        },
    ))
}

/// Forward-only view returning the bag representation and the attention
/// weights.
pub fn abmil_aggregate<T: Scalar>(
    features: &Matrix<T>,
    params: &AbmilParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    abmil_forward(features, params).map(|(pooled, cache)| (pooled, cache.weights))
}

/// Backward of `abmil_forward` given the gradient wrt the pooled vector.
pub fn abmil_backward<T: Scalar>(
    cache: &AbmilCache<T>,
    d_pooled: &[T],
    params: &mut AbmilParams<T>,
) -> Result<()> {
    let n = cache.features.rows();
    let one = T::one();
    // d a_i = d_pooled · h_i
    let mut d_weights = vec![T::zero(); n];
    for (i, dw) in d_weights.iter_mut().enumerate() {
        for (&g, &f) in d_pooled.iter().zip(cache.features.row(i)) {
            *dw = *dw + g * f;
        }
    }
    // softmax backward over the weight vector
    let dot: T = cache
        .weights
        .iter()
        .zip(&d_weights)
        .map(|(&w, &d)| w * d)
        .sum();
    let d_scores: Vec<T> = cache
        .weights
        .iter()
        .zip(&d_weights)
        .map(|(&w, &d)| w * (d - dot))
        .collect();

    let d_scores_mat = Matrix::new(n, 1, d_scores)?;
    let gated = cache.tanh_gate.hadamard(&cache.sigm_gate)?;
    params
        .gate_w
        .grad
        .add_scaled(&d_scores_mat.matmul_tn(&gated)?, one)?;
    let d_gated = d_scores_mat.matmul(&params.gate_w.value)?; // N×L
    let d_tanh = d_gated.hadamard(&cache.sigm_gate)?;
    let d_sigm = d_gated.hadamard(&cache.tanh_gate)?;
    let d_z_v = d_tanh.hadamard(&cache.tanh_gate.map(|t| one - t * t))?;
    let d_z_u = d_sigm.hadamard(&cache.sigm_gate.map(|s| s * (one - s)))?;
    params
        .gate_v
        .grad
        .add_scaled(&d_z_v.matmul_tn(&cache.features)?, one)?;
    params
        .gate_u
        .grad
        .add_scaled(&d_z_u.matmul_tn(&cache.features)?, one)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_instance_is_its_own_pool() {
        let f = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(mean_pool_aggregate(&f).unwrap(), vec![1.0, -2.0, 3.0]);
        assert_eq!(max_pool_aggregate(&f).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn pooling_hand_example() {
        let f = Matrix::from_rows(&[vec![1.0, 4.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(mean_pool_aggregate(&f).unwrap(), vec![2.0, 3.0]);
        assert_eq!(max_pool_aggregate(&f).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn pooling_matches_scalar_loop_oracle() {
        let mut rng = Rng::new(41);
        let f = Matrix::new(50, 16, (0..800).map(|_| rng.normal()).collect()).unwrap();
        let mean = mean_pool_aggregate(&f).unwrap();
        let max = max_pool_aggregate(&f).unwrap();
        for c in 0..16 {
            let mut m = 0.0;
            let mut mx = f64::NEG_INFINITY;
            for r in 0..50 {
                m += f.at(r, c);
                mx = mx.max(f.at(r, c));
            }
            assert!((mean[c] - m / 50.0).abs() < 1e-12);
            assert_eq!(max[c], mx);
        }
    }

    #[test]
    fn abmil_identical_instances_get_uniform_weights() {
        let mut rng = Rng::new(42);
        let params = AbmilParams::<f64>::init(4, 2, 8, &mut rng);
        let row = vec![0.5, -1.0, 0.25, 2.0];
        let f = Matrix::new(5, 4, row.repeat(5)).unwrap();
        let (pooled, weights) = abmil_aggregate(&f, &params).unwrap();
        for &w in &weights {
            assert!((w - 0.2).abs() < 1e-12);
        }
        for (p, want) in pooled.iter().zip(&row) {
            assert!((p - want).abs() < 1e-12);
        }
    }

    #[test]
    fn abmil_weights_sum_to_one_and_pool_is_convex() {
        let mut rng = Rng::new(43);
        let params = AbmilParams::<f64>::init(6, 2, 16, &mut rng);
        let f = Matrix::new(9, 6, (0..54).map(|_| rng.normal()).collect()).unwrap();
        let (pooled, weights) = abmil_aggregate(&f, &params).unwrap();
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(weights.iter().all(|&w| w >= 0.0));
        // convexity: pooled must equal the explicit weighted combination
        for (c, p) in pooled.iter().enumerate() {
            let expect: f64 = (0..9).map(|r| weights[r] * f.at(r, c)).sum();
            assert!((p - expect).abs() < 1e-9);
        }
    }
}
