use serde::{Deserialize, Serialize};

use super::matrix::{real, Matrix, Scalar};
use super::rng::Rng;
use crate::error::{Error, Result};

/// Adam hyperparameters. The defaults beyond lr/weight_decay are the usual
/// beta1=0.9, beta2=0.999, eps=1e-8 and are echoed into every run config.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A trainable matrix bundled with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct ParamTensor<T> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    m: Matrix<T>,
    v: Matrix<T>,
    step_count: u64,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let (r, c) = value.shape();
        ParamTensor {
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamTensor::new(Matrix::zeros(rows, cols))
    }

    /// Gaussian init with the given standard deviation.
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| real::<T>(rng.normal() * std))
            .collect();
        ParamTensor::new(Matrix::new(rows, cols, data).expect("sized data"))
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// One Adam update. Weight decay is folded into the gradient before the
    /// moment update (classic L2, not the decoupled form); the gradient is
    /// cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let beta1 = real::<T>(cfg.beta1);
        let beta2 = real::<T>(cfg.beta2);
        let lr = real::<T>(cfg.lr);
        let eps = real::<T>(cfg.eps);
        let wd = real::<T>(cfg.weight_decay);
        let one = T::one();
        let bc1 = one - beta1.powi(t);
        let bc2 = one - beta2.powi(t);

        for i in 0..self.value.data().len() {
            let g = self.grad.data()[i] + wd * self.value.data()[i];
            let m = beta1 * self.m.data()[i] + (one - beta1) * g;
            let v = beta2 * self.v.data()[i] + (one - beta2) * g * g;
            self.m.data_mut()[i] = m;
            self.v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            self.value.data_mut()[i] = self.value.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        self.zero_grad();
        self.value.ensure_finite("adam_step")
    }
}

/// Central-difference gradient of `loss` at `at`: (f(x+h) − f(x−h)) / 2h per
/// entry. This is the independent oracle every analytic backward is checked
/// against; run it at f64.
pub fn finite_diff_grad<T: Scalar>(
    mut loss: impl FnMut(&Matrix<T>) -> Result<T>,
    at: &Matrix<T>,
    h: f64,
) -> Result<Matrix<T>> {
    if h <= 0.0 {
        return Err(Error::Config(format!(
            "step size must be positive, got {h}"
        )));
    }
    let step = real::<T>(h);
    let two = real::<T>(2.0);
    let mut point = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.data().len() {
        let orig = point.data()[i];
        point.data_mut()[i] = orig + step;
        let up = loss(&point)?;
        point.data_mut()[i] = orig - step;
        let down = loss(&point)?;
        point.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite loss at entry ({}, {})",
                i / at.cols(),
                i % at.cols()
            )));
        }
        grad.data_mut()[i] = (up - down) / (two * step);
    }
    Ok(grad)
}

/// Relative error between two gradients, with a floor so that matching
/// near-zero pairs compare as equal.
pub fn grad_relative_error<T: Scalar>(analytic: &Matrix<T>, numeric: &Matrix<T>) -> f64 {
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let a = a.to_f64().unwrap();
        let n = n.to_f64().unwrap();
        let denom = a.abs().max(n.abs()).max(1e-6);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_grad_zero_decay_is_fixed_point() {
        let mut p = ParamTensor::<f64>::new(
            Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap(),
        );
        let before = p.value.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        p.adam_step(&cfg).unwrap();
        assert_eq!(p.value, before);
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = ParamTensor::<f64>::new(Matrix::from_rows(&[vec![0.0]]).unwrap());
        p.grad.set(0, 0, 1.0);
        let cfg = AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        p.adam_step(&cfg).unwrap();
        // bias correction makes the first update lr * g/(|g| + eps')
        assert!(
            (p.value.at(0, 0) + 0.05).abs() < 1e-6,
            "got {}",
            p.value.at(0, 0)
        );
        assert_eq!(p.grad.at(0, 0), 0.0, "grad must be cleared after the step");
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(x) = x^2 from x = 1: |x| must strictly decrease over 10 steps.
        let mut p = ParamTensor::<f64>::new(Matrix::from_rows(&[vec![1.0]]).unwrap());
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut prev = p.value.at(0, 0).abs();
        for _ in 0..10 {
            let x = p.value.at(0, 0);
            p.grad.set(0, 0, 2.0 * x);
            p.adam_step(&cfg).unwrap();
            let cur = p.value.at(0, 0).abs();
            assert!(cur < prev, "|x| did not decrease: {cur} vs {prev}");
            prev = cur;
        }
    }

    #[test]
    fn adam_rejects_non_positive_lr() {
        let mut p = ParamTensor::<f64>::zeros(1, 1);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(matches!(p.adam_step(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn finite_diff_sum_of_squares() {
        let at = Matrix::from_rows(&[vec![3.0f64]]).unwrap();
        let grad =
            finite_diff_grad(|m| Ok(m.data().iter().map(|v| v * v).sum()), &at, 1e-5).unwrap();
        assert!((grad.at(0, 0) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_loss_is_zero() {
        let at = Matrix::<f64>::zeros(2, 3);
        let grad = finite_diff_grad(|_| Ok(4.2), &at, 1e-5).unwrap();
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_reports_non_finite_loss_entry() {
        let at = Matrix::<f64>::zeros(1, 2);
        let err = finite_diff_grad(|_| Ok(f64::NAN), &at, 1e-5).unwrap_err();
        assert!(err.to_string().contains("(0, 0)"), "err: {err}");
    }
}
