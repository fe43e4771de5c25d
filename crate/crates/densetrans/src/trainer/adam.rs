//! Bias-corrected Adam. Moment buffers are kept at f64 regardless of the
//! parameter dtype so the update arithmetic is identical for f32 and f64
//! models.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Real>(params: &[(String, Tensor<F>)], beta1: f64, beta2: f64, eps: f64) -> Adam {
        let first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let second = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam { beta1, beta2, eps, step: 0, first, second }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Consume accumulated gradients and update parameters in place.
    /// Parameters without a gradient this step are treated as zero-grad.
    pub fn step<F: Real>(&mut self, params: &[(String, Tensor<F>)], lr: f64) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (name, tensor)) in params.iter().enumerate() {
            let grad = tensor.take_grad();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            if let Some(g) = &grad {
                for gi in g {
                    if !gi.is_finite() {
                        return Err(Error::NonFiniteGradient(name.clone()));
                    }
                }
            }
            tensor.update_data(|data| {
                for (j, x) in data.iter_mut().enumerate() {
                    let g = grad.as_ref().map_or(0.0, |g| g[j].to_f64c());
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    let next = x.to_f64c() - lr * m_hat / (v_hat.sqrt() + self.eps);
                    *x = F::from_f64c(next);
                }
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: Vec<f64>) -> (String, Tensor<f64>) {
        ("p".to_string(), Tensor::param(vec![v.len()], v).unwrap())
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let p = param(vec![1.0, -2.0]);
        let params = vec![p];
        let mut adam = Adam::new(&params, 0.9, 0.98, 1e-8);
        adam.step(&params, 0.1).unwrap();
        assert_eq!(params[0].1.to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn single_step_matches_hand_formula() {
        // g = 1, lr = 0.1: m = 0.1, v = 0.02, mhat = 1, vhat = 1,
        // delta = 0.1 * 1 / (1 + eps).
        let params = vec![param(vec![0.5])];
        let mut adam = Adam::new(&params, 0.9, 0.98, 1e-8);
        params[0].1.accum_grad(&[1.0]);
        adam.step(&params, 0.1).unwrap();
        let expect = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].1.to_vec()[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn two_identical_gradients_match_hand_formula() {
        let (b1, b2, eps, lr, g) = (0.9, 0.98, 1e-8, 0.1, 0.7);
        let params = vec![param(vec![0.0])];
        let mut adam = Adam::new(&params, b1, b2, eps);
        params[0].1.accum_grad(&[g]);
        adam.step(&params, lr).unwrap();
        params[0].1.accum_grad(&[g]);
        adam.step(&params, lr).unwrap();

        // Hand evaluation of two bias-corrected updates.
        let mut x = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((params[0].1.to_vec()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn lr_zero_keeps_params_bit_identical() {
        let before = vec![0.25, -1.5, 3.0];
        let params = vec![param(before.clone())];
        let mut adam = Adam::new(&params, 0.9, 0.98, 1e-8);
        params[0].1.accum_grad(&[0.3, -0.7, 0.1]);
        adam.step(&params, 0.0).unwrap();
        assert_eq!(params[0].1.to_vec(), before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let params = vec![("embedding".to_string(), Tensor::<f64>::param(vec![1], vec![0.0]).unwrap())];
        let mut adam = Adam::new(&params, 0.9, 0.98, 1e-8);
        params[0].1.accum_grad(&[f64::NAN]);
        let err = adam.step(&params, 0.1).unwrap_err();
        assert!(err.to_string().contains("embedding"), "{err}");
    }
}
