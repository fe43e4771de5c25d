//! Central finite-difference gradient checking (test support).
//!
//! The oracle evaluates the forward pass only, so it stays independent of
//! the backward rules it validates. Checks run at `f64`; 32-bit rounding
//! would swamp the `1e-4` comparison.

use crate::error::Result;
use crate::tensor::Tensor;

/// `|a - b| / max(|a|, |b|, floor)`. The absolute floor keeps the ratio
/// meaningful when both gradients are near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Settings for a finite-difference sweep.
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Maximum allowed relative error per coordinate.
    pub tol: f64,
    /// Absolute floor inside [`relative_error`].
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { h: 1e-5, tol: 1e-4, floor: 1e-6 }
    }
}

impl GradCheck {
    /// Compare backward-pass gradients against central differences for a
    /// scalar-valued function of the given leaves.
    ///
    /// `build` must be a deterministic pure function of the leaf values
    /// (fix dropout masks with [`Tensor::apply_dropout_mask`]).
    pub fn check(
        &self,
        leaves: &[(Vec<usize>, Vec<f64>)],
        build: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    ) -> std::result::Result<(), String> {
        // Reverse-mode gradients.
        let params: Vec<Tensor<f64>> = leaves
            .iter()
            .map(|(shape, data)| Tensor::param(shape.clone(), data.clone()).expect("leaf"))
            .collect();
        let loss = build(&params).map_err(|e| format!("forward failed: {e}"))?;
        if !loss.is_scalar() {
            return Err(format!("loss must be scalar, got shape {:?}", loss.shape()));
        }
        loss.backward().map_err(|e| format!("backward failed: {e}"))?;
        let ad_grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();

        // Forward-only central differences.
        let eval = |data: &[Vec<f64>]| -> std::result::Result<f64, String> {
            let ts: Vec<Tensor<f64>> = leaves
                .iter()
                .zip(data)
                .map(|((shape, _), d)| Tensor::from_vec(shape.clone(), d.clone()).expect("leaf"))
                .collect();
            let out = build(&ts).map_err(|e| format!("forward failed: {e}"))?;
            out.item().map_err(|e| format!("non-scalar loss: {e}"))
        };

        let mut values: Vec<Vec<f64>> = leaves.iter().map(|(_, d)| d.clone()).collect();
        for li in 0..leaves.len() {
            for ci in 0..values[li].len() {
                let orig = values[li][ci];
                values[li][ci] = orig + self.h;
                let f_plus = eval(&values)?;
                values[li][ci] = orig - self.h;
                let f_minus = eval(&values)?;
                values[li][ci] = orig;
                let fd = (f_plus - f_minus) / (2.0 * self.h);
                let ad = ad_grads[li][ci];
                let rel = relative_error(ad, fd, self.floor);
                if rel > self.tol {
                    return Err(format!(
                        "gradient mismatch at leaf {li} coord {ci}: ad={ad:.9e} fd={fd:.9e} rel={rel:.3e}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Uniform random values in `[-1, 1]`, the standard input range for the
/// finite-difference suites.
pub fn random_values(rng: &mut crate::rng::SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn catches_a_wrong_gradient() {
        // detach() kills the gradient, so AD reports 0 while FD sees 2x.
        let check = GradCheck::default();
        let leaves = vec![(vec![3], vec![0.5, -0.25, 0.75])];
        let err = check.check(&leaves, &|ps| Ok(ps[0].detach().mul(&ps[0].detach())?.sum_all()));
        assert!(err.is_err());
    }

    #[test]
    fn passes_on_simple_composition() {
        let mut rng = SplitMix64::new(5);
        let check = GradCheck::default();
        let leaves = vec![
            (vec![2, 3], random_values(&mut rng, 6)),
            (vec![3, 2], random_values(&mut rng, 6)),
        ];
        check
            .check(&leaves, &|ps| Ok(ps[0].matmul(&ps[1])?.relu().sum_all()))
            .unwrap();
    }
}
