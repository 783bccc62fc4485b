//! Minimal differentiable-numerics substrate: dense f64 vectors, a small
//! multilayer perceptron with reverse-mode gradient accumulation, a
//! bias-corrected adaptive-moment updater, and a central finite-difference
//! gradient oracle used to cross-check every analytic gradient in the crate.

mod adam;
mod mlp;

pub use adam::{adam_step, AdamParams, AdamState};
pub use mlp::{Mlp, MlpTrace};

use crate::{Error, Result};

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Checks that every entry is finite, returning a dimension-tagged error
/// context otherwise.
pub fn ensure_finite(values: &[f64], context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("non-finite value in {context}")))
    }
}

/// Flat gradient accumulator matching a parameter vector's length.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    grad: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros(len: usize) -> Self {
        Self {
            grad: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grad
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn reset(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `scale * other` into the buffer.
    pub fn accumulate_scaled(&mut self, other: &[f64], scale: f64) -> Result<()> {
        if other.len() != self.grad.len() {
            return Err(Error::DimensionMismatch {
                context: "GradientBuffer::accumulate_scaled",
                expected: self.grad.len(),
                got: other.len(),
            });
        }
        for (g, o) in self.grad.iter_mut().zip(other) {
            *g += scale * o;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grad {
            *g *= factor;
        }
    }

    /// Global (Euclidean) norm of the accumulated gradient.
    pub fn global_norm(&self) -> f64 {
        norm(&self.grad)
    }

    /// Rescales the gradient so its global norm does not exceed `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Central finite-difference gradient estimate of a scalar function,
/// one `(f(p+h e_i) - f(p-h e_i)) / 2h` pair per coordinate.
///
/// This is the independent oracle the analytic backward passes are checked
/// against; it never shares code with them.
pub fn fd_gradient<F>(mut f: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_quadratic() {
        // f(p) = p . p at (1, 2) has gradient (2, 4).
        let grad = fd_gradient(|p| dot(p, p), &[1.0, 2.0], 1e-5);
        assert!((grad[0] - 2.0).abs() < 1e-6);
        assert!((grad[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn fd_gradient_of_constant_is_zero() {
        let grad = fd_gradient(|_| 3.5, &[0.1, -0.2, 7.0], 1e-5);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_buffer_clip() {
        let mut buf = GradientBuffer::zeros(2);
        buf.accumulate_scaled(&[3.0, 4.0], 1.0).unwrap();
        assert_eq!(buf.global_norm(), 5.0);
        let pre = buf.clip_global_norm(1.0);
        assert_eq!(pre, 5.0);
        assert!((buf.global_norm() - 1.0).abs() < 1e-12);
        // Already within bound: untouched.
        let pre2 = buf.clip_global_norm(10.0);
        assert!((pre2 - 1.0).abs() < 1e-12);
        assert!((buf.as_slice()[0] - 0.6).abs() < 1e-12);
        buf.reset();
        assert_eq!(buf.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_buffer_rejects_length_mismatch() {
        let mut buf = GradientBuffer::zeros(3);
        assert!(buf.accumulate_scaled(&[1.0, 2.0], 1.0).is_err());
    }
}
