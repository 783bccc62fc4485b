//! Small fully-connected network with tanh hidden activations, an identity
//! output layer, and a hand-rolled reverse-mode backward pass.
//!
//! Parameters live in one flat `Vec<f64>` so the optimizer, checkpointing,
//! and finite-difference checks all see a single vector. Layout, per layer
//! `l` mapping `in -> out`:
//!
//! ```text
//! [ weights row-major (out x in) | biases (out) ]
//! ```
//!
//! concatenated over layers in order.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations recorded during a traced forward pass.
/// `activations[0]` is the network input, `activations[L]` the output.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    activations: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has layers")
    }
}

impl Mlp {
    /// Total parameter count for a layer-size stack: sum of (in+1)*out.
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Seeded init, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| Error::Config(format!("init distribution: {e}")))?;
            for _ in 0..(fan_in + 1) * fan_out {
                params.push(dist.sample(&mut rng));
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
        })
    }

    /// All-zero parameters (useful for tests and as a degenerate baseline).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        Ok(Self {
            params: vec![0.0; Self::param_count(layer_sizes)],
            layer_sizes: layer_sizes.to_vec(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::set_params",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Forward pass: tanh on hidden layers, identity on the output layer.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(input)?.0)
    }

    /// Forward pass that also records per-layer activations for `backward`.
    pub fn forward_traced(&self, input: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::forward",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.layer_sizes.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;

            let prev = activations.last().unwrap();
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let mut z = biases[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (wi, xi) in row.iter().zip(prev.iter()) {
                    z += wi * xi;
                }
                next[o] = if l + 1 < n_layers { z.tanh() } else { z };
            }
            activations.push(next);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, MlpTrace { activations }))
    }

    /// Reverse-mode pass for the scalar `cotangent . output`.
    ///
    /// Accumulates the parameter gradient into `param_grad` (adds, does not
    /// overwrite) and returns the input cotangent.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        output_cotangent: &[f64],
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if output_cotangent.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::backward cotangent",
                expected: self.output_dim(),
                got: output_cotangent.len(),
            });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::backward param_grad",
                expected: self.params.len(),
                got: param_grad.len(),
            });
        }

        let n_layers = self.layer_sizes.len() - 1;
        // Parameter offsets per layer, front to back.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += (w[0] + 1) * w[1];
        }

        let mut upstream = output_cotangent.to_vec();
        for l in (0..n_layers).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let base = offsets[l];
            let weights = &self.params[base..base + n_in * n_out];
            let layer_in = &trace.activations[l];
            let layer_out = &trace.activations[l + 1];

            let mut d_input = vec![0.0; n_in];
            for o in 0..n_out {
                // Identity on the final layer, tanh' = 1 - y^2 elsewhere.
                let dz = if l + 1 < n_layers {
                    upstream[o] * (1.0 - layer_out[o] * layer_out[o])
                } else {
                    upstream[o]
                };
                param_grad[base + n_in * n_out + o] += dz;
                let row = o * n_in;
                for i in 0..n_in {
                    param_grad[base + row + i] += dz * layer_in[i];
                    d_input[i] += weights[row + i] * dz;
                }
            }
            upstream = d_input;
        }
        Ok(upstream)
    }

    /// Convenience: forward + backward from raw input in one call.
    /// Returns (parameter gradient, input cotangent).
    pub fn backward_from_input(
        &self,
        input: &[f64],
        output_cotangent: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, trace) = self.forward_traced(input)?;
        let mut param_grad = vec![0.0; self.params.len()];
        let input_grad = self.backward(&trace, output_cotangent, &mut param_grad)?;
        Ok((param_grad, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::{dot, fd_gradient};

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        let out = net.forward(&[0.7, -1.2, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        // Single layer 2 -> 2, weights = I, biases = 0: y = x.
        let mut net = Mlp::zeros(&[2, 2]).unwrap();
        net.params_mut()[0] = 1.0; // w[0][0]
        net.params_mut()[3] = 1.0; // w[1][1]
        let out = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(crate::Error::DimensionMismatch { .. })
        ));
    }

    /// Straight-line re-evaluation of the 2-4-2 forward pass, reading the
    /// documented flat layout directly. Independent of `forward`'s loops.
    fn reference_forward_242(params: &[f64], x: [f64; 2]) -> [f64; 2] {
        assert_eq!(params.len(), (2 + 1) * 4 + (4 + 1) * 2);
        let mut h = [0.0f64; 4];
        for o in 0..4 {
            let z = params[o * 2] * x[0] + params[o * 2 + 1] * x[1] + params[8 + o];
            h[o] = z.tanh();
        }
        let base = 12;
        let mut y = [0.0f64; 2];
        for o in 0..2 {
            y[o] = params[base + o * 4] * h[0]
                + params[base + o * 4 + 1] * h[1]
                + params[base + o * 4 + 2] * h[2]
                + params[base + o * 4 + 3] * h[3]
                + params[base + 8 + o];
        }
        y
    }

    #[test]
    fn seeded_forward_matches_straight_line_reference() {
        let net = Mlp::new(&[2, 4, 2], 42).unwrap();
        let input = [0.3, -0.1];
        let got = net.forward(&input).unwrap();
        let want = reference_forward_242(net.params(), input);
        assert!((got[0] - want[0]).abs() < 1e-15, "{got:?} vs {want:?}");
        assert!((got[1] - want[1]).abs() < 1e-15, "{got:?} vs {want:?}");
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let net = Mlp::new(&[2, 4, 2], 1).unwrap();
        let (pg, ig) = net.backward_from_input(&[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(ig.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        // y = Wx, cotangent g: d/dW (g.y) = g x^T, d/dx = W^T g.
        let mut net = Mlp::zeros(&[2, 2]).unwrap();
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]).unwrap();
        let x = [0.5, -1.5];
        let g = [2.0, -1.0];
        let (pg, ig) = net.backward_from_input(&x, &g).unwrap();
        // Weights row-major: dW = [g0*x0, g0*x1, g1*x0, g1*x1].
        assert_eq!(&pg[..4], &[1.0, -3.0, -0.5, 1.5]);
        // Biases: dB = g.
        assert_eq!(&pg[4..], &[2.0, -1.0]);
        // Input: W^T g = [1*2 + 3*(-1), 2*2 + 4*(-1)] = [-1, 0].
        assert_eq!(ig, vec![-1.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = Mlp::new(&[2, 4, 2], 7).unwrap();
        let input = vec![0.3, -0.1];
        let cot = vec![0.7, -1.3];
        let (analytic, _) = net.backward_from_input(&input, &cot).unwrap();

        let layer_sizes = net.layer_sizes().to_vec();
        let numeric = fd_gradient(
            |p| {
                let mut probe = Mlp::zeros(&layer_sizes).unwrap();
                probe.set_params(p).unwrap();
                dot(&cot, &probe.forward(&input).unwrap())
            },
            net.params(),
            1e-5,
        );

        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            if a.abs() > 1e-8 {
                let rel = (a - n).abs() / a.abs().max(n.abs());
                assert!(rel < 1e-5, "param {i}: analytic {a}, numeric {n}");
            }
        }
    }

    #[test]
    fn gradient_correctness_across_seeds() {
        // Random seeded networks (<= 200 params): rel error < 1e-4 on every
        // coordinate with |g| > 1e-8 against the fd oracle at step 1e-5.
        for seed in [0u64, 3, 11, 19] {
            let sizes = [3usize, 6, 4, 2];
            assert!(Mlp::param_count(&sizes) <= 200);
            let net = Mlp::new(&sizes, seed).unwrap();
            let input = vec![0.2, -0.4, 0.9];
            let cot = vec![1.0, 0.5];
            let (analytic, input_grad) = net.backward_from_input(&input, &cot).unwrap();

            let numeric = fd_gradient(
                |p| {
                    let mut probe = Mlp::zeros(&sizes).unwrap();
                    probe.set_params(p).unwrap();
                    dot(&cot, &probe.forward(&input).unwrap())
                },
                net.params(),
                1e-5,
            );
            for (&a, &n) in analytic.iter().zip(&numeric) {
                if a.abs() > 1e-8 {
                    assert!((a - n).abs() / a.abs().max(n.abs()) < 1e-4);
                }
            }

            let numeric_in = fd_gradient(
                |x| dot(&cot, &net.forward(x).unwrap()),
                &input,
                1e-5,
            );
            for (&a, &n) in input_grad.iter().zip(&numeric_in) {
                if a.abs() > 1e-8 {
                    assert!((a - n).abs() / a.abs().max(n.abs()) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn backward_is_linear_in_cotangent() {
        let net = Mlp::new(&[2, 4, 2], 5).unwrap();
        let input = vec![0.1, 0.2];
        let g = vec![0.3, -0.9];
        let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let (pg, ig) = net.backward_from_input(&input, &g).unwrap();
        let (pg2, ig2) = net.backward_from_input(&input, &g2).unwrap();
        for (&a, &b) in pg.iter().zip(&pg2) {
            assert!((2.0 * a - b).abs() <= 1e-12);
        }
        for (&a, &b) in ig.iter().zip(&ig2) {
            assert!((2.0 * a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = Mlp::new(&[4, 8, 3], 123).unwrap();
        let b = Mlp::new(&[4, 8, 3], 123).unwrap();
        assert_eq!(a.params(), b.params());
        let input = vec![0.1, -0.2, 0.3, -0.4];
        assert_eq!(a.forward(&input).unwrap(), b.forward(&input).unwrap());
        let cot = vec![1.0, 2.0, 3.0];
        let ga = a.backward_from_input(&input, &cot).unwrap();
        let gb = b.backward_from_input(&input, &cot).unwrap();
        assert_eq!(ga.0, gb.0);
        assert_eq!(ga.1, gb.1);
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(Mlp::param_count(&[2, 4, 2]), (2 + 1) * 4 + (4 + 1) * 2);
        let net = Mlp::new(&[2, 4, 2], 0).unwrap();
        assert_eq!(net.params().len(), 22);
    }
}
