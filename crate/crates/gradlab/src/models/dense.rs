use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

/// Single dense layer `o_j = sum_i w_ij x_i + b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    /// `[n, C]` weight matrix, input index first.
    pub weights: Tensor,
    /// `[C]` bias vector.
    pub bias: Tensor,
}

impl DenseModel {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<DenseModel> {
        if weights.ndim() != 2 || bias.ndim() != 1 || weights.shape()[1] != bias.shape()[0] {
            return Err(Error::ShapeMismatch {
                expected: weights.shape().to_vec(),
                got: bias.shape().to_vec(),
            });
        }
        Ok(DenseModel { weights, bias })
    }

    pub fn zeros(input_len: usize, num_classes: usize) -> DenseModel {
        DenseModel {
            weights: Tensor::zeros(&[input_len, num_classes]),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    /// Uniform init in `(-0.5, 0.5)` for both weights and biases, the
    /// convention used throughout the dense-layer experiments.
    pub fn init_uniform(input_len: usize, num_classes: usize, rng: &mut SeededRng) -> DenseModel {
        DenseModel {
            weights: rng
                .uniform(&[input_len, num_classes], -0.5, 0.5)
                .expect("valid range"),
            bias: rng.uniform(&[num_classes], -0.5, 0.5).expect("valid range"),
        }
    }

    pub fn input_len(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[1]
    }

    pub(crate) fn logits_row(&self, x: &[f64]) -> Vec<f64> {
        let (n, c) = (self.input_len(), self.num_classes());
        debug_assert_eq!(x.len(), n);
        let mut o = self.bias.data().to_vec();
        let w = self.weights.data();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                let row = &w[i * c..(i + 1) * c];
                for j in 0..c {
                    o[j] += xi * row[j];
                }
            }
        }
        o
    }

    /// Logits for a `[B, n]` or `[B, H, W]` input batch.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let flat = flatten_inputs(inputs, self.input_len())?;
        let b = flat.shape()[0];
        let c = self.num_classes();
        let mut out = Vec::with_capacity(b * c);
        for m in 0..b {
            out.extend_from_slice(&self.logits_row(flat.row(m)));
        }
        Tensor::from_vec(&[b, c], out)
    }
}

/// Reshapes `[B, H, W]` to `[B, H*W]`, or verifies a `[B, n]` input.
pub(crate) fn flatten_inputs(inputs: &Tensor, expected_len: usize) -> Result<Tensor> {
    match inputs.ndim() {
        2 if inputs.shape()[1] == expected_len => Ok(inputs.clone()),
        3 if inputs.shape()[1] * inputs.shape()[2] == expected_len => {
            inputs.reshape(&[inputs.shape()[0], expected_len])
        }
        _ => Err(Error::ShapeMismatch {
            expected: vec![0, expected_len],
            got: inputs.shape().to_vec(),
        }),
    }
}
