//! Fully connected classification layer and the per-token softmax loss.

use serde::{Deserialize, Serialize};

use super::crf::{log_sum_exp, EmissionScores};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub input_dim: usize,
    pub num_labels: usize,
    /// `input_dim x num_labels`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGradients {
    pub fn zeros(input_dim: usize, num_labels: usize) -> Self {
        HeadGradients {
            weights: vec![0.0; input_dim * num_labels],
            bias: vec![0.0; num_labels],
        }
    }
}

impl ClassifierHead {
    pub fn zeros(input_dim: usize, num_labels: usize) -> Self {
        ClassifierHead {
            input_dim,
            num_labels,
            weights: vec![0.0; input_dim * num_labels],
            bias: vec![0.0; num_labels],
        }
    }

    pub fn new(input_dim: usize, num_labels: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != input_dim * num_labels {
            return Err(Error::Length {
                expected: input_dim * num_labels,
                found: weights.len(),
            });
        }
        if bias.len() != num_labels {
            return Err(Error::Length {
                expected: num_labels,
                found: bias.len(),
            });
        }
        Ok(ClassifierHead {
            input_dim,
            num_labels,
            weights,
            bias,
        })
    }

    /// Row `t` is `Wᵀ x_t + b`.
    pub fn emissions(&self, inputs: &[Vec<f64>]) -> Result<EmissionScores> {
        let l = self.num_labels;
        let mut data = Vec::with_capacity(inputs.len() * l);
        for x in inputs {
            if x.len() != self.input_dim {
                return Err(Error::Dimension {
                    expected: self.input_dim,
                    found: x.len(),
                });
            }
            let mut row = self.bias.clone();
            for (k, &xk) in x.iter().enumerate() {
                for (r, w) in row.iter_mut().zip(&self.weights[k * l..(k + 1) * l]) {
                    *r += xk * w;
                }
            }
            data.extend(row);
        }
        EmissionScores::new(inputs.len(), l, data)
    }

    /// Given `∂loss/∂emissions` (`T x L` row-major), returns the parameter
    /// gradients and `∂loss/∂inputs`.
    pub fn backward(&self, inputs: &[Vec<f64>], grad_emissions: &[f64]) -> (HeadGradients, Vec<Vec<f64>>) {
        let l = self.num_labels;
        let mut grads = HeadGradients::zeros(self.input_dim, l);
        let mut grad_inputs = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let g = &grad_emissions[t * l..(t + 1) * l];
            for (b, gi) in grads.bias.iter_mut().zip(g) {
                *b += gi;
            }
            let mut gx = vec![0.0; self.input_dim];
            for (k, &xk) in x.iter().enumerate() {
                let w = &self.weights[k * l..(k + 1) * l];
                let gw = &mut grads.weights[k * l..(k + 1) * l];
                for j in 0..l {
                    gw[j] += xk * g[j];
                    gx[k] += w[j] * g[j];
                }
            }
            grad_inputs.push(gx);
        }
        (grads, grad_inputs)
    }

    pub fn apply(&mut self, grads: &HeadGradients, step: f64) {
        for (p, g) in self.weights.iter_mut().zip(&grads.weights) {
            *p -= step * g;
        }
        for (p, g) in self.bias.iter_mut().zip(&grads.bias) {
            *p -= step * g;
        }
    }
}

/// Summed token cross-entropy and its gradient with respect to the
/// emissions.
pub fn softmax_nll(e: &EmissionScores, gold: &[usize]) -> Result<(f64, Vec<f64>)> {
    if gold.len() != e.num_tokens() {
        return Err(Error::Length {
            expected: e.num_tokens(),
            found: gold.len(),
        });
    }
    let l = e.num_labels();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(e.num_tokens() * l);
    for (t, &y) in gold.iter().enumerate() {
        if y >= l {
            return Err(Error::Invalid(format!("label index {y} out of range")));
        }
        let row = e.row(t);
        let lse = log_sum_exp(row);
        loss += lse - row[y];
        grad.extend(row.iter().map(|s| (s - lse).exp()));
        grad[t * l + y] -= 1.0;
    }
    Ok((loss, grad))
}

/// Per-token argmax, ties to the lowest label index.
pub fn argmax_labels(e: &EmissionScores) -> Vec<usize> {
    (0..e.num_tokens())
        .map(|t| super::crf::argmax(e.row(t).iter().copied()).0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emission_examples() {
        let head = ClassifierHead::zeros(3, 2);
        let e = head.emissions(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(e.as_slice(), &[0.0, 0.0]);

        let head = ClassifierHead::new(1, 2, vec![2.0, 3.0], vec![0.0, 1.0]).unwrap();
        let e = head.emissions(&[vec![1.0]]).unwrap();
        assert_eq!(e.row(0), &[2.0, 4.0]);

        let e = head.emissions(&vec![vec![0.5]; 5]).unwrap();
        assert_eq!((e.num_tokens(), e.num_labels()), (5, 2));

        assert!(matches!(head.emissions(&[vec![1.0, 2.0]]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_examples() {
        let (loss, _) = softmax_nll(&EmissionScores::zeros(4, 2), &[0, 1, 1, 0]).unwrap();
        assert!((loss - 4.0 * 2f64.ln()).abs() < 1e-14);
        let e = EmissionScores::new(1, 2, vec![0.0, 80.0]).unwrap();
        let (loss, grad) = softmax_nll(&e, &[1]).unwrap();
        assert!(loss < 1e-30);
        assert!(grad.iter().all(|g| g.abs() < 1e-30));
        assert!(softmax_nll(&e, &[1, 0]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        let e = EmissionScores::new(2, 2, vec![1.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(argmax_labels(&e), vec![0, 1]);
    }
}
