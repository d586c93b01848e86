//! Trainable building blocks: linear layers, layer-norm parameter pairs,
//! Xavier initialization, and the Adam optimizer.

use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{RawTensor, Tape, Tensor};

/// Xavier-uniform weight matrix `[fan_in, fan_out]`.
pub fn xavier_uniform<S: Scalar>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<S> = (0..fan_in * fan_out)
        .map(|_| rng.uniform_in(S::of(-limit), S::of(limit)))
        .collect();
    let t = Tensor::new_unchecked(vec![fan_in, fan_out], data);
    t.set_requires_grad(true);
    t
}

fn zero_param<S: Scalar>(shape: Vec<usize>) -> Tensor<S> {
    let t = Tensor::zeros(shape);
    t.set_requires_grad(true);
    t
}

/// Fully-connected layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(rng: &mut Rng, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: xavier_uniform(rng, d_in, d_out),
            bias: zero_param(vec![d_out]),
        }
    }

    pub fn forward(&self, tape: &Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::add_bias(tape, &ops::matmul(tape, x, &self.weight)?, &self.bias)
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Learned scale/shift pair for layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub eps: f64,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        let gamma = Tensor::new_unchecked(vec![dim], vec![S::one(); dim]);
        gamma.set_requires_grad(true);
        LayerNorm {
            gamma,
            beta: zero_param(vec![dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::layer_norm(tape, x, &self.gamma, &self.beta, self.eps)
    }
}

/// Adam optimizer over a fixed parameter list.
///
/// Defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
pub struct Adam<S: Scalar> {
    params: Vec<Tensor<S>>,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub step_count: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: Vec<Tensor<S>>, lr: f64) -> Self {
        let m = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            lr: S::of(lr),
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            step_count: 0,
        }
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    /// One Adam update from the accumulated gradients; gradients are
    /// cleared afterwards. Parameters without a gradient are skipped.
    pub fn step(&mut self) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for (i, p) in self.params.iter().enumerate() {
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = b1 * m[j] + (S::one() - b1) * g;
                    v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
    }

    /// Moment buffers for checkpointing, in parameter order.
    pub fn export_moments(&self) -> (u64, Vec<RawTensor<S>>, Vec<RawTensor<S>>) {
        let mk = |bufs: &[Vec<S>], tag: &str| {
            bufs.iter()
                .enumerate()
                .map(|(i, b)| RawTensor {
                    name: format!("{tag}.{i}"),
                    shape: vec![b.len()],
                    data: b.clone(),
                })
                .collect()
        };
        (self.step_count, mk(&self.m, "m"), mk(&self.v, "v"))
    }

    pub fn import_moments(
        &mut self,
        step_count: u64,
        m: Vec<Vec<S>>,
        v: Vec<Vec<S>>,
    ) -> Result<()> {
        if m.len() != self.params.len() || v.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "moment count {}/{} vs {} params",
                m.len(),
                v.len(),
                self.params.len()
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            if m[i].len() != p.numel() || v[i].len() != p.numel() {
                return Err(Error::Contract(format!("moment {i} length mismatch")));
            }
        }
        self.step_count = step_count;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        // f(w) = sum(w^2) has minimum at 0
        let w = Tensor::param(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = Adam::new(vec![w.clone()], 0.05);
        for _ in 0..400 {
            let tape = Tape::new();
            let sq = ops::mul(&tape, &w, &w).unwrap();
            let loss = ops::sum_all(&tape, &sq).unwrap();
            tape.backward(&loss).unwrap();
            opt.step();
        }
        assert!(w.to_vec().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn xavier_within_limit() {
        let mut rng = Rng::new(1);
        let w: Tensor<f64> = xavier_uniform(&mut rng, 16, 64);
        let limit = (6.0 / 80.0f64).sqrt();
        assert!(w.to_vec().iter().all(|v| v.abs() <= limit));
        assert!(w.requires_grad());
    }

    #[test]
    fn linear_forward_shape() {
        let mut rng = Rng::new(2);
        let lin: Linear<f64> = Linear::new(&mut rng, 4, 3);
        let tape = Tape::inference();
        let x = Tensor::from_vec(vec![2, 4], vec![0.1; 8]).unwrap();
        let y = lin.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
    }
}
