use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{shape_err, Result};

/// Floor applied to the singular-value estimate.
pub const SIGMA_EPS: f64 = 1e-12;

/// Persistent power-iteration vectors for one weight, viewed as a
/// `[rows, cols]` matrix (trailing axes flattened).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    let rows = shape[0];
    (rows, shape[1..].iter().product::<usize>().max(1))
}

fn normalize_into(dst: &mut [f64], src: Vec<f64>) {
    let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > SIGMA_EPS {
        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s / norm);
    }
}

impl SpectralState {
    pub fn new<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let (rows, cols) = matrix_dims(shape);
        let mut u = vec![0.0; rows];
        let mut v = vec![0.0; cols];
        normalize_into(&mut u, (0..rows).map(|_| rng.sample(StandardNormal)).collect());
        normalize_into(&mut v, (0..cols).map(|_| rng.sample(StandardNormal)).collect());
        Self { u, v }
    }

    fn dims(&self) -> (usize, usize) {
        (self.u.len(), self.v.len())
    }

    /// One power-iteration step: `v <- W^T u / |.|`, `u <- W v / |.|`.
    pub fn step(&mut self, w: &[f64]) {
        let (rows, cols) = self.dims();
        debug_assert_eq!(w.len(), rows * cols);
        let mut wtu = vec![0.0; cols];
        for i in 0..rows {
            let ui = self.u[i];
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(wtu.iter_mut())
                .for_each(|(wij, acc)| *acc += wij * ui);
        }
        normalize_into(&mut self.v, wtu);
        let wv: Vec<f64> = (0..rows)
            .map(|i| {
                w[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(&self.v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        normalize_into(&mut self.u, wv);
    }

    /// Current estimate `u^T W v` of the largest singular value, floored.
    pub fn sigma(&self, w: &[f64]) -> f64 {
        let (rows, cols) = self.dims();
        let mut s = 0.0;
        for i in 0..rows {
            let row: f64 = w[i * cols..(i + 1) * cols]
                .iter()
                .zip(&self.v)
                .map(|(a, b)| a * b)
                .sum();
            s += self.u[i] * row;
        }
        s.max(SIGMA_EPS)
    }
}

impl Tensor {
    /// `W / sigma` with sigma from the stored power-iteration vectors. The
    /// vectors are treated as constants when differentiating.
    pub fn spectral_normalize(&self, state: &SpectralState) -> Result<Tensor> {
        let (rows, cols) = matrix_dims(self.shape());
        if state.dims() != (rows, cols) {
            return Err(shape_err!(
                "spectral_normalize: state {:?} for weight {:?}",
                state.dims(),
                self.shape()
            ));
        }
        let sigma = state.sigma(self.data());
        let out = self.data().iter().map(|w| w / sigma).collect();
        let floored = sigma <= SIGMA_EPS;
        let (u, v) = (state.u.clone(), state.v.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            "spectral_normalize",
            move |g, inp, _| {
                let mut gw: Vec<f64> = g.iter().map(|g| g / sigma).collect();
                if !floored {
                    let gdotw: f64 = g.iter().zip(inp[0].data()).map(|(a, b)| a * b).sum();
                    let c = gdotw / (sigma * sigma);
                    for i in 0..rows {
                        for j in 0..cols {
                            gw[i * cols + j] -= c * u[i] * v[j];
                        }
                    }
                }
                vec![Some(gw)]
            },
        ))
    }
}
