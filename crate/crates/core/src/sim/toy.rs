//! Linear-regression stand-in for the global model.
//!
//! Clients hold noisy labels whose noise shrinks with their computation
//! resource, so filtering out low-resource clients helps the global model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub dim: usize,
    pub batch: usize,
    pub eta: f64,
    pub alpha: f64,
    /// Label noise standard deviation is `noise_floor + noise_slope * (theta_hi - theta) / (theta_hi - theta_lo)`.
    pub noise_floor: f64,
    pub noise_slope: f64,
    pub test_size: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 10,
            batch: 16,
            eta: 0.05,
            alpha: 0.1,
            noise_floor: 0.1,
            noise_slope: 2.0,
            test_size: 512,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch == 0 || self.test_size == 0 {
            return Err(Error::Config("toy dim, batch and test_size must be positive".into()));
        }
        if !(self.eta > 0.0) || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("toy eta must be > 0 and alpha in (0, 1]".into()));
        }
        if !(self.noise_floor >= 0.0 && self.noise_slope >= 0.0) {
            return Err(Error::Config("toy noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub eta: f64,
}

/// Mean of `0.5 (w.x - y)^2` over the batch.
pub fn squared_loss(w: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let total: f64 = xs.iter().zip(ys).map(|(x, y)| 0.5 * (dot(w, x) - y).powi(2)).sum();
    total / ys.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ToyModel {
    pub fn zeros(dim: usize, alpha: f64, eta: f64) -> Self {
        ToyModel {
            weights: vec![0.0; dim],
            alpha,
            eta,
        }
    }

    /// One gradient step of the squared loss from the current global weights.
    pub fn local_update(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
        if ys.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidDomain("batch must be non-empty with one label per row".into()));
        }
        let d = self.weights.len();
        let mut grad = vec![0.0; d];
        for (x, y) in xs.iter().zip(ys) {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
            let r = dot(&self.weights, x) - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += r * xi;
            }
        }
        let n = ys.len() as f64;
        Ok(self.weights.iter().zip(&grad).map(|(w, g)| w - self.eta * g / n).collect())
    }

    pub fn merge(&mut self, local: &[f64]) -> Result<()> {
        if local.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: local.len(),
            });
        }
        let a = self.alpha;
        for (w, l) in self.weights.iter_mut().zip(local) {
            *w = (1.0 - a) * *w + a * l;
        }
        Ok(())
    }
}

/// Ground-truth regression task with a clean held-out test set.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub config: ToyConfig,
    pub truth: Vec<f64>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<f64>,
    theta_lo: f64,
    theta_hi: f64,
}

fn gaussian_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

impl ToyTask {
    pub fn new<R: Rng + ?Sized>(config: ToyConfig, theta_lo: f64, theta_hi: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let scale = 1.0 / (config.dim as f64).sqrt();
        let truth: Vec<f64> = gaussian_vec(config.dim, rng).into_iter().map(|v| v * scale).collect();
        let test_x: Vec<Vec<f64>> = (0..config.test_size).map(|_| gaussian_vec(config.dim, rng)).collect();
        let test_y = test_x.iter().map(|x| dot(&truth, x)).collect();
        Ok(ToyTask {
            config,
            truth,
            test_x,
            test_y,
            theta_lo,
            theta_hi,
        })
    }

    pub fn noise_sd(&self, theta: f64) -> f64 {
        let frac = ((self.theta_hi - theta) / (self.theta_hi - self.theta_lo)).clamp(0.0, 1.0);
        self.config.noise_floor + self.config.noise_slope * frac
    }

    /// A client's local batch. Always consumes the same number of draws.
    pub fn batch<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> (Vec<Vec<f64>>, Vec<f64>) {
        let sd = self.noise_sd(theta);
        let xs: Vec<Vec<f64>> = (0..self.config.batch).map(|_| gaussian_vec(self.config.dim, rng)).collect();
        let ys = xs
            .iter()
            .map(|x| {
                let e: f64 = StandardNormal.sample(rng);
                dot(&self.truth, x) + sd * e
            })
            .collect();
        (xs, ys)
    }

    pub fn model(&self) -> ToyModel {
        ToyModel::zeros(self.config.dim, self.config.alpha, self.config.eta)
    }

    pub fn test_loss(&self, model: &ToyModel) -> f64 {
        squared_loss(&model.weights, &self.test_x, &self.test_y)
    }
}
