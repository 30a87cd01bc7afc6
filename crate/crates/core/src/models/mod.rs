//! From-scratch differentiable models: the star-graph GCN, the ego and
//! collective GRUs, training and temperature calibration.
//!
//! Everything runs in f64 on dense row-major matrices; the graphs have at most
//! a dozen nodes and the recurrent state is small, so no BLAS is needed.

pub mod calibration;
pub mod checkpoint;
pub mod gcn;
pub mod gru;
pub mod temporal;
pub mod tensor;
pub mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use calibration::{calibrate_temperature, Calibration};
pub use gcn::{gcn_forward, human_embedding, GcnOutput, GcnParams};
pub use gru::{gru_step, GruParams};
pub use temporal::{
    collective_forward, ego_forward, CollectiveMode, FrameInput, PredictionRecord, TemporalKind,
    TemporalModel,
};
pub use tensor::Matrix;
pub use train::{Optimizer, TrainConfig, TrainCurve};

use crate::perception::KEYPOINT_DIM;

pub const NUM_CLASSES: usize = 4;

/// Architecture sizes shared by the GCN and both GRUs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Half-width F of a node feature; GCN input is 2F.
    pub feature_dim: usize,
    pub gcn_hidden: usize,
    pub embed_dim: usize,
    pub gru_hidden: usize,
    /// Forecast horizon n.
    pub horizon: usize,
    pub collective_mode: CollectiveMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 64,
            gcn_hidden: 256,
            embed_dim: 128,
            gru_hidden: 128,
            horizon: 20,
            collective_mode: CollectiveMode::Separate,
        }
    }
}

impl ModelConfig {
    /// GRU input width for a temporal model of the given kind.
    pub fn gru_input(&self, kind: TemporalKind) -> usize {
        match (kind, self.collective_mode) {
            (TemporalKind::Collective, CollectiveMode::Separate) => 2 * self.embed_dim + KEYPOINT_DIM,
            _ => self.embed_dim + KEYPOINT_DIM,
        }
    }
}

/// Named parameter tensors, visited in a fixed order. Optimizers, checkpoints
/// and gradient checks rely on that order being stable.
pub trait Params {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)>;

    /// Same shapes, all zeros; used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Sized + Clone,
    {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    fn sum_sq(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_sq()).sum()
    }

    fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    /// `self += alpha * other`.
    fn axpy(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.axpy(alpha, s);
        }
    }
}

/// Gaussian init with standard deviation `scale / sqrt(fan_in)`.
pub fn init_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, scale: f64) -> Matrix {
    let sd = scale / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn softmax_t(z: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    softmax(&scaled)
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `label` under `softmax(z)` and its gradient w.r.t. `z`.
pub fn cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(z) - z[label];
    let mut g = softmax(z);
    g[label] -= 1.0;
    (loss, g)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let (l, g) = cross_entropy(&z, 2);
        let p = softmax(&z);
        assert!((l + p[2].ln()).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        assert!((g[2] - (p[2] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
