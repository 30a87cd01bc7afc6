//! Constant-velocity baseline: a Kalman filter on the human's head position
//! and a goal guess from the averaged velocity of its last twelve states.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_ray_distance, Vec2};
use crate::world::StationId;

pub const CVM_HISTORY: usize = 12;
/// Below this averaged speed the human counts as stationary.
pub const CVM_STATIONARY_SPEED: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub dt: f64,
    /// White-acceleration spectral density.
    pub process_noise: f64,
    /// Measurement variance per axis.
    pub measurement_noise: f64,
    /// Initial velocity variance.
    pub initial_velocity_var: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            dt: 0.1,
            process_noise: 2.0,
            measurement_noise: 0.05,
            initial_velocity_var: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanTrack {
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub config: KalmanConfig,
    /// Most recent filtered states `(x, y, vx, vy)`, oldest first.
    pub history: VecDeque<Vector4<f64>>,
}

impl KalmanTrack {
    /// Starts at rest at the first measured position.
    pub fn new(position: Vec2, config: KalmanConfig) -> Self {
        let r = config.measurement_noise;
        let pv = config.initial_velocity_var;
        KalmanTrack::with_state(
            position,
            Vec2::ZERO,
            Matrix4::from_diagonal(&Vector4::new(r, r, pv, pv)),
            config,
        )
    }

    pub fn with_state(position: Vec2, velocity: Vec2, covariance: Matrix4<f64>, config: KalmanConfig) -> Self {
        KalmanTrack {
            state: Vector4::new(position.x, position.y, velocity.x, velocity.y),
            covariance,
            config,
            history: VecDeque::with_capacity(CVM_HISTORY),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.state[2], self.state[3])
    }

    fn transition(&self) -> (Matrix4<f64>, Matrix4<f64>) {
        let dt = self.config.dt;
        let mut f = Matrix4::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        let q = self.config.process_noise;
        let (a, b, c) = (dt.powi(3) / 3.0 * q, dt.powi(2) / 2.0 * q, dt * q);
        let qm = Matrix4::new(
            a, 0.0, b, 0.0, //
            0.0, a, 0.0, b, //
            b, 0.0, c, 0.0, //
            0.0, b, 0.0, c,
        );
        (f, qm)
    }
}

/// Constant-velocity predict, then an update when a measurement is present.
/// The filtered state is appended to the history.
pub fn kalman_step(track: &KalmanTrack, measurement: Option<Vec2>) -> KalmanTrack {
    let mut t = track.clone();
    let (f, q) = t.transition();
    t.state = f * t.state;
    t.covariance = f * t.covariance * f.transpose() + q;
    if let Some(z) = measurement {
        let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let r = Matrix2::identity() * t.config.measurement_noise;
        let s = h * t.covariance * h.transpose() + r;
        // A singular innovation covariance means the prediction is already exact.
        if let Some(s_inv) = s.try_inverse() {
            let k = t.covariance * h.transpose() * s_inv;
            let innovation = Vector2::new(z.x, z.y) - h * t.state;
            t.state += k * innovation;
            // Joseph form keeps the covariance symmetric PSD.
            let i_kh = Matrix4::identity() - k * h;
            t.covariance = i_kh * t.covariance * i_kh.transpose() + k * r * k.transpose();
        }
    }
    t.covariance = (t.covariance + t.covariance.transpose()) * 0.5;
    if t.history.len() == CVM_HISTORY {
        t.history.pop_front();
    }
    t.history.push_back(t.state);
    t
}

/// Goal guess from the mean velocity of the last twelve states: nearest
/// station when nearly stationary, otherwise the station closest to the
/// forward velocity ray (nearest station on ties).
pub fn cvm_predict(track: &KalmanTrack, stations: &[(StationId, Vec2)]) -> Result<StationId> {
    if track.history.len() < CVM_HISTORY {
        return Err(Error::InsufficientHistory {
            have: track.history.len(),
            need: CVM_HISTORY,
        });
    }
    if stations.is_empty() {
        return Err(Error::InvalidConfig("no stations to predict".into()));
    }
    let n = track.history.len() as f64;
    let v = track
        .history
        .iter()
        .fold(Vec2::ZERO, |acc, s| acc + Vec2::new(s[2], s[3]))
        * (1.0 / n);
    let last = track.history.back().expect("history is non-empty");
    let pos = Vec2::new(last[0], last[1]);
    let nearest = |cands: &[(StationId, Vec2)]| {
        cands
            .iter()
            .min_by(|a, b| pos.dist(a.1).total_cmp(&pos.dist(b.1)))
            .map(|s| s.0)
            .expect("non-empty")
    };
    if v.norm() < CVM_STATIONARY_SPEED {
        return Ok(nearest(stations));
    }
    let dir = v.normalized();
    let d: Vec<f64> = stations.iter().map(|s| point_ray_distance(s.1, pos, dir)).collect();
    let best = d.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<(StationId, Vec2)> = stations
        .iter()
        .zip(&d)
        .filter(|(_, &x)| x - best <= 1e-9)
        .map(|(s, _)| *s)
        .collect();
    Ok(nearest(&tied))
}
