//! Temperature scaling.

use serde::{Deserialize, Serialize};

use super::{log_sum_exp, NUM_CLASSES};
use crate::error::{Error, Result};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub temperature: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { temperature: 1.0 }
    }
}

/// Mean negative log-likelihood of `softmax(z / t)`.
pub fn nll_at(logits: &[[f64; NUM_CLASSES]], labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let s: Vec<f64> = z.iter().map(|v| v / t).collect();
        total += log_sum_exp(&s) - s[y];
    }
    total / logits.len() as f64
}

/// Golden-section search for the temperature minimizing validation NLL,
/// over log T in [ln 0.05, ln 20].
pub fn calibrate_temperature(logits: &[[f64; NUM_CLASSES]], labels: &[usize]) -> Result<Calibration> {
    if logits.is_empty() {
        return Err(Error::EmptyDataset("calibration set"));
    }
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch(logits.len(), labels.len()));
    }
    let f = |u: f64| nll_at(logits, labels, u.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (T_MIN.ln(), T_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-7 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok(Calibration {
        temperature: ((a + b) / 2.0).exp(),
    })
}
