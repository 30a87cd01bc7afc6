//! Single-round weighted vote. Each robot's influence mixes its share of the
//! team's detections with its normalized confidence:
//! `V_i = alpha * v~_i + beta * c~_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NUM_CLASSES;
use crate::world::StationId;

/// Classes whose totals differ by less than this are tied.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub robot: usize,
    pub action: StationId,
    pub confidence: f64,
    pub detections: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteInput {
    pub votes: Vec<Vote>,
    pub alpha: f64,
    pub beta: f64,
}

impl VoteInput {
    pub fn validate(&self) -> Result<()> {
        if self.votes.is_empty() {
            return Err(Error::InvalidConfig("consensus needs at least one robot".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weights alpha={} beta={} must be >= 0 with a positive sum",
                self.alpha, self.beta
            )));
        }
        if let Some(v) = self.votes.iter().find(|v| !(v.confidence > 0.0 && v.confidence <= 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "robot {} confidence {} outside (0, 1]",
                v.robot, v.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub decided: StationId,
    /// `V_i`, in the order of the input votes.
    pub votes: Vec<f64>,
    pub totals: [f64; NUM_CLASSES],
    /// More than one class shared the maximum total.
    pub tie_break: bool,
    /// All detection counts were zero and uniform visibility was used.
    pub uniform_visibility: bool,
}

/// `v_i = N_i / sum N`.
pub fn visibility_ratios(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateVisibility);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Divides each value by the sum.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidConfig("normalize needs finite non-negative values".into()));
    }
    let s: f64 = values.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroSum);
    }
    Ok(values.iter().map(|v| v / s).collect())
}

pub fn weighted_votes(v: &[f64], c: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if v.len() != c.len() {
        return Err(Error::LengthMismatch(v.len(), c.len()));
    }
    Ok(v.iter().zip(c).map(|(v, c)| alpha * v + beta * c).collect())
}

fn tally(input: &VoteInput, v: &[f64], uniform: bool) -> Result<ConsensusResult> {
    let vt = normalize(v)?;
    let conf: Vec<f64> = input.votes.iter().map(|x| x.confidence).collect();
    let ct = normalize(&conf)?;
    let votes = weighted_votes(&vt, &ct, input.alpha, input.beta)?;
    let mut totals = [0.0; NUM_CLASSES];
    let mut best_conf = [f64::NEG_INFINITY; NUM_CLASSES];
    for (vote, &w) in input.votes.iter().zip(&votes) {
        let k = vote.action.index();
        totals[k] += w;
        best_conf[k] = best_conf[k].max(vote.confidence);
    }
    let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..NUM_CLASSES)
        .filter(|&k| best_conf[k] > f64::NEG_INFINITY && max - totals[k] <= TIE_EPS)
        .collect();
    // Highest single confidence, then lowest id.
    let mut winner = tied[0];
    for &k in &tied[1..] {
        if best_conf[k] > best_conf[winner] {
            winner = k;
        }
    }
    Ok(ConsensusResult {
        decided: StationId::from_index(winner),
        votes,
        totals,
        tie_break: tied.len() > 1,
        uniform_visibility: uniform,
    })
}

/// Weighted vote; fails on all-zero detection counts.
pub fn decide(input: &VoteInput) -> Result<ConsensusResult> {
    input.validate()?;
    let counts: Vec<usize> = input.votes.iter().map(|v| v.detections).collect();
    let v = visibility_ratios(&counts)?;
    tally(input, &v, false)
}

/// As [`decide`], but all-zero detection counts fall back to uniform
/// visibility `1/M`.
pub fn decide_with_fallback(input: &VoteInput) -> Result<ConsensusResult> {
    match decide(input) {
        Err(Error::DegenerateVisibility) => {
            log::debug!("all visibility counts zero; using uniform weights");
            let m = input.votes.len();
            tally(input, &vec![1.0 / m as f64; m], true)
        }
        other => other,
    }
}
