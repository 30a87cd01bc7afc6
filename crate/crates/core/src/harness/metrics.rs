use serde::{Deserialize, Serialize};

use super::ModelSel;
use crate::error::{Error, Result};
use crate::models::NUM_CLASSES;
use crate::world::StationId;

/// One robot's decision at one evaluated tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub robot: usize,
    pub tick: usize,
    pub action: StationId,
    /// Predicted stations for t+1..=t+n.
    pub forecast: Vec<StationId>,
}

/// Poolable hit counts. Horizon accuracy pools all forecast cells, which
/// equals the mean over h of the per-step accuracies since every frame
/// contributes one cell per step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub frames: u64,
    pub correct_t: u64,
    pub horizon_cells: u64,
    pub correct_horizon: u64,
    /// Frame-t counts, rows are labels and columns predictions.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Accuracy {
    pub fn acc_t(&self) -> Option<f64> {
        (self.frames > 0).then(|| self.correct_t as f64 / self.frames as f64)
    }

    pub fn acc_horizon(&self) -> Option<f64> {
        (self.horizon_cells > 0).then(|| self.correct_horizon as f64 / self.horizon_cells as f64)
    }

    pub fn merge(&mut self, o: &Accuracy) {
        self.frames += o.frames;
        self.correct_t += o.correct_t;
        self.horizon_cells += o.horizon_cells;
        self.correct_horizon += o.correct_horizon;
        for (a, b) in self.confusion.iter_mut().zip(&o.confusion) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Scores predictions against per-tick ground truth. The label for horizon
/// step h is the goal at tick t+h.
pub fn compute_metrics(preds: &[FramePrediction], labels: &[StationId], n: usize) -> Result<Accuracy> {
    let mut acc = Accuracy::default();
    for p in preds {
        if p.forecast.len() != n {
            return Err(Error::Misaligned(format!(
                "robot {} tick {}: {} forecast steps, expected {n}",
                p.robot,
                p.tick,
                p.forecast.len()
            )));
        }
        if p.tick + n >= labels.len() {
            return Err(Error::Misaligned(format!(
                "tick {} + horizon {n} beyond {} labels",
                p.tick,
                labels.len()
            )));
        }
        let y = labels[p.tick];
        acc.frames += 1;
        acc.correct_t += u64::from(p.action == y);
        acc.confusion[y.index()][p.action.index()] += 1;
        for (h, f) in p.forecast.iter().enumerate() {
            acc.horizon_cells += 1;
            acc.correct_horizon += u64::from(*f == labels[p.tick + h + 1]);
        }
    }
    Ok(acc)
}

/// One output row per sweep coordinate and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: u8,
    pub robots: usize,
    /// Observation window in ticks.
    pub obs_frames: usize,
    /// Forecast horizon in ticks.
    pub forecast_frames: usize,
    /// Frames fed to the temporal model.
    pub subsample: usize,
    pub model: ModelSel,
    pub seed: u64,
    pub acc_t: f64,
    pub acc_horizon: f64,
    /// Frame-t accuracy of the consensus decision (consensus rows only).
    pub consensus_acc: Option<f64>,
    /// Fraction of evaluated ticks where team members decided differently.
    pub disagreement_rate: Option<f64>,
    /// Frame-t accuracy of each robot's own prediction, by robot id. For
    /// consensus rows this is the robot's individual collective-GRU output.
    pub per_robot: [Option<f64>; 4],
    pub accuracy: Accuracy,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(i: u8) -> StationId {
        StationId::new(i).unwrap()
    }

    fn fp(tick: usize, a: u8, f: &[u8]) -> FramePrediction {
        FramePrediction {
            robot: 0,
            tick,
            action: s(a),
            forecast: f.iter().map(|&x| s(x)).collect(),
        }
    }

    #[test]
    fn all_correct_and_all_wrong() {
        let labels = vec![s(2); 6];
        let good = [fp(0, 2, &[2, 2]), fp(3, 2, &[2, 2])];
        let a = compute_metrics(&good, &labels, 2).unwrap();
        assert_eq!((a.acc_t(), a.acc_horizon()), (Some(1.0), Some(1.0)));
        let bad = [fp(0, 1, &[1, 1])];
        let a = compute_metrics(&bad, &labels, 2).unwrap();
        assert_eq!((a.acc_t(), a.acc_horizon()), (Some(0.0), Some(0.0)));
        assert_eq!(a.confusion[1][0], 1);
    }

    #[test]
    fn one_wrong_cell_of_four() {
        let labels = [s(1), s(1), s(2), s(2)];
        let preds = [fp(0, 1, &[1, 3]), fp(1, 1, &[2, 2])];
        let a = compute_metrics(&preds, &labels, 2).unwrap();
        assert_eq!(a.acc_horizon(), Some(0.75));
        assert_eq!(a.acc_t(), Some(1.0));
    }

    #[test]
    fn misaligned_inputs() {
        let labels = vec![s(1); 4];
        assert!(matches!(compute_metrics(&[fp(2, 1, &[1, 1])], &labels, 2), Err(Error::Misaligned(_))));
        assert!(matches!(compute_metrics(&[fp(0, 1, &[1])], &labels, 2), Err(Error::Misaligned(_))));
    }

    #[test]
    fn merge_pools_counts() {
        let labels = vec![s(1); 4];
        let mut a = compute_metrics(&[fp(0, 1, &[1])], &labels, 1).unwrap();
        let b = compute_metrics(&[fp(1, 2, &[1])], &labels, 1).unwrap();
        a.merge(&b);
        assert_eq!(a.acc_t(), Some(0.5));
        assert_eq!(a.confusion[0], [1, 1, 0, 0]);
    }
}
