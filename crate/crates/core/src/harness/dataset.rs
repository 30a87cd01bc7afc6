use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentSpec;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::perception::{extract_keypoints, head_world_position, sense, Detection, PerceptionConfig};
use crate::rng::{derive_seed, stream, tag};
use crate::world::{generate_episode, EpisodeLog, ObjectKind, StationId, WorldConfig};

/// What one robot perceived at one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameObs {
    pub detections: Vec<Detection>,
    /// Flattened keypoints, zeros when the human was not seen.
    pub keypoints: Vec<f64>,
    /// Head position in world coordinates recovered from the image.
    pub head: Option<Vec2>,
}

impl FrameObs {
    pub fn human(&self) -> Option<&Detection> {
        self.detections.iter().find(|d| d.kind == ObjectKind::Human)
    }

    pub fn human_detected(&self) -> bool {
        self.human().is_some()
    }

    /// Detections that count towards this robot's visibility: every
    /// detection in a frame where the human is seen, none otherwise.
    pub fn visibility(&self) -> usize {
        if self.human_detected() {
            self.detections.len()
        } else {
            0
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub index: usize,
    pub log: EpisodeLog,
    /// `frames[robot][tick]`.
    pub frames: Vec<Vec<FrameObs>>,
}

impl EpisodeData {
    pub fn seed(&self) -> u64 {
        self.log.config.seed
    }

    pub fn labels(&self) -> &[StationId] {
        &self.log.labels
    }

    pub fn ticks(&self) -> usize {
        self.log.states.len()
    }

    pub fn scenario(&self) -> u8 {
        self.log.config.scenario
    }
}

/// Runs every robot's sensor over a logged episode.
pub fn observe_episode(log: &EpisodeLog, cfg: &PerceptionConfig) -> Vec<Vec<FrameObs>> {
    let seed = log.config.seed;
    let robots = log.config.robots.len();
    (0..robots)
        .map(|r| {
            log.states
                .iter()
                .map(|state| {
                    let detections = sense(r, state, &log.config.obstacles, cfg, seed);
                    let human = detections.iter().find(|d| d.kind == ObjectKind::Human);
                    let kp = extract_keypoints(human, state, r, cfg, seed);
                    let head = human.and_then(|h| head_world_position(h, &kp, &state.robots[r].pose, cfg));
                    FrameObs {
                        keypoints: kp.coords,
                        detections,
                        head,
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded 60/20/20 partition of episode indices.
    pub fn new(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream(seed, &[tag("split")]));
        let n_train = n * 60 / 100;
        let n_val = n * 20 / 100;
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Split { train, val, test }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub seed: u64,
    /// Simulated episodes by index.
    pub episodes: BTreeMap<usize, EpisodeData>,
    pub split: Split,
}

impl Dataset {
    fn pick<'a>(&'a self, idx: &'a [usize]) -> impl Iterator<Item = &'a EpisodeData> + 'a {
        idx.iter().filter_map(|i| self.episodes.get(i))
    }

    pub fn train(&self) -> impl Iterator<Item = &EpisodeData> {
        self.pick(&self.split.train)
    }

    pub fn val(&self) -> impl Iterator<Item = &EpisodeData> {
        self.pick(&self.split.val)
    }

    pub fn test(&self) -> impl Iterator<Item = &EpisodeData> {
        self.pick(&self.split.test)
    }
}

/// World seed of episode `index` under replicate seed `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[tag("episode"), index as u64])
}

/// Simulates `count` four-robot episodes and records every robot's view, so
/// any team of 1..4 robots can be assembled afterwards. Only the test split
/// is simulated when `test_only` is set.
pub fn generate_dataset(spec: &ExperimentSpec, seed: u64, count: usize, test_only: bool) -> Result<Dataset> {
    if count < 50 {
        return Err(Error::InvalidConfig(format!("need at least 50 episodes, got {count}")));
    }
    let split = Split::new(count, seed);
    let wanted: Vec<usize> = if test_only {
        split.test.clone()
    } else {
        (0..count).collect()
    };
    let episodes = wanted
        .par_iter()
        .map(|&i| {
            let cfg = WorldConfig::standard(spec.scenario, 4, episode_seed(seed, i));
            let log = generate_episode(&cfg, spec.dataset.episode_ticks)?;
            let frames = observe_episode(&log, &spec.perception);
            Ok((i, EpisodeData { index: i, log, frames }))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(Dataset { seed, episodes, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_60_20_20_partition() {
        let s = Split::new(100, 9);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, Split::new(100, 9));
        assert_ne!(s, Split::new(100, 10));
    }
}
