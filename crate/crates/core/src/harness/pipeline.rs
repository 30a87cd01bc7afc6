//! Staged training: the GCN is fitted on frame-t labels first, frozen, and
//! its human embeddings are precomputed for every frame; the ego and
//! collective GRUs are then trained on those embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use super::dataset::{generate_dataset, Dataset, EpisodeData};
use super::ExperimentSpec;
use crate::comms::{aggregate_embeddings, EmbeddingMsg, Message, NetworkModel, Transport};
use crate::error::{Error, Result};
use crate::graph::{build_star_graph, normalize_adjacency, NormalizedAdjacency};
use crate::models::calibration::calibrate_temperature;
use crate::models::checkpoint::Checkpoint;
use crate::models::gcn::gcn_forward;
use crate::models::temporal::{build_input, FrameInput, TemporalKind, TemporalModel};
use crate::models::train::{train_gcn, train_temporal, GcnSample, SeqSample};
use crate::models::{GcnParams, Matrix, ModelConfig, TrainConfig, NUM_CLASSES};
use crate::perception::{frame_seed, Encoder, KEYPOINT_DIM};
use crate::rng::{derive_seed, stream, tag};

/// Frame offsets `[0, window)` of `frames` uniformly spaced samples that end
/// at the newest frame.
pub fn subsample_offsets(window: usize, frames: usize) -> Vec<usize> {
    if frames >= window {
        return (0..window).collect();
    }
    let mut v: Vec<usize> = (0..frames).map(|k| window - 1 - k * window / frames).collect();
    v.reverse();
    v
}

/// Trained GCN with its spatial-head calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub params: GcnParams,
    pub temperature: f64,
}

/// Everything the evaluator needs for one sweep coordinate.
#[derive(Clone, Debug, Default)]
pub struct TrainedModels {
    pub gcn: Option<GcnModel>,
    pub ego: Option<TemporalModel>,
    pub collective: Option<TemporalModel>,
}

/// Ego and collective GRUs for one (window, horizon, subsample) triple.
#[derive(Clone, Debug)]
pub struct TemporalPair {
    pub ego: Option<TemporalModel>,
    pub collective: Option<TemporalModel>,
}

/// Per-frame GCN outputs for one episode, `[robot][tick]`.
#[derive(Clone, Debug)]
pub struct EpisodeEmbeddings {
    /// Human-node embedding, `None` when the human was not detected.
    pub embedding: Vec<Vec<Option<Vec<f64>>>>,
    /// Spatial logits; the head of a zero embedding when undetected.
    pub logits: Vec<Vec<[f64; NUM_CLASSES]>>,
}

fn frame_graph(
    ep: &EpisodeData,
    robot: usize,
    tick: usize,
    encoder: &Encoder,
    spec: &ExperimentSpec,
) -> Result<Option<(NormalizedAdjacency, Matrix)>> {
    let obs = &ep.frames[robot][tick];
    if !obs.human_detected() {
        return Ok(None);
    }
    let fs = frame_seed(ep.seed(), robot, tick as u64);
    let feats = encoder.encode(&obs.detections, ep.scenario(), fs);
    let kp_present = obs.keypoints.iter().any(|&v| v != 0.0);
    let g = build_star_graph(&obs.detections, &feats, kp_present, &spec.graph)?;
    let a = normalize_adjacency(&g);
    Ok(Some((a, g.features)))
}

/// Runs the frozen GCN over every frame of an episode.
pub fn embed_episode(ep: &EpisodeData, gcn: &GcnParams, spec: &ExperimentSpec) -> Result<EpisodeEmbeddings> {
    let encoder = Encoder::new(&spec.perception);
    let zero_logits = gcn.head(&vec![0.0; gcn.embed_dim()]);
    let mut embedding = Vec::with_capacity(ep.frames.len());
    let mut logits = Vec::with_capacity(ep.frames.len());
    for r in 0..ep.frames.len() {
        let mut e_r = Vec::with_capacity(ep.ticks());
        let mut l_r = Vec::with_capacity(ep.ticks());
        for t in 0..ep.ticks() {
            match frame_graph(ep, r, t, &encoder, spec)? {
                Some((a, x)) => {
                    let out = gcn_forward(&a, &x, gcn)?;
                    e_r.push(Some(out.h2.row(0).to_vec()));
                    l_r.push(out.logits);
                }
                None => {
                    e_r.push(None);
                    l_r.push(zero_logits);
                }
            }
        }
        embedding.push(e_r);
        logits.push(l_r);
    }
    Ok(EpisodeEmbeddings { embedding, logits })
}

/// Embedding messages received by each robot at each tick when all four
/// robots share, `[robot][tick]`.
fn exchange_all(ep: &EpisodeData, emb: &EpisodeEmbeddings, network: &NetworkModel) -> Result<Vec<Vec<Vec<EmbeddingMsg>>>> {
    let robots: Vec<usize> = (0..ep.frames.len()).collect();
    let net = NetworkModel {
        seed: derive_seed(network.seed, &[tag("train-net"), ep.seed()]),
        ..network.clone()
    };
    let mut transport = Transport::new(net, &robots)?;
    let mut received = vec![Vec::with_capacity(ep.ticks()); robots.len()];
    for t in 0..ep.ticks() {
        for &r in &robots {
            if let Some(e) = &emb.embedding[r][t] {
                transport.publish(
                    Message::Embedding(EmbeddingMsg {
                        sender: r,
                        tick: t as u64,
                        embedding: e.clone(),
                    }),
                    t as u64,
                )?;
            }
        }
        for &r in &robots {
            received[r].push(transport.collect(r, t as u64).0);
        }
    }
    Ok(received)
}

/// Per-seed state shared by every sweep coordinate: the dataset, the trained
/// GCN and per-episode embeddings.
pub struct SeedContext {
    pub seed: u64,
    pub dataset: Dataset,
    pub gcn: Option<GcnModel>,
    pub embeddings: BTreeMap<usize, EpisodeEmbeddings>,
    received: BTreeMap<usize, Vec<Vec<Vec<EmbeddingMsg>>>>,
}

impl SeedContext {
    /// Simulates the dataset, trains the GCN unless weights are supplied,
    /// and embeds every simulated frame. With `test_only` only the test
    /// split is simulated and `gcn` must be given when any model needs it.
    pub fn prepare(spec: &ExperimentSpec, seed: u64, gcn: Option<GcnModel>, test_only: bool) -> Result<Self> {
        let dataset = generate_dataset(spec, seed, spec.dataset.episodes, test_only)?;
        let mut ctx = SeedContext {
            seed,
            dataset,
            gcn,
            embeddings: BTreeMap::new(),
            received: BTreeMap::new(),
        };
        if ctx.gcn.is_none() && spec.needs_training() {
            if test_only {
                return Err(Error::InvalidConfig("evaluation without training needs GCN weights".into()));
            }
            ctx.gcn = Some(ctx.fit_gcn(spec)?);
        }
        if let Some(g) = &ctx.gcn {
            let params = g.params.clone();
            let embedded: Vec<(usize, EpisodeEmbeddings)> = ctx
                .dataset
                .episodes
                .par_iter()
                .map(|(&i, ep)| Ok((i, embed_episode(ep, &params, spec)?)))
                .collect::<Result<_>>()?;
            ctx.embeddings = embedded.into_iter().collect();
        }
        Ok(ctx)
    }

    fn gcn_samples<'a>(&self, eps: impl Iterator<Item = &'a EpisodeData>, spec: &ExperimentSpec) -> Result<Vec<GcnSample>> {
        let encoder = Encoder::new(&spec.perception);
        let mut out = Vec::new();
        for ep in eps {
            for r in 0..ep.frames.len() {
                for t in (0..ep.ticks()).step_by(spec.dataset.gcn_stride) {
                    if let Some((adjacency, features)) = frame_graph(ep, r, t, &encoder, spec)? {
                        out.push(GcnSample {
                            adjacency,
                            features,
                            label: ep.labels()[t].index(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    fn fit_gcn(&self, spec: &ExperimentSpec) -> Result<GcnModel> {
        let train = self.gcn_samples(self.dataset.train(), spec)?;
        let val = self.gcn_samples(self.dataset.val(), spec)?;
        let cfg = TrainConfig {
            seed: derive_seed(self.seed, &[tag("gcn-train")]),
            ..spec.gcn_train.clone()
        };
        let (params, curve) = train_gcn(&train, &val, &spec.model, &cfg)?;
        log::info!(
            "seed {}: gcn trained on {} frames, loss {:.3} -> {:.3}",
            self.seed,
            train.len(),
            curve.initial_loss,
            curve.val_loss.get(curve.best_epoch).copied().unwrap_or(f64::NAN)
        );
        let (logits, labels): (Vec<_>, Vec<_>) = val
            .iter()
            .map(|s| Ok((gcn_forward(&s.adjacency, &s.features, &params)?.logits, s.label)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let temperature = if logits.is_empty() {
            1.0
        } else {
            calibrate_temperature(&logits, &labels)?.temperature
        };
        Ok(GcnModel { params, temperature })
    }

    fn received_for(&mut self, spec: &ExperimentSpec, idx: usize) -> Result<()> {
        if self.received.contains_key(&idx) {
            return Ok(());
        }
        let ep = &self.dataset.episodes[&idx];
        let rec = exchange_all(ep, &self.embeddings[&idx], &spec.network)?;
        self.received.insert(idx, rec);
        Ok(())
    }

    /// Training windows for one split. Collective samples see a random
    /// subset (0..=3 robots) of the other robots as neighbours.
    fn seq_samples(
        &mut self,
        spec: &ExperimentSpec,
        split: &[usize],
        window: usize,
        horizon: usize,
        frames: usize,
    ) -> Result<(Vec<SeqSample>, Vec<SeqSample>)> {
        let offsets = subsample_offsets(window, frames);
        let mode = spec.model.collective_mode;
        let e = spec.model.embed_dim;
        let mut ego = Vec::new();
        let mut coll = Vec::new();
        for &idx in split {
            self.received_for(spec, idx)?;
            let ep = &self.dataset.episodes[&idx];
            let emb = &self.embeddings[&idx];
            let rec = &self.received[&idx];
            let robots = ep.frames.len();
            let labels: Vec<usize> = ep.labels().iter().map(|s| s.index()).collect();
            for r in 0..robots {
                let others: Vec<usize> = (0..robots).filter(|&o| o != r).collect();
                let mut t = window - 1;
                while t + horizon < ep.ticks() {
                    let y = labels[t..=t + horizon].to_vec();
                    let mut rng = stream(self.seed, &[tag("subset"), idx as u64, r as u64, t as u64]);
                    let size = rng.random_range(0..=others.len());
                    let subset: Vec<usize> = others.choose_multiple(&mut rng, size).copied().collect();
                    let mut xe = Vec::with_capacity(offsets.len());
                    let mut xc = Vec::with_capacity(offsets.len());
                    for &o in &offsets {
                        let tau = t + 1 - window + o;
                        let own = emb.embedding[r][tau].clone().unwrap_or_else(|| vec![0.0; e]);
                        let kp = ep.frames[r][tau].keypoints.clone();
                        debug_assert_eq!(kp.len(), KEYPOINT_DIM);
                        let msgs: Vec<EmbeddingMsg> = rec[r][tau]
                            .iter()
                            .filter(|m| subset.contains(&m.sender))
                            .cloned()
                            .collect();
                        let f = FrameInput {
                            embedding: own,
                            neighbor_mean: aggregate_embeddings(&msgs, e),
                            neighbor_count: msgs.len(),
                            keypoints: kp,
                        };
                        xe.push(build_input(TemporalKind::Ego, mode, &f));
                        xc.push(build_input(TemporalKind::Collective, mode, &f));
                    }
                    ego.push(SeqSample {
                        inputs: xe,
                        labels: y.clone(),
                    });
                    coll.push(SeqSample { inputs: xc, labels: y });
                    t += spec.dataset.train_stride;
                }
            }
        }
        Ok((ego, coll))
    }
}

fn fit_temporal(
    kind: TemporalKind,
    train: &[SeqSample],
    val: &[SeqSample],
    model: &ModelConfig,
    frames: usize,
    cfg: &TrainConfig,
) -> Result<TemporalModel> {
    let (mut m, curve) = train_temporal(kind, train, val, model, frames, cfg)?;
    log::info!(
        "{kind:?} gru: {} windows, loss {:.3} -> {:.3} (epoch {})",
        train.len(),
        curve.initial_loss,
        curve.val_loss.get(curve.best_epoch).copied().unwrap_or(f64::NAN),
        curve.best_epoch
    );
    let cal = if val.is_empty() { train } else { val };
    let mut logits = Vec::with_capacity(cal.len());
    let mut labels = Vec::with_capacity(cal.len());
    for s in cal {
        let z = crate::models::temporal::unroll_logits(&m.params, &s.inputs, 0)?;
        logits.push(z[0]);
        labels.push(s.labels[0]);
    }
    m.temperature = calibrate_temperature(&logits, &labels)?.temperature;
    Ok(m)
}

/// Trains the ego and/or collective GRU for one window/horizon/subsample.
pub fn train_temporal_pair(
    ctx: &mut SeedContext,
    spec: &ExperimentSpec,
    window: usize,
    horizon: usize,
    frames: usize,
    want_ego: bool,
    want_collective: bool,
) -> Result<TemporalPair> {
    let model = ModelConfig {
        horizon,
        ..spec.model.clone()
    };
    let train_idx = ctx.dataset.split.train.clone();
    let val_idx = ctx.dataset.split.val.clone();
    let (ego_tr, coll_tr) = ctx.seq_samples(spec, &train_idx, window, horizon, frames)?;
    let (ego_va, coll_va) = ctx.seq_samples(spec, &val_idx, window, horizon, frames)?;
    let cfg_for = |kind: TemporalKind| TrainConfig {
        seed: derive_seed(ctx.seed, &[tag("gru-train"), kind as u64, window as u64, horizon as u64, frames as u64]),
        ..spec.gru_train.clone()
    };
    let ego = if want_ego {
        Some(fit_temporal(TemporalKind::Ego, &ego_tr, &ego_va, &model, offsets_len(window, frames), &cfg_for(TemporalKind::Ego))?)
    } else {
        None
    };
    let collective = if want_collective {
        Some(fit_temporal(
            TemporalKind::Collective,
            &coll_tr,
            &coll_va,
            &model,
            offsets_len(window, frames),
            &cfg_for(TemporalKind::Collective),
        )?)
    } else {
        None
    };
    Ok(TemporalPair { ego, collective })
}

fn offsets_len(window: usize, frames: usize) -> usize {
    subsample_offsets(window, frames).len()
}

/// `root/seed{seed}`.
pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed{seed}"))
}

/// `root/seed{seed}/w{window}_n{horizon}_s{frames}`.
pub fn coord_dir(root: &Path, seed: u64, window: usize, horizon: usize, frames: usize) -> PathBuf {
    seed_dir(root, seed).join(format!("w{window}_n{horizon}_s{frames}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_gcn(root: &Path, seed: u64, gcn: &GcnModel, cfg: &ModelConfig) -> Result<()> {
    let dir = seed_dir(root, seed);
    ensure_dir(&dir)?;
    Checkpoint::from_gcn(&gcn.params, cfg, gcn.temperature).save(&dir.join("gcn.json"))
}

pub fn load_gcn(root: &Path, seed: u64) -> Result<GcnModel> {
    let ck = Checkpoint::load(&seed_dir(root, seed).join("gcn.json"))?;
    Ok(GcnModel {
        params: ck.to_gcn()?,
        temperature: ck.temperature,
    })
}

pub fn save_pair(root: &Path, seed: u64, window: usize, pair: &TemporalPair, cfg: &ModelConfig) -> Result<()> {
    for m in [&pair.ego, &pair.collective].into_iter().flatten() {
        let dir = coord_dir(root, seed, window, m.horizon, m.window);
        ensure_dir(&dir)?;
        let name = match m.kind {
            TemporalKind::Ego => "ego.json",
            TemporalKind::Collective => "collective.json",
        };
        Checkpoint::from_temporal(m, cfg).save(&dir.join(name))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn load_pair(
    root: &Path,
    seed: u64,
    window: usize,
    horizon: usize,
    frames: usize,
    want_ego: bool,
    want_collective: bool,
) -> Result<TemporalPair> {
    let dir = coord_dir(root, seed, window, horizon, frames);
    let load = |name: &str, kind| -> Result<TemporalModel> { Checkpoint::load(&dir.join(name))?.to_temporal(kind) };
    Ok(TemporalPair {
        ego: want_ego.then(|| load("ego.json", TemporalKind::Ego)).transpose()?,
        collective: want_collective
            .then(|| load("collective.json", TemporalKind::Collective))
            .transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsampling_is_uniform_and_ends_at_t() {
        assert_eq!(subsample_offsets(10, 10), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_offsets(10, 5), vec![1, 3, 5, 7, 9]);
        assert_eq!(subsample_offsets(10, 3), vec![3, 6, 9]);
        assert_eq!(subsample_offsets(20, 10), (0..10).map(|k| 2 * k + 1).collect::<Vec<_>>());
        assert_eq!(subsample_offsets(30, 10).len(), 10);
    }
}
