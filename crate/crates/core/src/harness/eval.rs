use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::EpisodeData;
use super::metrics::FramePrediction;
use super::pipeline::{subsample_offsets, EpisodeEmbeddings, TrainedModels};
use super::{ExperimentSpec, ModelSel};
use crate::baselines::{cvm_predict, kalman_step, KalmanTrack, CVM_HISTORY};
use crate::comms::{aggregate_embeddings, Delivery, EmbeddingMsg, Message, NetworkModel, PredictionMsg, Transport};
use crate::consensus::{decide_with_fallback, Vote, VoteInput};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::models::temporal::{FrameInput, PredictionRecord, TemporalModel};
use crate::models::argmax;
use crate::rng::{derive_seed, tag};
use crate::world::StationId;

/// One evaluation coordinate: team size, window and horizon in ticks, and
/// the number of frames the GRU sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvalCoord {
    pub robots: usize,
    pub window: usize,
    pub horizon: usize,
    pub frames: usize,
}

/// One emitted prediction, written to `predictions.jsonl` for replay checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLogRecord {
    pub seed: u64,
    pub coord: EvalCoord,
    pub episode: usize,
    pub team: Vec<usize>,
    pub model: ModelSel,
    pub robot: usize,
    pub tick: usize,
    pub action: StationId,
    pub forecast: Vec<StationId>,
}

/// What to keep besides the scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Recording {
    pub predictions: bool,
    pub messages: bool,
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeEval {
    pub episode: usize,
    pub coord: Option<EvalCoord>,
    pub preds: BTreeMap<ModelSel, Vec<FramePrediction>>,
    /// Team-ticks with a consensus round, and those where members disagreed.
    pub rounds: u64,
    pub disagreements: u64,
    pub records: Vec<PredictionLogRecord>,
    /// Delivered messages of every team transport, in team order.
    pub deliveries: Vec<Delivery>,
}

impl EpisodeEval {
    fn push(&mut self, model: ModelSel, team: &[usize], p: FramePrediction, record: bool) {
        if record {
            self.records.push(PredictionLogRecord {
                seed: 0,
                coord: self.coord.expect("set by evaluate_episode"),
                episode: self.episode,
                team: team.to_vec(),
                model,
                robot: p.robot,
                tick: p.tick,
                action: p.action,
                forecast: p.forecast.clone(),
            });
        }
        self.preds.entry(model).or_default().push(p);
    }
}

/// Ticks at which a full window and a full horizon are available.
pub fn eval_ticks(ticks: usize, coord: &EvalCoord, stride: usize) -> Vec<usize> {
    (coord.window.saturating_sub(1)..)
        .step_by(stride.max(1))
        .take_while(|t| t + coord.horizon < ticks)
        .collect()
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn teams(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn repeated(a: StationId, n: usize) -> Vec<StationId> {
    vec![a; n]
}

fn record_to_frame(rec: &PredictionRecord, horizon: usize) -> FramePrediction {
    FramePrediction {
        robot: rec.robot,
        tick: rec.tick as usize,
        action: rec.action,
        forecast: (1..=horizon).map(|h| rec.forecast_action(h)).collect(),
    }
}

fn window_visibility(ep: &EpisodeData, robot: usize, t: usize, window: usize) -> usize {
    (t + 1 - window..=t).map(|tau| ep.frames[robot][tau].visibility()).sum()
}

fn need<'a, T>(v: Option<&'a T>, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::InvalidConfig(format!("evaluation needs a trained {what}")))
}

/// Evaluates every requested model on one test episode. Robot-independent
/// models (GNN-only, ego-GRU, CVM) are scored once per robot; the
/// collective models are scored for every team of `coord.robots` robots.
pub fn evaluate_episode(
    ep: &EpisodeData,
    emb: Option<&EpisodeEmbeddings>,
    models: &TrainedModels,
    spec: &ExperimentSpec,
    coord: &EvalCoord,
    recording: Recording,
) -> Result<EpisodeEval> {
    let record = recording.predictions;
    let ticks = eval_ticks(ep.ticks(), coord, spec.dataset.eval_stride);
    let all: Vec<usize> = (0..ep.frames.len()).collect();
    let mut out = EpisodeEval {
        episode: ep.index,
        coord: Some(*coord),
        ..EpisodeEval::default()
    };
    let n = coord.horizon;
    let wants = |m: ModelSel| spec.models.contains(&m);

    if wants(ModelSel::GnnOnly) {
        let emb = need(emb, "GCN")?;
        for &r in &all {
            for &t in &ticks {
                let a = StationId::from_index(argmax(&emb.logits[r][t]));
                let p = FramePrediction {
                    robot: r,
                    tick: t,
                    action: a,
                    forecast: repeated(a, n),
                };
                out.push(ModelSel::GnnOnly, &[r], p, record);
            }
        }
    }

    if wants(ModelSel::EgoGru) {
        let emb = need(emb, "GCN")?;
        let model = need(models.ego.as_ref(), "ego GRU")?;
        for &r in &all {
            for &t in &ticks {
                let seq = ego_sequence(ep, emb, r, t, coord, spec.model.embed_dim);
                let rec = model.predict(r, t as u64, &seq)?;
                out.push(ModelSel::EgoGru, &[r], record_to_frame(&rec, n), record);
            }
        }
    }

    if wants(ModelSel::Cvm) {
        let stations = ep.log.config.station_positions();
        for &r in &all {
            let mut track: Option<KalmanTrack> = None;
            let mut next = ticks.iter().peekable();
            for tau in 0..ep.ticks() {
                let z = ep.frames[r][tau].head;
                track = match (track, z) {
                    (None, Some(z)) => Some(KalmanTrack::new(z, spec.kalman.clone())),
                    (Some(tr), z) => Some(kalman_step(&tr, z)),
                    (None, None) => None,
                };
                if next.peek() == Some(&&tau) {
                    next.next();
                    let a = cvm_action(track.as_ref(), &stations)?;
                    let p = FramePrediction {
                        robot: r,
                        tick: tau,
                        action: a,
                        forecast: repeated(a, n),
                    };
                    out.push(ModelSel::Cvm, &[r], p, record);
                }
                if next.peek().is_none() {
                    break;
                }
            }
        }
    }

    if wants(ModelSel::CollectiveGru) || wants(ModelSel::CollectiveConsensus) {
        let emb = need(emb, "GCN")?;
        let model = need(models.collective.as_ref(), "collective GRU")?;
        for team in teams(all.len(), coord.robots) {
            run_team(ep, emb, model, spec, coord, &team, &ticks, recording, &mut out)?;
        }
    }
    Ok(out)
}

/// CVM goal guess; falls back to the station nearest the track while the
/// history is short, and to station 1 before the head was ever seen.
fn cvm_action(track: Option<&KalmanTrack>, stations: &[(StationId, Vec2)]) -> Result<StationId> {
    match track {
        Some(tr) if tr.history.len() >= CVM_HISTORY => cvm_predict(tr, stations),
        Some(tr) => {
            let p = tr.position();
            Ok(stations
                .iter()
                .min_by(|a, b| p.dist(a.1).total_cmp(&p.dist(b.1)))
                .map(|s| s.0)
                .expect("stations are non-empty"))
        }
        None => Ok(StationId::from_index(0)),
    }
}

fn own_embedding(emb: &EpisodeEmbeddings, r: usize, tau: usize, dim: usize) -> Vec<f64> {
    emb.embedding[r][tau].clone().unwrap_or_else(|| vec![0.0; dim])
}

fn ego_sequence(ep: &EpisodeData, emb: &EpisodeEmbeddings, r: usize, t: usize, coord: &EvalCoord, dim: usize) -> Vec<FrameInput> {
    subsample_offsets(coord.window, coord.frames)
        .into_iter()
        .map(|o| {
            let tau = t + 1 - coord.window + o;
            FrameInput::ego(own_embedding(emb, r, tau, dim), ep.frames[r][tau].keypoints.clone())
        })
        .collect()
}

/// Team network seed for one episode; distinct per team membership.
fn team_network(spec: &ExperimentSpec, ep: &EpisodeData, team: &[usize]) -> NetworkModel {
    let mask = team.iter().fold(0u64, |m, &r| m | (1 << r));
    NetworkModel {
        seed: derive_seed(spec.network.seed, &[tag("eval-net"), ep.seed(), mask]),
        ..spec.network.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_team(
    ep: &EpisodeData,
    emb: &EpisodeEmbeddings,
    model: &TemporalModel,
    spec: &ExperimentSpec,
    coord: &EvalCoord,
    team: &[usize],
    ticks: &[usize],
    recording: Recording,
    out: &mut EpisodeEval,
) -> Result<()> {
    let record = recording.predictions;
    let Some(&last) = ticks.last() else {
        return Ok(());
    };
    let dim = spec.model.embed_dim;
    let n = coord.horizon;
    let offsets = subsample_offsets(coord.window, coord.frames);
    let mut transport = Transport::new(team_network(spec, ep, team), team)?;
    if recording.messages {
        transport = transport.with_recording();
    }
    // Per member: neighbour mean and count at each tick, latest prediction per peer.
    let mut neigh: BTreeMap<usize, Vec<(Vec<f64>, usize)>> = team.iter().map(|&r| (r, Vec::new())).collect();
    let mut inbox: BTreeMap<(usize, usize), PredictionMsg> = BTreeMap::new();
    let ingest = |r: usize, msgs: Vec<PredictionMsg>, inbox: &mut BTreeMap<(usize, usize), PredictionMsg>| {
        for m in msgs {
            let key = (r, m.sender);
            if inbox.get(&key).is_none_or(|old| old.tick <= m.tick) {
                inbox.insert(key, m);
            }
        }
    };
    let mut next = ticks.iter().peekable();
    for tau in 0..=last {
        for &r in team {
            if let Some(e) = &emb.embedding[r][tau] {
                transport.publish(
                    Message::Embedding(EmbeddingMsg {
                        sender: r,
                        tick: tau as u64,
                        embedding: e.clone(),
                    }),
                    tau as u64,
                )?;
            }
        }
        for &r in team {
            let (e_msgs, p_msgs): (Vec<EmbeddingMsg>, _) = transport.collect(r, tau as u64);
            neigh.get_mut(&r).expect("member").push((aggregate_embeddings(&e_msgs, dim), e_msgs.len()));
            ingest(r, p_msgs, &mut inbox);
        }
        if next.peek() != Some(&&tau) {
            continue;
        }
        next.next();
        let t = tau;
        let mut own: BTreeMap<usize, PredictionMsg> = BTreeMap::new();
        for &r in team {
            let seq: Vec<FrameInput> = offsets
                .iter()
                .map(|&o| {
                    let s = t + 1 - coord.window + o;
                    let (mean, count) = neigh[&r][s].clone();
                    FrameInput {
                        embedding: own_embedding(emb, r, s, dim),
                        neighbor_mean: mean,
                        neighbor_count: count,
                        keypoints: ep.frames[r][s].keypoints.clone(),
                    }
                })
                .collect();
            let rec = model.predict(r, t as u64, &seq)?;
            out.push(ModelSel::CollectiveGru, team, record_to_frame(&rec, n), record);
            let forecast = rec
                .forecast
                .iter()
                .map(|p| {
                    let k = argmax(p);
                    (StationId::from_index(k), p[k])
                })
                .collect();
            let msg = PredictionMsg {
                sender: r,
                tick: t as u64,
                action: rec.action,
                confidence: rec.confidence,
                visibility: window_visibility(ep, r, t, coord.window),
                forecast,
            };
            own.insert(r, msg.clone());
            transport.publish(Message::Prediction(msg), t as u64)?;
        }
        for &r in team {
            let (_, p_msgs) = transport.collect(r, t as u64);
            ingest(r, p_msgs, &mut inbox);
        }
        if !spec.models.contains(&ModelSel::CollectiveConsensus) {
            continue;
        }
        let mut decisions = Vec::with_capacity(team.len());
        for &r in team {
            let mut msgs = vec![own[&r].clone()];
            msgs.extend(
                team.iter()
                    .filter(|&&o| o != r)
                    .filter_map(|&o| inbox.get(&(r, o)))
                    .filter(|m| m.tick as usize + coord.window > t)
                    .cloned(),
            );
            let decided = decide_at(&msgs, None, spec)?;
            let forecast = (0..n).map(|h| decide_at(&msgs, Some(h), spec)).collect::<Result<Vec<_>>>()?;
            decisions.push(decided);
            out.push(
                ModelSel::CollectiveConsensus,
                team,
                FramePrediction {
                    robot: r,
                    tick: t,
                    action: decided,
                    forecast,
                },
                record,
            );
        }
        out.rounds += 1;
        if decisions.iter().any(|d| *d != decisions[0]) {
            out.disagreements += 1;
        }
    }
    out.deliveries.extend_from_slice(transport.deliveries());
    Ok(())
}

/// Weighted vote over the gathered messages, at frame t (`None`) or at
/// forecast step `h + 1`. Peers that sent no forecast fall back to their
/// frame-t vote.
fn decide_at(msgs: &[PredictionMsg], h: Option<usize>, spec: &ExperimentSpec) -> Result<StationId> {
    let votes = msgs
        .iter()
        .map(|m| {
            let (action, confidence) = h
                .and_then(|h| m.forecast.get(h).copied())
                .unwrap_or((m.action, m.confidence));
            Vote {
                robot: m.sender,
                action,
                confidence,
                detections: m.visibility,
            }
        })
        .collect();
    let r = decide_with_fallback(&VoteInput {
        votes,
        alpha: spec.alpha,
        beta: spec.beta,
    })?;
    Ok(r.decided)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn team_enumeration() {
        assert_eq!(teams(4, 1).len(), 4);
        assert_eq!(teams(4, 2).len(), 6);
        assert_eq!(teams(4, 3), vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]]);
        assert_eq!(teams(4, 4), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn eval_ticks_respect_window_and_horizon() {
        let c = EvalCoord {
            robots: 1,
            window: 10,
            horizon: 10,
            frames: 10,
        };
        let t = eval_ticks(40, &c, 5);
        assert_eq!(t, vec![9, 14, 19, 24, 29]);
        assert!(eval_ticks(15, &c, 5).is_empty());
    }
}
