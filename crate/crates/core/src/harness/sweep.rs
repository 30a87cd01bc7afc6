use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::dataset::{observe_episode, EpisodeData};
use super::eval::{evaluate_episode, EpisodeEval, EvalCoord, PredictionLogRecord, Recording};
use super::metrics::{compute_metrics, Accuracy, FramePrediction, MetricsRow};
use super::pipeline::{
    embed_episode, load_gcn, load_pair, save_gcn, save_pair, train_temporal_pair, SeedContext, TemporalPair,
    TrainedModels,
};
use super::{ExperimentSpec, ModelSel};
use crate::comms::Delivery;
use crate::error::{Error, Result};
use crate::world::{EpisodeLog, StationId};

/// Fixed CSV column order.
pub const CSV_HEADER: &str = "scenario,robots,obs_frames,forecast_frames,subsample,model,seed,\
acc_t,acc_horizon,consensus_acc,disagreement_rate,acc_1,acc_2,acc_3,acc_4";

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Load weights from here instead of training.
    pub checkpoints: Option<PathBuf>,
    /// Save freshly trained weights here.
    pub save_checkpoints: Option<PathBuf>,
    /// Where `predictions.jsonl` and the test episode logs go when the spec
    /// asks for recorded predictions.
    pub artifacts: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<PredictionLogRecord>,
    /// Consensus rows re-scored at each `alpha_beta_grid` entry.
    pub alpha_beta: Vec<AlphaBetaRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaBetaRow {
    pub alpha: f64,
    pub beta: f64,
    pub row: MetricsRow,
}

/// Reads and validates a JSON experiment spec.
pub fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn csv_string(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{:.6},{:.6},{},{}",
            r.scenario,
            r.robots,
            r.obs_frames,
            r.forecast_frames,
            r.subsample,
            r.model,
            r.seed,
            r.acc_t,
            r.acc_horizon,
            cell(r.consensus_acc),
            cell(r.disagreement_rate)
        );
        for a in r.per_robot {
            s.push(',');
            s.push_str(&cell(a));
        }
        s.push('\n');
    }
    s
}

/// The consensus grid as CSV: `alpha,beta` followed by the usual columns.
pub fn alpha_beta_csv(rows: &[AlphaBetaRow]) -> String {
    let mut s = format!("alpha,beta,{CSV_HEADER}\n");
    for r in rows {
        let body = csv_string(std::slice::from_ref(&r.row));
        let line = body.lines().nth(1).unwrap_or_default();
        let _ = writeln!(s, "{},{},{line}", r.alpha, r.beta);
    }
    s
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_file(path, csv_string(rows).as_bytes())
}

pub fn write_json(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(rows)?.as_bytes())
}

fn write_jsonl<T: serde::Serialize>(items: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Path of a test episode log written for replay.
pub fn episode_log_path(artifacts: &Path, seed: u64, index: usize) -> PathBuf {
    artifacts.join("episodes").join(format!("seed{seed}")).join(format!("ep{index:04}.jsonl"))
}

fn score(evals: &[(&EpisodeEval, &[StationId])], model: ModelSel, n: usize, robot: Option<usize>) -> Result<Accuracy> {
    let mut acc = Accuracy::default();
    for (ev, labels) in evals {
        let Some(preds) = ev.preds.get(&model) else { continue };
        let picked: Vec<FramePrediction> = preds
            .iter()
            .filter(|p| robot.is_none_or(|r| p.robot == r))
            .cloned()
            .collect();
        acc.merge(&compute_metrics(&picked, labels, n)?);
    }
    Ok(acc)
}

fn rows_for(
    spec: &ExperimentSpec,
    seed: u64,
    coord: &EvalCoord,
    evals: &[(&EpisodeEval, &[StationId])],
) -> Result<Vec<MetricsRow>> {
    let n = coord.horizon;
    let mut rows = Vec::with_capacity(spec.models.len());
    for &model in &spec.models {
        let acc = score(evals, model, n, None)?;
        let (Some(acc_t), Some(acc_horizon)) = (acc.acc_t(), acc.acc_horizon()) else {
            return Err(Error::EmptyDataset("no evaluated frames"));
        };
        let individual = if model == ModelSel::CollectiveConsensus {
            ModelSel::CollectiveGru
        } else {
            model
        };
        let mut per_robot = [None; 4];
        for (r, slot) in per_robot.iter_mut().enumerate() {
            *slot = score(evals, individual, n, Some(r))?.acc_t();
        }
        let (consensus_acc, disagreement_rate) = if model == ModelSel::CollectiveConsensus {
            let rounds: u64 = evals.iter().map(|e| e.0.rounds).sum();
            let dis: u64 = evals.iter().map(|e| e.0.disagreements).sum();
            (Some(acc_t), (rounds > 0).then(|| dis as f64 / rounds as f64))
        } else {
            (None, None)
        };
        rows.push(MetricsRow {
            scenario: spec.scenario,
            robots: coord.robots,
            obs_frames: coord.window,
            forecast_frames: coord.horizon,
            subsample: coord.frames,
            model,
            seed,
            acc_t,
            acc_horizon,
            consensus_acc,
            disagreement_rate,
            per_robot,
            accuracy: acc,
        });
    }
    Ok(rows)
}

fn wants(spec: &ExperimentSpec) -> (bool, bool) {
    (
        spec.models.iter().any(|m| m.needs_ego()),
        spec.models.iter().any(|m| m.needs_collective()),
    )
}

/// Scores the spec's models at one coordinate on the test episodes of a
/// prepared seed.
pub fn evaluate_coord(
    spec: &ExperimentSpec,
    seed: u64,
    ctx: &SeedContext,
    models: &TrainedModels,
    coord: &EvalCoord,
    record: bool,
) -> Result<(Vec<MetricsRow>, Vec<PredictionLogRecord>)> {
    let rec = Recording {
        predictions: record,
        messages: false,
    };
    let test: Vec<&EpisodeData> = ctx.dataset.test().collect();
    let evals: Vec<EpisodeEval> = test
        .par_iter()
        .map(|ep| evaluate_episode(ep, ctx.embeddings.get(&ep.index), models, spec, coord, rec))
        .collect::<Result<_>>()?;
    let labelled: Vec<(&EpisodeEval, &[StationId])> = evals.iter().zip(&test).map(|(e, ep)| (e, ep.labels())).collect();
    let rows = rows_for(spec, seed, coord, &labelled)?;
    let mut records = Vec::new();
    for mut ev in evals {
        ev.records.iter_mut().for_each(|r| r.seed = seed);
        records.append(&mut ev.records);
    }
    Ok((rows, records))
}

/// Trains (or loads) every model for every seed and scores each sweep
/// coordinate on the held-out test episodes.
pub fn run_sweep(spec: &ExperimentSpec, opts: &SweepOptions) -> Result<SweepOutput> {
    spec.validate()?;
    let (want_ego, want_coll) = wants(spec);
    let record = spec.record_predictions && opts.artifacts.is_some();
    let mut out = SweepOutput::default();
    for &seed in &spec.seeds {
        let test_only = opts.checkpoints.is_some() || !spec.needs_training();
        let gcn = match &opts.checkpoints {
            Some(dir) if spec.needs_training() => Some(load_gcn(dir, seed)?),
            _ => None,
        };
        let mut ctx = SeedContext::prepare(spec, seed, gcn, test_only)?;
        if let (Some(dir), Some(g), None) = (&opts.save_checkpoints, &ctx.gcn, &opts.checkpoints) {
            save_gcn(dir, seed, g, &spec.model)?;
        }
        if record {
            let art = opts.artifacts.as_deref().expect("checked above");
            for ep in ctx.dataset.test() {
                let mut buf = Vec::new();
                ep.log.write_jsonl(&mut buf)?;
                write_file(&episode_log_path(art, seed, ep.index), &buf)?;
            }
        }
        for &[window, horizon] in &spec.horizons {
            for &frames in &spec.subsampling {
                let pair = if !(want_ego || want_coll) {
                    TemporalPair {
                        ego: None,
                        collective: None,
                    }
                } else if let Some(dir) = &opts.checkpoints {
                    load_pair(dir, seed, window, horizon, frames, want_ego, want_coll)?
                } else {
                    let p = train_temporal_pair(&mut ctx, spec, window, horizon, frames, want_ego, want_coll)?;
                    if let Some(dir) = &opts.save_checkpoints {
                        save_pair(dir, seed, window, &p, &spec.model)?;
                    }
                    p
                };
                let models = TrainedModels {
                    gcn: ctx.gcn.clone(),
                    ego: pair.ego,
                    collective: pair.collective,
                };
                for &robots in &spec.robot_counts {
                    let coord = EvalCoord {
                        robots,
                        window,
                        horizon,
                        frames,
                    };
                    let (rows, records) = evaluate_coord(spec, seed, &ctx, &models, &coord, record)?;
                    out.rows.extend(rows);
                    out.records.extend(records);
                    if spec.models.contains(&ModelSel::CollectiveConsensus) {
                        for &[alpha, beta] in &spec.alpha_beta_grid {
                            let sub = ExperimentSpec {
                                models: vec![ModelSel::CollectiveConsensus],
                                alpha,
                                beta,
                                ..spec.clone()
                            };
                            let (rows, _) = evaluate_coord(&sub, seed, &ctx, &models, &coord, false)?;
                            out.alpha_beta.extend(rows.into_iter().map(|row| AlphaBetaRow { alpha, beta, row }));
                        }
                    }
                }
            }
        }
    }
    out.rows.sort_by_key(|r| (r.scenario, r.robots, r.obs_frames, r.forecast_frames, r.subsample, r.model, r.seed));
    out.alpha_beta.sort_by(|a, b| {
        let key = |r: &AlphaBetaRow| (r.row.robots, r.row.obs_frames, r.row.subsample, r.row.seed);
        a.alpha.total_cmp(&b.alpha).then(a.beta.total_cmp(&b.beta)).then(key(a).cmp(&key(b)))
    });
    if record {
        let art = opts.artifacts.as_deref().expect("checked above");
        write_jsonl(&out.records, &art.join("predictions.jsonl"))?;
    }
    Ok(out)
}

/// Trains every model the spec needs and saves the weights under `dir`
/// without evaluating.
pub fn train_checkpoints(spec: &ExperimentSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    let (want_ego, want_coll) = wants(spec);
    for &seed in &spec.seeds {
        let mut ctx = SeedContext::prepare(spec, seed, None, !spec.needs_training())?;
        if let Some(g) = &ctx.gcn {
            save_gcn(dir, seed, g, &spec.model)?;
        }
        if !(want_ego || want_coll) {
            continue;
        }
        for &[window, horizon] in &spec.horizons {
            for &frames in &spec.subsampling {
                let p = train_temporal_pair(&mut ctx, spec, window, horizon, frames, want_ego, want_coll)?;
                save_pair(dir, seed, window, &p, &spec.model)?;
            }
        }
    }
    Ok(())
}

/// Re-runs every sweep coordinate on one logged episode with saved weights.
/// Returns the emitted predictions and, when asked, every delivered message.
pub fn replay_episode(
    spec: &ExperimentSpec,
    seed: u64,
    log: EpisodeLog,
    episode: usize,
    checkpoints: &Path,
    messages: bool,
) -> Result<(Vec<PredictionLogRecord>, Vec<Delivery>)> {
    spec.validate()?;
    let (want_ego, want_coll) = wants(spec);
    let frames = observe_episode(&log, &spec.perception);
    let ep = EpisodeData {
        index: episode,
        log,
        frames,
    };
    let gcn = if spec.needs_training() {
        Some(load_gcn(checkpoints, seed)?)
    } else {
        None
    };
    let emb = gcn.as_ref().map(|g| embed_episode(&ep, &g.params, spec)).transpose()?;
    let mut records = Vec::new();
    let mut deliveries = Vec::new();
    for &[window, horizon] in &spec.horizons {
        for &sub in &spec.subsampling {
            let pair = if want_ego || want_coll {
                load_pair(checkpoints, seed, window, horizon, sub, want_ego, want_coll)?
            } else {
                TemporalPair {
                    ego: None,
                    collective: None,
                }
            };
            let models = TrainedModels {
                gcn: gcn.clone(),
                ego: pair.ego,
                collective: pair.collective,
            };
            for &robots in &spec.robot_counts {
                let coord = EvalCoord {
                    robots,
                    window,
                    horizon,
                    frames: sub,
                };
                let rec = Recording {
                    predictions: true,
                    messages,
                };
                let mut ev = evaluate_episode(&ep, emb.as_ref(), &models, spec, &coord, rec)?;
                ev.records.iter_mut().for_each(|r| r.seed = seed);
                records.append(&mut ev.records);
                deliveries.append(&mut ev.deliveries);
            }
        }
    }
    Ok((records, deliveries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_columns_and_blanks() {
        let row = MetricsRow {
            scenario: 3,
            robots: 2,
            obs_frames: 20,
            forecast_frames: 20,
            subsample: 10,
            model: ModelSel::CollectiveConsensus,
            seed: 7,
            acc_t: 0.5,
            acc_horizon: 0.25,
            consensus_acc: Some(0.5),
            disagreement_rate: Some(0.0),
            per_robot: [Some(1.0), None, Some(0.125), None],
            accuracy: Accuracy::default(),
        };
        let s = csv_string(&[row]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0].split(',').count(), 15);
        assert_eq!(
            lines[1],
            "3,2,20,20,10,collective_consensus,7,0.500000,0.250000,0.500000,0.000000,1.000000,,0.125000,"
        );
    }

    #[test]
    fn missing_spec_names_the_path() {
        let e = read_spec(Path::new("/nonexistent/spec.json")).unwrap_err();
        assert!(e.is_config_error());
        assert!(e.to_string().contains("/nonexistent/spec.json"));
    }
}
