use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use swarm_intent::baselines::{cvm_predict, kalman_step, KalmanConfig, KalmanTrack};
use swarm_intent::comms::{self, EmbeddingMsg, Message, NetworkModel, PredictionMsg};
use swarm_intent::consensus::{self, Vote, VoteInput};
use swarm_intent::geometry::Vec2;
use swarm_intent::graph::normalize_star;
use swarm_intent::harness::{self, ExperimentSpec, FramePrediction, SweepOptions};
use swarm_intent::models::{self, GcnParams, Matrix};
use swarm_intent::rng::stream;
use swarm_intent::world::{generate_episode, EpisodeLog, StationId, WorldConfig};

fn err(e: swarm_intent::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn station(id: u8) -> PyResult<StationId> {
    StationId::new(id).map_err(err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(Matrix::from_vec(rows.len(), cols, rows.concat()))
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// A simulated episode.
#[pyclass(name = "Episode", module = "swarm_intent_py")]
struct PyEpisode {
    log: EpisodeLog,
}

#[pymethods]
impl PyEpisode {
    #[staticmethod]
    fn generate(scenario: u8, robots: usize, seed: u64, ticks: usize) -> PyResult<Self> {
        let cfg = WorldConfig::standard(scenario, robots, seed);
        Ok(PyEpisode {
            log: generate_episode(&cfg, ticks).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(PyEpisode {
            log: EpisodeLog::read_jsonl(text.as_bytes()).map_err(err)?,
        })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.log.write_jsonl(&mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.log.states.len()
    }

    /// Goal station (1..=4) at every tick.
    fn labels(&self) -> Vec<u8> {
        self.log.labels.iter().map(|s| s.get()).collect()
    }

    fn human_positions(&self) -> Vec<(f64, f64)> {
        self.log
            .states
            .iter()
            .map(|s| (s.human.position.x, s.human.position.y))
            .collect()
    }

    fn stations(&self) -> Vec<(u8, (f64, f64))> {
        self.log
            .config
            .station_positions()
            .into_iter()
            .map(|(id, p)| (id.get(), (p.x, p.y)))
            .collect()
    }
}

#[pyfunction]
fn visibility_ratios(counts: Vec<usize>) -> PyResult<Vec<f64>> {
    consensus::visibility_ratios(&counts).map_err(err)
}

#[pyfunction]
fn normalize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    consensus::normalize(&values).map_err(err)
}

#[pyfunction]
fn weighted_votes(v: Vec<f64>, c: Vec<f64>, alpha: f64, beta: f64) -> PyResult<Vec<f64>> {
    consensus::weighted_votes(&v, &c, alpha, beta).map_err(err)
}

/// Weighted vote over `(robot, action, confidence, detections)` tuples.
/// Returns `(decided, per-robot votes, per-class totals, tie_break)`.
#[pyfunction]
#[pyo3(signature = (votes, alpha=0.5, beta=0.5, fallback=true))]
fn decide(
    votes: Vec<(usize, u8, f64, usize)>,
    alpha: f64,
    beta: f64,
    fallback: bool,
) -> PyResult<(u8, Vec<f64>, [f64; 4], bool)> {
    let votes = votes
        .into_iter()
        .map(|(robot, a, confidence, detections)| {
            Ok(Vote {
                robot,
                action: station(a)?,
                confidence,
                detections,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let input = VoteInput { votes, alpha, beta };
    let r = if fallback {
        consensus::decide_with_fallback(&input)
    } else {
        consensus::decide(&input)
    }
    .map_err(err)?;
    Ok((r.decided.get(), r.votes, r.totals, r.tie_break))
}

/// Normalized star adjacency for the given hub-to-object edge weights.
#[pyfunction]
fn star_adjacency(weights: Vec<f64>) -> Vec<Vec<f64>> {
    to_rows(normalize_star(&weights).matrix())
}

/// Randomly initialized two-layer GCN with a spatial head.
#[pyclass(name = "Gcn", module = "swarm_intent_py")]
struct PyGcn {
    params: GcnParams,
}

#[pymethods]
impl PyGcn {
    #[new]
    #[pyo3(signature = (input_dim, hidden, embed, seed=0))]
    fn new(input_dim: usize, hidden: usize, embed: usize, seed: u64) -> Self {
        PyGcn {
            params: GcnParams::new(&mut stream(seed, &[]), input_dim, hidden, embed, 1.0),
        }
    }

    /// Returns `(node embeddings, spatial logits)`.
    fn forward(&self, adjacency: Vec<Vec<f64>>, features: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, [f64; 4])> {
        let a = swarm_intent::graph::NormalizedAdjacency(matrix(adjacency)?);
        let out = models::gcn_forward(&a, &matrix(features)?, &self.params).map_err(err)?;
        Ok((to_rows(&out.h2), out.logits))
    }
}

#[pyfunction]
fn calibrate_temperature(logits: Vec<[f64; 4]>, labels: Vec<usize>) -> PyResult<f64> {
    Ok(models::calibrate_temperature(&logits, &labels).map_err(err)?.temperature)
}

#[pyfunction]
fn aggregate_embeddings(embeddings: Vec<Vec<f64>>, dim: usize) -> Vec<f64> {
    let msgs: Vec<EmbeddingMsg> = embeddings
        .into_iter()
        .enumerate()
        .map(|(i, embedding)| EmbeddingMsg {
            sender: i,
            tick: 0,
            embedding,
        })
        .collect();
    comms::aggregate_embeddings(&msgs, dim)
}

/// Simulated lossy pub/sub transport.
#[pyclass(name = "Transport", module = "swarm_intent_py")]
struct PyTransport {
    inner: comms::Transport,
}

#[pymethods]
impl PyTransport {
    #[new]
    #[pyo3(signature = (robots, p_drop=0.0, latency=0, max_jitter=0, seed=0))]
    fn new(robots: Vec<usize>, p_drop: f64, latency: u64, max_jitter: u64, seed: u64) -> PyResult<Self> {
        let net = NetworkModel {
            p_drop,
            latency,
            max_jitter,
            seed,
        };
        Ok(PyTransport {
            inner: comms::Transport::new(net, &robots).map_err(err)?,
        })
    }

    fn publish_embedding(&mut self, sender: usize, tick: u64, embedding: Vec<f64>) -> PyResult<()> {
        let m = Message::Embedding(EmbeddingMsg {
            sender,
            tick,
            embedding,
        });
        self.inner.publish(m, tick).map_err(err)
    }

    fn publish_prediction(&mut self, sender: usize, tick: u64, action: u8, confidence: f64, visibility: usize) -> PyResult<()> {
        let m = Message::Prediction(PredictionMsg {
            sender,
            tick,
            action: station(action)?,
            confidence,
            visibility,
            forecast: Vec::new(),
        });
        self.inner.publish(m, tick).map_err(err)
    }

    /// Returns `(embeddings, predictions)` due for `robot` by `tick`:
    /// `[(sender, tick, embedding)]` and `[(sender, tick, action, confidence, visibility)]`.
    #[allow(clippy::type_complexity)]
    fn collect(&mut self, robot: usize, tick: u64) -> (Vec<(usize, u64, Vec<f64>)>, Vec<(usize, u64, u8, f64, usize)>) {
        let (e, p) = self.inner.collect(robot, tick);
        (
            e.into_iter().map(|m| (m.sender, m.tick, m.embedding)).collect(),
            p.into_iter()
                .map(|m| (m.sender, m.tick, m.action.get(), m.confidence, m.visibility))
                .collect(),
        )
    }
}

/// Constant-velocity Kalman track of the human's head.
#[pyclass(name = "KalmanTrack", module = "swarm_intent_py")]
struct PyKalmanTrack {
    inner: KalmanTrack,
}

#[pymethods]
impl PyKalmanTrack {
    #[new]
    fn new(x: f64, y: f64) -> Self {
        PyKalmanTrack {
            inner: KalmanTrack::new(Vec2::new(x, y), KalmanConfig::default()),
        }
    }

    #[pyo3(signature = (measurement=None))]
    fn step(&mut self, measurement: Option<(f64, f64)>) {
        self.inner = kalman_step(&self.inner, measurement.map(|(x, y)| Vec2::new(x, y)));
    }

    #[getter]
    fn position(&self) -> (f64, f64) {
        let p = self.inner.position();
        (p.x, p.y)
    }

    #[getter]
    fn velocity(&self) -> (f64, f64) {
        let v = self.inner.velocity();
        (v.x, v.y)
    }

    fn predict(&self, stations: Vec<(u8, (f64, f64))>) -> PyResult<u8> {
        let st = stations
            .into_iter()
            .map(|(id, (x, y))| Ok((station(id)?, Vec2::new(x, y))))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(cvm_predict(&self.inner, &st).map_err(err)?.get())
    }
}

/// `(acc_t, acc_horizon)` for `(robot, tick, action, forecast)` predictions.
#[pyfunction]
fn compute_metrics(preds: Vec<(usize, usize, u8, Vec<u8>)>, labels: Vec<u8>, n: usize) -> PyResult<(f64, f64)> {
    let preds = preds
        .into_iter()
        .map(|(robot, tick, a, f)| {
            Ok(FramePrediction {
                robot,
                tick,
                action: station(a)?,
                forecast: f.into_iter().map(station).collect::<PyResult<_>>()?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let labels = labels.into_iter().map(station).collect::<PyResult<Vec<_>>>()?;
    let acc = harness::compute_metrics(&preds, &labels, n).map_err(err)?;
    match (acc.acc_t(), acc.acc_horizon()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(PyValueError::new_err("no predictions")),
    }
}

/// Desk-scale experiment spec as JSON.
#[pyfunction]
fn desk_scale_spec(scenario: u8) -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentSpec::desk_scale(scenario)).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs a sweep from a JSON spec and returns the metrics CSV.
#[pyfunction]
fn run_sweep(py: Python<'_>, spec_json: &str) -> PyResult<String> {
    let spec: ExperimentSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = py
        .detach(|| harness::run_sweep(&spec, &SweepOptions::default()))
        .map_err(err)?;
    Ok(harness::csv_string(&out.rows))
}

#[pymodule]
fn swarm_intent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyGcn>()?;
    m.add_class::<PyTransport>()?;
    m.add_class::<PyKalmanTrack>()?;
    m.add_function(wrap_pyfunction!(visibility_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_votes, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(star_adjacency, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(desk_scale_spec, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
