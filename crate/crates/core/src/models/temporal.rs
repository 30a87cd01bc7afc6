//! Ego and collective GRU predictors, and the end-to-end GCN -> GRU loss used
//! for joint training and gradient checks.

use serde::{Deserialize, Serialize};

use super::gcn::{gcn_backward, gcn_forward_cached, GcnParams};
use super::gru::{gru_step_backward, gru_step_cached, GruParams, GruStepCache};
use super::{argmax, cross_entropy, softmax_t, Matrix, ModelConfig, Params, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::perception::KEYPOINT_DIM;
use crate::world::StationId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    Ego,
    Collective,
}

/// How the collective GRU sees neighbour embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveMode {
    /// `[ego, neighbour mean, keypoints]`, width 2E + 34.
    #[default]
    Separate,
    /// `[mean over ego and neighbours, keypoints]`, width E + 34.
    MeanWithEgo,
}

/// One observed frame as seen by one robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInput {
    /// Own human-node embedding; zeros when the human was not detected.
    pub embedding: Vec<f64>,
    /// Mean of received neighbour embeddings; zeros when none arrived.
    pub neighbor_mean: Vec<f64>,
    pub neighbor_count: usize,
    /// Flattened keypoints, zeros when absent.
    pub keypoints: Vec<f64>,
}

impl FrameInput {
    pub fn ego(embedding: Vec<f64>, keypoints: Vec<f64>) -> Self {
        let e = embedding.len();
        FrameInput {
            embedding,
            neighbor_mean: vec![0.0; e],
            neighbor_count: 0,
            keypoints,
        }
    }
}

/// GRU input vector for one frame.
pub fn build_input(kind: TemporalKind, mode: CollectiveMode, f: &FrameInput) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * f.embedding.len() + KEYPOINT_DIM);
    match (kind, mode) {
        (TemporalKind::Ego, _) => x.extend_from_slice(&f.embedding),
        (TemporalKind::Collective, CollectiveMode::Separate) => {
            x.extend_from_slice(&f.embedding);
            x.extend_from_slice(&f.neighbor_mean);
        }
        (TemporalKind::Collective, CollectiveMode::MeanWithEgo) => {
            let k = f.neighbor_count as f64;
            x.extend(
                f.embedding
                    .iter()
                    .zip(&f.neighbor_mean)
                    .map(|(e, m)| (e + k * m) / (k + 1.0)),
            );
        }
    }
    x.extend_from_slice(&f.keypoints);
    x
}

/// Derivative of the input block w.r.t. the ego embedding (a scalar factor).
fn ego_input_factor(kind: TemporalKind, mode: CollectiveMode, f: &FrameInput) -> f64 {
    match (kind, mode) {
        (TemporalKind::Collective, CollectiveMode::MeanWithEgo) => 1.0 / (f.neighbor_count as f64 + 1.0),
        _ => 1.0,
    }
}

/// Output of a temporal model for one robot at one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub robot: usize,
    pub tick: u64,
    pub logits: [f64; NUM_CLASSES],
    /// Temperature-scaled probabilities for frame t.
    pub probs: [f64; NUM_CLASSES],
    /// Temperature-scaled probabilities for t+1..t+n.
    pub forecast: Vec<[f64; NUM_CLASSES]>,
    pub confidence: f64,
    pub action: StationId,
}

impl PredictionRecord {
    /// Builds a record from raw logits for frame t and each forecast step.
    pub fn from_logits(robot: usize, tick: u64, logits: &[[f64; NUM_CLASSES]], temperature: f64) -> Self {
        let to_arr = |z: &[f64; NUM_CLASSES]| {
            let p = softmax_t(z, temperature);
            [p[0], p[1], p[2], p[3]]
        };
        let probs = to_arr(&logits[0]);
        let best = argmax(&logits[0]);
        PredictionRecord {
            robot,
            tick,
            logits: logits[0],
            probs,
            forecast: logits[1..].iter().map(to_arr).collect(),
            confidence: probs[best],
            action: StationId::from_index(best),
        }
    }

    /// Predicted station at horizon `h` (1-based).
    pub fn forecast_action(&self, h: usize) -> StationId {
        StationId::from_index(argmax(&self.forecast[h - 1]))
    }
}

/// A trained ego or collective GRU with its calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalModel {
    pub kind: TemporalKind,
    pub mode: CollectiveMode,
    pub window: usize,
    pub horizon: usize,
    pub params: GruParams,
    pub temperature: f64,
}

impl TemporalModel {
    pub fn new<R: rand::Rng>(
        rng: &mut R,
        kind: TemporalKind,
        cfg: &ModelConfig,
        window: usize,
        init_scale: f64,
    ) -> Self {
        TemporalModel {
            kind,
            mode: cfg.collective_mode,
            window,
            horizon: cfg.horizon,
            params: GruParams::new(rng, cfg.gru_input(kind), cfg.gru_hidden, init_scale),
            temperature: 1.0,
        }
    }

    pub fn inputs(&self, seq: &[FrameInput]) -> Vec<Vec<f64>> {
        seq.iter().map(|f| build_input(self.kind, self.mode, f)).collect()
    }

    /// Raw logits for frame t followed by the n forecast steps.
    pub fn logits(&self, seq: &[FrameInput]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        if seq.len() != self.window {
            return Err(Error::WindowLength {
                expected: self.window,
                actual: seq.len(),
            });
        }
        unroll_logits(&self.params, &self.inputs(seq), self.horizon)
    }

    pub fn predict(&self, robot: usize, tick: u64, seq: &[FrameInput]) -> Result<PredictionRecord> {
        let z = self.logits(seq)?;
        Ok(PredictionRecord::from_logits(robot, tick, &z, self.temperature))
    }
}

fn check_kind(model: &TemporalModel, kind: TemporalKind) -> Result<()> {
    if model.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "expected a {kind:?} model, got {:?}",
            model.kind
        )));
    }
    Ok(())
}

/// Ego-GRU prediction over `[embedding, keypoints]` frames.
pub fn ego_forward(model: &TemporalModel, robot: usize, tick: u64, seq: &[FrameInput]) -> Result<PredictionRecord> {
    check_kind(model, TemporalKind::Ego)?;
    model.predict(robot, tick, seq)
}

/// Collective-GRU prediction over `[ego, neighbour mean, keypoints]` frames.
pub fn collective_forward(
    model: &TemporalModel,
    robot: usize,
    tick: u64,
    seq: &[FrameInput],
) -> Result<PredictionRecord> {
    check_kind(model, TemporalKind::Collective)?;
    model.predict(robot, tick, seq)
}

/// Runs the GRU over the inputs, then `horizon` zero-input steps.
pub fn unroll_logits(params: &GruParams, inputs: &[Vec<f64>], horizon: usize) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let mut h = vec![0.0; params.hidden_dim()];
    for x in inputs {
        h = gru_step_cached(Some(x), &h, params)?.0;
    }
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(params.head(&h));
    for _ in 0..horizon {
        h = gru_step_cached(None, &h, params)?.0;
        out.push(params.head(&h));
    }
    Ok(out)
}

/// Mean cross-entropy over frame t and all forecast steps, with gradients
/// accumulated into `grads`. `labels[0]` is the label at t, `labels[h]` at
/// t+h. Returns the loss and, if requested, dL/dx for every input frame.
pub fn sequence_loss_grad(
    params: &GruParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
    grads: &mut GruParams,
    want_dx: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let horizon = labels.len().saturating_sub(1);
    let hdim = params.hidden_dim();
    let mut caches: Vec<GruStepCache> = Vec::with_capacity(inputs.len() + horizon);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut h = vec![0.0; hdim];
    for x in inputs {
        let (hn, c) = gru_step_cached(Some(x), &h, params)?;
        caches.push(c);
        h = hn;
    }
    states.push(h.clone());
    for _ in 0..horizon {
        let (hn, c) = gru_step_cached(None, &h, params)?;
        caches.push(c);
        h = hn;
        states.push(h.clone());
    }
    let scale = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    let mut d_states = Vec::with_capacity(states.len());
    for (s, &y) in states.iter().zip(labels) {
        let (l, mut g) = cross_entropy(&params.head(s), y);
        loss += l * scale;
        g.iter_mut().for_each(|v| *v *= scale);
        d_states.push(params.head_backward(s, &g, grads));
    }
    // Walk back: forecast steps, then observed frames.
    let mut dh = d_states.pop().expect("at least one state");
    let mut dxs = vec![Vec::new(); inputs.len()];
    for (k, cache) in caches.iter().enumerate().rev() {
        let (dx, dprev) = gru_step_backward(params, cache, &dh, grads, want_dx);
        dh = dprev;
        if k >= inputs.len() {
            // Step k produced state k - inputs.len() + 1; its predecessor is one earlier.
            let prev = k - inputs.len();
            for (a, b) in dh.iter_mut().zip(&d_states[prev]) {
                *a += b;
            }
        } else {
            dxs[k] = dx;
        }
    }
    Ok((loss, dxs))
}

/// Mean cross-entropy without gradients.
pub fn sequence_loss(params: &GruParams, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let z = unroll_logits(params, inputs, labels.len() - 1)?;
    let n = labels.len() as f64;
    Ok(z.iter().zip(labels).map(|(z, &y)| cross_entropy(z, y).0).sum::<f64>() / n)
}

/// A frame for end-to-end training: the raw scene graph when the human was
/// seen, plus the inputs that do not depend on this robot's GCN.
#[derive(Clone, Debug)]
pub struct PipelineFrame {
    pub graph: Option<(NormalizedAdjacency, Matrix)>,
    pub keypoints: Vec<f64>,
    pub neighbor_mean: Vec<f64>,
    pub neighbor_count: usize,
}

#[derive(Clone, Debug)]
pub struct PipelineSample {
    pub frames: Vec<PipelineFrame>,
    pub labels: Vec<usize>,
}

/// GCN and GRU parameters trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct JointParams {
    pub gcn: GcnParams,
    pub gru: GruParams,
}

impl Params for JointParams {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = self.gcn.tensors();
        v.extend(self.gru.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = self.gcn.tensors_mut();
        v.extend(self.gru.tensors_mut());
        v
    }
}

/// Loss of the whole GCN -> GRU -> head pipeline on one sample, with
/// gradients for both parameter sets. The spatial head of the GCN is not on
/// this path and receives no gradient.
pub fn pipeline_loss_grad(
    params: &JointParams,
    kind: TemporalKind,
    mode: CollectiveMode,
    sample: &PipelineSample,
    grads: &mut JointParams,
) -> Result<f64> {
    let e = params.gcn.embed_dim();
    let mut frames = Vec::with_capacity(sample.frames.len());
    let mut fwd = Vec::with_capacity(sample.frames.len());
    for f in &sample.frames {
        let (embedding, cached) = match &f.graph {
            Some((a, x)) => {
                let (out, cache) = gcn_forward_cached(a, x, &params.gcn)?;
                (out.h2.row(0).to_vec(), Some((out, cache)))
            }
            None => (vec![0.0; e], None),
        };
        frames.push(FrameInput {
            embedding,
            neighbor_mean: f.neighbor_mean.clone(),
            neighbor_count: f.neighbor_count,
            keypoints: f.keypoints.clone(),
        });
        fwd.push(cached);
    }
    let inputs: Vec<Vec<f64>> = frames.iter().map(|f| build_input(kind, mode, f)).collect();
    let (loss, dxs) = sequence_loss_grad(&params.gru, &inputs, &sample.labels, &mut grads.gru, true)?;
    let zero_logits = [0.0; NUM_CLASSES];
    for ((f, cached), dx) in frames.iter().zip(&fwd).zip(&dxs) {
        if let Some((out, cache)) = cached {
            let k = ego_input_factor(kind, mode, f);
            let d_emb: Vec<f64> = dx[..e].iter().map(|v| v * k).collect();
            gcn_backward(&params.gcn, cache, out, &zero_logits, &d_emb, &mut grads.gcn);
        }
    }
    Ok(loss)
}

pub fn pipeline_loss(params: &JointParams, kind: TemporalKind, mode: CollectiveMode, sample: &PipelineSample) -> Result<f64> {
    let mut scratch = params.zeros_like();
    pipeline_loss_grad(params, kind, mode, sample, &mut scratch)
}
