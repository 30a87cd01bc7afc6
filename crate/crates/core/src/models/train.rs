//! Mini-batch training with early stopping on validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gcn::{gcn_backward, gcn_forward, gcn_forward_cached, GcnParams};
use super::temporal::{
    pipeline_loss, pipeline_loss_grad, sequence_loss, sequence_loss_grad, JointParams, PipelineSample,
    TemporalKind, TemporalModel,
};
use super::{cross_entropy, Matrix, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::rng::{stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 30,
            init_scale: 1.0,
            seed: 0,
            optimizer: Optimizer::adam(),
            patience: 5,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch size, epochs and patience must be positive".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidConfig("init scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

struct OptState<P> {
    m: P,
    v: P,
    t: i32,
}

fn apply_update<P: Params + Clone>(params: &mut P, grads: &P, cfg: &TrainConfig, st: &mut OptState<P>) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => params.axpy(-lr, grads),
        Optimizer::Momentum { beta } => {
            st.m.scale(beta);
            st.m.axpy(1.0, grads);
            params.axpy(-lr, &st.m);
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            let g = grads.tensors();
            let m = st.m.tensors_mut();
            let v = st.v.tensors_mut();
            for (((_, p), (_, g)), ((_, m), (_, v))) in params
                .tensors_mut()
                .into_iter()
                .zip(g)
                .zip(m.into_iter().zip(v))
            {
                let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn mean_loss<P, S>(params: &P, data: &[S], loss: &impl Fn(&P, &S) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        total += loss(params, s)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Generic trainer. `loss_grad` adds one sample's gradient into its third
/// argument and returns that sample's loss; `loss` evaluates without
/// gradients. Returns the parameters with the best validation loss (training
/// loss when `val` is empty).
pub fn fit<P, S>(
    init: P,
    train: &[S],
    val: &[S],
    cfg: &TrainConfig,
    loss_grad: impl Fn(&P, &S, &mut P) -> Result<f64>,
    loss: impl Fn(&P, &S) -> Result<f64>,
) -> Result<(P, TrainCurve)>
where
    P: Params + Clone,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    let mut params = init;
    let mut st = OptState {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let mut curve = TrainCurve {
        initial_loss: mean_loss(&params, train, &loss)?,
        ..TrainCurve::default()
    };
    let eval = |p: &P| -> Result<f64> {
        if val.is_empty() {
            mean_loss(p, train, &loss)
        } else {
            mean_loss(p, val, &loss)
        }
    };
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &[tag("epoch"), epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += loss_grad(&params, &train[i], &mut grads)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            batch_loss *= inv;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss {batch_loss}, |params|^2 {:.3e}", params.sum_sq()),
                });
            }
            grads.scale(inv);
            if cfg.clip_norm > 0.0 {
                let norm = grads.sum_sq().sqrt();
                if norm > cfg.clip_norm {
                    grads.scale(cfg.clip_norm / norm);
                }
            }
            apply_update(&mut params, &grads, cfg, &mut st);
            epoch_loss += batch_loss * chunk.len() as f64;
        }
        curve.train_loss.push(epoch_loss / train.len() as f64);
        let v = eval(&params)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                detail: "validation loss".into(),
            });
        }
        curve.val_loss.push(v);
        log::debug!("epoch {epoch}: train {:.4} val {v:.4}", curve.train_loss[epoch]);
        if v < best_val {
            best_val = v;
            best = params.clone();
            curve.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, curve))
}

/// One frame for the spatial (GNN-only) objective.
#[derive(Clone, Debug)]
pub struct GcnSample {
    pub adjacency: NormalizedAdjacency,
    pub features: Matrix,
    pub label: usize,
}

/// Trains the GCN and its spatial head on frame-t labels.
pub fn train_gcn(
    train: &[GcnSample],
    val: &[GcnSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(GcnParams, TrainCurve)> {
    let mut rng = stream(cfg.seed, &[tag("gcn-init")]);
    let init = GcnParams::new(&mut rng, 2 * model.feature_dim, model.gcn_hidden, model.embed_dim, cfg.init_scale);
    fit(
        init,
        train,
        val,
        cfg,
        |p, s, g| {
            let (out, cache) = gcn_forward_cached(&s.adjacency, &s.features, p)?;
            let (l, d) = cross_entropy(&out.logits, s.label);
            let zero = vec![0.0; p.embed_dim()];
            gcn_backward(p, &cache, &out, &d, &zero, g);
            Ok(l)
        },
        |p, s| Ok(cross_entropy(&gcn_forward(&s.adjacency, &s.features, p)?.logits, s.label).0),
    )
}

/// Precomputed GRU inputs and labels for t, t+1, ..., t+n.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqSample {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Trains a GRU on precomputed inputs (the GCN is frozen).
pub fn train_temporal(
    kind: TemporalKind,
    train: &[SeqSample],
    val: &[SeqSample],
    model: &ModelConfig,
    window: usize,
    cfg: &TrainConfig,
) -> Result<(TemporalModel, TrainCurve)> {
    let mut rng = stream(cfg.seed, &[tag("gru-init"), kind as u64]);
    let mut m = TemporalModel::new(&mut rng, kind, model, window, cfg.init_scale);
    let expected = model.gru_input(kind);
    for s in train.iter().chain(val) {
        if s.inputs.len() != window {
            return Err(Error::WindowLength {
                expected: window,
                actual: s.inputs.len(),
            });
        }
        if s.labels.len() != model.horizon + 1 {
            return Err(Error::Misaligned(format!(
                "expected {} labels per sample, got {}",
                model.horizon + 1,
                s.labels.len()
            )));
        }
        if let Some(x) = s.inputs.iter().find(|x| x.len() != expected) {
            return Err(Error::DimensionMismatch {
                context: "gru input",
                expected,
                actual: x.len(),
            });
        }
    }
    let (params, curve) = fit(
        m.params.clone(),
        train,
        val,
        cfg,
        |p, s, g| Ok(sequence_loss_grad(p, &s.inputs, &s.labels, g, false)?.0),
        |p, s| sequence_loss(p, &s.inputs, &s.labels),
    )?;
    m.params = params;
    Ok((m, curve))
}

/// End-to-end training of GCN and GRU through the shared embedding.
pub fn train_joint(
    init: JointParams,
    kind: TemporalKind,
    model: &ModelConfig,
    train: &[PipelineSample],
    val: &[PipelineSample],
    cfg: &TrainConfig,
) -> Result<(JointParams, TrainCurve)> {
    let mode = model.collective_mode;
    fit(
        init,
        train,
        val,
        cfg,
        |p, s, g| pipeline_loss_grad(p, kind, mode, s, g),
        |p, s| pipeline_loss(p, kind, mode, s),
    )
}
