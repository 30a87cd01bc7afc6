//! In-process pub/sub transport between robots with per-link loss and
//! latency.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::world::StationId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMsg {
    pub sender: usize,
    pub tick: u64,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMsg {
    pub sender: usize,
    pub tick: u64,
    pub action: StationId,
    pub confidence: f64,
    /// Detections by the sender over its current observation window.
    pub visibility: usize,
    /// Calibrated top class and confidence for each forecast step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forecast: Vec<(StationId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Embedding(EmbeddingMsg),
    Prediction(PredictionMsg),
}

impl Message {
    pub fn sender(&self) -> usize {
        match self {
            Message::Embedding(m) => m.sender,
            Message::Prediction(m) => m.sender,
        }
    }

    pub fn tick(&self) -> u64 {
        match self {
            Message::Embedding(m) => m.tick,
            Message::Prediction(m) => m.tick,
        }
    }

    fn channel(&self) -> u8 {
        match self {
            Message::Embedding(_) => 0,
            Message::Prediction(_) => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Message::Embedding(m) if m.embedding.iter().any(|v| !v.is_finite()) => {
                Err(Error::InvalidConfig("embedding message with non-finite entries".into()))
            }
            Message::Prediction(m)
                if std::iter::once(m.confidence)
                    .chain(m.forecast.iter().map(|f| f.1))
                    .any(|c| !(c > 0.0 && c <= 1.0)) =>
            {
                Err(Error::InvalidConfig(format!(
                    "prediction from robot {} has a confidence outside (0, 1]",
                    m.sender
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    /// Independent drop probability on every directed link.
    pub p_drop: f64,
    /// Base delivery delay in ticks.
    pub latency: u64,
    /// Extra per-message delay drawn uniformly from `0..=max_jitter`.
    pub max_jitter: u64,
    pub seed: u64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            p_drop: 0.0,
            latency: 0,
            max_jitter: 0,
            seed: 0,
        }
    }
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::InvalidConfig(format!("p_drop {} outside [0, 1]", self.p_drop)));
        }
        Ok(())
    }
}

/// One delivered message, as written by the replay dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub delivered_tick: u64,
    pub receiver: usize,
    #[serde(flatten)]
    pub message: Message,
}

/// Mailbox keyed by (receiver, channel, sender, sent tick): a second publish
/// with the same key overwrites the first, so the latest wins.
#[derive(Clone, Debug)]
pub struct Transport {
    network: NetworkModel,
    robots: Vec<usize>,
    pending: BTreeMap<(usize, u8, usize, u64), (u64, Message)>,
    record: bool,
    log: Vec<Delivery>,
}

impl Transport {
    pub fn new(network: NetworkModel, robots: &[usize]) -> Result<Self> {
        network.validate()?;
        let mut robots = robots.to_vec();
        robots.sort_unstable();
        robots.dedup();
        Ok(Transport {
            network,
            robots,
            pending: BTreeMap::new(),
            record: false,
            log: Vec::new(),
        })
    }

    /// Keep a copy of every delivered message for [`Transport::dump_jsonl`].
    pub fn with_recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn robots(&self) -> &[usize] {
        &self.robots
    }

    /// Enqueues `msg` for every other robot, dropping each link independently.
    pub fn publish(&mut self, msg: Message, tick: u64) -> Result<()> {
        msg.validate()?;
        let sender = msg.sender();
        let channel = msg.channel();
        for &receiver in &self.robots {
            if receiver == sender {
                continue;
            }
            let mut rng = stream(
                self.network.seed,
                &[tag("link"), sender as u64, receiver as u64, msg.tick(), channel as u64],
            );
            let dropped = self.network.p_drop > 0.0 && rng.random::<f64>() < self.network.p_drop;
            let jitter = if self.network.max_jitter > 0 {
                rng.random_range(0..=self.network.max_jitter)
            } else {
                0
            };
            let key = (receiver, channel, sender, msg.tick());
            if dropped {
                self.pending.remove(&key);
                continue;
            }
            let due = tick + self.network.latency + jitter;
            self.pending.insert(key, (due, msg.clone()));
        }
        Ok(())
    }

    /// Removes and returns everything due for `robot` at or before `tick`,
    /// ordered by sender then sent tick.
    pub fn collect(&mut self, robot: usize, tick: u64) -> (Vec<EmbeddingMsg>, Vec<PredictionMsg>) {
        let due: Vec<_> = self
            .pending
            .range((robot, 0, 0, 0)..=(robot, u8::MAX, usize::MAX, u64::MAX))
            .filter(|(_, (d, _))| *d <= tick)
            .map(|(k, _)| *k)
            .collect();
        let mut emb = Vec::new();
        let mut pred = Vec::new();
        for k in due {
            let (_, msg) = self.pending.remove(&k).expect("key just listed");
            if self.record {
                self.log.push(Delivery {
                    delivered_tick: tick,
                    receiver: robot,
                    message: msg.clone(),
                });
            }
            match msg {
                Message::Embedding(m) => emb.push(m),
                Message::Prediction(m) => pred.push(m),
            }
        }
        (emb, pred)
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.log
    }

    /// One JSON object per delivered message.
    pub fn dump_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for d in &self.log {
            serde_json::to_writer(&mut w, d)?;
            writeln!(w).map_err(|e| Error::io("<message dump>", e))?;
        }
        Ok(())
    }
}

/// Arithmetic mean of the received embeddings, or zeros of length `dim`.
pub fn aggregate_embeddings(msgs: &[EmbeddingMsg], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if msgs.is_empty() {
        return out;
    }
    for m in msgs {
        for (o, v) in out.iter_mut().zip(&m.embedding) {
            *o += v;
        }
    }
    let n = msgs.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}
