//! Independent oracles shared by the integration tests and the acceptance
//! gate. Nothing here calls the code under test except to build inputs.

#![allow(dead_code)]

pub mod tiny;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use swarm_intent::comms::{aggregate_embeddings, EmbeddingMsg, Message, NetworkModel, Transport};
use swarm_intent::consensus::{decide, Vote, VoteInput};
use swarm_intent::graph::normalize_star;
use swarm_intent::models::gcn::gcn_forward;
use swarm_intent::models::gru::GruParams;
use swarm_intent::models::temporal::{pipeline_loss, pipeline_loss_grad, JointParams, PipelineFrame, PipelineSample};
use swarm_intent::models::{CollectiveMode, GcnParams, Matrix, Params, TemporalKind};
use swarm_intent::perception::KEYPOINT_DIM;
use swarm_intent::StationId;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn to_dense(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// `D^-1/2 (A + I) D^-1/2` for a star whose hub is node 0, built densely.
pub fn dense_normalized_star(weights: &[f64]) -> DMatrix<f64> {
    let n = weights.len() + 1;
    let mut a = DMatrix::<f64>::identity(n, n);
    for (j, &w) in weights.iter().enumerate() {
        a[(0, j + 1)] = w;
        a[(j + 1, 0)] = w;
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, d.iter().map(|v| 1.0 / v.sqrt())));
    &s * a * &s
}

/// Two-layer GCN by plain dense products; returns node embeddings and the
/// spatial logits of the hub row.
pub fn dense_gcn(weights: &[f64], x: &Matrix, p: &GcnParams) -> (DMatrix<f64>, Vec<f64>) {
    let a = dense_normalized_star(weights);
    let n = weights.len() + 1;
    let ones = DMatrix::<f64>::from_element(n, 1, 1.0);
    let h1 = (&a * to_dense(x) * to_dense(&p.w1) + &ones * to_dense(&p.b1)).map(|v| v.max(0.0));
    let h2 = &a * h1 * to_dense(&p.w2) + &ones * to_dense(&p.b2);
    let logits = h2.rows(0, 1) * to_dense(&p.head_w) + to_dense(&p.head_b);
    (h2, logits.iter().copied().collect())
}

/// Largest absolute deviation between the library GCN and the dense oracle
/// over `graphs` random stars with 1 to 8 nodes.
pub fn gcn_oracle_max_error(graphs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for g in 0..graphs {
        let nodes = r.random_range(1..=8usize);
        let (fin, hid, emb) = (r.random_range(2..10), r.random_range(2..12), r.random_range(2..10));
        let params = GcnParams::new(&mut r, fin, hid, emb, 1.0);
        // Alternate raw pixel distances and affinities.
        let weights: Vec<f64> = (1..nodes)
            .map(|_| if g % 2 == 0 { r.random_range(1.0..500.0) } else { r.random_range(0.0..1.0) })
            .collect();
        let x = random_matrix(&mut r, nodes, fin);
        let out = gcn_forward(&normalize_star(&weights), &x, &params).expect("valid shapes");
        let (h2, logits) = dense_gcn(&weights, &x, &params);
        for i in 0..nodes {
            for j in 0..emb {
                worst = worst.max((out.h2[(i, j)] - h2[(i, j)]).abs());
            }
        }
        for k in 0..4 {
            worst = worst.max((out.logits[k] - logits[k]).abs());
        }
    }
    worst
}

fn random_sample(r: &mut ChaCha8Rng, fin: usize, emb: usize, window: usize, horizon: usize) -> PipelineSample {
    let frames = (0..window)
        .map(|_| {
            let graph = r.random_bool(0.8).then(|| {
                let nodes = r.random_range(1..=5usize);
                let w: Vec<f64> = (1..nodes).map(|_| r.random_range(0.05..1.0)).collect();
                (normalize_star(&w), random_matrix(r, nodes, fin))
            });
            let neighbor_count = r.random_range(0..3usize);
            PipelineFrame {
                graph,
                keypoints: (0..KEYPOINT_DIM).map(|_| r.random_range(0.0..1.0)).collect(),
                neighbor_mean: (0..emb).map(|_| r.random_range(-1.0..1.0)).collect(),
                neighbor_count,
            }
        })
        .collect();
    PipelineSample {
        frames,
        labels: (0..=horizon).map(|_| r.random_range(0..4usize)).collect(),
    }
}

fn batch_loss(p: &JointParams, kind: TemporalKind, mode: CollectiveMode, batch: &[PipelineSample]) -> f64 {
    batch.iter().map(|s| pipeline_loss(p, kind, mode, s).unwrap()).sum::<f64>() / batch.len() as f64
}

/// Worst relative error between analytic and central-difference gradients of
/// the full GCN -> GRU -> head loss over `batches` random mini-batches.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn pipeline_grad_check(batches: usize, eps: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (fin, hid, emb, gh) = (5, 4, 3, 4);
    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let (kind, mode) = match b % 3 {
            0 => (TemporalKind::Ego, CollectiveMode::Separate),
            1 => (TemporalKind::Collective, CollectiveMode::Separate),
            _ => (TemporalKind::Collective, CollectiveMode::MeanWithEgo),
        };
        let gru_in = match (kind, mode) {
            (TemporalKind::Collective, CollectiveMode::Separate) => 2 * emb + KEYPOINT_DIM,
            _ => emb + KEYPOINT_DIM,
        };
        let params = JointParams {
            gcn: GcnParams::new(&mut r, fin, hid, emb, 1.0),
            gru: GruParams::new(&mut r, gru_in, gh, 1.0),
        };
        let batch: Vec<PipelineSample> = (0..3).map(|_| random_sample(&mut r, fin, emb, 3, 3)).collect();
        let mut grads = params.zeros_like();
        for s in &batch {
            pipeline_loss_grad(&params, kind, mode, s, &mut grads).unwrap();
        }
        grads.scale(1.0 / batch.len() as f64);
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.data().to_vec()).collect();
        for (ti, g) in analytic.iter().enumerate() {
            for (k, &a) in g.iter().enumerate() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].1.data_mut()[k] += eps;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].1.data_mut()[k] -= eps;
                let n = (batch_loss(&plus, kind, mode, &batch) - batch_loss(&minus, kind, mode, &batch)) / (2.0 * eps);
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

/// Brute-force vote: per-class sums of `alpha * N_i / sum N + beta * c_i /
/// sum c`, max total, ties to the highest single confidence then the lowest
/// station. Returns `None` when every detection count is zero.
pub fn consensus_oracle(input: &VoteInput) -> Option<(StationId, [f64; 4], Vec<f64>)> {
    let n_sum: usize = input.votes.iter().map(|v| v.detections).sum();
    if n_sum == 0 {
        return None;
    }
    let c_sum: f64 = input.votes.iter().map(|v| v.confidence).sum();
    let weights: Vec<f64> = input
        .votes
        .iter()
        .map(|v| input.alpha * (v.detections as f64 / n_sum as f64) + input.beta * (v.confidence / c_sum))
        .collect();
    let mut totals = [0.0; 4];
    for class in 1..=4u8 {
        for (v, w) in input.votes.iter().zip(&weights) {
            if v.action.get() == class {
                totals[class as usize - 1] += w;
            }
        }
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for k in 0..4 {
        let voters: Vec<&Vote> = input.votes.iter().filter(|v| v.action.index() == k).collect();
        if voters.is_empty() {
            continue;
        }
        let conf = voters.iter().map(|v| v.confidence).fold(0.0, f64::max);
        best = match best {
            None => Some((k, totals[k], conf)),
            Some((bk, bt, bc)) => {
                if totals[k] > bt + 1e-12 || ((totals[k] - bt).abs() <= 1e-12 && conf > bc) {
                    Some((k, totals[k], conf))
                } else {
                    Some((bk, bt, bc))
                }
            }
        };
    }
    let (k, _, _) = best.expect("at least one vote");
    Some((StationId::from_index(k), totals, weights))
}

pub fn random_votes(r: &mut ChaCha8Rng) -> VoteInput {
    let m = r.random_range(1..=6usize);
    let alpha = [0.5, 0.0, 1.0, r.random_range(0.0..1.0)][r.random_range(0..4)];
    let beta = if alpha == 0.0 { 1.0 } else { [0.5, 0.0, r.random_range(0.0..1.0)][r.random_range(0..3)] };
    // Some inputs are built to tie: identical confidence and count, two classes.
    let tie = m % 2 == 0 && r.random_bool(0.2);
    let votes = (0..m)
        .map(|i| Vote {
            robot: i,
            action: StationId::from_index(if tie { i % 2 } else { r.random_range(0..4) }),
            confidence: if tie { 0.6 } else { r.random_range(0.01..=1.0) },
            detections: if tie { 4 } else { r.random_range(0..20) },
        })
        .collect();
    VoteInput { votes, alpha, beta }
}

#[derive(Debug, Default)]
pub struct ConsensusReport {
    pub cases: usize,
    pub oracle_mismatches: usize,
    pub sum_violations: usize,
    pub unanimity_violations: usize,
    pub scale_violations: usize,
    pub monotonicity_violations: usize,
}

impl ConsensusReport {
    pub fn clean(&self) -> bool {
        self.oracle_mismatches + self.sum_violations + self.unanimity_violations + self.scale_violations + self.monotonicity_violations
            == 0
    }
}

fn class_total(input: &VoteInput, k: usize) -> f64 {
    decide(input).map(|r| r.totals[k]).unwrap_or(0.0)
}

pub fn consensus_report(cases: usize, seed: u64) -> ConsensusReport {
    let mut r = rng(seed);
    let mut rep = ConsensusReport::default();
    while rep.cases < cases {
        let input = random_votes(&mut r);
        let got = decide(&input);
        let want = consensus_oracle(&input);
        rep.cases += 1;
        let res = match (got, want) {
            (Err(_), None) => continue,
            (Ok(g), Some((d, totals, weights))) => {
                let same_totals = g.totals.iter().zip(&totals).all(|(a, b)| (a - b).abs() <= 1e-12);
                let same_votes = g.votes.iter().zip(&weights).all(|(a, b)| (a - b).abs() <= 1e-12);
                if g.decided != d || !same_totals || !same_votes {
                    rep.oracle_mismatches += 1;
                }
                g
            }
            _ => {
                rep.oracle_mismatches += 1;
                continue;
            }
        };
        if (res.votes.iter().sum::<f64>() - (input.alpha + input.beta)).abs() > 1e-9 {
            rep.sum_violations += 1;
        }

        let mut same = input.clone();
        let a = same.votes[0].action;
        same.votes.iter_mut().for_each(|v| v.action = a);
        if decide(&same).ok().map(|x| x.decided) != Some(a) {
            rep.unanimity_violations += 1;
        }

        let max_c = input.votes.iter().map(|v| v.confidence).fold(0.0, f64::max);
        let lambda = r.random_range(0.05..1.0 / max_c);
        let mut scaled = input.clone();
        scaled.votes.iter_mut().for_each(|v| v.confidence *= lambda);
        if decide(&scaled).ok().map(|x| x.decided) != Some(res.decided) {
            rep.scale_violations += 1;
        }

        let i = r.random_range(0..input.votes.len());
        let k = input.votes[i].action.index();
        let mut more = input.clone();
        more.votes[i].detections += r.random_range(1..10);
        if class_total(&more, k) < res.totals[k] - 1e-12 {
            rep.monotonicity_violations += 1;
        }
    }
    rep
}

/// Runs `ticks` publish/collect rounds for robots `0..m` on a transport
/// with the given drop rate. Returns, per receiver and tick, the library
/// aggregate, the oracle mean over the messages the oracle expects, and the
/// number received.
pub fn comms_round_trip(m: usize, ticks: u64, p_drop: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, usize)> {
    let mut r = rng(seed);
    let dim = 6;
    let robots: Vec<usize> = (0..m).collect();
    let net = NetworkModel {
        p_drop,
        latency: 0,
        max_jitter: 0,
        seed,
    };
    let mut t = Transport::new(net, &robots).unwrap();
    let mut out = Vec::new();
    for tick in 0..ticks {
        let sent: Vec<Option<Vec<f64>>> = robots
            .iter()
            .map(|_| r.random_bool(0.8).then(|| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()))
            .collect();
        for (s, e) in sent.iter().enumerate() {
            if let Some(e) = e {
                t.publish(
                    Message::Embedding(EmbeddingMsg {
                        sender: s,
                        tick,
                        embedding: e.clone(),
                    }),
                    tick,
                )
                .unwrap();
            }
        }
        for &rcv in &robots {
            let (msgs, _) = t.collect(rcv, tick);
            let got = aggregate_embeddings(&msgs, dim);
            let expected: Vec<&Vec<f64>> = if p_drop == 0.0 {
                sent.iter().enumerate().filter(|(s, _)| *s != rcv).filter_map(|(_, e)| e.as_ref()).collect()
            } else {
                Vec::new()
            };
            let mut mean = vec![0.0; dim];
            for e in &expected {
                for (acc, v) in mean.iter_mut().zip(e.iter()) {
                    *acc += v;
                }
            }
            if !expected.is_empty() {
                mean.iter_mut().for_each(|v| *v /= expected.len() as f64);
            }
            out.push((got, mean, msgs.len()));
        }
    }
    out
}
