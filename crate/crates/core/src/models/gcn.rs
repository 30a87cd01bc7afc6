use rand::Rng;

use super::{init_matrix, Matrix, Params, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Two-layer GCN plus the spatial-only classifier head.
///
/// Shapes: `w1` 2F x H1, `w2` H1 x E, `head_w` E x 4; biases are row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub head_w: Matrix,
    pub head_b: Matrix,
}

impl GcnParams {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, embed: usize, scale: f64) -> Self {
        GcnParams {
            w1: init_matrix(rng, input, hidden, input, scale),
            b1: Matrix::zeros(1, hidden),
            w2: init_matrix(rng, hidden, embed, hidden, scale),
            b2: Matrix::zeros(1, embed),
            head_w: init_matrix(rng, embed, NUM_CLASSES, embed, scale),
            head_b: Matrix::zeros(1, NUM_CLASSES),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }

    /// Spatial logits from a human embedding.
    pub fn head(&self, embedding: &[f64]) -> [f64; NUM_CLASSES] {
        let mut z = [0.0; NUM_CLASSES];
        z.copy_from_slice(self.head_b.data());
        self.head_w.t_matvec_into(embedding, &mut z);
        z
    }
}

impl Params for GcnParams {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("gcn.w1", &self.w1),
            ("gcn.b1", &self.b1),
            ("gcn.w2", &self.w2),
            ("gcn.b2", &self.b2),
            ("gcn.head_w", &self.head_w),
            ("gcn.head_b", &self.head_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("gcn.w1", &mut self.w1),
            ("gcn.b1", &mut self.b1),
            ("gcn.w2", &mut self.w2),
            ("gcn.b2", &mut self.b2),
            ("gcn.head_w", &mut self.head_w),
            ("gcn.head_b", &mut self.head_b),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnOutput {
    /// Final node embeddings, one row per node.
    pub h2: Matrix,
    pub logits: [f64; NUM_CLASSES],
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GcnCache {
    a: Matrix,
    ax: Matrix,
    p1: Matrix,
    ah1: Matrix,
}

fn add_bias(m: &mut Matrix, b: &Matrix) {
    for r in 0..m.rows() {
        for (x, y) in m.row_mut(r).iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

/// Row 0 of the final layer: the human node.
pub fn human_embedding(h2: &Matrix) -> Vec<f64> {
    h2.row(0).to_vec()
}

/// `H1 = ReLU(Â H0 W1 + b1)`, `H2 = Â H1 W2 + b2`, logits = head(H2[0]).
pub fn gcn_forward(a: &NormalizedAdjacency, h0: &Matrix, params: &GcnParams) -> Result<GcnOutput> {
    gcn_forward_cached(a, h0, params).map(|(out, _)| out)
}

pub fn gcn_forward_cached(
    a: &NormalizedAdjacency,
    h0: &Matrix,
    params: &GcnParams,
) -> Result<(GcnOutput, GcnCache)> {
    let n = a.size();
    if a.matrix().cols() != n {
        return Err(Error::DimensionMismatch {
            context: "adjacency columns",
            expected: n,
            actual: a.matrix().cols(),
        });
    }
    if h0.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "node feature rows",
            expected: n,
            actual: h0.rows(),
        });
    }
    if h0.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "node feature width",
            expected: params.input_dim(),
            actual: h0.cols(),
        });
    }
    let ax = a.matrix().matmul(h0);
    let mut p1 = ax.matmul(&params.w1);
    add_bias(&mut p1, &params.b1);
    let mut h1 = p1.clone();
    h1.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let ah1 = a.matrix().matmul(&h1);
    let mut h2 = ah1.matmul(&params.w2);
    add_bias(&mut h2, &params.b2);
    let logits = params.head(h2.row(0));
    let cache = GcnCache {
        a: a.matrix().clone(),
        ax,
        p1,
        ah1,
    };
    Ok((GcnOutput { h2, logits }, cache))
}

/// Accumulates parameter gradients given `d_logits` (from the spatial head)
/// and `d_embedding` (extra gradient arriving at the human row of H2, e.g.
/// from a downstream GRU). Either may be zero.
pub fn gcn_backward(
    params: &GcnParams,
    cache: &GcnCache,
    out: &GcnOutput,
    d_logits: &[f64],
    d_embedding: &[f64],
    grads: &mut GcnParams,
) {
    let e = params.embed_dim();
    let mut d_row0 = d_embedding.to_vec();
    if d_logits.iter().any(|&g| g != 0.0) {
        grads.head_w.add_outer(1.0, out.h2.row(0), d_logits);
        for (b, g) in grads.head_b.data_mut().iter_mut().zip(d_logits) {
            *b += g;
        }
        params.head_w.matvec_into(d_logits, &mut d_row0);
    }
    debug_assert_eq!(d_row0.len(), e);
    // Only row 0 of dH2 is nonzero.
    grads.w2.add_outer(1.0, cache.ah1.row(0), &d_row0);
    for (b, g) in grads.b2.data_mut().iter_mut().zip(&d_row0) {
        *b += g;
    }
    // dAH1 row 0 = W2 d_row0; dH1 = Â^T dAH1, so dH1[i] = Â[0][i] * dAH1[0].
    let dah1_0 = params.w2.matvec(&d_row0);
    let n = cache.a.rows();
    let h1w = params.w1.cols();
    let mut db1 = vec![0.0; h1w];
    let mut dp1 = vec![0.0; h1w];
    for i in 0..n {
        let coeff = cache.a[(0, i)];
        if coeff == 0.0 {
            continue;
        }
        let p1 = cache.p1.row(i);
        for k in 0..h1w {
            dp1[k] = if p1[k] > 0.0 { coeff * dah1_0[k] } else { 0.0 };
            db1[k] += dp1[k];
        }
        grads.w1.add_outer(1.0, cache.ax.row(i), &dp1);
    }
    for (b, g) in grads.b1.data_mut().iter_mut().zip(&db1) {
        *b += g;
    }
}
