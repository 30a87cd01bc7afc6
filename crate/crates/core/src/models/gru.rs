use rand::Rng;

use super::{init_matrix, Matrix, Params, NUM_CLASSES};
use crate::error::{Error, Result};

/// GRU cell plus the classifier head shared by frame t and every forecast
/// step. Gate input matrices are H x I, recurrent matrices H x H, the head is
/// H x 4.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub wz: Matrix,
    pub uz: Matrix,
    pub bz: Matrix,
    pub wr: Matrix,
    pub ur: Matrix,
    pub br: Matrix,
    pub wh: Matrix,
    pub uh: Matrix,
    pub bh: Matrix,
    pub head_w: Matrix,
    pub head_b: Matrix,
}

impl GruParams {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, scale: f64) -> Self {
        let mut g = || {
            (
                init_matrix(rng, hidden, input, input, scale),
                init_matrix(rng, hidden, hidden, hidden, scale),
            )
        };
        let (wz, uz) = g();
        let (wr, ur) = g();
        let (wh, uh) = g();
        GruParams {
            wz,
            uz,
            bz: Matrix::zeros(1, hidden),
            wr,
            ur,
            br: Matrix::zeros(1, hidden),
            wh,
            uh,
            bh: Matrix::zeros(1, hidden),
            head_w: init_matrix(rng, hidden, NUM_CLASSES, hidden, scale),
            head_b: Matrix::zeros(1, NUM_CLASSES),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wz.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wz.rows()
    }

    pub fn head(&self, h: &[f64]) -> [f64; NUM_CLASSES] {
        let mut z = [0.0; NUM_CLASSES];
        z.copy_from_slice(self.head_b.data());
        self.head_w.t_matvec_into(h, &mut z);
        z
    }

    /// Accumulates head gradients and returns dL/dh.
    pub fn head_backward(&self, h: &[f64], d_logits: &[f64], grads: &mut GruParams) -> Vec<f64> {
        grads.head_w.add_outer(1.0, h, d_logits);
        for (b, g) in grads.head_b.data_mut().iter_mut().zip(d_logits) {
            *b += g;
        }
        self.head_w.matvec(d_logits)
    }
}

impl Params for GruParams {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("gru.wz", &self.wz),
            ("gru.uz", &self.uz),
            ("gru.bz", &self.bz),
            ("gru.wr", &self.wr),
            ("gru.ur", &self.ur),
            ("gru.br", &self.br),
            ("gru.wh", &self.wh),
            ("gru.uh", &self.uh),
            ("gru.bh", &self.bh),
            ("gru.head_w", &self.head_w),
            ("gru.head_b", &self.head_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("gru.wz", &mut self.wz),
            ("gru.uz", &mut self.uz),
            ("gru.bz", &mut self.bz),
            ("gru.wr", &mut self.wr),
            ("gru.ur", &mut self.ur),
            ("gru.br", &mut self.br),
            ("gru.wh", &mut self.wh),
            ("gru.uh", &mut self.uh),
            ("gru.bh", &mut self.bh),
            ("gru.head_w", &mut self.head_w),
            ("gru.head_b", &mut self.head_b),
        ]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Values needed to backpropagate through one step.
#[derive(Clone, Debug)]
pub struct GruStepCache {
    /// `None` for zero-input (forecast) steps.
    x: Option<Vec<f64>>,
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hc: Vec<f64>,
    rh: Vec<f64>,
}

fn check_dims(x: Option<&[f64]>, h: &[f64], p: &GruParams) -> Result<()> {
    if let Some(x) = x {
        if x.len() != p.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "gru input",
                expected: p.input_dim(),
                actual: x.len(),
            });
        }
    }
    if h.len() != p.hidden_dim() {
        return Err(Error::DimensionMismatch {
            context: "gru hidden",
            expected: p.hidden_dim(),
            actual: h.len(),
        });
    }
    Ok(())
}

/// One GRU update.
pub fn gru_step(x: &[f64], h: &[f64], params: &GruParams) -> Result<Vec<f64>> {
    check_dims(Some(x), h, params)?;
    Ok(step_cached(Some(x), h, params).0)
}

/// Step with cached intermediates. `x = None` means a zero input vector.
pub fn gru_step_cached(x: Option<&[f64]>, h: &[f64], params: &GruParams) -> Result<(Vec<f64>, GruStepCache)> {
    check_dims(x, h, params)?;
    Ok(step_cached(x, h, params))
}

fn step_cached(x: Option<&[f64]>, h: &[f64], p: &GruParams) -> (Vec<f64>, GruStepCache) {
    let gate = |w: &Matrix, u: &Matrix, b: &Matrix, hv: &[f64]| {
        let mut a = b.data().to_vec();
        if let Some(x) = x {
            w.matvec_into(x, &mut a);
        }
        u.matvec_into(hv, &mut a);
        a
    };
    let z: Vec<f64> = gate(&p.wz, &p.uz, &p.bz, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(&p.wr, &p.ur, &p.br, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let hc: Vec<f64> = gate(&p.wh, &p.uh, &p.bh, &rh).into_iter().map(f64::tanh).collect();
    let h_new = (0..h.len()).map(|k| (1.0 - z[k]) * h[k] + z[k] * hc[k]).collect();
    let cache = GruStepCache {
        x: x.map(<[f64]>::to_vec),
        h: h.to_vec(),
        z,
        r,
        hc,
        rh,
    };
    (h_new, cache)
}

/// Backward through one step. Accumulates parameter gradients and returns
/// `(dL/dx, dL/dh)`; `dL/dx` is empty for zero-input steps or when
/// `want_dx` is false.
pub fn gru_step_backward(
    params: &GruParams,
    cache: &GruStepCache,
    dh_new: &[f64],
    grads: &mut GruParams,
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = dh_new.len();
    let GruStepCache { x, h, z, r, hc, rh } = cache;
    let mut dh: Vec<f64> = (0..n).map(|k| dh_new[k] * (1.0 - z[k])).collect();
    let da_h: Vec<f64> = (0..n).map(|k| dh_new[k] * z[k] * (1.0 - hc[k] * hc[k])).collect();
    let da_z: Vec<f64> = (0..n)
        .map(|k| dh_new[k] * (hc[k] - h[k]) * z[k] * (1.0 - z[k]))
        .collect();

    grads.uh.add_outer(1.0, &da_h, rh);
    add_row(&mut grads.bh, &da_h);
    let drh = params.uh.t_matvec(&da_h);
    let da_r: Vec<f64> = (0..n).map(|k| drh[k] * h[k] * r[k] * (1.0 - r[k])).collect();
    for k in 0..n {
        dh[k] += drh[k] * r[k];
    }

    grads.uz.add_outer(1.0, &da_z, h);
    add_row(&mut grads.bz, &da_z);
    params.uz.t_matvec_into(&da_z, &mut dh);
    grads.ur.add_outer(1.0, &da_r, h);
    add_row(&mut grads.br, &da_r);
    params.ur.t_matvec_into(&da_r, &mut dh);

    let mut dx = Vec::new();
    if let Some(x) = x {
        grads.wh.add_outer(1.0, &da_h, x);
        grads.wz.add_outer(1.0, &da_z, x);
        grads.wr.add_outer(1.0, &da_r, x);
        if want_dx {
            dx = params.wh.t_matvec(&da_h);
            params.wz.t_matvec_into(&da_z, &mut dx);
            params.wr.t_matvec_into(&da_r, &mut dx);
        }
    }
    (dx, dh)
}

fn add_row(b: &mut Matrix, g: &[f64]) {
    for (x, y) in b.data_mut().iter_mut().zip(g) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_state_zero_input_stays_zero() {
        let mut rng = stream(4, &[]);
        let p = GruParams::new(&mut rng, 5, 3, 1.0);
        let h = gru_step(&[0.0; 5], &[0.0; 3], &p).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut rng = stream(5, &[]);
        let mut p = GruParams::new(&mut rng, 5, 3, 1.0);
        p.bz.fill(-60.0);
        let h0 = [0.3, -0.7, 0.1];
        let h = gru_step(&[1.0, -2.0, 0.5, 0.0, 3.0], &h0, &p).unwrap();
        for (a, b) in h.iter().zip(h0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = stream(6, &[]);
        let p = GruParams::new(&mut rng, 5, 3, 1.0);
        assert!(gru_step(&[0.0; 4], &[0.0; 3], &p).is_err());
        assert!(gru_step(&[0.0; 5], &[0.0; 2], &p).is_err());
    }

    /// Jacobian of h' w.r.t. (x, h) against central differences.
    #[test]
    fn step_jacobian_matches_finite_differences() {
        let mut rng = stream(7, &[]);
        let p = GruParams::new(&mut rng, 4, 3, 1.5);
        let x = vec![0.4, -0.3, 1.1, 0.2];
        let h = vec![0.1, -0.5, 0.3];
        let eps = 1e-5;
        for out in 0..3 {
            let mut seed = vec![0.0; 3];
            seed[out] = 1.0;
            let (_, cache) = gru_step_cached(Some(&x), &h, &p).unwrap();
            let mut g = p.zeros_like();
            let (dx, dh) = gru_step_backward(&p, &cache, &seed, &mut g, true);
            let f = |x: &[f64], h: &[f64]| gru_step(x, h, &p).unwrap()[out];
            for i in 0..4 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += eps;
                xm[i] -= eps;
                let num = (f(&xp, &h) - f(&xm, &h)) / (2.0 * eps);
                assert!((num - dx[i]).abs() <= 1e-4 * num.abs().max(1e-6), "dx {i}");
            }
            for i in 0..3 {
                let (mut hp, mut hm) = (h.clone(), h.clone());
                hp[i] += eps;
                hm[i] -= eps;
                let num = (f(&x, &hp) - f(&x, &hm)) / (2.0 * eps);
                assert!((num - dh[i]).abs() <= 1e-4 * num.abs().max(1e-6), "dh {i}");
            }
        }
    }
}
