mod common;

use rand::Rng;
use swarm_intent::models::calibration::nll_at;
use swarm_intent::models::{argmax, calibrate_temperature, softmax};

/// Logits whose labels are drawn from their own softmax, so T = 1 is the
/// maximum-likelihood temperature up to sampling noise.
pub fn self_consistent(n: usize, seed: u64) -> (Vec<[f64; 4]>, Vec<usize>) {
    let mut r = common::rng(seed);
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: [f64; 4] = std::array::from_fn(|_| r.random_range(-3.0..3.0));
        let p = softmax(&z);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let y = p.iter().position(|q| {
            acc += q;
            u < acc
        });
        labels.push(y.unwrap_or(3));
        logits.push(z);
    }
    (logits, labels)
}

#[test]
fn recovers_unit_temperature() {
    let (z, y) = self_consistent(20_000, 1);
    let t = calibrate_temperature(&z, &y).unwrap().temperature;
    assert!((t - 1.0).abs() < 0.1, "T = {t}");
    assert!(nll_at(&z, &y, t) <= nll_at(&z, &y, 1.0) + 1e-12);
}

#[test]
fn recovers_a_known_sharpening() {
    let (z, y) = self_consistent(20_000, 2);
    let sharp: Vec<[f64; 4]> = z.iter().map(|v| v.map(|x| 2.0 * x)).collect();
    let t = calibrate_temperature(&sharp, &y).unwrap().temperature;
    assert!((t - 2.0).abs() < 0.2, "T = {t}");
}

#[test]
fn argmax_is_unchanged_by_temperature() {
    let (z, _) = self_consistent(2_000, 3);
    for t in [0.05, 0.5, 1.0, 3.0, 20.0] {
        for v in &z {
            let scaled: Vec<f64> = v.iter().map(|x| x / t).collect();
            assert_eq!(argmax(v), argmax(&softmax(&scaled)));
        }
    }
}
