#![allow(dead_code)]

use codiff::model::{GaussianMixture, ModelSpec, SmoothMaskInverse, SourceLocation};

pub const FD_STEP: f64 = 1e-4;

/// Five-point central finite-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let at = |k: usize, h: f64| {
        let mut p = x.to_vec();
        p[k] += h;
        f(&p)
    };
    (0..x.len())
        .map(|k| {
            let h = FD_STEP;
            (-at(k, 2.0 * h) + 8.0 * at(k, h) - 8.0 * at(k, -h) + at(k, -2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Norm-wise relative error with a small absolute floor.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-6)
}

pub fn small_mask_model() -> SmoothMaskInverse {
    let g = 6;
    let d = g * g;
    let prior = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![0.5; d], (0..d).map(|k| (k as f64 * 0.37).sin()).collect()],
        vec![0.4, 0.9],
    )
    .unwrap();
    SmoothMaskInverse::new(g, 1.5, [0.7, 0.9], 0.3, prior).unwrap()
}

pub fn source_model() -> SourceLocation {
    SourceLocation::default()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn dims(m: &dyn ModelSpec) -> (usize, usize, usize) {
    (m.theta_dim(), m.outcome_dim(), m.design_dim())
}
