//! Small numeric kernels with a fixed reduction order.

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is independent of how the input was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Column-wise pairwise sum of equally sized vectors.
pub fn pairwise_sum_vecs(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            pairwise_sum(&col)
        })
        .collect()
}

/// `log Σ exp(x_i)`, returning `-inf` when every entry is `-inf` or the input is empty.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return if max == f64::INFINITY { max } else { f64::NEG_INFINITY };
    }
    let shifted: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Normalizes log-weights onto the simplex. Returns `None` when no entry is finite.
pub fn normalize_log_weights(logw: &[f64]) -> Option<Vec<f64>> {
    let finite: Vec<f64> = logw
        .iter()
        .map(|&x| if x.is_nan() { f64::NEG_INFINITY } else { x })
        .collect();
    let lse = log_sum_exp(&finite);
    if !lse.is_finite() {
        return None;
    }
    Some(finite.iter().map(|x| (x - lse).exp()).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Logistic sigmoid, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of an isotropic Gaussian `N(mean, var I)` at `x`.
pub fn log_normal_iso(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let k = x.len() as f64;
    -0.5 * (dist_sq(x, mean) / var + k * (LN_2PI + var.ln()))
}
