//! The pooled posterior `q ∝ p(θ | hist) Π_i p(y_i | θ, ξ)^{ν_i}` and its
//! self-normalized importance weights against each per-outcome posterior.

use crate::error::{check_dim, CodiffError, Result};
use crate::model::{current_prior_log_density, current_prior_score, Design, History, ModelSpec};
use crate::numeric::{axpy, normalize_log_weights};
use rayon::prelude::*;

/// Pooling exponents `ν` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingWeights(Vec<f64>);

impl PoolingWeights {
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        if nu.is_empty() {
            return Err(CodiffError::InvalidArgument("pooling weights are empty".into()));
        }
        if nu.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(CodiffError::InvalidArgument("pooling weights must be >= 0".into()));
        }
        let total: f64 = nu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CodiffError::InvalidArgument(format!(
                "pooling weights sum to {total}, expected 1"
            )));
        }
        Ok(PoolingWeights(nu))
    }

    /// `ν_i = 1/N`
    pub fn uniform(n: usize) -> Self {
        PoolingWeights(vec![1.0 / n as f64; n.max(1)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Discrete outcome measure `ρ = Σ ν_i δ_{y_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeMeasure {
    atoms: Vec<Vec<f64>>,
    weights: PoolingWeights,
}

impl OutcomeMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: PoolingWeights) -> Result<Self> {
        check_dim("outcome atoms", weights.len(), atoms.len())?;
        Ok(OutcomeMeasure { atoms, weights })
    }

    /// Uniform empirical measure over `atoms`.
    pub fn empirical(atoms: Vec<Vec<f64>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CodiffError::InvalidArgument("outcome measure is empty".into()));
        }
        let w = PoolingWeights::uniform(atoms.len());
        Self::new(atoms, w)
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &PoolingWeights {
        &self.weights
    }
}

/// `log p(θ | hist) + Σ_i ν_i log p(y_i | θ, ξ)` up to the prior's normalizing constant.
pub fn pooled_log_density_unnorm(
    model: &dyn ModelSpec,
    hist: &History,
    rho: &OutcomeMeasure,
    xi: &Design,
    theta: &[f64],
) -> f64 {
    current_prior_log_density(model, hist, theta)
        + rho
            .atoms
            .iter()
            .zip(rho.weights.as_slice())
            .filter(|(_, nu)| **nu > 0.0)
            .map(|(y, nu)| nu * model.log_lik(y, theta, xi.xi()))
            .sum::<f64>()
}

/// `∇θ` of [`pooled_log_density_unnorm`].
pub fn pooled_score(
    model: &dyn ModelSpec,
    hist: &History,
    rho: &OutcomeMeasure,
    xi: &Design,
    theta: &[f64],
) -> Vec<f64> {
    let mut s = current_prior_score(model, hist, theta);
    for (y, nu) in rho.atoms.iter().zip(rho.weights.as_slice()) {
        if *nu > 0.0 {
            axpy(*nu, &model.grad_theta_log_lik(y, theta, xi.xi()), &mut s);
        }
    }
    s
}

/// Row-major `N × M` matrix of `log p(y_i | θ'_j, ξ)`.
#[derive(Debug, Clone)]
pub struct LogLikMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl LogLikMatrix {
    pub fn compute(model: &dyn ModelSpec, xi: &[f64], outcomes: &[Vec<f64>], thetas: &[Vec<f64>]) -> Self {
        let data: Vec<f64> = outcomes
            .par_iter()
            .flat_map_iter(|y| thetas.iter().map(move |t| model.log_lik(y, t, xi)))
            .collect();
        LogLikMatrix {
            n: outcomes.len(),
            m: thetas.len(),
            data,
        }
    }

    /// Wraps row-major entries.
    pub fn from_data(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("log-likelihood matrix", n * m, data.len())?;
        Ok(LogLikMatrix { n, m, data })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }
}

/// Row-stochastic `N × M` importance weights.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    n: usize,
    m: usize,
    w: Vec<f64>,
    degenerate_rows: Vec<usize>,
}

impl WeightMatrix {
    /// Builds from row-major entries, normalizing every row.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut w = Vec::with_capacity(n * m);
        for (i, r) in rows.into_iter().enumerate() {
            check_dim("weight row", m, r.len())?;
            let s: f64 = r.iter().sum();
            if !(s > 0.0) || r.iter().any(|x| !(*x >= 0.0)) {
                return Err(CodiffError::DegenerateWeights { row: i });
            }
            w.extend(r.iter().map(|x| x / s));
        }
        Ok(WeightMatrix {
            n,
            m,
            w,
            degenerate_rows: Vec::new(),
        })
    }

    /// Uniform `1/M` rows.
    pub fn uniform(n: usize, m: usize) -> Self {
        WeightMatrix {
            n,
            m,
            w: vec![1.0 / m as f64; n * m],
            degenerate_rows: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.m..(i + 1) * self.m]
    }

    /// Rows that were replaced by uniform weights.
    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate_rows
    }

    pub fn row_ess(&self, i: usize) -> f64 {
        crate::samplers::ess(self.row(i))
    }

    pub fn ess_min(&self) -> f64 {
        (0..self.n).map(|i| self.row_ess(i)).fold(f64::INFINITY, f64::min)
    }
}

/// What to do with a row whose log-weights are all `-inf` or NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateRowPolicy {
    Error,
    Uniform,
}

/// SNIS weights `w̃_ij = p(y_i|θ'_j) / Π_ℓ p(y_ℓ|θ'_j)^{ν_ℓ}` from a precomputed
/// likelihood matrix, normalized per row in log space.
pub fn snis_weights_from_loglik(
    ll: &LogLikMatrix,
    nu: &PoolingWeights,
    policy: DegenerateRowPolicy,
) -> Result<WeightMatrix> {
    check_dim("pooling weights", ll.rows(), nu.len())?;
    let (n, m) = (ll.rows(), ll.cols());
    if m == 0 {
        return Err(CodiffError::InvalidArgument("no contrastive particles".into()));
    }
    let log_q: Vec<f64> = (0..m)
        .map(|j| {
            let terms: Vec<f64> = (0..n)
                .filter(|&l| nu.as_slice()[l] > 0.0)
                .map(|l| nu.as_slice()[l] * ll.get(l, j))
                .collect();
            crate::numeric::pairwise_sum(&terms)
        })
        .collect();
    let rows: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let logw: Vec<f64> = ll
                .row(i)
                .iter()
                .zip(&log_q)
                .map(|(l, q)| if q.is_finite() { l - q } else { f64::NEG_INFINITY })
                .collect();
            normalize_log_weights(&logw)
        })
        .collect();
    let mut w = Vec::with_capacity(n * m);
    let mut degenerate_rows = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        match (r, policy) {
            (Some(r), _) => w.extend(r),
            (None, DegenerateRowPolicy::Error) => return Err(CodiffError::DegenerateWeights { row: i }),
            (None, DegenerateRowPolicy::Uniform) => {
                log::warn!("degenerate SNIS row {i}, using uniform weights");
                degenerate_rows.push(i);
                w.extend(std::iter::repeat_n(1.0 / m as f64, m));
            }
        }
    }
    Ok(WeightMatrix {
        n,
        m,
        w,
        degenerate_rows,
    })
}

/// SNIS weights of the contrastive cloud against each per-outcome posterior.
/// The current-prior factor is common to numerator and proposal, so `_hist`
/// does not enter the ratio.
pub fn snis_weights(
    model: &dyn ModelSpec,
    _hist: &History,
    xi: &Design,
    outcomes: &[Vec<f64>],
    contrastive: &[Vec<f64>],
    nu: &PoolingWeights,
) -> Result<WeightMatrix> {
    let ll = LogLikMatrix::compute(model, xi.xi(), outcomes, contrastive);
    snis_weights_from_loglik(&ll, nu, DegenerateRowPolicy::Error)
}

/// Closed-form logarithmic pool of diagonal Gaussians: precision
/// `Σ ν_i Λ_i`, mean `Λ⁻¹ Σ ν_i Λ_i m_i`. Returns `(mean, variance)` per coordinate.
pub fn gaussian_pool(means: &[Vec<f64>], vars: &[Vec<f64>], nu: &PoolingWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("pooled means", nu.len(), means.len())?;
    check_dim("pooled variances", nu.len(), vars.len())?;
    let d = means.first().map_or(0, Vec::len);
    let mut prec = vec![0.0; d];
    let mut lin = vec![0.0; d];
    for ((m, v), w) in means.iter().zip(vars).zip(nu.as_slice()) {
        for k in 0..d {
            prec[k] += w / v[k];
            lin[k] += w * m[k] / v[k];
        }
    }
    Ok((
        lin.iter().zip(&prec).map(|(l, p)| l / p).collect(),
        prec.iter().map(|p| 1.0 / p).collect(),
    ))
}
