//! EIG gradient estimators built on the `g` kernel: the pooled-posterior SNIS
//! estimator, nested Monte Carlo, and the prior-contrastive ratio estimator.

use crate::error::{check_dim, CodiffError, Result};
use crate::model::{Design, History, ModelSpec, OutcomePath};
use crate::numeric::{axpy, norm_sq, normalize_log_weights, pairwise_sum_vecs};
use crate::pooled::{snis_weights_from_loglik, DegenerateRowPolicy, LogLikMatrix, PoolingWeights, WeightMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Joint particles `(θ_i, y_i)` with their stream ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCloud {
    pub theta: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub ids: Vec<u64>,
}

impl JointCloud {
    pub fn new(theta: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("joint outcomes", theta.len(), y.len())?;
        if theta.is_empty() {
            return Err(CodiffError::InvalidArgument("joint cloud is empty".into()));
        }
        let ids = (0..theta.len() as u64).collect();
        Ok(JointCloud { theta, y, ids })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Contrastive particles `θ'_j` with their stream ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveCloud {
    pub theta: Vec<Vec<f64>>,
    pub ids: Vec<u64>,
}

impl ContrastiveCloud {
    pub fn new(theta: Vec<Vec<f64>>) -> Result<Self> {
        if theta.is_empty() {
            return Err(CodiffError::InvalidArgument("contrastive cloud is empty".into()));
        }
        let ids = (0..theta.len() as u64).collect();
        Ok(ContrastiveCloud { theta, ids })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    pub n_joint: usize,
    pub n_contrastive: usize,
    pub ess_min: f64,
    /// Number of weight rows that fell back to uniform weights.
    pub degenerate_rows: usize,
}

impl GradEstimate {
    pub fn norm(&self) -> f64 {
        norm_sq(&self.grad).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        crate::numeric::all_finite(&self.grad)
    }

    pub fn fallback(&self) -> bool {
        self.degenerate_rows > 0
    }
}

/// Shared kernel: `(1/N) Σ_i [g(ξ,y_i,θ_i,θ_i) − Σ_j w_ij g(ξ,y_i,θ_i,θ'_ij)]`,
/// where row `i` supplies its own contrastive set and weights.
fn contrast_rows<'a, F>(model: &dyn ModelSpec, xi: &[f64], joint: &JointCloud, row: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> (&'a [Vec<f64>], Vec<f64>) + Sync,
{
    let d = xi.len();
    let terms: Vec<Vec<f64>> = (0..joint.len())
        .into_par_iter()
        .map(|i| {
            let path = OutcomePath::new(model, xi, &joint.theta[i], &joint.y[i])?;
            let mut r = path.g(model, xi, &joint.theta[i]);
            let (thetas, w) = row(i);
            for (t, wij) in thetas.iter().zip(&w) {
                if *wij > 0.0 {
                    axpy(-wij, &path.g(model, xi, t), &mut r);
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let n = terms.len() as f64;
    Ok(pairwise_sum_vecs(&terms, d).into_iter().map(|s| s / n).collect())
}

/// `Γ(p, q, ξ)` with a given weight matrix.
pub fn gamma(model: &dyn ModelSpec, xi: &Design, joint: &JointCloud, contrastive: &ContrastiveCloud, w: &WeightMatrix) -> Result<GradEstimate> {
    check_dim("weight rows", joint.len(), w.rows())?;
    check_dim("weight columns", contrastive.len(), w.cols())?;
    let grad = contrast_rows(model, xi.xi(), joint, |i| (&contrastive.theta[..], w.row(i).to_vec()))?;
    Ok(GradEstimate {
        grad,
        n_joint: joint.len(),
        n_contrastive: contrastive.len(),
        ess_min: w.ess_min(),
        degenerate_rows: w.degenerate_rows().len(),
    })
}

/// Pooled-posterior SNIS estimator: [`snis_weights`](crate::pooled::snis_weights) followed by [`gamma`].
/// Degenerate rows follow `policy`.
pub fn grad_pooled_snis(
    model: &dyn ModelSpec,
    _hist: &History,
    xi: &Design,
    joint: &JointCloud,
    contrastive: &ContrastiveCloud,
    nu: &PoolingWeights,
    policy: DegenerateRowPolicy,
) -> Result<GradEstimate> {
    let ll = LogLikMatrix::compute(model, xi.xi(), &joint.y, &contrastive.theta);
    let w = snis_weights_from_loglik(&ll, nu, policy)?;
    gamma(model, xi, joint, contrastive, &w)
}

/// Nested Monte Carlo with one posterior contrastive cloud per joint particle.
pub fn grad_nested_mc(model: &dyn ModelSpec, xi: &Design, joint: &JointCloud, inner: &[ContrastiveCloud]) -> Result<GradEstimate> {
    check_dim("inner clouds", joint.len(), inner.len())?;
    if inner.iter().any(|c| c.is_empty()) {
        return Err(CodiffError::InvalidArgument("empty inner contrastive cloud".into()));
    }
    let grad = contrast_rows(model, xi.xi(), joint, |i| {
        let m = inner[i].len();
        (&inner[i].theta[..], vec![1.0 / m as f64; m])
    })?;
    Ok(GradEstimate {
        grad,
        n_joint: joint.len(),
        n_contrastive: inner.iter().map(ContrastiveCloud::len).min().unwrap_or(0),
        ess_min: inner.iter().map(|c| c.len() as f64).fold(f64::INFINITY, f64::min),
        degenerate_rows: 0,
    })
}

/// Prior-contrastive ratio estimator with weights `∝ p(y_i | θ'_j, ξ)`.
pub fn grad_prior_is(model: &dyn ModelSpec, xi: &Design, joint: &JointCloud, prior_contrastive: &ContrastiveCloud) -> Result<GradEstimate> {
    let ll = LogLikMatrix::compute(model, xi.xi(), &joint.y, &prior_contrastive.theta);
    let rows = (0..ll.rows())
        .map(|i| normalize_log_weights(ll.row(i)).ok_or(CodiffError::DegenerateWeights { row: i }))
        .collect::<Result<Vec<_>>>()?;
    let w = WeightMatrix::from_rows(rows)?;
    gamma(model, xi, joint, prior_contrastive, &w)
}

/// EIG and its derivative for `y = a ξ θ + σ u`, `θ ~ N(0, 1)`.
pub fn analytic_linear_gaussian(xi: f64, sigma: f64, a: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let a2x2 = a * a * xi * xi;
    (0.5 * (a2x2 / s2).ln_1p(), a * a * xi / (s2 + a2x2))
}
