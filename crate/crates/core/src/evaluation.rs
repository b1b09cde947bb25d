//! Design-quality metrics (SPCE, SNMC, W2 to the truth) and gradient
//! estimator diagnostics on the conjugate model.

use crate::error::{check_dim, CodiffError, Result};
use crate::gradients::{analytic_linear_gaussian, grad_nested_mc, grad_pooled_snis, grad_prior_is, ContrastiveCloud, GradEstimate, JointCloud};
use crate::model::{Design, History, LinearGaussian1D, ModelSpec};
use crate::numeric::{log_sum_exp, pairwise_sum};
use crate::pooled::{DegenerateRowPolicy, PoolingWeights};
use crate::rng::{derive_seed, normals, stream, Tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpceConfig {
    /// Number of contrastive prior draws.
    pub l: usize,
    pub replications: usize,
}

impl Default for SpceConfig {
    fn default() -> Self {
        SpceConfig {
            l: 10_000,
            replications: 1,
        }
    }
}

impl SpceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l >= 1 && self.replications >= 1 {
            Ok(())
        } else {
            Err(CodiffError::InvalidArgument("SPCE needs L >= 1 and replications >= 1".into()))
        }
    }
}

/// Per-experiment metrics of a sequential run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub k: usize,
    pub spce: f64,
    pub snmc: f64,
    pub w2: f64,
    pub wall_ms: f64,
}

/// SPCE and SNMC on shared contrastive draws, averaged over replications.
pub fn spce_snmc(
    model: &dyn ModelSpec,
    designs: &[Vec<f64>],
    outcomes: &[Vec<f64>],
    theta_star: &[f64],
    cfg: &SpceConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    check_dim("outcomes", designs.len(), outcomes.len())?;
    check_dim("theta_star", model.theta_dim(), theta_star.len())?;
    let seq_log_lik = |theta: &[f64]| -> f64 {
        designs
            .iter()
            .zip(outcomes)
            .map(|(xi, y)| model.log_lik(y, theta, xi))
            .sum()
    };
    if designs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let log_star = seq_log_lik(theta_star);
    let reps: Vec<(f64, f64)> = (0..cfg.replications as u64)
        .map(|r| {
            let logs: Vec<f64> = (0..cfg.l as u64)
                .into_par_iter()
                .map(|j| seq_log_lik(&model.sample_prior(&mut stream(seed, Tag::Evaluation, j, r))))
                .collect();
            let (spce, snmc) = contrast_bounds(log_star, &logs);
            let cap = (cfg.l as f64 + 1.0).ln();
            assert!(spce <= cap + 1e-9, "SPCE {spce} exceeds log(L+1) = {cap}");
            (spce, snmc)
        })
        .collect();
    let n = reps.len() as f64;
    let spce: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let snmc: Vec<f64> = reps.iter().map(|r| r.1).collect();
    Ok((pairwise_sum(&spce) / n, pairwise_sum(&snmc) / n))
}

/// SPCE and SNMC from the sequence log-likelihood of `θ*` and of each
/// contrastive draw.
pub fn contrast_bounds(log_star: f64, contrast: &[f64]) -> (f64, f64) {
    let l = contrast.len() as f64;
    let lse_contrast = log_sum_exp(contrast);
    let lse_all = log_sum_exp(&[log_star, lse_contrast]);
    (log_star - (lse_all - (l + 1.0).ln()), log_star - (lse_contrast - l.ln()))
}

/// Sequential prior contrastive estimate (lower bound on total EIG).
pub fn spce(model: &dyn ModelSpec, designs: &[Vec<f64>], outcomes: &[Vec<f64>], theta_star: &[f64], cfg: &SpceConfig, seed: u64) -> Result<f64> {
    Ok(spce_snmc(model, designs, outcomes, theta_star, cfg, seed)?.0)
}

/// Sequential nested Monte Carlo estimate (upper bound on total EIG).
pub fn snmc(model: &dyn ModelSpec, designs: &[Vec<f64>], outcomes: &[Vec<f64>], theta_star: &[f64], cfg: &SpceConfig, seed: u64) -> Result<f64> {
    Ok(spce_snmc(model, designs, outcomes, theta_star, cfg, seed)?.1)
}

/// `(Σ w_i ‖θ_i − θ*‖²)^{1/2}`, the 2-Wasserstein distance to a point mass.
pub fn w2_to_truth(samples: &[Vec<f64>], weights: &[f64], theta_star: &[f64]) -> Result<f64> {
    check_dim("w2 weights", samples.len(), weights.len())?;
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(CodiffError::InvalidArgument("w2 weights must lie on the simplex".into()));
    }
    let terms: Vec<f64> = samples
        .iter()
        .zip(weights)
        .map(|(s, w)| w * crate::numeric::dist_sq(s, theta_star))
        .collect();
    Ok(pairwise_sum(&terms).sqrt())
}

/// Exact samplers for the conjugate model, used by the diagnostics.
pub mod exact {
    use super::*;

    /// `θ_i ~ p(θ)`, `y_i ~ p(y | θ_i, ξ)`.
    pub fn joint(model: &LinearGaussian1D, xi: f64, n: usize, seed: u64) -> JointCloud {
        let (theta, y): (Vec<_>, Vec<_>) = (0..n as u64)
            .map(|i| {
                let mut rng = stream(seed, Tag::Joint, i, 0);
                let t = model.sample_prior(&mut rng);
                let u = model.sample_noise(&mut rng);
                let y = model.forward(&t, &[xi], &u);
                (t, y)
            })
            .unzip();
        JointCloud::new(theta, y).expect("non-empty cloud")
    }

    /// `M` exact draws from the pooled posterior of the joint outcomes with `ν = 1/N`.
    pub fn pooled(model: &LinearGaussian1D, xi: f64, joint: &JointCloud, m: usize, seed: u64) -> ContrastiveCloud {
        let posts: Vec<(f64, f64)> = joint.y.iter().map(|y| model.posterior(y[0], xi)).collect();
        let means: Vec<Vec<f64>> = posts.iter().map(|p| vec![p.0]).collect();
        let vars: Vec<Vec<f64>> = posts.iter().map(|p| vec![p.1]).collect();
        let (mean, var) = crate::pooled::gaussian_pool(&means, &vars, &PoolingWeights::uniform(joint.len())).expect("matching shapes");
        draws(mean[0], var[0], m, seed, 0)
    }

    /// One exact posterior cloud of size `m` per joint outcome.
    pub fn posteriors(model: &LinearGaussian1D, xi: f64, joint: &JointCloud, m: usize, seed: u64) -> Vec<ContrastiveCloud> {
        joint
            .y
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let (mu, v) = model.posterior(y[0], xi);
                draws(mu, v, m, seed, i as u64 + 1)
            })
            .collect()
    }

    /// `M` prior draws.
    pub fn prior(model: &LinearGaussian1D, m: usize, seed: u64) -> ContrastiveCloud {
        draws(0.0, model.prior_sd() * model.prior_sd(), m, seed, 0)
    }

    fn draws(mean: f64, var: f64, m: usize, seed: u64, row: u64) -> ContrastiveCloud {
        let z = normals(&mut stream(seed, Tag::Contrastive, row, 0), m);
        ContrastiveCloud::new(z.into_iter().map(|e| vec![mean + var.sqrt() * e]).collect()).expect("non-empty cloud")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagEstimator {
    PooledSnis,
    NestedMc,
    PriorIs,
    /// The analytic gradient itself.
    Oracle,
}

impl DiagEstimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiagEstimator::PooledSnis => "pooled_snis",
            DiagEstimator::NestedMc => "nested_mc",
            DiagEstimator::PriorIs => "prior_is",
            DiagEstimator::Oracle => "oracle",
        }
    }
}

/// One gradient estimate on the conjugate model with exact samplers.
pub fn conjugate_estimate(model: &LinearGaussian1D, est: DiagEstimator, xi: f64, n: usize, m: usize, seed: u64) -> Result<GradEstimate> {
    let design = Design::new(vec![xi])?;
    let hist = History::new();
    if est == DiagEstimator::Oracle {
        let (_, g) = analytic_linear_gaussian(xi, model.sigma(), model.gain());
        return Ok(GradEstimate {
            grad: vec![g],
            n_joint: n,
            n_contrastive: m,
            ess_min: m as f64,
            degenerate_rows: 0,
        });
    }
    let joint = exact::joint(model, xi, n, derive_seed(seed, 1));
    let cseed = derive_seed(seed, 2);
    match est {
        DiagEstimator::PooledSnis => {
            let q = exact::pooled(model, xi, &joint, m, cseed);
            grad_pooled_snis(model, &hist, &design, &joint, &q, &PoolingWeights::uniform(n), DegenerateRowPolicy::Uniform)
        }
        DiagEstimator::NestedMc => grad_nested_mc(model, &design, &joint, &exact::posteriors(model, xi, &joint, m, cseed)),
        DiagEstimator::PriorIs => grad_prior_is(model, &design, &joint, &exact::prior(model, m, cseed)),
        DiagEstimator::Oracle => unreachable!(),
    }
}

/// One cell of the diagnostics grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub estimator: DiagEstimator,
    pub xi: f64,
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub oracle: f64,
    pub bias: f64,
    pub wall_ms: f64,
}

impl DiagnosticRow {
    /// `|bias| ≤ z · SE`
    pub fn within(&self, z: f64) -> bool {
        self.bias.abs() <= z * self.se
    }
}

/// Mean, sample SD and SE of replicated estimates.
pub fn summarize(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let sd = if xs.len() > 1 { (pairwise_sum(&dev) / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd, sd / n.sqrt())
}

/// Replicated estimates for every `(estimator, ξ, (N, M))` cell.
pub fn gradient_diagnostics(
    model: &LinearGaussian1D,
    estimators: &[DiagEstimator],
    xi_grid: &[f64],
    budgets: &[(usize, usize)],
    reps: usize,
    seed: u64,
) -> Result<Vec<DiagnosticRow>> {
    if reps == 0 {
        return Err(CodiffError::InvalidArgument("diagnostics need reps >= 1".into()));
    }
    let mut rows = Vec::new();
    for (ei, est) in estimators.iter().enumerate() {
        for (xi_idx, &xi) in xi_grid.iter().enumerate() {
            for (bi, &(n, m)) in budgets.iter().enumerate() {
                let start = Instant::now();
                let cell = derive_seed(seed, ((ei * 1000 + xi_idx) * 1000 + bi) as u64);
                let vals = (0..reps as u64)
                    .map(|r| conjugate_estimate(model, *est, xi, n, m, derive_seed(cell, r)).map(|g| g.grad[0]))
                    .collect::<Result<Vec<f64>>>()?;
                let (mean, sd, se) = summarize(&vals);
                let (_, oracle) = analytic_linear_gaussian(xi, model.sigma(), model.gain());
                rows.push(DiagnosticRow {
                    estimator: *est,
                    xi,
                    n,
                    m,
                    reps,
                    mean,
                    sd,
                    se,
                    oracle,
                    bias: mean - oracle,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
    }
    Ok(rows)
}
