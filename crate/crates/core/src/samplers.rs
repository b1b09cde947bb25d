//! Density-based sampling operators: unadjusted Langevin steps for the joint
//! and pooled clouds, Diffusive Gibbs sweeps and systematic resampling.

use crate::error::{CodiffError, Result};
use crate::gradients::{ContrastiveCloud, JointCloud};
use crate::model::{current_prior_score, Design, History, ModelSpec};
use crate::pooled::{pooled_score, OutcomeMeasure};
use crate::rng::{NoiseSource, StreamRng, Tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Step size `γ_s = max(γ_0 · decay^s, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            gamma0: 1e-2,
            decay: 1.0,
            floor: 0.0,
        }
    }
}

impl StepSchedule {
    pub fn flat(gamma: f64) -> Self {
        StepSchedule {
            gamma0: gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma0 > 0.0 && self.decay > 0.0 && self.decay <= 1.0 && self.floor >= 0.0 {
            Ok(())
        } else {
            Err(CodiffError::InvalidArgument(format!("invalid step schedule {self:?}")))
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        (self.gamma0 * self.decay.powf(step as f64)).max(self.floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DigsConfig {
    pub noise_scale: f64,
    pub denoise_steps: usize,
    pub denoise_step_size: f64,
}

impl Default for DigsConfig {
    fn default() -> Self {
        DigsConfig {
            noise_scale: 1.0,
            denoise_steps: 40,
            denoise_step_size: 0.05,
        }
    }
}

impl DigsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_scale > 0.0 && self.denoise_steps > 0 && self.denoise_step_size > 0.0 {
            Ok(())
        } else {
            Err(CodiffError::InvalidArgument(format!("invalid DiGS config {self:?}")))
        }
    }
}

/// How the joint cloud is moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// Langevin on θ under the current prior, then exact `y | θ`.
    #[default]
    Split,
    /// Simultaneous Langevin on `(θ, y)` with the joint potential.
    Full,
}

/// Resampling trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    Never,
    /// Resample when ESS falls below this fraction of the cloud size.
    EssBelow(f64),
}

impl Default for ResamplePolicy {
    fn default() -> Self {
        ResamplePolicy::EssBelow(0.5)
    }
}

impl ResamplePolicy {
    pub fn triggers(&self, weights: &[f64]) -> bool {
        match *self {
            ResamplePolicy::Never => false,
            ResamplePolicy::EssBelow(f) => ess(weights) < f * weights.len() as f64,
        }
    }
}

fn clip(mut v: Vec<f64>, max_norm: Option<f64>) -> Vec<f64> {
    if let Some(c) = max_norm {
        let n = crate::numeric::norm_sq(&v).sqrt();
        if n > c {
            v.iter_mut().for_each(|x| *x *= c / n);
        }
    }
    v
}

/// `x + γ s + √(2γ) ε`, or `None` if the result is not finite.
fn ula(x: &[f64], score: &[f64], gamma: f64, eps: &[f64], max_drift: Option<f64>) -> Option<Vec<f64>> {
    let drift = clip(score.iter().map(|s| gamma * s).collect(), max_drift);
    let sd = (2.0 * gamma).sqrt();
    let out: Vec<f64> = x
        .iter()
        .zip(drift.iter().zip(eps))
        .map(|(x, (d, e))| x + d + sd * e)
        .collect();
    crate::numeric::all_finite(&out).then_some(out)
}

/// Options shared by the Langevin operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinOptions {
    pub mode: JointMode,
    /// Optional cap on the norm of the drift `γ·score`.
    pub max_drift: Option<f64>,
}

impl Default for LangevinOptions {
    fn default() -> Self {
        LangevinOptions {
            mode: JointMode::Split,
            max_drift: None,
        }
    }
}

/// One Langevin step of the joint cloud at design `ξ`.
pub fn joint_langevin_step(
    cloud: &JointCloud,
    model: &dyn ModelSpec,
    hist: &History,
    xi: &Design,
    gamma: f64,
    noise: NoiseSource,
    opts: LangevinOptions,
) -> Result<JointCloud> {
    if !(gamma >= 0.0) {
        return Err(CodiffError::InvalidArgument("Langevin step must be >= 0".into()));
    }
    let (dt, dy) = (model.theta_dim(), model.outcome_dim());
    let xs = xi.xi();
    let moved: Vec<(Vec<f64>, Vec<f64>)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let (theta, y, id) = (&cloud.theta[i], &cloud.y[i], cloud.ids[i]);
            match opts.mode {
                JointMode::Split => {
                    let eps = noise.normals(Tag::Joint, id, dt);
                    let score = current_prior_score(model, hist, theta);
                    let next = ula(theta, &score, gamma, &eps, opts.max_drift).unwrap_or_else(|| {
                        log::warn!("non-finite joint update for particle {id}, keeping previous state");
                        theta.clone()
                    });
                    let u = noise.normals(Tag::Outcome, id, dy);
                    let y_next = model.forward(&next, xs, &u);
                    if crate::numeric::all_finite(&y_next) {
                        (next, y_next)
                    } else {
                        (theta.clone(), y.clone())
                    }
                }
                JointMode::Full => {
                    let eps = noise.normals(Tag::Joint, id, dt + dy);
                    let mut st = current_prior_score(model, hist, theta);
                    crate::numeric::axpy(1.0, &model.grad_theta_log_lik(y, theta, xs), &mut st);
                    st.extend(model.grad_y_log_lik(y, theta, xs));
                    let mut state = theta.clone();
                    state.extend_from_slice(y);
                    match ula(&state, &st, gamma, &eps, opts.max_drift) {
                        Some(mut s) => {
                            let y_next = s.split_off(dt);
                            (s, y_next)
                        }
                        None => {
                            log::warn!("non-finite joint update for particle {id}, keeping previous state");
                            (theta.clone(), y.clone())
                        }
                    }
                }
            }
        })
        .collect();
    let (theta, y) = moved.into_iter().unzip();
    Ok(JointCloud {
        theta,
        y,
        ids: cloud.ids.clone(),
    })
}

/// One Langevin step of the contrastive cloud on the pooled posterior.
#[allow(clippy::too_many_arguments)]
pub fn pooled_langevin_step(
    cloud: &ContrastiveCloud,
    model: &dyn ModelSpec,
    hist: &History,
    xi: &Design,
    rho: &OutcomeMeasure,
    gamma: f64,
    noise: NoiseSource,
    max_drift: Option<f64>,
) -> Result<ContrastiveCloud> {
    if !(gamma >= 0.0) {
        return Err(CodiffError::InvalidArgument("Langevin step must be >= 0".into()));
    }
    let dt = model.theta_dim();
    let theta = (0..cloud.len())
        .into_par_iter()
        .map(|j| {
            let (t, id) = (&cloud.theta[j], cloud.ids[j]);
            let eps = noise.normals(Tag::Contrastive, id, dt);
            let score = pooled_score(model, hist, rho, xi, t);
            ula(t, &score, gamma, &eps, max_drift).unwrap_or_else(|| {
                log::warn!("non-finite pooled update for particle {id}, keeping previous state");
                t.clone()
            })
        })
        .collect();
    Ok(ContrastiveCloud {
        theta,
        ids: cloud.ids.clone(),
    })
}

/// Diffusive Gibbs sweep: noise each particle, `x̃ = x + σ ε`, then run
/// Langevin from `x̃` on the denoising conditional with score
/// `target_score(x) − (x − x̃)/σ²`. The linear anchor term is integrated
/// implicitly, so small `σ` stays stable and `σ → 0` returns `x̃`.
pub fn digs_sweep<F>(
    particles: &[Vec<f64>],
    ids: &[u64],
    target_score: F,
    cfg: &DigsConfig,
    noise: NoiseSource,
    max_drift: Option<f64>,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    crate::error::check_dim("particle ids", particles.len(), ids.len())?;
    let s2 = cfg.noise_scale * cfg.noise_scale;
    let h = cfg.denoise_step_size;
    let shrink = 1.0 / (1.0 + h / s2);
    Ok(particles
        .par_iter()
        .zip(ids.par_iter())
        .map(|(x, id)| {
            let d = x.len();
            let eps = noise.normals(Tag::Digs, *id, d * (cfg.denoise_steps + 1));
            let anchor: Vec<f64> = x.iter().zip(&eps[..d]).map(|(x, e)| x + cfg.noise_scale * e).collect();
            let mut cur = anchor.clone();
            for k in 0..cfg.denoise_steps {
                let score = target_score(&cur);
                let Some(explicit) = ula(&cur, &score, h, &eps[d * (k + 1)..d * (k + 2)], max_drift) else {
                    log::warn!("non-finite DiGS update for particle {id}, keeping previous state");
                    return x.clone();
                };
                cur = explicit
                    .iter()
                    .zip(&anchor)
                    .map(|(e, a)| shrink * (e + h * a / s2))
                    .collect();
            }
            cur
        })
        .collect())
}

/// Effective sample size `1 / Σ w_i²` of simplex weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling indices for offset `u0 ∈ [0, 1)`.
pub fn systematic_indices(weights: &[f64], u0: f64) -> Result<Vec<usize>> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    if n == 0 || !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(CodiffError::DegenerateWeights { row: 0 });
    }
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0] / total;
    let mut j = 0;
    for k in 0..n {
        let u = (k as f64 + u0) / n as f64;
        while u >= cum && j + 1 < n {
            j += 1;
            cum += weights[j] / total;
        }
        out.push(j);
    }
    Ok(out)
}

/// Draws `N` equally weighted particles by systematic resampling.
pub fn systematic_resample<T: Clone>(particles: &[T], weights: &[f64], rng: &mut StreamRng) -> Result<Vec<T>> {
    use rand::Rng;
    crate::error::check_dim("resampling weights", particles.len(), weights.len())?;
    let idx = systematic_indices(weights, rng.gen::<f64>())?;
    Ok(idx.into_iter().map(|i| particles[i].clone()).collect())
}
