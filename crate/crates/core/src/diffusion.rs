//! Data-based samplers: a variance-preserving diffusion run in reverse with an
//! analytic score oracle, FPS conditioning on noised observation paths,
//! Tweedie prediction and FPS resampling weights.
//!
//! Time runs forward internally: `t ∈ [t0, T]` is the noising time. Reverse
//! passes are indexed by `t_rev = T − t`.

use crate::error::{check_dim, CodiffError, Result};
use crate::model::GaussianMixture;
use crate::numeric::{normalize_log_weights, LN_2PI};
use crate::pooled::PoolingWeights;
use crate::rng::{normals, stream, Tag};
use crate::samplers::{systematic_indices, ResamplePolicy};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Linear noise schedule `β(t) = b_min + (b_max − b_min)(t − t0)/(T − t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpSchedule {
    pub b_min: f64,
    pub b_max: f64,
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl Default for VpSchedule {
    fn default() -> Self {
        VpSchedule {
            b_min: 0.2,
            b_max: 5.0,
            t0: 0.0,
            t_end: 2.0,
            n_steps: 200,
        }
    }
}

impl VpSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.t_end > self.t0 && self.b_min > 0.0 && self.b_max > 0.0 && self.n_steps > 0 {
            Ok(())
        } else {
            Err(CodiffError::InvalidArgument(format!("invalid VP schedule {self:?}")))
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.b_min + (self.b_max - self.b_min) * (t - self.t0) / (self.t_end - self.t0)
    }

    /// `ᾱ_t = exp(−∫_{t0}^t β)`
    pub fn alpha_bar(&self, t: f64) -> f64 {
        let s = t - self.t0;
        (-(self.b_min * s + (self.b_max - self.b_min) * s * s / (2.0 * (self.t_end - self.t0)))).exp()
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    /// Forward time of grid point `k ∈ 0..=n_steps`.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    /// Forward time matching reverse time `t_rev`.
    pub fn forward_time(&self, t_rev: f64) -> f64 {
        self.t_end - t_rev
    }
}

/// `ᾱ_t` of the schedule.
pub fn alpha_bar(sched: &VpSchedule, t: f64) -> f64 {
    sched.alpha_bar(t)
}

/// Score of the noised prior `∇θ log p_t(θ)`, parameterized by the noise
/// level `ᾱ_t`. This is where a learned score network would plug in.
pub trait ScoreOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn score(&self, theta: &[f64], alpha_bar: f64) -> Vec<f64>;
}

impl ScoreOracle for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn score(&self, theta: &[f64], alpha_bar: f64) -> Vec<f64> {
        self.noised(alpha_bar).score(theta)
    }
}

/// Observation operator `A_ξ`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    /// Elementwise weights, e.g. a pixel mask.
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl LinearOperator {
    pub fn rows(&self) -> usize {
        match self {
            LinearOperator::Diagonal(d) => d.len(),
            LinearOperator::Dense(a) => a.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearOperator::Diagonal(d) => d.len(),
            LinearOperator::Dense(a) => a.ncols(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LinearOperator::Diagonal(d) => d.iter().zip(x).map(|(a, x)| a * x).collect(),
            LinearOperator::Dense(a) => (a * DVector::from_column_slice(x)).as_slice().to_vec(),
        }
    }

    pub fn apply_t(&self, r: &[f64]) -> Vec<f64> {
        match self {
            LinearOperator::Diagonal(d) => d.iter().zip(r).map(|(a, r)| a * r).collect(),
            LinearOperator::Dense(a) => (a.transpose() * DVector::from_column_slice(r)).as_slice().to_vec(),
        }
    }
}

/// `Y = A_ξ θ + σ η`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservation {
    op: LinearOperator,
    sigma: f64,
}

impl LinearObservation {
    pub fn new(op: LinearOperator, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(CodiffError::InvalidArgument("observation noise must be > 0".into()));
        }
        Ok(LinearObservation { op, sigma })
    }

    pub fn op(&self) -> &LinearOperator {
        &self.op
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `√ᾱ θ0 + √(1−ᾱ) ε`
pub fn forward_noise(theta0: &[f64], t: f64, eps: &[f64], sched: &VpSchedule) -> Vec<f64> {
    let a = sched.alpha_bar(t);
    theta0.iter().zip(eps).map(|(x, e)| a.sqrt() * x + (1.0 - a).sqrt() * e).collect()
}

/// `√ᾱ y + √(1−ᾱ) A ε`
pub fn noise_observation(y: &[f64], t: f64, eps: &[f64], obs: &LinearObservation, sched: &VpSchedule) -> Vec<f64> {
    let a = sched.alpha_bar(t);
    y.iter()
        .zip(obs.op.apply(eps))
        .map(|(y, ae)| a.sqrt() * y + (1.0 - a).sqrt() * ae)
        .collect()
}

/// Noised observation at every grid time, built from one stored `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    values: Vec<Vec<f64>>,
}

impl ObservationPath {
    pub fn new(y: &[f64], eps: &[f64], obs: &LinearObservation, sched: &VpSchedule) -> Result<Self> {
        check_dim("observation", obs.op.rows(), y.len())?;
        check_dim("path noise", obs.op.cols(), eps.len())?;
        Ok(ObservationPath {
            values: (0..=sched.n_steps)
                .map(|k| noise_observation(y, sched.time(k), eps, obs, sched))
                .collect(),
        })
    }

    /// Noised observation at grid index `k` (forward time `t_k`).
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k]
    }
}

/// One Euler–Maruyama step of the reverse SDE from reverse time `t_rev`:
/// `θ + (β/2 θ + β s(θ)) Δt + √(βΔt) ε`, with `β` and the score taken at `T − t_rev`.
pub fn reverse_step(theta: &[f64], t_rev: f64, dt: f64, oracle: &dyn ScoreOracle, sched: &VpSchedule, eps: &[f64]) -> Vec<f64> {
    let s = sched.forward_time(t_rev);
    let (beta, a) = (sched.beta(s), sched.alpha_bar(s));
    let score = oracle.score(theta, a);
    theta
        .iter()
        .zip(score.iter().zip(eps))
        .map(|(x, (sc, e))| x + (0.5 * beta * x + beta * sc) * dt + (beta * dt).sqrt() * e)
        .collect()
}

/// `A_ξᵀ (y_t − A_ξ θ_t) / (σ² ᾱ_t)`
pub fn fps_likelihood_score(theta: &[f64], y_t: &[f64], alpha_bar: f64, obs: &LinearObservation) -> Vec<f64> {
    let r: Vec<f64> = y_t.iter().zip(obs.op.apply(theta)).map(|(y, a)| y - a).collect();
    let c = 1.0 / (obs.sigma * obs.sigma * alpha_bar);
    obs.op.apply_t(&r).into_iter().map(|v| c * v).collect()
}

/// Treatment of the likelihood drift in conditional reverse steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpsIntegrator {
    /// Plain Euler–Maruyama on the full conditional score.
    Explicit,
    /// Likelihood drift evaluated at the new state; its quadratic potential
    /// makes this a linear solve. Stable for small `σ²ᾱ_t`.
    #[default]
    LinearImplicit,
}

/// One conditioning factor: an observation operator, its noised value at the
/// current time and an exponent.
#[derive(Debug, Clone, Copy)]
pub struct CondTerm<'a> {
    pub obs: &'a LinearObservation,
    pub y_t: &'a [f64],
    pub weight: f64,
}

/// Reverse step with score `oracle + Σ_k w_k · fps_likelihood_score(·, y_k)`.
#[allow(clippy::too_many_arguments)]
pub fn fps_reverse(
    theta: &[f64],
    t_rev: f64,
    dt: f64,
    oracle: &dyn ScoreOracle,
    terms: &[CondTerm<'_>],
    sched: &VpSchedule,
    eps: &[f64],
    integrator: FpsIntegrator,
) -> Vec<f64> {
    let s = sched.forward_time(t_rev);
    let (beta, a) = (sched.beta(s), sched.alpha_bar(s));
    match integrator {
        FpsIntegrator::Explicit => {
            let mut score = oracle.score(theta, a);
            for t in terms {
                crate::numeric::axpy(t.weight, &fps_likelihood_score(theta, t.y_t, a, t.obs), &mut score);
            }
            theta
                .iter()
                .zip(score.iter().zip(eps))
                .map(|(x, (sc, e))| x + (0.5 * beta * x + beta * sc) * dt + (beta * dt).sqrt() * e)
                .collect()
        }
        FpsIntegrator::LinearImplicit => {
            let pred = reverse_step(theta, t_rev, dt, oracle, sched, eps);
            implicit_likelihood_solve(&pred, beta * dt / a, terms)
        }
    }
}

/// Solves `(I + c Σ w_k A_kᵀA_k/σ_k²) θ = pred + c Σ w_k A_kᵀ y_k/σ_k²`.
fn implicit_likelihood_solve(pred: &[f64], c: f64, terms: &[CondTerm<'_>]) -> Vec<f64> {
    let d = pred.len();
    let all_diag = terms.iter().all(|t| matches!(t.obs.op, LinearOperator::Diagonal(_)));
    if all_diag {
        let mut lhs = vec![1.0; d];
        let mut rhs = pred.to_vec();
        for t in terms {
            if let LinearOperator::Diagonal(diag) = &t.obs.op {
                let f = c * t.weight / (t.obs.sigma * t.obs.sigma);
                for k in 0..d {
                    lhs[k] += f * diag[k] * diag[k];
                    rhs[k] += f * diag[k] * t.y_t[k];
                }
            }
        }
        return rhs.iter().zip(&lhs).map(|(r, l)| r / l).collect();
    }
    let mut lhs = DMatrix::<f64>::identity(d, d);
    let mut rhs = DVector::from_column_slice(pred);
    for t in terms {
        let f = c * t.weight / (t.obs.sigma * t.obs.sigma);
        let a = match &t.obs.op {
            LinearOperator::Diagonal(diag) => DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            LinearOperator::Dense(a) => a.clone(),
        };
        lhs += f * a.transpose() * &a;
        rhs += f * a.transpose() * DVector::from_column_slice(t.y_t);
    }
    match lhs.cholesky() {
        Some(ch) => ch.solve(&rhs).as_slice().to_vec(),
        None => pred.to_vec(),
    }
}

/// FPS step conditioned on one noised observation.
#[allow(clippy::too_many_arguments)]
pub fn fps_conditional_reverse(
    theta: &[f64],
    t_rev: f64,
    dt: f64,
    oracle: &dyn ScoreOracle,
    y_t: &[f64],
    obs: &LinearObservation,
    sched: &VpSchedule,
    eps: &[f64],
    integrator: FpsIntegrator,
) -> Vec<f64> {
    let term = [CondTerm { obs, y_t, weight: 1.0 }];
    fps_reverse(theta, t_rev, dt, oracle, &term, sched, eps, integrator)
}

/// Pooled reverse step: likelihood drift `Σ_i ν_i · fps_likelihood_score(·, y_i)`.
#[allow(clippy::too_many_arguments)]
pub fn fps_pooled_reverse(
    theta: &[f64],
    t_rev: f64,
    dt: f64,
    oracle: &dyn ScoreOracle,
    ys_t: &[&[f64]],
    nu: &PoolingWeights,
    obs: &LinearObservation,
    sched: &VpSchedule,
    eps: &[f64],
    integrator: FpsIntegrator,
) -> Vec<f64> {
    let terms: Vec<CondTerm<'_>> = ys_t
        .iter()
        .zip(nu.as_slice())
        .map(|(y, w)| CondTerm { obs, y_t: y, weight: *w })
        .collect();
    fps_reverse(theta, t_rev, dt, oracle, &terms, sched, eps, integrator)
}

/// Tweedie estimate of `E[θ0 | θ_t]`: `(θ_t + (1−ᾱ) s(θ_t)) / √ᾱ`.
pub fn tweedie_predict(theta: &[f64], alpha_bar: f64, oracle: &dyn ScoreOracle) -> Vec<f64> {
    let s = oracle.score(theta, alpha_bar);
    theta
        .iter()
        .zip(s)
        .map(|(x, s)| (x + (1.0 - alpha_bar) * s) / alpha_bar.sqrt())
        .collect()
}

fn log_noised_lik(theta: &[f64], y_t: &[f64], alpha_bar: f64, obs: &LinearObservation) -> f64 {
    let v = obs.sigma * obs.sigma * alpha_bar;
    let mean = obs.op.apply(theta);
    let r2 = crate::numeric::dist_sq(y_t, &mean);
    -0.5 * (r2 / v + y_t.len() as f64 * (LN_2PI + v.ln()))
}

/// Resampling weights `∝ Π_k p(y_k^{(t)} | θ_j)^{w_k}` with
/// `p(y^{(t)} | θ^{(t)}) = N(A θ^{(t)}, σ² ᾱ_t I)`.
pub fn fps_resample_weights(cloud: &[Vec<f64>], terms: &[CondTerm<'_>], alpha_bar: f64) -> Result<Vec<f64>> {
    let logw: Vec<f64> = cloud
        .par_iter()
        .map(|th| terms.iter().map(|t| t.weight * log_noised_lik(th, t.y_t, alpha_bar, t.obs)).sum())
        .collect();
    normalize_log_weights(&logw).ok_or(CodiffError::DegenerateWeights { row: 0 })
}

/// One factor of a multi-observation FPS chain.
#[derive(Debug, Clone)]
pub struct ChainTerm {
    pub obs: LinearObservation,
    pub path: ObservationPath,
    pub weight: f64,
}

impl ChainTerm {
    /// Builds the stored path from a fresh `ε` drawn from `(seed, index)`.
    pub fn new(obs: LinearObservation, y: &[f64], weight: f64, sched: &VpSchedule, seed: u64, index: u64) -> Result<Self> {
        let eps = normals(&mut stream(seed, Tag::ObsPath, index, 0), obs.op.cols());
        let path = ObservationPath::new(y, &eps, &obs, sched)?;
        Ok(ChainTerm { obs, path, weight })
    }
}

/// Settings of a full reverse pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct FpsConfig {
    pub schedule: VpSchedule,
    pub integrator: FpsIntegrator,
    pub resample: ResamplePolicy,
}


/// A particle cloud moving through a reverse pass one step at a time.
#[derive(Debug, Clone)]
pub struct FpsChain {
    particles: Vec<Vec<f64>>,
    terms: Vec<ChainTerm>,
    step: usize,
    seed: u64,
    resampled: usize,
}

impl FpsChain {
    /// Starts `m` particles from `N(0, I)` at reverse time 0.
    pub fn start(dim: usize, m: usize, terms: Vec<ChainTerm>, seed: u64) -> Self {
        let particles = (0..m as u64)
            .map(|j| normals(&mut stream(seed, Tag::Init, j, 0), dim))
            .collect();
        FpsChain {
            particles,
            terms,
            step: 0,
            seed,
            resampled: 0,
        }
    }

    pub fn particles(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self, cfg: &FpsConfig) -> bool {
        self.step >= cfg.schedule.n_steps
    }

    /// Number of resampling events so far.
    pub fn resample_count(&self) -> usize {
        self.resampled
    }

    /// Forward time of the current particles.
    pub fn current_time(&self, cfg: &FpsConfig) -> f64 {
        cfg.schedule.time(cfg.schedule.n_steps - self.step)
    }

    fn cond_terms(&self, k: usize) -> Vec<CondTerm<'_>> {
        self.terms
            .iter()
            .map(|t| CondTerm {
                obs: &t.obs,
                y_t: t.path.at(k),
                weight: t.weight,
            })
            .collect()
    }

    /// Advances one reverse step, then resamples if the policy fires.
    pub fn advance(&mut self, oracle: &dyn ScoreOracle, cfg: &FpsConfig) -> Result<()> {
        let sched = &cfg.schedule;
        if self.is_done(cfg) {
            return Ok(());
        }
        let (n, r) = (sched.n_steps, self.step);
        let dt = sched.dt();
        let t_rev = r as f64 * dt;
        let terms = self.cond_terms(n - r);
        let seed = self.seed;
        self.particles = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(j, th)| {
                let eps = normals(&mut stream(seed, Tag::Diffusion, j as u64, r as u64), th.len());
                fps_reverse(th, t_rev, dt, oracle, &terms, sched, &eps, cfg.integrator)
            })
            .collect();
        self.step += 1;
        if !self.terms.is_empty() && self.step < n {
            let next = self.cond_terms(n - self.step);
            let w = fps_resample_weights(&self.particles, &next, sched.alpha_bar(sched.time(n - self.step)))?;
            if cfg.resample.triggers(&w) {
                let u0 = stream(seed, Tag::Resample, 0, r as u64).gen::<f64>();
                let idx = systematic_indices(&w, u0)?;
                self.particles = idx.into_iter().map(|i| self.particles[i].clone()).collect();
                self.resampled += 1;
            }
        }
        Ok(())
    }

    /// Runs to the end of the pass.
    pub fn finish(mut self, oracle: &dyn ScoreOracle, cfg: &FpsConfig) -> Result<Vec<Vec<f64>>> {
        while !self.is_done(cfg) {
            self.advance(oracle, cfg)?;
        }
        Ok(self.particles)
    }
}

/// `m` samples from the prior by an unconditional reverse pass.
pub fn sample_unconditional(oracle: &dyn ScoreOracle, m: usize, cfg: &FpsConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.schedule.validate()?;
    FpsChain::start(oracle.dim(), m, Vec::new(), seed).finish(oracle, cfg)
}

/// `m` FPS samples conditioned on `y = A θ + σ η`.
pub fn sample_conditional(
    oracle: &dyn ScoreOracle,
    obs: &LinearObservation,
    y: &[f64],
    m: usize,
    cfg: &FpsConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    sample_pooled(oracle, obs, &[y.to_vec()], &PoolingWeights::uniform(1), m, cfg, seed)
}

/// `m` samples of the pooled posterior over observations `ys` with exponents `ν`.
pub fn sample_pooled(
    oracle: &dyn ScoreOracle,
    obs: &LinearObservation,
    ys: &[Vec<f64>],
    nu: &PoolingWeights,
    m: usize,
    cfg: &FpsConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.schedule.validate()?;
    check_dim("pooled observations", nu.len(), ys.len())?;
    let terms = ys
        .iter()
        .zip(nu.as_slice())
        .enumerate()
        .map(|(i, (y, w))| ChainTerm::new(obs.clone(), y, *w, &cfg.schedule, seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    FpsChain::start(oracle.dim(), m, terms, seed).finish(oracle, cfg)
}
