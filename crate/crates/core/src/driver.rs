//! Design optimization: nested-loop and single-loop sampling/optimization,
//! projected Adam ascent, and the greedy sequential experiment loop.

use crate::error::{CodiffError, Result};
use crate::evaluation::{spce_snmc, w2_to_truth, MetricRecord, SpceConfig};
use crate::gradients::{grad_pooled_snis, grad_prior_is, ContrastiveCloud, GradEstimate, JointCloud};
use crate::model::{current_prior_score, BoxBounds, Design, History, ModelSpec};
use crate::numeric::normalize_log_weights;
use crate::pooled::{pooled_score, DegenerateRowPolicy, LogLikMatrix, OutcomeMeasure, PoolingWeights};
use crate::rng::{derive_seed, stream, NoiseSource, Tag};
use crate::samplers::{digs_sweep, joint_langevin_step, pooled_langevin_step, systematic_indices, DigsConfig, JointMode, LangevinOptions, ResamplePolicy, StepSchedule};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Adam hyperparameters with a stepwise exponential learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr0: f64,
    /// Multiplicative decay applied once per epoch.
    pub decay: f64,
    /// Optimizer steps per epoch.
    pub decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 1e-2,
            decay: 0.98,
            decay_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.decay_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CodiffError::InvalidArgument(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// Adam moments and step count for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(cfg: AdamConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(OptimizerState {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next step.
    pub fn learning_rate(&self) -> f64 {
        self.cfg.lr0 * self.cfg.decay.powf((self.step / self.cfg.decay_every) as f64)
    }
}

/// One Adam ascent step followed by projection onto the design bounds.
pub fn update_design(opt: &mut OptimizerState, xi: &Design, grad: &GradEstimate) -> Result<Design> {
    crate::error::check_dim("gradient", xi.dim(), grad.grad.len())?;
    if !grad.is_finite() {
        return Err(CodiffError::NonFinite("design gradient".into()));
    }
    let lr = opt.learning_rate();
    opt.step += 1;
    let c = &opt.cfg;
    let t = opt.step as f64;
    let mut next = xi.xi().to_vec();
    for (k, (x, &g)) in next.iter_mut().zip(&grad.grad).enumerate() {
        opt.m[k] = c.beta1 * opt.m[k] + (1.0 - c.beta1) * g;
        opt.v[k] = c.beta2 * opt.v[k] + (1.0 - c.beta2) * g * g;
        let mh = opt.m[k] / (1.0 - c.beta1.powf(t));
        let vh = opt.v[k] / (1.0 - c.beta2.powf(t));
        *x += lr * mh / (vh.sqrt() + c.eps);
    }
    xi.with_xi(next)
}

/// Contrastive estimator used inside the loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopEstimator {
    /// Contrastive cloud on the pooled posterior, SNIS weights.
    #[default]
    PooledSnis,
    /// Contrastive cloud left on the current prior, likelihood weights.
    PriorIs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub step: StepSchedule,
    pub contrastive_step: StepSchedule,
    pub joint_mode: JointMode,
    pub max_drift: Option<f64>,
    pub digs: Option<DigsConfig>,
    /// A DiGS sweep replaces every `digs_period`-th Langevin step.
    pub digs_period: usize,
    pub resample: ResamplePolicy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            step: StepSchedule::default(),
            contrastive_step: StepSchedule::default(),
            joint_mode: JointMode::Split,
            max_drift: None,
            digs: None,
            digs_period: 10,
            resample: ResamplePolicy::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        self.contrastive_step.validate()?;
        if let Some(d) = &self.digs {
            d.validate()?;
        }
        if self.digs_period == 0 {
            return Err(CodiffError::InvalidArgument("digs_period must be >= 1".into()));
        }
        if let Some(c) = self.max_drift {
            if !(c > 0.0) {
                return Err(CodiffError::InvalidArgument("max_drift must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub t_outer: usize,
    /// Joint sampler steps per outer iteration (nested loop).
    pub s_inner: usize,
    /// Contrastive sampler steps per outer iteration (nested loop).
    pub s_inner_contrastive: usize,
    pub n: usize,
    pub m: usize,
    pub estimator: LoopEstimator,
    pub sampler: SamplerConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            t_outer: 5000,
            s_inner: 50,
            s_inner_contrastive: 50,
            n: 200,
            m: 200,
            estimator: LoopEstimator::PooledSnis,
            sampler: SamplerConfig::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.s_inner == 0 || self.s_inner_contrastive == 0 {
            return Err(CodiffError::InvalidArgument("cloud sizes and inner step counts must be >= 1".into()));
        }
        self.sampler.validate()
    }
}

/// Target the contrastive cloud currently represents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContrastiveTarget {
    /// `p(θ | hist)`
    CurrentPrior,
    /// Pooled posterior for these outcomes at this design.
    Pooled { outcomes: Vec<Vec<f64>>, xi: Vec<f64> },
}

/// Clouds and design carried between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub design: Design,
    pub joint: JointCloud,
    pub contrastive: ContrastiveCloud,
    pub contrastive_target: ContrastiveTarget,
}

impl LoopState {
    /// Joint and contrastive clouds drawn from the prior, outcomes simulated at `design`.
    pub fn from_prior(model: &dyn ModelSpec, design: Design, n: usize, m: usize, seed: u64) -> Result<Self> {
        let (theta, y): (Vec<_>, Vec<_>) = (0..n as u64)
            .map(|i| {
                let mut rng = stream(seed, Tag::Init, i, 0);
                let t = model.sample_prior(&mut rng);
                let u = model.sample_noise(&mut rng);
                let y = model.forward(&t, design.xi(), &u);
                (t, y)
            })
            .unzip();
        let contrastive = (0..m as u64)
            .map(|j| model.sample_prior(&mut stream(seed, Tag::Init, j, 1)))
            .collect();
        Ok(LoopState {
            design,
            joint: JointCloud::new(theta, y)?,
            contrastive: ContrastiveCloud::new(contrastive)?,
            contrastive_target: ContrastiveTarget::CurrentPrior,
        })
    }
}

/// One outer iteration as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Design after this iteration's update.
    pub xi: Vec<f64>,
    pub grad_norm: f64,
    pub ess_min: f64,
    pub degenerate_rows: usize,
    pub resampled_joint: bool,
    pub resampled_contrastive: bool,
    /// The update was skipped because the gradient was not finite.
    pub skipped: bool,
    /// Sampler generation of the clouds the gradient was computed from.
    pub cloud_stamp: usize,
    /// Iteration index of the design the gradient was computed at.
    pub design_stamp: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub state: LoopState,
    pub trace: Vec<TraceRecord>,
    pub optimizer: OptimizerState,
}

impl LoopOutcome {
    /// First iteration whose update was skipped, if any.
    pub fn first_skipped(&self) -> Option<usize> {
        self.trace.iter().find(|r| r.skipped).map(|r| r.iter)
    }
}

struct Streams {
    joint: u64,
    contrastive: u64,
    resample: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            joint: derive_seed(seed, 1),
            contrastive: derive_seed(seed, 2),
            resample: derive_seed(seed, 3),
        }
    }
}

fn resample_by_log_weights<T: Clone>(items: &mut Vec<T>, logw: &[f64], policy: ResamplePolicy, seed: u64, step: u64) -> Result<bool> {
    let w = normalize_log_weights(logw).ok_or(CodiffError::DegenerateWeights { row: 0 })?;
    if !policy.triggers(&w) {
        return Ok(false);
    }
    let u0 = stream(seed, Tag::Resample, 0, step).gen::<f64>();
    let idx = systematic_indices(&w, u0)?;
    *items = idx.into_iter().map(|i| items[i].clone()).collect();
    Ok(true)
}

fn pooled_log_lik(model: &dyn ModelSpec, xi: &[f64], outcomes: &[Vec<f64>], thetas: &[Vec<f64>]) -> Vec<f64> {
    let ll = LogLikMatrix::compute(model, xi, outcomes, thetas);
    let nu = 1.0 / outcomes.len() as f64;
    (0..ll.cols())
        .map(|j| {
            let col: Vec<f64> = (0..ll.rows()).map(|i| nu * ll.get(i, j)).collect();
            crate::numeric::pairwise_sum(&col)
        })
        .collect()
}

fn joint_move(model: &dyn ModelSpec, hist: &History, st: &mut LoopState, cfg: &SamplerConfig, seed: u64, step: u64) -> Result<()> {
    let noise = NoiseSource::new(seed, step);
    let opts = LangevinOptions {
        mode: cfg.joint_mode,
        max_drift: cfg.max_drift,
    };
    match cfg.digs {
        Some(d) if (step + 1).is_multiple_of(cfg.digs_period as u64) && cfg.joint_mode == JointMode::Split => {
            let theta = digs_sweep(&st.joint.theta, &st.joint.ids, |t| current_prior_score(model, hist, t), &d, noise, cfg.max_drift)?;
            let y = theta
                .iter()
                .zip(&st.joint.ids)
                .map(|(t, id)| model.forward(t, st.design.xi(), &noise.normals(Tag::Outcome, *id, model.outcome_dim())))
                .collect();
            st.joint = JointCloud {
                theta,
                y,
                ids: st.joint.ids.clone(),
            };
        }
        _ => {
            let gamma = cfg.step.at(step);
            st.joint = joint_langevin_step(&st.joint, model, hist, &st.design, gamma, noise, opts)?;
        }
    }
    Ok(())
}

fn contrastive_move(model: &dyn ModelSpec, hist: &History, st: &mut LoopState, rho: &OutcomeMeasure, cfg: &SamplerConfig, seed: u64, step: u64) -> Result<()> {
    let noise = NoiseSource::new(seed, step);
    match cfg.digs {
        Some(d) if (step + 1).is_multiple_of(cfg.digs_period as u64) => {
            st.contrastive.theta = digs_sweep(&st.contrastive.theta, &st.contrastive.ids, |t| pooled_score(model, hist, rho, &st.design, t), &d, noise, cfg.max_drift)?;
        }
        _ => {
            let gamma = cfg.contrastive_step.at(step);
            st.contrastive = pooled_langevin_step(&st.contrastive, model, hist, &st.design, rho, gamma, noise, cfg.max_drift)?;
        }
    }
    Ok(())
}

fn at(iter: usize) -> impl Fn(CodiffError) -> CodiffError {
    move |e| CodiffError::AtIteration {
        iter,
        source: Box::new(e),
    }
}

/// Shared body of both loops.
#[allow(clippy::too_many_arguments)]
fn run_loop(
    model: &dyn ModelSpec,
    hist: &History,
    cfg: &LoopConfig,
    s_joint: usize,
    s_contrastive: usize,
    reinitialize: bool,
    optimize: bool,
    opt: OptimizerState,
    init: LoopState,
    seed: u64,
) -> Result<LoopOutcome> {
    cfg.validate()?;
    let streams = Streams::new(seed);
    let p0 = init.clone();
    let mut st = init;
    let mut opt = opt;
    let mut trace = Vec::with_capacity(cfg.t_outer);
    let mut prev_joint_xi = st.design.xi().to_vec();
    for t in 0..cfg.t_outer {
        let start = Instant::now();
        if reinitialize {
            let design = st.design.clone();
            st = p0.clone();
            st.design = design;
            prev_joint_xi = p0.design.xi().to_vec();
        }
        let mut resampled_joint = false;
        for s in 0..s_joint {
            let step = (t * s_joint + s) as u64;
            if cfg.sampler.joint_mode == JointMode::Full && prev_joint_xi != st.design.xi() {
                let logw: Vec<f64> = st
                    .joint
                    .theta
                    .iter()
                    .zip(&st.joint.y)
                    .map(|(th, y)| model.log_lik(y, th, st.design.xi()) - model.log_lik(y, th, &prev_joint_xi))
                    .collect();
                let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = st.joint.theta.iter().cloned().zip(st.joint.y.iter().cloned()).collect();
                if resample_by_log_weights(&mut pairs, &logw, cfg.sampler.resample, streams.resample, 2 * step).map_err(at(t))? {
                    resampled_joint = true;
                    (st.joint.theta, st.joint.y) = pairs.into_iter().unzip();
                }
                prev_joint_xi = st.design.xi().to_vec();
            }
            joint_move(model, hist, &mut st, &cfg.sampler, streams.joint, step).map_err(at(t))?;
        }
        let rho = OutcomeMeasure::empirical(st.joint.y.clone()).map_err(at(t))?;
        let mut resampled_contrastive = false;
        let grad = if optimize {
            if cfg.estimator == LoopEstimator::PooledSnis {
                for s in 0..s_contrastive {
                    let step = (t * s_contrastive + s) as u64;
                    if s == 0 {
                        let mut logw = pooled_log_lik(model, st.design.xi(), rho.atoms(), &st.contrastive.theta);
                        if let ContrastiveTarget::Pooled { outcomes, xi } = &st.contrastive_target {
                            let old = pooled_log_lik(model, xi, outcomes, &st.contrastive.theta);
                            logw.iter_mut().zip(old).for_each(|(w, o)| *w -= o);
                        }
                        if resample_by_log_weights(&mut st.contrastive.theta, &logw, cfg.sampler.resample, streams.resample, 2 * step + 1).map_err(at(t))? {
                            resampled_contrastive = true;
                        }
                        st.contrastive_target = ContrastiveTarget::Pooled {
                            outcomes: rho.atoms().to_vec(),
                            xi: st.design.xi().to_vec(),
                        };
                    }
                    contrastive_move(model, hist, &mut st, &rho, &cfg.sampler, streams.contrastive, step).map_err(at(t))?;
                }
                grad_pooled_snis(model, hist, &st.design, &st.joint, &st.contrastive, rho.weights(), DegenerateRowPolicy::Uniform)
            } else {
                grad_prior_is(model, &st.design, &st.joint, &st.contrastive)
            }
        } else {
            Ok(GradEstimate {
                grad: vec![0.0; st.design.dim()],
                n_joint: st.joint.len(),
                n_contrastive: 0,
                ess_min: f64::NAN,
                degenerate_rows: 0,
            })
        };
        let (grad, skipped) = match grad {
            Ok(g) if g.is_finite() => (g, false),
            Ok(g) => {
                log::warn!("non-finite gradient at iteration {t}, skipping update");
                (g, true)
            }
            Err(CodiffError::DegenerateWeights { row }) => {
                log::warn!("degenerate weights in row {row} at iteration {t}, skipping update");
                (
                    GradEstimate {
                        grad: vec![f64::NAN; st.design.dim()],
                        n_joint: st.joint.len(),
                        n_contrastive: st.contrastive.len(),
                        ess_min: 0.0,
                        degenerate_rows: st.joint.len(),
                    },
                    true,
                )
            }
            Err(e) => return Err(at(t)(e)),
        };
        if optimize && !skipped {
            st.design = update_design(&mut opt, &st.design, &grad).map_err(at(t))?;
        }
        trace.push(TraceRecord {
            iter: t,
            xi: st.design.xi().to_vec(),
            grad_norm: grad.norm(),
            ess_min: grad.ess_min,
            degenerate_rows: grad.degenerate_rows,
            resampled_joint,
            resampled_contrastive,
            skipped,
            cloud_stamp: t + 1,
            design_stamp: t,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(LoopOutcome {
        state: st,
        trace,
        optimizer: opt,
    })
}

/// Nested loop: per outer iteration, optionally restart the clouds from the
/// initial state, run `s_inner` joint steps and `s_inner_contrastive` pooled
/// steps, then take one design step.
pub fn run_nested_loop(
    model: &dyn ModelSpec,
    hist: &History,
    cfg: &LoopConfig,
    opt: OptimizerState,
    init: LoopState,
    reinitialize: bool,
    seed: u64,
) -> Result<LoopOutcome> {
    run_loop(model, hist, cfg, cfg.s_inner, cfg.s_inner_contrastive, reinitialize, true, opt, init, seed)
}

/// Single loop: one sampler step per cloud, then the gradient on the updated
/// clouds at the current design, then one design step.
pub fn run_single_loop(model: &dyn ModelSpec, hist: &History, cfg: &LoopConfig, opt: OptimizerState, init: LoopState, seed: u64) -> Result<LoopOutcome> {
    run_loop(model, hist, cfg, 1, 1, false, true, opt, init, seed)
}

/// Runs the joint sampler only, at a fixed design.
pub fn run_fixed_design(model: &dyn ModelSpec, hist: &History, cfg: &LoopConfig, opt: OptimizerState, init: LoopState, seed: u64) -> Result<LoopOutcome> {
    run_loop(model, hist, cfg, 1, 1, false, false, opt, init, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignPolicy {
    #[default]
    Optimized,
    /// Uniform draws on the bounds box.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignInit {
    /// Uniform on the bounds box, independently per experiment.
    Random,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    pub k: usize,
    pub policy: DesignPolicy,
    pub design_init: DesignInit,
    pub bounds: BoxBounds,
    pub spce: SpceConfig,
}

/// Everything recorded for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub xi: Vec<f64>,
    pub y: Vec<f64>,
    pub metrics: MetricRecord,
    pub skipped_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialRun {
    pub theta_star: Vec<f64>,
    pub history: History,
    pub records: Vec<ExperimentRecord>,
}

impl SequentialRun {
    pub fn new(theta_star: Vec<f64>) -> Self {
        SequentialRun {
            theta_star,
            history: History::new(),
            records: Vec::new(),
        }
    }

    pub fn metrics(&self) -> Vec<MetricRecord> {
        self.records.iter().map(|r| r.metrics.clone()).collect()
    }
}

/// Reweights the joint cloud by the newest observation and resamples it;
/// moves the contrastive cloud onto the same current prior.
fn warm_start(model: &dyn ModelSpec, st: &LoopState, xi: &[f64], y: &[f64], seed: u64, k: u64) -> Result<LoopState> {
    let mut next = st.clone();
    let logw: Vec<f64> = st.joint.theta.iter().map(|t| model.log_lik(y, t, xi)).collect();
    next.joint.theta = resample_all(&st.joint.theta, &logw, seed, 2 * k)?;
    let mut logq: Vec<f64> = st.contrastive.theta.iter().map(|t| model.log_lik(y, t, xi)).collect();
    if let ContrastiveTarget::Pooled { outcomes, xi: qxi } = &st.contrastive_target {
        let old = pooled_log_lik(model, qxi, outcomes, &st.contrastive.theta);
        logq.iter_mut().zip(old).for_each(|(w, o)| *w -= o);
    }
    next.contrastive.theta = resample_all(&st.contrastive.theta, &logq, seed, 2 * k + 1)?;
    next.contrastive_target = ContrastiveTarget::CurrentPrior;
    Ok(next)
}

fn resample_all(items: &[Vec<f64>], logw: &[f64], seed: u64, step: u64) -> Result<Vec<Vec<f64>>> {
    let w = normalize_log_weights(logw).ok_or(CodiffError::DegenerateWeights { row: 0 })?;
    let u0 = stream(seed, Tag::Resample, 1, step).gen::<f64>();
    Ok(systematic_indices(&w, u0)?.into_iter().map(|i| items[i].clone()).collect())
}

/// Greedy sequential design: for each remaining experiment, choose `ξ_k`
/// against the current history, observe `y_k` under `θ*`, and record metrics.
pub fn run_sequential(
    model: &dyn ModelSpec,
    mut run: SequentialRun,
    loop_cfg: &LoopConfig,
    adam: AdamConfig,
    seq: &SequentialConfig,
    seed: u64,
) -> Result<SequentialRun> {
    seq.spce.validate()?;
    crate::error::check_dim("theta_star", model.theta_dim(), run.theta_star.len())?;
    crate::error::check_dim("bounds", model.design_dim(), seq.bounds.dim())?;
    if run.history.len() > seq.k {
        return Err(CodiffError::InvalidArgument("history is longer than K".into()));
    }
    let mut state: Option<LoopState> = None;
    for k in run.history.len() + 1..=seq.k {
        let start = Instant::now();
        let kseed = derive_seed(seed, k as u64);
        let xi0 = match (&seq.design_init, seq.policy) {
            (_, DesignPolicy::Random) | (DesignInit::Random, _) => seq.bounds.sample_uniform(&mut stream(seed, Tag::Design, k as u64, 0)),
            (DesignInit::Fixed(x), DesignPolicy::Optimized) => x.clone(),
        };
        let design = Design::bounded(xi0, seq.bounds.clone())?;
        let init = match state.take() {
            Some(mut s) => {
                s.design = design;
                s
            }
            None => LoopState::from_prior(model, design, loop_cfg.n, loop_cfg.m, derive_seed(kseed, 7))?,
        };
        let opt = OptimizerState::new(adam, model.design_dim())?;
        let out = match seq.policy {
            DesignPolicy::Optimized => run_single_loop(model, &run.history, loop_cfg, opt, init, kseed)?,
            DesignPolicy::Random => run_fixed_design(model, &run.history, loop_cfg, opt, init, kseed)?,
        };
        let skipped_updates = out.trace.iter().filter(|r| r.skipped).count();
        let xi = out.state.design.xi().to_vec();
        let u = model.sample_noise(&mut stream(seed, Tag::Truth, k as u64, 0));
        let y = model.forward(&run.theta_star, &xi, &u);
        if !crate::numeric::all_finite(&y) {
            return Err(CodiffError::NonFinite(format!("simulated outcome at experiment {k}")));
        }
        let logw: Vec<f64> = out.state.joint.theta.iter().map(|t| model.log_lik(&y, t, &xi)).collect();
        let w = normalize_log_weights(&logw).ok_or(CodiffError::DegenerateWeights { row: 0 })?;
        let aligned: Vec<Vec<f64>> = out.state.joint.theta.iter().map(|t| model.align_to(t, &run.theta_star)).collect();
        let w2 = w2_to_truth(&aligned, &w, &run.theta_star)?;
        run.history.push(xi.clone(), y.clone());
        let designs: Vec<Vec<f64>> = run.history.entries().iter().map(|e| e.xi.clone()).collect();
        let outcomes: Vec<Vec<f64>> = run.history.entries().iter().map(|e| e.y.clone()).collect();
        let (spce, snmc) = spce_snmc(model, &designs, &outcomes, &run.theta_star, &seq.spce, derive_seed(seed, 1_000_000 + k as u64))?;
        state = Some(warm_start(model, &out.state, &xi, &y, kseed, k as u64)?);
        log::info!("experiment {k}: xi = {xi:?}, spce = {spce:.4}, w2 = {w2:.4}");
        run.records.push(ExperimentRecord {
            xi,
            y,
            metrics: MetricRecord {
                k,
                spce,
                snmc,
                w2,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            },
            skipped_updates,
        });
    }
    Ok(run)
}

/// Pooling weights `ν_i = 1/N` for a cloud of size `n`.
pub fn default_pooling(n: usize) -> PoolingWeights {
    PoolingWeights::uniform(n)
}
