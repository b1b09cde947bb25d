//! Design problems: prior, likelihood and the reparameterization map
//! `y = T_{ξ,θ}(u)`, plus the built-in reference models.

mod gmm;
mod linear_gaussian;
mod smooth_mask;
mod source;

pub use gmm::GaussianMixture;
pub use linear_gaussian::LinearGaussian1D;
pub use smooth_mask::{smooth_mask, smooth_mask_grad, SmoothMaskInverse};
pub use source::{signal_strength, SourceConstants, SourceLocation};

use crate::diffusion::LinearObservation;
use crate::error::{check_dim, CodiffError, Result};
use crate::numeric::axpy;
use crate::rng::StreamRng;
use serde::{Deserialize, Serialize};

/// Axis-aligned box `[lo, hi]` for designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("bounds", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(CodiffError::InvalidArgument(
                "bounds must be finite with lo <= hi".into(),
            ));
        }
        Ok(BoxBounds { lo, hi })
    }

    pub fn symmetric(dim: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; dim], vec![half; dim])
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    /// Uniform draw from the box.
    pub fn sample_uniform(&self, rng: &mut StreamRng) -> Vec<f64> {
        use rand::Rng;
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.gen::<f64>())
            .collect()
    }
}

/// A design point `ξ` with optional box constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    xi: Vec<f64>,
    bounds: Option<BoxBounds>,
}

impl Design {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if !crate::numeric::all_finite(&xi) {
            return Err(CodiffError::NonFinite("design entries".into()));
        }
        Ok(Design { xi, bounds: None })
    }

    pub fn bounded(xi: Vec<f64>, bounds: BoxBounds) -> Result<Self> {
        check_dim("design bounds", xi.len(), bounds.dim())?;
        if !bounds.contains(&xi) {
            return Err(CodiffError::InvalidArgument(format!(
                "design {xi:?} lies outside its bounds"
            )));
        }
        let mut d = Self::new(xi)?;
        d.bounds = Some(bounds);
        Ok(d)
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn bounds(&self) -> Option<&BoxBounds> {
        self.bounds.as_ref()
    }

    /// Replaces the coordinates, projecting onto the bounds if present.
    pub fn with_xi(&self, mut xi: Vec<f64>) -> Result<Self> {
        check_dim("design", self.xi.len(), xi.len())?;
        if !crate::numeric::all_finite(&xi) {
            return Err(CodiffError::NonFinite("design entries".into()));
        }
        if let Some(b) = &self.bounds {
            b.project(&mut xi);
        }
        Ok(Design {
            xi,
            bounds: self.bounds.clone(),
        })
    }
}

/// One completed experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub xi: Vec<f64>,
    pub y: Vec<f64>,
}

/// Ordered, append-only list of completed experiments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    entries: Vec<Experiment>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, xi: Vec<f64>, y: Vec<f64>) {
        self.entries.push(Experiment { xi, y });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Experiment] {
        &self.entries
    }

    /// Σ_k log p(y_k | θ, ξ_k)
    pub fn log_lik(&self, model: &dyn ModelSpec, theta: &[f64]) -> f64 {
        self.entries.iter().map(|e| model.log_lik(&e.y, theta, &e.xi)).sum()
    }
}

/// A design problem. Implementations are immutable and shared across threads.
pub trait ModelSpec: Send + Sync {
    fn name(&self) -> &'static str;
    fn theta_dim(&self) -> usize;
    fn outcome_dim(&self) -> usize;
    fn design_dim(&self) -> usize;

    fn log_prior(&self, theta: &[f64]) -> f64;
    fn grad_theta_log_prior(&self, theta: &[f64]) -> Vec<f64>;
    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64>;

    fn log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64;
    fn grad_theta_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64>;
    fn grad_y_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64>;
    fn grad_xi_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64>;

    /// `T_{ξ,θ}(u)`
    fn forward(&self, theta: &[f64], xi: &[f64], u: &[f64]) -> Vec<f64>;
    /// `T⁻¹_{ξ,θ}(y)`
    fn inverse(&self, theta: &[f64], xi: &[f64], y: &[f64]) -> Result<Vec<f64>>;
    /// `∂T_{ξ,θ}(u)/∂ξ` as a row-major `p × d` matrix.
    fn jacobian_xi(&self, theta: &[f64], xi: &[f64], u: &[f64]) -> Vec<f64>;

    /// Draw of the base noise `u ~ p_U`.
    fn sample_noise(&self, rng: &mut StreamRng) -> Vec<f64> {
        crate::rng::normals(rng, self.outcome_dim())
    }

    /// Whether `y | θ, ξ` can be drawn exactly through [`ModelSpec::forward`].
    fn exact_outcome_sampling(&self) -> bool {
        true
    }

    /// Relabels `theta` to best match `reference` for models with exchangeable
    /// components. Identity by default.
    fn align_to(&self, theta: &[f64], _reference: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    /// Linear-Gaussian structure `y = A_ξ θ + σ η`, when the model has it.
    fn linear_observation(&self, _xi: &[f64]) -> Option<LinearObservation> {
        None
    }

    /// Gaussian-mixture form of the prior, when the model has it.
    fn prior_mixture(&self) -> Option<GaussianMixture> {
        None
    }

    /// `V(y, θ, ξ) = −log p(θ) − log p(y | θ, ξ)`
    fn potential(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
        -self.log_prior(theta) - self.log_lik(y, theta, xi)
    }
}

fn check_point(model: &dyn ModelSpec, theta: &[f64], xi: &[f64]) -> Result<()> {
    check_dim("theta", model.theta_dim(), theta.len())?;
    check_dim("design", model.design_dim(), xi.len())
}

/// `y = T_{ξ,θ}(u)`, with dimension checks.
pub fn sample_outcome(model: &dyn ModelSpec, theta: &[f64], xi: &Design, u: &[f64]) -> Result<Vec<f64>> {
    check_point(model, theta, xi.xi())?;
    check_dim("noise seed", model.outcome_dim(), u.len())?;
    Ok(model.forward(theta, xi.xi(), u))
}

/// `∇θ log p(θ) + Σ_k ∇θ log p(y_k | θ, ξ_k)`
pub fn current_prior_score(model: &dyn ModelSpec, hist: &History, theta: &[f64]) -> Vec<f64> {
    let mut s = model.grad_theta_log_prior(theta);
    for e in hist.entries() {
        axpy(1.0, &model.grad_theta_log_lik(&e.y, theta, &e.xi), &mut s);
    }
    s
}

/// `log p(θ) + Σ_k log p(y_k | θ, ξ_k)`
pub fn current_prior_log_density(model: &dyn ModelSpec, hist: &History, theta: &[f64]) -> f64 {
    model.log_prior(theta) + hist.log_lik(model, theta)
}

/// Reparameterization path of one outcome: the base noise that produced `y`
/// under `θ_path` and the Jacobian `∂T/∂ξ` along that path.
#[derive(Debug, Clone)]
pub struct OutcomePath {
    y: Vec<f64>,
    jac: Vec<f64>,
    d: usize,
}

impl OutcomePath {
    pub fn new(model: &dyn ModelSpec, xi: &[f64], theta_path: &[f64], y: &[f64]) -> Result<Self> {
        let u = model.inverse(theta_path, xi, y)?;
        let jac = model.jacobian_xi(theta_path, xi, &u);
        Ok(OutcomePath {
            y: y.to_vec(),
            jac,
            d: xi.len(),
        })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `g(ξ, y, θ_path, θ_eval)` by the chain rule.
    pub fn g(&self, model: &dyn ModelSpec, xi: &[f64], theta_eval: &[f64]) -> Vec<f64> {
        let mut out = model.grad_xi_log_lik(&self.y, theta_eval, xi);
        let gy = model.grad_y_log_lik(&self.y, theta_eval, xi);
        for (r, gyr) in gy.iter().enumerate() {
            let row = &self.jac[r * self.d..(r + 1) * self.d];
            axpy(*gyr, row, &mut out);
        }
        out
    }
}

/// `g(ξ, y, θ_path, θ_eval) = ∇_ξ log p(T_{ξ,θ_path}(u) | θ_eval, ξ)` at `u = T⁻¹_{ξ,θ_path}(y)`.
pub fn g_score(
    model: &dyn ModelSpec,
    xi: &Design,
    y: &[f64],
    theta_path: &[f64],
    theta_eval: &[f64],
) -> Result<Vec<f64>> {
    check_point(model, theta_path, xi.xi())?;
    check_dim("theta", model.theta_dim(), theta_eval.len())?;
    check_dim("outcome", model.outcome_dim(), y.len())?;
    Ok(OutcomePath::new(model, xi.xi(), theta_path, y)?.g(model, xi.xi(), theta_eval))
}

/// Standard-normal log density and score, used by several priors.
pub(crate) fn std_normal_log_density(theta: &[f64]) -> f64 {
    -0.5 * (crate::numeric::norm_sq(theta) + theta.len() as f64 * crate::numeric::LN_2PI)
}
