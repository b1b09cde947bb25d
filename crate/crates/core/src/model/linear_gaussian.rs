//! Scalar conjugate model `y = a ξ θ + σ u`, `θ ~ N(0, τ²)`.

use super::{BoxBounds, GaussianMixture, ModelSpec};
use crate::diffusion::{LinearObservation, LinearOperator};
use crate::error::{CodiffError, Result};
use crate::rng::StreamRng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian1D {
    sigma: f64,
    gain: f64,
    prior_sd: f64,
}

impl LinearGaussian1D {
    pub fn new(sigma: f64, gain: f64, prior_sd: f64) -> Result<Self> {
        if !(sigma > 0.0 && prior_sd > 0.0 && gain.is_finite()) {
            return Err(CodiffError::InvalidArgument(
                "linear-Gaussian model needs sigma > 0 and prior_sd > 0".into(),
            ));
        }
        Ok(LinearGaussian1D {
            sigma,
            gain,
            prior_sd,
        })
    }

    /// Unit gain, unit prior variance.
    pub fn with_sigma(sigma: f64) -> Result<Self> {
        Self::new(sigma, 1.0, 1.0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn prior_sd(&self) -> f64 {
        self.prior_sd
    }

    pub fn default_bounds(half: f64) -> BoxBounds {
        BoxBounds::symmetric(1, half).expect("finite symmetric bounds")
    }

    fn residual(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
        y[0] - self.gain * xi[0] * theta[0]
    }

    /// Exact posterior `N(mean, var)` of θ after observing `y` at `ξ`.
    pub fn posterior(&self, y: f64, xi: f64) -> (f64, f64) {
        let c = self.gain * xi;
        let prec = 1.0 / (self.prior_sd * self.prior_sd) + c * c / (self.sigma * self.sigma);
        let mean = c * y / (self.sigma * self.sigma) / prec;
        (mean, 1.0 / prec)
    }
}

impl ModelSpec for LinearGaussian1D {
    fn name(&self) -> &'static str {
        "linear_gaussian"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn outcome_dim(&self) -> usize {
        1
    }
    fn design_dim(&self) -> usize {
        1
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let v = self.prior_sd * self.prior_sd;
        -0.5 * (theta[0] * theta[0] / v + crate::numeric::LN_2PI + v.ln())
    }

    fn grad_theta_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        vec![-theta[0] / (self.prior_sd * self.prior_sd)]
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z: f64 = StandardNormal.sample(rng);
        vec![self.prior_sd * z]
    }

    fn log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
        let r = self.residual(y, theta, xi);
        let v = self.sigma * self.sigma;
        -0.5 * (r * r / v + crate::numeric::LN_2PI + v.ln())
    }

    fn grad_theta_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        vec![self.gain * xi[0] * self.residual(y, theta, xi) / (self.sigma * self.sigma)]
    }

    fn grad_y_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        vec![-self.residual(y, theta, xi) / (self.sigma * self.sigma)]
    }

    fn grad_xi_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        vec![self.gain * theta[0] * self.residual(y, theta, xi) / (self.sigma * self.sigma)]
    }

    fn forward(&self, theta: &[f64], xi: &[f64], u: &[f64]) -> Vec<f64> {
        vec![self.gain * xi[0] * theta[0] + self.sigma * u[0]]
    }

    fn inverse(&self, theta: &[f64], xi: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.residual(y, theta, xi) / self.sigma])
    }

    fn jacobian_xi(&self, theta: &[f64], _xi: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![self.gain * theta[0]]
    }

    fn linear_observation(&self, xi: &[f64]) -> Option<LinearObservation> {
        LinearObservation::new(LinearOperator::Diagonal(vec![self.gain * xi[0]]), self.sigma).ok()
    }

    fn prior_mixture(&self) -> Option<GaussianMixture> {
        GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![self.prior_sd * self.prior_sd]).ok()
    }
}
