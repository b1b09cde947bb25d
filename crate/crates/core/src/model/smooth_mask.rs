//! Linear inverse problem observed through a smooth square mask centred at `ξ`.

use super::{GaussianMixture, ModelSpec};
use crate::diffusion::{LinearObservation, LinearOperator};
use crate::error::{CodiffError, Result};
use crate::numeric::sigmoid;
use crate::rng::StreamRng;

fn factor(x: f64, c: f64, h: f64, s: f64) -> (f64, f64) {
    let a = sigmoid((x - c + h) / s);
    let b = sigmoid((c + h - x) / s);
    let value = a + b - 1.0;
    let dc = (-a * (1.0 - a) + b * (1.0 - b)) / s;
    (value, dc)
}

/// Product over both axes of `S((x−ξ+h)/s) + S((ξ+h−x)/s) − 1`.
pub fn smooth_mask(xi: &[f64], x: [f64; 2], h: f64, s: [f64; 2]) -> f64 {
    (0..2).map(|i| factor(x[i], xi[i], h, s[i]).0).product()
}

/// Gradient of [`smooth_mask`] with respect to `ξ`.
pub fn smooth_mask_grad(xi: &[f64], x: [f64; 2], h: f64, s: [f64; 2]) -> [f64; 2] {
    let (f0, d0) = factor(x[0], xi[0], h, s[0]);
    let (f1, d1) = factor(x[1], xi[1], h, s[1]);
    [d0 * f1, f0 * d1]
}

/// `y = μ_ξ ⊙ θ + σ u` on a `G × G` pixel grid, with a Gaussian-mixture prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothMaskInverse {
    grid: usize,
    half_width: f64,
    scale: [f64; 2],
    sigma: f64,
    prior: GaussianMixture,
}

impl SmoothMaskInverse {
    pub fn new(
        grid: usize,
        half_width: f64,
        scale: [f64; 2],
        sigma: f64,
        prior: GaussianMixture,
    ) -> Result<Self> {
        if grid == 0 || !(half_width > 0.0 && scale[0] > 0.0 && scale[1] > 0.0 && sigma > 0.0) {
            return Err(CodiffError::InvalidArgument(
                "smooth mask needs grid > 0, h > 0, s > 0, sigma > 0".into(),
            ));
        }
        crate::error::check_dim("mixture dimension", grid * grid, prior.dim())?;
        Ok(SmoothMaskInverse {
            grid,
            half_width,
            scale,
            sigma,
            prior,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Pixel `k = r·G + c` sits at `(c, r)`.
    pub fn pixel(&self, k: usize) -> [f64; 2] {
        [(k % self.grid) as f64, (k / self.grid) as f64]
    }

    pub fn mask(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.grid * self.grid)
            .map(|k| smooth_mask(xi, self.pixel(k), self.half_width, self.scale))
            .collect()
    }

    fn mask_grads(&self, xi: &[f64]) -> Vec<[f64; 2]> {
        (0..self.grid * self.grid)
            .map(|k| smooth_mask_grad(xi, self.pixel(k), self.half_width, self.scale))
            .collect()
    }

    fn residuals(&self, y: &[f64], theta: &[f64], mask: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(theta.iter().zip(mask))
            .map(|(y, (t, m))| (y - m * t) / (self.sigma * self.sigma))
            .collect()
    }
}

impl ModelSpec for SmoothMaskInverse {
    fn name(&self) -> &'static str {
        "smooth_mask"
    }
    fn theta_dim(&self) -> usize {
        self.grid * self.grid
    }
    fn outcome_dim(&self) -> usize {
        self.grid * self.grid
    }
    fn design_dim(&self) -> usize {
        2
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.prior.log_density(theta)
    }

    fn grad_theta_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        self.prior.score(theta)
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.prior.sample(rng)
    }

    fn log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
        let mask = self.mask(xi);
        let mean: Vec<f64> = mask.iter().zip(theta).map(|(m, t)| m * t).collect();
        crate::numeric::log_normal_iso(y, &mean, self.sigma * self.sigma)
    }

    fn grad_theta_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        let mask = self.mask(xi);
        let r = self.residuals(y, theta, &mask);
        r.iter().zip(&mask).map(|(r, m)| r * m).collect()
    }

    fn grad_y_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        let mask = self.mask(xi);
        self.residuals(y, theta, &mask).into_iter().map(|r| -r).collect()
    }

    fn grad_xi_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        let mask = self.mask(xi);
        let r = self.residuals(y, theta, &mask);
        let mut g = vec![0.0; 2];
        for ((rk, tk), dm) in r.iter().zip(theta).zip(self.mask_grads(xi)) {
            g[0] += rk * tk * dm[0];
            g[1] += rk * tk * dm[1];
        }
        g
    }

    fn forward(&self, theta: &[f64], xi: &[f64], u: &[f64]) -> Vec<f64> {
        self.mask(xi)
            .iter()
            .zip(theta.iter().zip(u))
            .map(|(m, (t, u))| m * t + self.sigma * u)
            .collect()
    }

    fn inverse(&self, theta: &[f64], xi: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .mask(xi)
            .iter()
            .zip(theta.iter().zip(y))
            .map(|(m, (t, y))| (y - m * t) / self.sigma)
            .collect())
    }

    fn jacobian_xi(&self, theta: &[f64], xi: &[f64], _u: &[f64]) -> Vec<f64> {
        self.mask_grads(xi)
            .iter()
            .zip(theta)
            .flat_map(|(dm, t)| [t * dm[0], t * dm[1]])
            .collect()
    }

    fn linear_observation(&self, xi: &[f64]) -> Option<LinearObservation> {
        LinearObservation::new(LinearOperator::Diagonal(self.mask(xi)), self.sigma).ok()
    }

    fn prior_mixture(&self) -> Option<GaussianMixture> {
        Some(self.prior.clone())
    }
}
