//! Source localisation: `C` point sources in the plane, log-normal intensity
//! measured at a location `ξ`.

use super::{std_normal_log_density, ModelSpec};
use crate::error::{CodiffError, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConstants {
    pub b: f64,
    pub m: f64,
    pub alpha: Vec<f64>,
}

impl Default for SourceConstants {
    fn default() -> Self {
        SourceConstants {
            b: 0.1,
            m: 1e-4,
            alpha: vec![1.0, 1.0],
        }
    }
}

/// `μ(θ, ξ) = b + Σ_c α_c / (m + ‖θ_c − ξ‖²)`
pub fn signal_strength(theta: &[f64], xi: &[f64], consts: &SourceConstants) -> f64 {
    consts.b
        + consts
            .alpha
            .iter()
            .zip(theta.chunks_exact(2))
            .map(|(a, c)| a / (consts.m + crate::numeric::dist_sq(c, xi)))
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceLocation {
    consts: SourceConstants,
    sigma: f64,
}

impl Default for SourceLocation {
    fn default() -> Self {
        SourceLocation {
            consts: SourceConstants::default(),
            sigma: 0.5,
        }
    }
}

impl SourceLocation {
    pub fn new(consts: SourceConstants, sigma: f64) -> Result<Self> {
        if consts.alpha.is_empty() {
            return Err(CodiffError::InvalidArgument("at least one source is required".into()));
        }
        if !(consts.m > 0.0 && consts.b >= 0.0 && sigma > 0.0) {
            return Err(CodiffError::InvalidArgument(
                "source model needs m > 0, b >= 0, sigma > 0".into(),
            ));
        }
        Ok(SourceLocation { consts, sigma })
    }

    pub fn constants(&self) -> &SourceConstants {
        &self.consts
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_sources(&self) -> usize {
        self.consts.alpha.len()
    }

    fn log_mu(&self, theta: &[f64], xi: &[f64]) -> f64 {
        signal_strength(theta, xi, &self.consts).ln()
    }

    /// `(∇_ξ log μ, ∇_θ log μ)`
    fn grad_log_mu(&self, theta: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mu = signal_strength(theta, xi, &self.consts);
        let mut gx = vec![0.0; 2];
        let mut gt = vec![0.0; theta.len()];
        for (c, (a, src)) in self.consts.alpha.iter().zip(theta.chunks_exact(2)).enumerate() {
            let den = self.consts.m + crate::numeric::dist_sq(src, xi);
            let f = 2.0 * a / (den * den * mu);
            for k in 0..2 {
                let diff = src[k] - xi[k];
                gx[k] += f * diff;
                gt[2 * c + k] = -f * diff;
            }
        }
        (gx, gt)
    }

    fn scaled_residual(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
        (y[0].ln() - self.log_mu(theta, xi)) / (self.sigma * self.sigma)
    }
}

impl ModelSpec for SourceLocation {
    fn name(&self) -> &'static str {
        "source_location"
    }
    fn theta_dim(&self) -> usize {
        2 * self.n_sources()
    }
    fn outcome_dim(&self) -> usize {
        1
    }
    fn design_dim(&self) -> usize {
        2
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        std_normal_log_density(theta)
    }

    fn grad_theta_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| -t).collect()
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        crate::rng::normals(rng, self.theta_dim())
    }

    fn log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
        if !(y[0] > 0.0) {
            return f64::NEG_INFINITY;
        }
        let ly = y[0].ln();
        let z = (ly - self.log_mu(theta, xi)) / self.sigma;
        -0.5 * z * z - ly - self.sigma.ln() - 0.5 * crate::numeric::LN_2PI
    }

    fn grad_theta_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        let r = self.scaled_residual(y, theta, xi);
        let (_, gt) = self.grad_log_mu(theta, xi);
        gt.into_iter().map(|g| r * g).collect()
    }

    fn grad_y_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        let r = self.scaled_residual(y, theta, xi);
        vec![-(r + 1.0) / y[0]]
    }

    fn grad_xi_log_lik(&self, y: &[f64], theta: &[f64], xi: &[f64]) -> Vec<f64> {
        let r = self.scaled_residual(y, theta, xi);
        let (gx, _) = self.grad_log_mu(theta, xi);
        gx.into_iter().map(|g| r * g).collect()
    }

    fn forward(&self, theta: &[f64], xi: &[f64], u: &[f64]) -> Vec<f64> {
        vec![(self.log_mu(theta, xi) + self.sigma * u[0]).exp()]
    }

    fn inverse(&self, theta: &[f64], xi: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if !(y[0] > 0.0 && y[0].is_finite()) {
            return Err(CodiffError::SingularMap(format!(
                "log-normal outcome must be positive and finite, got {}",
                y[0]
            )));
        }
        Ok(vec![(y[0].ln() - self.log_mu(theta, xi)) / self.sigma])
    }

    fn jacobian_xi(&self, theta: &[f64], xi: &[f64], u: &[f64]) -> Vec<f64> {
        let y = self.forward(theta, xi, u)[0];
        let (gx, _) = self.grad_log_mu(theta, xi);
        gx.into_iter().map(|g| y * g).collect()
    }

    fn align_to(&self, theta: &[f64], reference: &[f64]) -> Vec<f64> {
        let c = self.n_sources();
        let mut best = theta.to_vec();
        let mut best_d = crate::numeric::dist_sq(theta, reference);
        for perm in permutations(c) {
            let cand: Vec<f64> = perm.iter().flat_map(|&i| [theta[2 * i], theta[2 * i + 1]]).collect();
            let d = crate::numeric::dist_sq(&cand, reference);
            if d < best_d {
                best_d = d;
                best = cand;
            }
        }
        best
    }
}

/// All permutations of `0..n` (Heap's algorithm). Only small `n` is expected.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    if n <= 7 {
        heap(n, &mut (0..n).collect(), &mut out);
    } else {
        out.push((0..n).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn align_swaps_sources() {
        let m = SourceLocation::default();
        let a = m.align_to(&[3.0, 3.0, -1.0, 0.0], &[-1.0, 0.0, 3.0, 3.0]);
        assert_eq!(a, vec![-1.0, 0.0, 3.0, 3.0]);
    }
}
