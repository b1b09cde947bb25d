//! Gaussian mixtures with isotropic components.

use crate::error::{check_dim, CodiffError, Result};
use crate::numeric::{log_normal_iso, log_sum_exp};
use crate::rng::StreamRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<f64>,
}

impl GaussianMixture {
    /// `weights` are normalized; `vars` are per-component isotropic variances.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CodiffError::InvalidArgument("mixture needs a component".into()));
        }
        check_dim("mixture means", weights.len(), means.len())?;
        check_dim("mixture variances", weights.len(), vars.len())?;
        let dim = means[0].len();
        for m in &means {
            check_dim("mixture mean", dim, m.len())?;
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || vars.iter().any(|v| !(*v > 0.0)) {
            return Err(CodiffError::InvalidArgument(
                "mixture weights must be >= 0 and variances > 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(CodiffError::InvalidArgument("mixture weights sum to zero".into()));
        }
        Ok(GaussianMixture {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            vars,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((w, m), v)| w.ln() + log_normal_iso(x, m, *v))
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_logs(x))
    }

    /// Posterior component responsibilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        crate::numeric::normalize_log_weights(&self.component_logs(x))
            .unwrap_or_else(|| vec![1.0 / self.weights.len() as f64; self.weights.len()])
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let mut s = vec![0.0; x.len()];
        for ((rk, m), v) in r.iter().zip(&self.means).zip(&self.vars) {
            for (si, (xi, mi)) in s.iter_mut().zip(x.iter().zip(m)) {
                *si += rk * (mi - xi) / v;
            }
        }
        s
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = crate::rng::normals(rng, self.dim());
        let sd = self.vars[k].sqrt();
        self.means[k].iter().zip(z).map(|(m, e)| m + sd * e).collect()
    }

    /// Law of `√ᾱ θ + √(1−ᾱ) ε` for `θ` drawn from this mixture.
    pub fn noised(&self, alpha_bar: f64) -> GaussianMixture {
        let s = alpha_bar.sqrt();
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().map(|x| s * x).collect()).collect(),
            vars: self.vars.iter().map(|v| alpha_bar * v + 1.0 - alpha_bar).collect(),
        }
    }
}
