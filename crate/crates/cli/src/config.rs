//! Run configuration files (JSON, schema `codiff.run/1`).

use codiff::driver::{AdamConfig, LoopConfig};
use codiff::evaluation::{DiagEstimator, SpceConfig};
use codiff::model::{BoxBounds, GaussianMixture, LinearGaussian1D, ModelSpec, SmoothMaskInverse, SourceConstants, SourceLocation};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: &str = "codiff.run/1";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
    /// Starting design for static runs; uniform on the bounds when absent.
    #[serde(default)]
    pub design_init: Option<Vec<f64>>,
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopConfig,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Restart the clouds every outer iteration of the nested loop.
    #[serde(default = "default_true")]
    pub reinitialize: bool,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub sequential: SequentialSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Single,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LinearGaussian {
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        gain: f64,
        #[serde(default = "one")]
        prior_sd: f64,
    },
    SourceLocation {
        #[serde(default = "half")]
        sigma: f64,
        #[serde(default = "source_b")]
        b: f64,
        #[serde(default = "source_m")]
        m: f64,
        #[serde(default = "source_alpha")]
        alpha: Vec<f64>,
    },
    SmoothMask {
        grid: usize,
        half_width: f64,
        scale: [f64; 2],
        sigma: f64,
        prior: MixtureConfig,
    },
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn source_b() -> f64 {
    SourceConstants::default().b
}

fn source_m() -> f64 {
    SourceConstants::default().m
}

fn source_alpha() -> Vec<f64> {
    SourceConstants::default().alpha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequentialSection {
    pub k: usize,
    /// Also run the random-design baseline and write the paired file.
    pub baseline: bool,
    /// Ground truth; drawn from the prior when absent.
    pub theta_star: Option<Vec<f64>>,
}

impl Default for SequentialSection {
    fn default() -> Self {
        SequentialSection {
            k: 10,
            baseline: false,
            theta_star: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub estimators: Vec<DiagEstimator>,
    pub xi_grid: Vec<f64>,
    pub budgets: Vec<(usize, usize)>,
    pub reps: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            estimators: vec![DiagEstimator::PooledSnis, DiagEstimator::NestedMc, DiagEstimator::PriorIs, DiagEstimator::Oracle],
            xi_grid: vec![0.5, 1.0, 2.0],
            budgets: vec![(512, 512)],
            reps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub spce: SpceConfig,
}

/// A model built from its configuration.
pub enum Model {
    LinearGaussian(LinearGaussian1D),
    Source(SourceLocation),
    Mask(SmoothMaskInverse),
}

impl Model {
    pub fn spec(&self) -> &dyn ModelSpec {
        match self {
            Model::LinearGaussian(m) => m,
            Model::Source(m) => m,
            Model::Mask(m) => m,
        }
    }

    fn default_bounds(&self) -> BoxBounds {
        let b = match self {
            Model::LinearGaussian(_) => BoxBounds::symmetric(1, 2.0),
            Model::Source(_) => BoxBounds::symmetric(2, 4.0),
            Model::Mask(m) => {
                let top = (m.grid() - 1) as f64;
                BoxBounds::new(vec![0.0, 0.0], vec![top, top])
            }
        };
        b.expect("default bounds are valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version {:?} is not supported (expected {SCHEMA_VERSION:?})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn build_model(&self) -> Result<Model, ConfigError> {
        let invalid = |e: codiff::CodiffError| ConfigError::Invalid(format!("model: {e}"));
        Ok(match &self.model {
            ModelConfig::LinearGaussian { sigma, gain, prior_sd } => Model::LinearGaussian(LinearGaussian1D::new(*sigma, *gain, *prior_sd).map_err(invalid)?),
            ModelConfig::SourceLocation { sigma, b, m, alpha } => {
                let consts = SourceConstants {
                    b: *b,
                    m: *m,
                    alpha: alpha.clone(),
                };
                Model::Source(SourceLocation::new(consts, *sigma).map_err(invalid)?)
            }
            ModelConfig::SmoothMask {
                grid,
                half_width,
                scale,
                sigma,
                prior,
            } => {
                let gmm = GaussianMixture::new(prior.weights.clone(), prior.means.clone(), prior.vars.clone()).map_err(invalid)?;
                Model::Mask(SmoothMaskInverse::new(*grid, *half_width, *scale, *sigma, gmm).map_err(invalid)?)
            }
        })
    }

    pub fn bounds(&self, model: &Model) -> Result<BoxBounds, ConfigError> {
        let b = match &self.bounds {
            Some(b) => BoxBounds::new(b.lo.clone(), b.hi.clone()).map_err(|e| ConfigError::Invalid(format!("bounds: {e}")))?,
            None => model.default_bounds(),
        };
        if b.dim() != model.spec().design_dim() {
            return Err(ConfigError::Invalid(format!(
                "bounds have {} dimensions, the model's design has {}",
                b.dim(),
                model.spec().design_dim()
            )));
        }
        Ok(b)
    }

    /// Checks every section that the library would otherwise reject mid-run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |what: &str, e: codiff::CodiffError| ConfigError::Invalid(format!("{what}: {e}"));
        self.loop_cfg.validate().map_err(|e| invalid("loop", e))?;
        self.optimizer.validate().map_err(|e| invalid("optimizer", e))?;
        self.evaluation.spce.validate().map_err(|e| invalid("evaluation.spce", e))?;
        let model = self.build_model()?;
        let bounds = self.bounds(&model)?;
        if let Some(x) = &self.design_init {
            if x.len() != bounds.dim() || !bounds.contains(x) {
                return Err(ConfigError::Invalid("design_init must lie inside the bounds".into()));
            }
        }
        if let Some(t) = &self.sequential.theta_star {
            if t.len() != model.spec().theta_dim() {
                return Err(ConfigError::Invalid(format!(
                    "sequential.theta_star has {} entries, the model has {} parameters",
                    t.len(),
                    model.spec().theta_dim()
                )));
            }
        }
        Ok(())
    }
}
