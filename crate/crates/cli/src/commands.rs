//! Subcommand bodies.

use crate::config::{Algorithm, ConfigError, Model, RunConfig};
use codiff::driver::{
    run_nested_loop, run_sequential, run_single_loop, DesignInit, DesignPolicy, LoopState, OptimizerState, SequentialConfig, SequentialRun,
};
use codiff::evaluation::{gradient_diagnostics, spce_snmc, MetricRecord};
use codiff::model::{Design, History};
use codiff::report::{read_designs, write_designs, write_diagnostics, write_metrics, write_paired, write_trace, DesignSequence};
use codiff::rng::{derive_seed, stream, Tag};
use codiff::CodiffError;
use serde_json::json;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const STATE_SCHEMA: &str = "codiff.state/1";

/// Offset of the SPCE evaluation seeds, shared with the sequential driver so
/// that `eval-spce` on a run's own designs reproduces its metrics.
const SPCE_SEED_OFFSET: u64 = 1_000_000;

pub enum Kind {
    Static,
    Sequential { resume: Option<PathBuf> },
    Diagnose,
    EvalSpce { designs: PathBuf, theta_star: Vec<f64> },
}

pub struct Invocation {
    pub kind: Kind,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub reproducible: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{}", describe(.0))]
    Run(#[from] CodiffError),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

fn describe(e: &CodiffError) -> String {
    match (e.is_numeric(), e.iteration()) {
        (true, Some(_)) => format!("numeric failure at {e}"),
        (true, None) => format!("numeric failure: {e}"),
        _ => e.to_string(),
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Run(e) if e.is_numeric() => 3,
            CliError::Run(CodiffError::InvalidArgument(_) | CodiffError::DimensionMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Seed precedence: `--seed`, then `CODIFF_SEED`, then the config file.
fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("CODIFF_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("CODIFF_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(cfg.seed),
    }
}

fn configure_threads(threads: Option<usize>) -> CliResult<usize> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    Ok(rayon::current_num_threads())
}

struct Output {
    dir: PathBuf,
    with_timing: bool,
}

impl Output {
    fn create(dir: &Path, reproducible: bool) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Output {
            dir: dir.to_path_buf(),
            with_timing: !reproducible,
        })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> codiff::Result<()>) -> CliResult<()> {
        let path = self.dir.join(name);
        let err = |source| CliError::Write {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(err)?);
        body(&mut w)?;
        w.flush().map_err(err)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CodiffError::Io(e.into()))?;
            writeln!(w)?;
            Ok(())
        })
    }
}

pub fn run(inv: Invocation) -> CliResult<()> {
    let cfg = RunConfig::load(&inv.config)?;
    cfg.validate()?;
    let seed = resolve_seed(inv.seed, &cfg)?;
    let threads = configure_threads(inv.threads)?;
    let out = Output::create(&inv.out, inv.reproducible)?;
    let model = cfg.build_model()?;
    let ctx = Context {
        cfg: &cfg,
        model: &model,
        seed,
        threads,
        out: &out,
    };
    match inv.kind {
        Kind::Static => ctx.run_static(),
        Kind::Sequential { resume } => ctx.run_sequential(resume.as_deref()),
        Kind::Diagnose => ctx.diagnose(),
        Kind::EvalSpce { designs, theta_star } => ctx.eval_spce(&designs, theta_star),
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    model: &'a Model,
    seed: u64,
    threads: usize,
    out: &'a Output,
}

impl Context<'_> {
    fn header(&self, command: &str) -> serde_json::Value {
        json!({
            "schema": STATE_SCHEMA,
            "command": command,
            "model": self.model.spec().name(),
            "seed": self.seed,
            "threads": self.threads,
        })
    }

    fn run_static(&self) -> CliResult<()> {
        let spec = self.model.spec();
        let bounds = self.cfg.bounds(self.model)?;
        let xi0 = match &self.cfg.design_init {
            Some(x) => x.clone(),
            None => bounds.sample_uniform(&mut stream(self.seed, Tag::Design, 0, 0)),
        };
        let lc = &self.cfg.loop_cfg;
        let init = LoopState::from_prior(spec, Design::bounded(xi0.clone(), bounds)?, lc.n, lc.m, derive_seed(self.seed, 7))?;
        let opt = OptimizerState::new(self.cfg.optimizer, spec.design_dim())?;
        let hist = History::new();
        let start = Instant::now();
        let outcome = match self.cfg.algorithm {
            Algorithm::Single => run_single_loop(spec, &hist, lc, opt, init, self.seed)?,
            Algorithm::Nested => run_nested_loop(spec, &hist, lc, opt, init, self.cfg.reinitialize, self.seed)?,
        };
        let skipped = outcome.trace.iter().filter(|r| r.skipped).count();
        if let Some(t) = outcome.first_skipped() {
            log::warn!("{skipped} design update(s) skipped, first at iteration {t}");
        }
        self.out.write("trace.csv", |w| write_trace(w, spec.design_dim(), &outcome.trace, self.out.with_timing))?;
        let mut state = self.header("run-static");
        state["algorithm"] = json!(self.cfg.algorithm);
        state["iterations"] = json!(outcome.trace.len());
        state["initial_design"] = json!(xi0);
        state["design"] = json!(outcome.state.design.xi());
        state["optimizer_steps"] = json!(outcome.optimizer.step_count());
        state["skipped_updates"] = json!(skipped);
        state["first_skipped"] = json!(outcome.first_skipped());
        if self.out.with_timing {
            state["wall_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
        }
        self.out.write_json("final_state.json", &state)
    }

    fn sequential_config(&self, policy: DesignPolicy) -> CliResult<SequentialConfig> {
        Ok(SequentialConfig {
            k: self.cfg.sequential.k,
            policy,
            design_init: self.cfg.design_init.clone().map_or(DesignInit::Random, DesignInit::Fixed),
            bounds: self.cfg.bounds(self.model)?,
            spce: self.cfg.evaluation.spce,
        })
    }

    fn run_sequential(&self, resume: Option<&Path>) -> CliResult<()> {
        let spec = self.model.spec();
        if self.cfg.algorithm == Algorithm::Nested {
            log::warn!("sequential runs always use the single loop; ignoring algorithm = nested");
        }
        let recorded = match resume {
            Some(path) => {
                let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
                let seq = read_designs(file, spec.design_dim(), spec.outcome_dim())?;
                if seq.designs.len() > self.cfg.sequential.k {
                    return Err(CliError::Input(format!(
                        "resume history has {} experiments but K = {}",
                        seq.designs.len(),
                        self.cfg.sequential.k
                    )));
                }
                Some(seq)
            }
            None => None,
        };
        let theta_star = match &self.cfg.sequential.theta_star {
            Some(t) => t.clone(),
            None => spec.sample_prior(&mut stream(self.seed, Tag::Truth, 0, 0)),
        };
        let seq = self.sequential_config(DesignPolicy::Optimized)?;
        let run = run_sequential(spec, SequentialRun::new(theta_star.clone()), &self.cfg.loop_cfg, self.cfg.optimizer, &seq, self.seed)?;
        if let Some(rec) = &recorded {
            verify_replay(rec, &run.history)?;
            log::info!("replayed {} recorded experiment(s)", rec.designs.len());
        }
        self.write_run("", &run)?;
        let mut state = self.header("run-sequential");
        state["theta_star"] = json!(theta_star);
        state["k"] = json!(run.history.len());
        state["history"] = json!(run.history.entries());
        state["skipped_updates"] = json!(run.records.iter().map(|r| r.skipped_updates).collect::<Vec<_>>());
        state["replayed"] = json!(recorded.as_ref().map_or(0, |r| r.designs.len()));
        if self.cfg.sequential.baseline {
            let rnd = run_sequential(
                spec,
                SequentialRun::new(theta_star),
                &self.cfg.loop_cfg,
                self.cfg.optimizer,
                &self.sequential_config(DesignPolicy::Random)?,
                self.seed,
            )?;
            self.write_run("_random", &rnd)?;
            self.out.write("paired.csv", |w| write_paired(w, &run.metrics(), &rnd.metrics()))?;
            state["baseline_history"] = json!(rnd.history.entries());
        }
        self.out.write_json("final_state.json", &state)
    }

    fn write_run(&self, suffix: &str, run: &SequentialRun) -> CliResult<()> {
        let seq = DesignSequence {
            designs: run.history.entries().iter().map(|e| e.xi.clone()).collect(),
            outcomes: run.history.entries().iter().map(|e| e.y.clone()).collect(),
        };
        self.out.write(&format!("metrics{suffix}.csv"), |w| write_metrics(w, &run.metrics(), self.out.with_timing))?;
        self.out.write(&format!("designs{suffix}.csv"), |w| write_designs(w, &seq))
    }

    fn diagnose(&self) -> CliResult<()> {
        let Model::LinearGaussian(m) = self.model else {
            return Err(ConfigError::Invalid("diagnose needs the linear_gaussian model, which has an analytic gradient".into()).into());
        };
        let d = &self.cfg.diagnostics;
        let rows = gradient_diagnostics(m, &d.estimators, &d.xi_grid, &d.budgets, d.reps, self.seed)?;
        self.out.write("diagnostics.csv", |w| write_diagnostics(w, &rows, self.out.with_timing))
    }

    fn eval_spce(&self, designs: &Path, theta_star: Vec<f64>) -> CliResult<()> {
        let spec = self.model.spec();
        let theta_star = match (theta_star.is_empty(), &self.cfg.sequential.theta_star) {
            (false, _) => theta_star,
            (true, Some(t)) => t.clone(),
            (true, None) => return Err(CliError::Input("eval-spce needs --theta-star or sequential.theta_star".into())),
        };
        if theta_star.len() != spec.theta_dim() {
            return Err(CliError::Input(format!("theta_star has {} entries, the model has {}", theta_star.len(), spec.theta_dim())));
        }
        let file = File::open(designs).map_err(|e| CliError::Input(format!("cannot open {}: {e}", designs.display())))?;
        let seq = read_designs(file, spec.design_dim(), spec.outcome_dim())?;
        let rows = (1..=seq.designs.len())
            .map(|k| {
                let start = Instant::now();
                let (spce, snmc) = spce_snmc(
                    spec,
                    &seq.designs[..k],
                    &seq.outcomes[..k],
                    &theta_star,
                    &self.cfg.evaluation.spce,
                    derive_seed(self.seed, SPCE_SEED_OFFSET + k as u64),
                )?;
                Ok(MetricRecord {
                    k,
                    spce,
                    snmc,
                    w2: f64::NAN,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        self.out.write("metrics.csv", |w| write_metrics(w, &rows, self.out.with_timing))
    }
}

fn verify_replay(recorded: &DesignSequence, history: &History) -> CliResult<()> {
    for (k, ((xi, y), e)) in recorded.designs.iter().zip(&recorded.outcomes).zip(history.entries()).enumerate() {
        if xi != &e.xi || y != &e.y {
            return Err(CliError::Input(format!(
                "resume history diverges from the replay at experiment {}: recorded xi {xi:?}, replayed {:?}",
                k + 1,
                e.xi
            )));
        }
    }
    Ok(())
}
