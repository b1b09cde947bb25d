mod common;

use codiff::driver::*;
use codiff::evaluation::SpceConfig;
use codiff::gradients::GradEstimate;
use codiff::model::*;
use codiff::samplers::JointMode;

fn grad(g: Vec<f64>) -> GradEstimate {
    GradEstimate {
        n_joint: 1,
        n_contrastive: 1,
        ess_min: 1.0,
        degenerate_rows: 0,
        grad: g,
    }
}

fn adam(lr0: f64) -> AdamConfig {
    AdamConfig { lr0, ..AdamConfig::default() }
}

fn lg_setup(t_outer: usize, seed: u64) -> (LinearGaussian1D, LoopConfig, LoopState) {
    let m = LinearGaussian1D::with_sigma(1.0).unwrap();
    let cfg = LoopConfig {
        t_outer,
        s_inner: 1,
        s_inner_contrastive: 1,
        n: 64,
        m: 64,
        ..LoopConfig::default()
    };
    let d = Design::bounded(vec![0.3], LinearGaussian1D::default_bounds(2.0)).unwrap();
    let st = LoopState::from_prior(&m, d, cfg.n, cfg.m, seed).unwrap();
    (m, cfg, st)
}

#[test]
fn adam_matches_hand_recursion() {
    let mut opt = OptimizerState::new(adam(0.1), 1).unwrap();
    let d0 = Design::new(vec![0.5]).unwrap();
    let d1 = update_design(&mut opt, &d0, &grad(vec![2.0])).unwrap();
    assert!((d1.xi()[0] - (0.5 + 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    let d2 = update_design(&mut opt, &d1, &grad(vec![-1.0])).unwrap();
    let m = 0.9 * 0.2 + -0.1;
    let v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;
    let mh = m / (1.0 - 0.9f64.powi(2));
    let vh = v / (1.0 - 0.999f64.powi(2));
    assert!((d2.xi()[0] - (d1.xi()[0] + 0.1 * mh / (vh.sqrt() + 1e-8))).abs() < 1e-14);
    assert_eq!(opt.step_count(), 2);
}

#[test]
fn adam_zero_gradient_and_projection() {
    let mut opt = OptimizerState::new(adam(0.1), 2).unwrap();
    let d = Design::new(vec![0.5, -0.2]).unwrap();
    assert_eq!(update_design(&mut opt, &d, &grad(vec![0.0, 0.0])).unwrap(), d);

    let mut opt = OptimizerState::new(adam(0.1), 1).unwrap();
    let d = Design::bounded(vec![0.999], BoxBounds::symmetric(1, 1.0).unwrap()).unwrap();
    assert_eq!(update_design(&mut opt, &d, &grad(vec![100.0])).unwrap().xi(), &[1.0]);

    let mut opt = OptimizerState::new(adam(0.1), 1).unwrap();
    assert!(update_design(&mut opt, &d, &grad(vec![f64::NAN])).is_err());
    assert!(update_design(&mut opt, &d, &grad(vec![1.0, 2.0])).is_err());
    assert!(OptimizerState::new(adam(0.0), 1).is_err());
}

#[test]
fn learning_rate_decays_per_epoch() {
    let mut opt = OptimizerState::new(AdamConfig::default(), 1).unwrap();
    let mut d = Design::new(vec![0.0]).unwrap();
    assert_eq!(opt.learning_rate(), 1e-2);
    for _ in 0..100 {
        d = update_design(&mut opt, &d, &grad(vec![1.0])).unwrap();
    }
    assert!((opt.learning_rate() - 1e-2 * 0.98).abs() < 1e-17);
}

#[test]
fn zero_outer_iterations_return_the_initial_design() {
    let (m, cfg, st) = lg_setup(0, 1);
    let opt = OptimizerState::new(AdamConfig::default(), 1).unwrap();
    let out = run_single_loop(&m, &History::new(), &cfg, opt.clone(), st.clone(), 1).unwrap();
    assert_eq!(out.state.design, st.design);
    assert!(out.trace.is_empty());
    let out = run_nested_loop(&m, &History::new(), &cfg, opt, st.clone(), true, 1).unwrap();
    assert_eq!(out.state.design, st.design);
}

fn strip(trace: &[TraceRecord]) -> Vec<TraceRecord> {
    trace.iter().cloned().map(|r| TraceRecord { wall_ms: 0.0, ..r }).collect()
}

#[test]
fn nested_loop_with_unit_inner_steps_is_the_single_loop() {
    let (m, cfg, st) = lg_setup(40, 2);
    let opt = OptimizerState::new(adam(0.05), 1).unwrap();
    let a = run_single_loop(&m, &History::new(), &cfg, opt.clone(), st.clone(), 9).unwrap();
    let b = run_nested_loop(&m, &History::new(), &cfg, opt, st, false, 9).unwrap();
    assert_eq!(strip(&a.trace), strip(&b.trace));
    assert_eq!(a.state, b.state);
}

#[test]
fn single_loop_is_reproducible_and_audited() {
    let (m, cfg, st) = lg_setup(60, 3);
    let opt = OptimizerState::new(adam(0.05), 1).unwrap();
    let a = run_single_loop(&m, &History::new(), &cfg, opt.clone(), st.clone(), 4).unwrap();
    let b = run_single_loop(&m, &History::new(), &cfg, opt, st, 4).unwrap();
    assert_eq!(strip(&a.trace), strip(&b.trace));
    for (t, r) in a.trace.iter().enumerate() {
        assert_eq!((r.iter, r.cloud_stamp, r.design_stamp), (t, t + 1, t));
        assert!(r.xi[0].abs() <= 2.0);
        assert!(r.ess_min >= 1.0 - 1e-9);
    }
}

#[test]
fn nested_loop_with_reinitialization_runs() {
    let (m, mut cfg, st) = lg_setup(10, 5);
    cfg.s_inner = 5;
    cfg.s_inner_contrastive = 5;
    let opt = OptimizerState::new(adam(0.05), 1).unwrap();
    let out = run_nested_loop(&m, &History::new(), &cfg, opt, st, true, 5).unwrap();
    assert_eq!(out.trace.len(), 10);
    assert!(out.trace.iter().all(|r| r.xi[0].abs() <= 2.0 && !r.skipped));
}

#[test]
fn single_loop_reaches_the_boundary_on_linear_gaussian() {
    let (m, mut cfg, st) = lg_setup(300, 6);
    cfg.n = 200;
    cfg.m = 200;
    let st = LoopState::from_prior(&m, st.design, 200, 200, 6).unwrap();
    let opt = OptimizerState::new(adam(0.05), 1).unwrap();
    let out = run_single_loop(&m, &History::new(), &cfg, opt, st, 6).unwrap();
    assert!(out.state.design.xi()[0].abs() >= 1.9, "{:?}", out.state.design);
}

#[test]
fn full_joint_mode_and_prior_is_estimator_run() {
    let (m, mut cfg, st) = lg_setup(30, 7);
    cfg.sampler.joint_mode = JointMode::Full;
    cfg.estimator = LoopEstimator::PriorIs;
    let opt = OptimizerState::new(adam(0.05), 1).unwrap();
    let out = run_single_loop(&m, &History::new(), &cfg, opt, st, 7).unwrap();
    assert_eq!(out.trace.len(), 30);
    assert!(out.trace.iter().all(|r| r.grad_norm.is_finite()));
}

#[test]
fn invalid_loop_config_is_rejected() {
    let (m, mut cfg, st) = lg_setup(3, 8);
    cfg.n = 0;
    let opt = OptimizerState::new(AdamConfig::default(), 1).unwrap();
    assert!(run_single_loop(&m, &History::new(), &cfg, opt, st, 8).is_err());
}

fn seq_cfg(k: usize, policy: DesignPolicy) -> SequentialConfig {
    SequentialConfig {
        k,
        policy,
        design_init: DesignInit::Random,
        bounds: BoxBounds::symmetric(2, 4.0).unwrap(),
        spce: SpceConfig { l: 500, replications: 1 },
    }
}

#[test]
fn sequential_runs_have_the_right_shape() {
    let m = common::source_model();
    let cfg = LoopConfig {
        t_outer: 20,
        n: 32,
        m: 32,
        ..LoopConfig::default()
    };
    let theta_star = vec![1.0, 1.0, -1.0, 0.5];
    let empty = run_sequential(&m, SequentialRun::new(theta_star.clone()), &cfg, AdamConfig::default(), &seq_cfg(0, DesignPolicy::Optimized), 1).unwrap();
    assert_eq!(empty.history.len(), 0);
    for policy in [DesignPolicy::Optimized, DesignPolicy::Random] {
        let run = run_sequential(&m, SequentialRun::new(theta_star.clone()), &cfg, AdamConfig::default(), &seq_cfg(2, policy), 1).unwrap();
        assert_eq!(run.history.len(), 2);
        assert_eq!(run.records.len(), 2);
        for e in run.history.entries() {
            assert!(e.xi.iter().all(|x| x.abs() <= 4.0));
        }
        let metrics = run.metrics();
        assert_eq!(metrics.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2]);
        assert!(metrics.iter().all(|r| r.spce >= 0.0 && r.spce <= r.snmc + 1e-12 && r.w2 >= 0.0));
    }
    let a = run_sequential(&m, SequentialRun::new(theta_star.clone()), &cfg, AdamConfig::default(), &seq_cfg(2, DesignPolicy::Optimized), 3).unwrap();
    let b = run_sequential(&m, SequentialRun::new(theta_star), &cfg, AdamConfig::default(), &seq_cfg(2, DesignPolicy::Optimized), 3).unwrap();
    assert_eq!(a.history, b.history);
}
