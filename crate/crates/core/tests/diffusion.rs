mod common;

use codiff::diffusion::*;
use codiff::model::GaussianMixture;
use codiff::pooled::{gaussian_pool, PoolingWeights};
use codiff::rng::{normals, stream, Tag};
use common::mean_var;
use proptest::prelude::*;

fn std_normal() -> GaussianMixture {
    GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![1.0]).unwrap()
}

fn scalar_obs(a: f64, sigma: f64) -> LinearObservation {
    LinearObservation::new(LinearOperator::Diagonal(vec![a]), sigma).unwrap()
}

fn first(xs: &[Vec<f64>]) -> Vec<f64> {
    xs.iter().map(|x| x[0]).collect()
}

struct Zero;

impl ScoreOracle for Zero {
    fn dim(&self) -> usize {
        1
    }
    fn score(&self, _: &[f64], _: f64) -> Vec<f64> {
        vec![0.0]
    }
}

#[test]
fn alpha_bar_examples() {
    let s = VpSchedule::default();
    assert_eq!(alpha_bar(&s, 0.0), 1.0);
    let flat = VpSchedule {
        b_min: 1.0,
        b_max: 1.0,
        ..s
    };
    assert!((alpha_bar(&flat, 2.0) - (-2.0f64).exp()).abs() < 1e-15);
    assert!((alpha_bar(&s, 2.0) - (-5.2f64).exp()).abs() < 1e-15);
    assert!((s.beta(0.0) - 0.2).abs() < 1e-15 && (s.beta(2.0) - 5.0).abs() < 1e-15);
    assert!(VpSchedule { t_end: 0.0, ..s }.validate().is_err());
}

#[test]
fn noising_examples() {
    let s = VpSchedule::default();
    assert_eq!(forward_noise(&[1.3], 0.0, &[0.7], &s), vec![1.3]);
    let t = (0..=2000).map(|k| k as f64 * 1e-3).find(|t| (s.alpha_bar(*t) - 0.25).abs() < 2e-3).unwrap();
    let flat = VpSchedule {
        b_min: 1.0,
        b_max: 1.0,
        ..s
    };
    let t4 = 4f64.ln();
    assert!((flat.alpha_bar(t4) - 0.25).abs() < 1e-15);
    assert!((forward_noise(&[1.0], t4, &[2.0], &flat)[0] - 2.2321).abs() < 1e-4);
    let obs = scalar_obs(1.0, 1.0);
    assert!((noise_observation(&[2.0], t4, &[1.0], &obs, &flat)[0] - 1.8660).abs() < 1e-4);
    assert_eq!(noise_observation(&[2.0], 0.0, &[1.0], &obs, &s), vec![2.0]);
    assert!((noise_observation(&[2.0], t, &[0.0], &obs, &s)[0] - 2.0 * s.alpha_bar(t).sqrt()).abs() < 1e-15);
    let deep = VpSchedule {
        b_min: 50.0,
        b_max: 50.0,
        ..s
    };
    assert!((forward_noise(&[3.0], 2.0, &[0.4], &deep)[0] - 0.4).abs() < 1e-12);
}

#[test]
fn observation_path_reuses_one_noise_draw() {
    let s = VpSchedule::default();
    let obs = scalar_obs(1.0, 1.0);
    let p = ObservationPath::new(&[2.0], &[0.3], &obs, &s).unwrap();
    assert_eq!(p.at(0), &[2.0]);
    for k in [1, 50, 200] {
        assert_eq!(p.at(k), noise_observation(&[2.0], s.time(k), &[0.3], &obs, &s).as_slice());
    }
    assert!(ObservationPath::new(&[2.0, 1.0], &[0.3], &obs, &s).is_err());
}

#[test]
fn reverse_step_example() {
    let s = VpSchedule {
        b_min: 1.0,
        b_max: 1.0,
        ..VpSchedule::default()
    };
    let out = reverse_step(&[2.0], 0.3, 0.1, &Zero, &s, &[0.0]);
    assert!((out[0] - 2.1).abs() < 1e-15);
}

#[test]
fn unconditional_pass_preserves_standard_normal() {
    let xs = sample_unconditional(&std_normal(), 10_000, &FpsConfig::default(), 11).unwrap();
    let (m, v) = mean_var(&first(&xs));
    assert!(m.abs() < 0.05, "mean {m}");
    assert!((v - 1.0).abs() < 0.1, "var {v}");
}

#[test]
fn unconditional_pass_recovers_mixture_frequencies() {
    let gmm = GaussianMixture::new(vec![0.3, 0.7], vec![vec![-2.0, 0.0], vec![2.0, 1.0]], vec![0.2, 0.3]).unwrap();
    let n = 10_000;
    let xs = sample_unconditional(&gmm, n, &FpsConfig::default(), 12).unwrap();
    let f = xs.iter().filter(|x| gmm.responsibilities(x)[0] > 0.5).count() as f64 / n as f64;
    let se = (0.3 * 0.7 / n as f64).sqrt();
    assert!((f - 0.3).abs() < 3.0 * se, "{f}");
}

#[test]
fn likelihood_score_examples() {
    let obs = scalar_obs(1.0, 1.0);
    assert_eq!(fps_likelihood_score(&[0.7], &[0.7], 0.3, &obs), vec![0.0]);
    assert!((fps_likelihood_score(&[0.0], &[1.0], 0.5, &obs)[0] - 2.0).abs() < 1e-15);
    let mask = LinearObservation::new(LinearOperator::Diagonal(vec![1.0, 0.0, 1.0]), 1.0).unwrap();
    let s = fps_likelihood_score(&[0.0, 5.0, 0.0], &[1.0, 3.0, -1.0], 0.5, &mask);
    assert_eq!(s[1], 0.0);
    assert!((s[0] - 2.0).abs() < 1e-15 && (s[2] + 2.0).abs() < 1e-15);
    let dense = LinearObservation::new(LinearOperator::Dense(nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 2.0])), 2.0).unwrap();
    let s = fps_likelihood_score(&[1.0, 1.0], &[5.0], 0.5, &dense);
    assert!((s[0] - 1.0).abs() < 1e-15 && (s[1] - 2.0).abs() < 1e-15);
}

#[test]
fn uninformative_conditioning_reduces_to_unconditional() {
    let s = VpSchedule::default();
    let oracle = std_normal();
    for integrator in [FpsIntegrator::Explicit, FpsIntegrator::LinearImplicit] {
        for obs in [scalar_obs(1.0, 1e12), scalar_obs(0.0, 1.0)] {
            let a = fps_conditional_reverse(&[0.4], 0.5, 0.01, &oracle, &[3.0], &obs, &s, &[0.2], integrator);
            let b = reverse_step(&[0.4], 0.5, 0.01, &oracle, &s, &[0.2]);
            assert!((a[0] - b[0]).abs() < 1e-9, "{integrator:?}");
        }
    }
}

#[test]
fn conditional_pass_concentrates_near_the_posterior() {
    let obs = scalar_obs(1.0, 1.0);
    let xs = sample_conditional(&std_normal(), &obs, &[2.0], 10_000, &FpsConfig::default(), 13).unwrap();
    let (m, v) = mean_var(&first(&xs));
    assert!((m - 1.0).abs() < 0.25, "mean {m}");
    assert!((v - 0.5).abs() < 0.25, "var {v}");
}

#[test]
fn pooled_step_with_one_atom_is_the_conditional_step() {
    let s = VpSchedule::default();
    let obs = scalar_obs(1.5, 0.7);
    let oracle = std_normal();
    for integrator in [FpsIntegrator::Explicit, FpsIntegrator::LinearImplicit] {
        let a = fps_conditional_reverse(&[0.4], 0.5, 0.01, &oracle, &[1.2], &obs, &s, &[0.2], integrator);
        let b = fps_pooled_reverse(&[0.4], 0.5, 0.01, &oracle, &[&[1.2]], &PoolingWeights::uniform(1), &obs, &s, &[0.2], integrator);
        assert_eq!(a, b);
        let c = fps_pooled_reverse(&[0.4], 0.5, 0.01, &oracle, &[&[1.2], &[1.2]], &PoolingWeights::uniform(2), &obs, &s, &[0.2], integrator);
        assert!((a[0] - c[0]).abs() < 1e-14);
    }
}

#[test]
fn pooled_pass_with_identical_paths_is_the_single_pass() {
    let obs = scalar_obs(1.0, 1.0);
    let cfg = FpsConfig::default();
    let term = |w: f64| ChainTerm::new(obs.clone(), &[2.0], w, &cfg.schedule, 14, 0).unwrap();
    let single = FpsChain::start(1, 500, vec![term(1.0)], 14).finish(&std_normal(), &cfg).unwrap();
    let pooled = FpsChain::start(1, 500, vec![term(0.5), term(0.5)], 14).finish(&std_normal(), &cfg).unwrap();
    for (a, b) in single.iter().zip(&pooled) {
        assert!((a[0] - b[0]).abs() < 1e-9);
    }
}

#[test]
fn pooled_pass_moves_toward_the_pooled_gaussian() {
    let obs = scalar_obs(1.0, 1.0);
    let xs = sample_pooled(&std_normal(), &obs, &[vec![0.0], vec![4.0]], &PoolingWeights::uniform(2), 10_000, &FpsConfig::default(), 16).unwrap();
    let (pm, pv) = gaussian_pool(&[vec![0.0], vec![2.0]], &[vec![0.5], vec![0.5]], &PoolingWeights::uniform(2)).unwrap();
    let (pm, pv) = (pm[0], pv[0]);
    assert!((pm - 1.0).abs() < 1e-12 && (pv - 0.5).abs() < 1e-12);
    let (m, v) = mean_var(&first(&xs));
    assert!((m - pm).abs() < 0.25, "mean {m}");
    assert!((v - pv).abs() < 0.25, "var {v}");
}

#[test]
fn tweedie_examples() {
    let n = std_normal();
    assert_eq!(tweedie_predict(&[0.8], 1.0, &n), vec![0.8]);
    for a in [0.1, 0.5, 0.9] {
        assert!((tweedie_predict(&[1.7], a, &n)[0] - a.sqrt() * 1.7).abs() < 1e-12);
    }
    let spike = GaussianMixture::new(vec![1.0], vec![vec![0.6]], vec![1e-6]).unwrap();
    for th in [-3.0, 0.0, 4.0] {
        assert!((tweedie_predict(&[th], 0.5, &spike)[0] - 0.6).abs() < 1e-2);
    }
}

#[test]
fn tweedie_matches_importance_sampling() {
    let gmm = GaussianMixture::new(vec![0.4, 0.6], vec![vec![-1.5], vec![1.0]], vec![0.3, 0.5]).unwrap();
    let draws: Vec<f64> = (0..100_000u64).map(|j| gmm.sample(&mut stream(21, Tag::Evaluation, j, 0))[0]).collect();
    for (i, (th, a)) in [(0.3f64, 0.5f64), (-1.0, 0.2), (2.0, 0.8), (0.0, 0.05)].into_iter().enumerate() {
        let logw: Vec<f64> = draws
            .iter()
            .map(|x| {
                let r = th - a.sqrt() * x;
                -0.5 * r * r / (1.0 - a)
            })
            .collect();
        let w = codiff::numeric::normalize_log_weights(&logw).unwrap();
        let est: f64 = w.iter().zip(&draws).map(|(w, x)| w * x).sum();
        let var: f64 = w.iter().zip(&draws).map(|(w, x)| w * w * (x - est).powi(2)).sum();
        let got = tweedie_predict(&[th], a, &gmm)[0];
        assert!((got - est).abs() < 3.0 * var.sqrt().max(1e-4), "point {i}: {got} vs {est}");
    }
}

#[test]
fn resample_weight_examples() {
    let obs = scalar_obs(1.0, 1.0);
    let term = [CondTerm {
        obs: &obs,
        y_t: &[1.0],
        weight: 1.0,
    }];
    let w = fps_resample_weights(&vec![vec![0.3]; 4], &term, 0.5).unwrap();
    assert!(w.iter().all(|w| (w - 0.25).abs() < 1e-15));
    let w = fps_resample_weights(&[vec![1.0], vec![40.0]], &term, 0.5).unwrap();
    assert!(w[0] > 1.0 - 1e-12);
    let w = fps_resample_weights(&[vec![0.0], vec![2.0]], &term, 0.5).unwrap();
    let dens = |th: f64| (-(1.0 - th) * (1.0 - th) / (2.0 * 0.5)).exp() / (2.0 * std::f64::consts::PI * 0.5).sqrt();
    let expect = dens(0.0) / (dens(0.0) + dens(2.0));
    assert!((w[0] - expect).abs() < 1e-12);
    let bad = [CondTerm {
        obs: &obs,
        y_t: &[f64::NAN],
        weight: 1.0,
    }];
    assert!(fps_resample_weights(&[vec![0.0]], &bad, 0.5).is_err());
}

#[test]
fn chain_is_reproducible_and_resamples_deterministically() {
    let cfg = FpsConfig {
        schedule: VpSchedule {
            n_steps: 50,
            ..VpSchedule::default()
        },
        ..FpsConfig::default()
    };
    let obs = scalar_obs(1.0, 0.3);
    let run = || {
        let term = ChainTerm::new(obs.clone(), &[2.5], 1.0, &cfg.schedule, 3, 0).unwrap();
        let mut c = FpsChain::start(1, 200, vec![term], 3);
        while !c.is_done(&cfg) {
            c.advance(&std_normal(), &cfg).unwrap();
        }
        (c.resample_count(), c.particles().to_vec())
    };
    assert_eq!(run(), run());
    let e = normals(&mut stream(3, Tag::ObsPath, 0, 0), 1);
    assert_eq!(e.len(), 1);
}

proptest! {
    #[test]
    fn alpha_bar_is_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0, bmin in 0.01f64..2.0, bmax in 0.01f64..20.0) {
        let s = VpSchedule { b_min: bmin, b_max: bmax, ..VpSchedule::default() };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(s.alpha_bar(hi) <= s.alpha_bar(lo));
        prop_assert!(s.alpha_bar(lo) <= 1.0);
    }
}
