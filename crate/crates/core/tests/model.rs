mod common;

use codiff::model::*;
use codiff::rng::{normals, stream, Tag};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn lg() -> LinearGaussian1D {
    LinearGaussian1D::with_sigma(1.0).unwrap()
}

fn random_point(model: &dyn ModelSpec, seed: u64, i: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, Tag::Init, i, 0);
    let theta = model.sample_prior(&mut rng);
    let xi: Vec<f64> = (0..model.design_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let u = model.sample_noise(&mut rng);
    (theta, xi, u)
}

#[test]
fn sample_outcome_examples() {
    let m = lg();
    let d = Design::new(vec![2.0]).unwrap();
    assert_eq!(sample_outcome(&m, &[1.0], &d, &[0.0]).unwrap(), vec![2.0]);
    assert_eq!(sample_outcome(&m, &[1.0], &d, &[0.5]).unwrap(), vec![2.5]);
    let s = source_model();
    let xi = Design::new(vec![0.3, -0.2]).unwrap();
    let th = [1.0, 0.5, -1.0, 2.0];
    let y = sample_outcome(&s, &th, &xi, &[0.0]).unwrap();
    assert!((y[0] - signal_strength(&th, xi.xi(), s.constants())).abs() < 1e-12);
}

#[test]
fn sample_outcome_rejects_bad_dimensions() {
    let d = Design::new(vec![2.0]).unwrap();
    assert!(matches!(
        sample_outcome(&lg(), &[1.0, 2.0], &d, &[0.0]),
        Err(codiff::CodiffError::DimensionMismatch { .. })
    ));
    assert!(sample_outcome(&lg(), &[1.0], &d, &[]).is_err());
}

#[test]
fn signal_strength_examples() {
    let c = SourceConstants::default();
    let far = signal_strength(&[1e6, 1e6, -1e6, 1e6], &[0.0, 0.0], &c);
    assert!((far - 0.1).abs() < 1e-10);
    let at = signal_strength(&[0.5, 0.5, 0.5, 0.5], &[0.5, 0.5], &c);
    assert!((at - 20000.1).abs() < 1e-8);
    let one = signal_strength(&[1.0, 0.0, 1e8, 0.0], &[0.0, 0.0], &c);
    assert!((one - (0.1 + 1.0 / (1e-4 + 1.0))).abs() < 1e-12);
    assert!((one - 1.09990).abs() < 1e-5);
}

#[test]
fn smooth_mask_examples() {
    let (h, s) = (7.0, [0.1, 0.1]);
    let xi = [8.0, 8.0];
    assert!((smooth_mask(&xi, [8.0, 8.0], h, s) - 1.0).abs() < 1e-10);
    let edge = smooth_mask(&xi, [15.0, 8.0], h, s);
    assert!((edge - 0.5).abs() < 1e-10);
    let tiny = [1e-4, 1e-4];
    assert!((smooth_mask(&xi, [10.0, 3.0], h, tiny) - 1.0).abs() < 1e-12);
    assert!(smooth_mask(&xi, [15.5, 3.0], h, tiny).abs() < 1e-12);
    assert!(smooth_mask(&xi, [0.5, 8.0], h, tiny).abs() < 1e-12);
}

#[test]
fn current_prior_score_examples() {
    let s = source_model();
    let hist = History::new();
    let th = [2.0, -1.0, 0.0, 0.0];
    assert_eq!(current_prior_score(&s, &hist, &th), vec![-2.0, 1.0, 0.0, 0.0]);
    assert_eq!(current_prior_score(&s, &hist, &th), s.grad_theta_log_prior(&th));

    let m = lg();
    let mut hist = History::new();
    let (xi, y) = (1.5, 0.7);
    hist.push(vec![xi], vec![y]);
    let prec = 1.0 + xi * xi;
    let mean = xi * y / prec;
    for th in [-1.0, 0.0, 0.3, 2.0] {
        let got = current_prior_score(&m, &hist, &[th])[0];
        assert!((got + prec * (th - mean)).abs() < 1e-12);
    }
}

#[test]
fn g_score_examples() {
    let m = lg();
    let xi = Design::new(vec![1.3]).unwrap();
    for (y, th, thp) in [(0.4, 1.0, -0.5), (2.0, -0.3, 0.8), (-1.0, 0.0, 1.5)] {
        let g = g_score(&m, &xi, &[y], &[th], &[thp]).unwrap()[0];
        let hand = -(y - 1.3 * thp) * (th - thp);
        assert!((g - hand).abs() < 1e-12);
        assert_eq!(g_score(&m, &xi, &[y], &[th], &[th]).unwrap(), vec![0.0]);
    }
    let s = source_model();
    let xi = Design::new(vec![0.2, -0.4]).unwrap();
    let th = [1.0, 0.5, -1.0, 0.3];
    let y = s.forward(&th, xi.xi(), &[0.7]);
    let g = g_score(&s, &xi, &y, &th, &th).unwrap();
    let neg_grad_log_mu = fd_grad(|x| -signal_strength(&th, x, s.constants()).ln(), xi.xi());
    assert!(rel_err(&g, &neg_grad_log_mu) < 1e-6);
}

#[test]
fn g_score_singular_map() {
    let s = source_model();
    let xi = Design::new(vec![0.0, 0.0]).unwrap();
    let th = [0.0; 4];
    assert!(matches!(g_score(&s, &xi, &[-1.0], &th, &th), Err(codiff::CodiffError::SingularMap(_))));
}

#[test]
fn additive_models_have_zero_self_g() {
    let mask = small_mask_model();
    for i in 0..20 {
        let (th, xi, u) = random_point(&lg(), 1, i);
        let y = lg().forward(&th, &xi, &u);
        assert_eq!(g_score(&lg(), &Design::new(xi).unwrap(), &y, &th, &th).unwrap(), vec![0.0]);
        let (th, xi, u) = random_point(&mask, 2, i);
        let y = mask.forward(&th, &xi, &u);
        let g = g_score(&mask, &Design::new(xi).unwrap(), &y, &th, &th).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10), "{g:?}");
    }
}

#[test]
fn reparameterization_round_trip() {
    let models: Vec<Box<dyn ModelSpec>> = vec![Box::new(lg()), Box::new(source_model()), Box::new(small_mask_model())];
    for (mi, m) in models.iter().enumerate() {
        for i in 0..1000 {
            let (th, xi, u) = random_point(m.as_ref(), 10 + mi as u64, i);
            let y = m.forward(&th, &xi, &u);
            let back = m.inverse(&th, &xi, &y).unwrap();
            let err = back.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "{} round trip error {err}", m.name());
        }
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let models: Vec<Box<dyn ModelSpec>> = vec![Box::new(lg()), Box::new(source_model()), Box::new(small_mask_model())];
    for (mi, m) in models.iter().enumerate() {
        let m = m.as_ref();
        for i in 0..100 {
            let (th, xi, u) = random_point(m, 100 + mi as u64, i);
            let (th_eval, _, _) = random_point(m, 200 + mi as u64, i);
            let y = m.forward(&th, &xi, &u);
            let tol = 1e-4;
            let gt = fd_grad(|t| m.log_lik(&y, t, &xi), &th);
            assert!(rel_err(&m.grad_theta_log_lik(&y, &th, &xi), &gt) < tol, "{} dθ", m.name());
            let gx = fd_grad(|x| m.log_lik(&y, &th, x), &xi);
            assert!(rel_err(&m.grad_xi_log_lik(&y, &th, &xi), &gx) < tol, "{} dξ", m.name());
            let gy = fd_grad(|yy| m.log_lik(yy, &th, &xi), &y);
            assert!(rel_err(&m.grad_y_log_lik(&y, &th, &xi), &gy) < tol, "{} dy", m.name());
            let gp = fd_grad(|t| m.log_prior(t), &th);
            assert!(rel_err(&m.grad_theta_log_prior(&th), &gp) < tol, "{} prior", m.name());
            let jac = m.jacobian_xi(&th, &xi, &u);
            for r in 0..m.outcome_dim().min(8) {
                let fd = fd_grad(|x| m.forward(&th, x, &u)[r], &xi);
                let row = &jac[r * xi.len()..(r + 1) * xi.len()];
                assert!(rel_err(row, &fd) < tol, "{} jacobian row {r}", m.name());
            }
            let design = Design::new(xi.clone()).unwrap();
            let g = g_score(m, &design, &y, &th, &th_eval).unwrap();
            let composed = fd_grad(|x| m.log_lik(&m.forward(&th, x, &u), &th_eval, x), &xi);
            assert!(rel_err(&g, &composed) < tol, "{} g_score", m.name());
        }
    }
}

#[test]
fn smooth_mask_gradient_and_range() {
    let s = [0.3, 0.5];
    for i in 0..100u64 {
        let mut rng = stream(5, Tag::Init, i, 0);
        let xi = [rng.gen_range(0.0..15.0), rng.gen_range(0.0..15.0)];
        let x = [rng.gen_range(0..16) as f64, rng.gen_range(0..16) as f64];
        let fd = fd_grad(|v| smooth_mask(v, x, 3.5, s), &xi);
        assert!(rel_err(&smooth_mask_grad(&xi, x, 3.5, s), &fd) < 1e-4);
    }
    let m = SmoothMaskInverse::new(
        16,
        3.5,
        [0.1, 0.1],
        0.5,
        GaussianMixture::new(vec![1.0], vec![vec![0.0; 256]], vec![1.0]).unwrap(),
    )
    .unwrap();
    for xi in [[0.0, 0.0], [7.3, 8.1], [15.0, 2.2], [-3.0, 20.0]] {
        assert!(m.mask(&xi).iter().all(|v| *v > -1e-9 && *v < 1.0 + 1e-9));
    }
}

#[test]
fn design_and_history_contracts() {
    let b = BoxBounds::symmetric(2, 1.0).unwrap();
    assert!(Design::bounded(vec![0.5, 2.0], b.clone()).is_err());
    let d = Design::bounded(vec![0.5, 0.0], b).unwrap();
    assert_eq!(d.with_xi(vec![3.0, -3.0]).unwrap().xi(), &[1.0, -1.0]);
    assert!(Design::new(vec![f64::NAN]).is_err());
    let mut h = History::new();
    h.push(vec![1.0], vec![2.0]);
    h.push(vec![0.5], vec![-1.0]);
    assert_eq!(h.len(), h.entries().len());
    assert_eq!(h.entries()[0].y, vec![2.0]);
}

#[test]
fn potential_is_negative_log_joint() {
    let m = source_model();
    let th = [0.2, 0.1, -0.4, 1.0];
    let xi = [0.5, 0.5];
    let y = [1.7];
    assert!((m.potential(&y, &th, &xi) + m.log_prior(&th) + m.log_lik(&y, &th, &xi)).abs() < 1e-14);
}

proptest! {
    #[test]
    fn signal_strength_bounded_below_and_monotone(
        c1 in prop::array::uniform2(-5.0f64..5.0),
        c2 in prop::array::uniform2(-5.0f64..5.0),
        xi in prop::array::uniform2(-5.0f64..5.0),
        scale in 1.01f64..3.0,
    ) {
        let c = SourceConstants::default();
        let th = [c1[0], c1[1], c2[0], c2[1]];
        let mu = signal_strength(&th, &xi, &c);
        prop_assert!(mu >= c.b);
        let pushed = [xi[0] + scale * (c1[0] - xi[0]), xi[1] + scale * (c1[1] - xi[1]), c2[0], c2[1]];
        prop_assert!(signal_strength(&pushed, &xi, &c) <= mu);
    }

    #[test]
    fn smooth_mask_stays_in_range(
        xi in prop::array::uniform2(-5.0f64..20.0),
        x in prop::array::uniform2(0.0f64..16.0),
        h in 0.1f64..8.0,
        s in prop::array::uniform2(0.01f64..2.0),
    ) {
        let v = smooth_mask(&xi, x, h, s);
        prop_assert!(v > -1e-9 && v < 1.0 + 1e-9);
    }

    #[test]
    fn linear_gaussian_round_trip(theta in -5.0f64..5.0, xi in -4.0f64..4.0, u in -5.0f64..5.0) {
        let m = lg();
        let y = m.forward(&[theta], &[xi], &[u]);
        prop_assert!((m.inverse(&[theta], &[xi], &y).unwrap()[0] - u).abs() <= 1e-10);
    }
}

#[test]
fn mixture_samples_have_component_means() {
    let g = GaussianMixture::new(vec![0.25, 0.75], vec![vec![-3.0], vec![2.0]], vec![0.25, 0.25]).unwrap();
    let mut rng = stream(9, Tag::Init, 0, 0);
    let xs: Vec<f64> = (0..20000).map(|_| g.sample(&mut rng)[0]).collect();
    let frac = xs.iter().filter(|x| **x < 0.0).count() as f64 / xs.len() as f64;
    assert!((frac - 0.25).abs() < 0.02);
    let _ = normals(&mut rng, 1);
}
