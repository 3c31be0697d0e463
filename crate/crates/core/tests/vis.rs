use std::f64::consts::PI;

use vis_autodiff::{Expr, Shape, Tape};
use vis_core::samplers::{AdMode, SamplerConfig, SamplerKind};
use vis_core::targets::{log_density_at, DiagGaussian, Funnel, Quadratic, TargetDensity};
use vis_core::vis::{
    elbo_standard, elbo_vis_fp, elbo_vis_g, elbo_vis_mc, elbo_vis_p, fast_refined_gradient, fit, fit_refined,
    line_search_step, refined_elbo, taylor_gradient_probe, transition_log_density, Draws, ElboEstimate,
    EntropyMode, FitSettings, Guide, GuideInit, ParamStore, Refinement, VariationalProblem,
};
use vis_core::VisError;

fn gaussian<'t>(tape: &'t Tape, mu: &[f64], log_sigma: &[f64]) -> (Guide<'t>, Expr<'t>, Expr<'t>) {
    let m = tape.var("mu", mu.to_vec(), Shape::vector(mu.len()));
    let s = tape.var("log_sigma", log_sigma.to_vec(), Shape::vector(log_sigma.len()));
    (Guide::gaussian(m, s), m, s)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn bits(e: &ElboEstimate<'_>) -> Vec<u64> {
    e.per_sample.value().into_iter().map(f64::to_bits).collect()
}

fn sampler_for(entropy: EntropyMode) -> SamplerKind {
    match entropy {
        EntropyMode::P | EntropyMode::Mc => SamplerKind::Sgld,
        EntropyMode::G => SamplerKind::Sgd,
        EntropyMode::Fp => SamplerKind::FpFlow,
    }
}

const MODES: [EntropyMode; 4] = [EntropyMode::P, EntropyMode::Mc, EntropyMode::G, EntropyMode::Fp];

#[test]
fn standard_elbo_is_zero_for_matching_guide() {
    let tape = Tape::new();
    let target = DiagGaussian::new(vec![0.5, -1.0], vec![4.0, 0.25]).unwrap();
    let (guide, ..) = gaussian(&tape, &[0.5, -1.0], &[2f64.ln(), 0.5f64.ln()]);
    let est = elbo_standard(&guide, &target, 1000, &mut Draws::new(0)).unwrap();
    let (m, se) = mean_se(&est.per_sample.value());
    assert!(m.abs() <= 3.0 * se.max(1e-12), "{m} ± {se}");
    assert!(m.abs() < 1e-12);
}

#[test]
fn standard_elbo_matches_gaussian_kl() {
    let tape = Tape::new();
    let target = DiagGaussian::standard(1);
    let (guide, ..) = gaussian(&tape, &[1.0], &[0.0]);
    let est = elbo_standard(&guide, &target, 10_000, &mut Draws::new(1)).unwrap();
    let (m, se) = mean_se(&est.per_sample.value());
    assert!((m + 0.5).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn standard_elbo_matches_quadrature() {
    let target = DiagGaussian::new(vec![0.0], vec![2.0]).unwrap();
    let (mu, sd) = (0.3, 0.7);
    let integrand = |z: f64| {
        let q = (-0.5 * ((z - mu) / sd).powi(2)).exp() / (sd * (2.0 * PI).sqrt());
        let lp = log_density_at(&target, &[z]).unwrap();
        q * (lp - q.ln())
    };
    let n = 40_000;
    let (a, b) = (mu - 10.0 * sd, mu + 10.0 * sd);
    let h = (b - a) / n as f64;
    let quad = h * ((1..n).map(|i| integrand(a + i as f64 * h)).sum::<f64>() + 0.5 * (integrand(a) + integrand(b)));

    let tape = Tape::new();
    let (guide, ..) = gaussian(&tape, &[mu], &[sd.ln()]);
    let est = elbo_standard(&guide, &target, 1_000_000, &mut Draws::new(2)).unwrap();
    assert!((est.value.item() - quad).abs() < 1e-3, "{} vs {quad}", est.value.item());
}

#[test]
fn every_mode_reduces_to_standard_elbo_at_t0() {
    let target = Funnel::default();
    for entropy in MODES {
        let tape = Tape::new();
        let (guide, ..) = gaussian(&tape, &[0.3, -0.2], &[-0.5, 0.1]);
        let r = Refinement {
            sampler: SamplerConfig::new(sampler_for(entropy), 0),
            eta: tape.scalar(0.1),
            entropy,
            mode: AdMode::Full,
        };
        let refined = refined_elbo(&guide, &r, &target, 8, &mut Draws::new(9)).unwrap();
        let plain = elbo_standard(&guide, &target, 8, &mut Draws::new(9)).unwrap();
        assert_eq!(bits(&refined), bits(&plain), "{entropy:?}");
    }
}

#[test]
fn delta_guide_with_one_sgd_step_is_modified_objective() {
    let target = Funnel::default();
    let theta = [0.4, 0.7];
    let eta = 0.05;
    let tape = Tape::new();
    let t = tape.var("theta", theta.to_vec(), Shape::vector(2));
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgd, 1),
        eta: tape.scalar(eta),
        entropy: EntropyMode::P,
        mode: AdMode::Full,
    };
    let est = elbo_vis_p(&Guide::delta(t), &r, &target, 1, &mut Draws::new(0)).unwrap();
    let (g, _) = taylor_gradient_probe(&target, &theta, 0.0).unwrap();
    let moved = [theta[0] + eta * g[0], theta[1] + eta * g[1]];
    assert!((est.value.item() - log_density_at(&target, &moved).unwrap()).abs() < 1e-12);
}

#[test]
fn transition_density_matches_noise_identity() {
    let tape = Tape::new();
    let target = DiagGaussian::standard(3);
    let (guide, ..) = gaussian(&tape, &[0.0; 3], &[0.0; 3]);
    let eta = 0.07;
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgld, 1),
        eta: tape.scalar(eta),
        entropy: EntropyMode::Mc,
        mode: AdMode::Full,
    };
    let mut draws = Draws::new(4);
    let draw = guide.draw(5, &mut draws.guide).unwrap();
    let traj = vis_core::samplers::run_chain(draw.z0, &r.sampler, r.eta, r.mode, &target, &mut draws.chain).unwrap();
    let trans = transition_log_density(&traj.noises, r.eta, r.mode).unwrap().value();
    let xi = traj.noises[0].value();
    for (i, t) in trans.iter().enumerate() {
        let expect: f64 = (0..3)
            .map(|c| {
                let eps = xi[i * 3 + c] / (2.0 * eta).sqrt();
                -0.5 * (4.0 * PI * eta).ln() - eps * eps / 2.0
            })
            .sum();
        assert!((t - expect).abs() < 1e-12);
    }
}

#[test]
fn vis_mc_matches_closed_form_on_linear_chain() {
    let (mu0, s0, eta, t) = (0.8_f64, 0.6_f64, 0.1_f64, 3);
    let a = 1.0 - eta;
    let m_t = a.powi(t) * mu0;
    let v_t = a.powi(2 * t) * s0 * s0 + 2.0 * eta * (0..t).map(|i| a.powi(2 * i)).sum::<f64>();
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    let e_log_p = -half_ln_2pi - 0.5 * (m_t * m_t + v_t);
    let e_log_q0 = -half_ln_2pi - s0.ln() - 0.5;
    let e_trans = t as f64 * (-0.5 * (4.0 * PI * eta).ln() - 0.5);
    let exact = e_log_p - e_log_q0 - e_trans;

    let tape = Tape::new();
    let (guide, ..) = gaussian(&tape, &[mu0], &[s0.ln()]);
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgld, t as usize),
        eta: tape.scalar(eta),
        entropy: EntropyMode::Mc,
        mode: AdMode::Full,
    };
    let est = elbo_vis_mc(&guide, &r, &DiagGaussian::standard(1), 10_000, &mut Draws::new(5)).unwrap();
    let (m, se) = mean_se(&est.per_sample.value());
    assert!((m - exact).abs() < 3.0 * se, "{m} ± {se} vs {exact}");
}

#[test]
fn mode_sampler_mismatch_is_a_config_error() {
    let tape = Tape::new();
    let (guide, ..) = gaussian(&tape, &[0.0], &[0.0]);
    let target = DiagGaussian::standard(1);
    for (entropy, kind) in [
        (EntropyMode::Mc, SamplerKind::Sgd),
        (EntropyMode::Mc, SamplerKind::FpFlow),
        (EntropyMode::G, SamplerKind::Sgld),
        (EntropyMode::Fp, SamplerKind::Sgld),
    ] {
        let r = Refinement { sampler: SamplerConfig::new(kind, 1), eta: tape.scalar(0.1), entropy, mode: AdMode::Full };
        let err = refined_elbo(&guide, &r, &target, 4, &mut Draws::new(0));
        assert!(matches!(err, Err(VisError::Config(_))), "{entropy:?}/{kind:?}");
    }
    let theta = tape.var("theta", vec![0.0], Shape::vector(1));
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgd, 1),
        eta: tape.scalar(0.1),
        entropy: EntropyMode::G,
        mode: AdMode::Full,
    };
    assert!(matches!(elbo_vis_g(&Guide::delta(theta), &r, &target, 1, &mut Draws::new(0)), Err(VisError::Config(_))));
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::FpFlow, 1),
        eta: tape.scalar(0.1),
        entropy: EntropyMode::Fp,
        mode: AdMode::Full,
    };
    assert!(elbo_vis_fp(&guide, &r, &target, 1, &mut Draws::new(0)).is_err());
}

#[test]
fn vis_g_entropy_is_location_free_gaussian_entropy() {
    let target = Funnel::default();
    let log_sigma = [-0.3, 0.2];
    let tape = Tape::new();
    let (guide, ..) = gaussian(&tape, &[0.5, 0.5], &log_sigma);
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgd, 2),
        eta: tape.scalar(0.05),
        entropy: EntropyMode::G,
        mode: AdMode::Full,
    };
    let est = elbo_vis_g(&guide, &r, &target, 4000, &mut Draws::new(6)).unwrap();
    let neg_log_q: Vec<f64> = est
        .per_sample
        .value()
        .iter()
        .zip(target.log_density(est.z).unwrap().value())
        .map(|(integrand, lp)| integrand - lp)
        .collect();
    let eps = est.draw.eps.unwrap().value();
    for (i, h) in neg_log_q.iter().enumerate() {
        let expect: f64 = (0..2).map(|c| 0.5 * (2.0 * PI).ln() + log_sigma[c] + 0.5 * eps[i * 2 + c].powi(2)).sum();
        assert!((h - expect).abs() < 1e-12);
    }
    let closed: f64 = log_sigma.iter().map(|s| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + s).sum();
    let (m, se) = mean_se(&neg_log_q);
    assert!((m - closed).abs() < 3.0 * se);
}

fn eta_gradient(entropy: EntropyMode, mode: AdMode, target: &dyn for<'t> TargetDensity<'t>, eta: f64) -> (f64, f64) {
    let tape = Tape::new();
    let (guide, ..) = gaussian(&tape, &[0.4, -0.3], &[-0.7, -0.4]);
    let e = tape.var("eta", vec![eta], Shape::scalar());
    let mut sampler = SamplerConfig::new(sampler_for(entropy), 2);
    // the median bandwidth is held constant in the backward pass
    sampler.bandwidth = vis_core::samplers::Bandwidth::Fixed(1.0);
    let r = Refinement { sampler, eta: e, entropy, mode };
    let est = refined_elbo(&guide, &r, target, 6, &mut Draws::new(21)).unwrap();
    (est.value.item(), tape.gradient(est.value, &[e], false).unwrap()[0].item())
}

#[test]
fn fast_mode_eta_gradient_is_exactly_zero() {
    let quad = Quadratic::new(vec![1.0, 0.3, 0.3, 2.0], vec![0.5, 0.5]).unwrap();
    for entropy in MODES {
        for target in [&Funnel::default() as &dyn for<'t> TargetDensity<'t>, &quad] {
            assert_eq!(eta_gradient(entropy, AdMode::Fast, target, 0.05).1, 0.0, "{entropy:?}");
        }
    }
    assert_ne!(eta_gradient(EntropyMode::G, AdMode::Full, &Funnel::default(), 0.05).1, 0.0);
}

#[test]
fn full_mode_eta_gradient_matches_finite_differences() {
    let quad = Quadratic::new(vec![1.0, 0.3, 0.3, 2.0], vec![0.5, 0.5]).unwrap();
    let eta = 0.08;
    let h = 1e-5;
    for entropy in MODES {
        let (_, ad) = eta_gradient(entropy, AdMode::Full, &quad, eta);
        let up = eta_gradient(entropy, AdMode::Full, &quad, eta + h).0;
        let down = eta_gradient(entropy, AdMode::Full, &quad, eta - h).0;
        let fd = (up - down) / (2.0 * h);
        assert!(((ad - fd) / fd).abs() < 1e-4, "{entropy:?}: {ad} vs {fd}");
    }
}

#[test]
fn fp_particles_spread_symmetrically() {
    let target = DiagGaussian::standard(1);
    let tape = Tape::new();
    let z = tape.constant(vec![-0.05, 0.05, -0.01, 0.01], Shape::matrix(4, 1));
    let moved = vis_core::samplers::fp_flow_step(
        z,
        &target,
        tape.scalar(0.1),
        vis_core::samplers::Bandwidth::Median,
        AdMode::Fast,
    )
    .unwrap()
    .value();
    assert!(moved.iter().sum::<f64>().abs() < 1e-14);
    assert!(moved[1] > 0.05 && moved[3] > 0.01, "{moved:?}");
}

#[test]
fn fp_particles_move_to_target_mean() {
    let tape = Tape::new();
    let (guide, ..) = gaussian(&tape, &[2.0], &[0.0]);
    let r = Refinement {
        sampler: SamplerConfig::new(SamplerKind::FpFlow, 50),
        eta: tape.scalar(0.1),
        entropy: EntropyMode::Fp,
        mode: AdMode::Fast,
    };
    let est = elbo_vis_fp(&guide, &r, &DiagGaussian::standard(1), 100, &mut Draws::new(8)).unwrap();
    let mean = est.z.value().iter().sum::<f64>() / 100.0;
    assert!(mean.abs() < 0.2, "{mean}");
}

fn funnel_problem(t: usize) -> VariationalProblem<Funnel> {
    VariationalProblem {
        target: Funnel::default(),
        guide: GuideInit::Gaussian { mu: vec![1.0, 1.0], log_sigma: vec![0.0, 0.0] },
        sampler: SamplerConfig::new(SamplerKind::Sgld, t),
        entropy: EntropyMode::Mc,
        n_samples: 10,
    }
}

fn funnel_settings(seed: u64) -> FitSettings {
    FitSettings { iterations: 50, lr: 0.05, eta_lr: 0.05, eta0: 0.1, mode: AdMode::Full, seed }
}

#[test]
fn fit_rejects_zero_iterations() {
    let s = FitSettings { iterations: 0, ..funnel_settings(0) };
    assert!(fit_refined(&funnel_problem(1), &s).is_err());
}

#[test]
fn funnel_refinement_tightens_the_bound() {
    for seed in 0..3 {
        let tail = |t| {
            let r = fit_refined(&funnel_problem(t), &funnel_settings(seed)).unwrap();
            assert_eq!(r.losses.len(), 50);
            assert!(r.losses.iter().all(|l| l.is_finite()));
            r.losses[40..].iter().sum::<f64>() / 10.0
        };
        let (l0, l1) = (tail(0), tail(1));
        assert!(l1 < l0, "seed {seed}: {l1} vs {l0}");
    }
}

#[test]
fn funnel_final_loss_median_is_monotone_in_t() {
    let median_final = |t| {
        let mut v: Vec<f64> =
            (0..5).map(|s| *fit_refined(&funnel_problem(t), &funnel_settings(s)).unwrap().losses.last().unwrap()).collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let m: Vec<f64> = (0..3).map(median_final).collect();
    assert!(m[1] <= m[0] && m[2] <= m[1], "{m:?}");
}

#[test]
fn fit_recovers_gaussian_posterior() {
    let problem = VariationalProblem {
        target: Quadratic::new(vec![2.0, 0.0, 0.0, 0.5], vec![1.0, -0.5]).unwrap(),
        guide: GuideInit::Gaussian { mu: vec![0.0, 0.0], log_sigma: vec![0.0, 0.0] },
        sampler: SamplerConfig::new(SamplerKind::Sgld, 0),
        entropy: EntropyMode::P,
        n_samples: 4000,
    };
    let settings = FitSettings { iterations: 500, lr: 0.01, eta_lr: 0.01, eta0: 0.01, mode: AdMode::Fast, seed: 3 };
    let r = fit_refined(&problem, &settings).unwrap();
    let mu = r.final_params.get("mu").unwrap();
    let ls = r.final_params.get("log_sigma").unwrap();
    let want_ls = [-0.5 * 2f64.ln(), -0.5 * 0.5f64.ln()];
    for c in 0..2 {
        assert!((mu[c] - [1.0, -0.5][c]).abs() < 1e-2, "mu {mu:?}");
        assert!((ls[c] - want_ls[c]).abs() < 1e-2, "log sigma {ls:?}");
    }
}

#[test]
fn non_finite_loss_aborts_with_snapshot() {
    struct Blowup;
    impl vis_core::vis::Objective for Blowup {
        fn evaluate<'t>(
            &self,
            _tape: &'t Tape,
            params: &vis_core::vis::Bound<'t>,
            _eta: Expr<'t>,
            _mode: AdMode,
            _draws: &mut Draws,
        ) -> vis_core::Result<vis_core::vis::Evaluation<'t>> {
            let x = params.get("x")?;
            Ok(vis_core::vis::Evaluation { loss: (x * 1e3).exp().sum(), monitor: None })
        }
    }
    let init = ParamStore::new().with("x", vec![1.0], Shape::vector(1));
    match fit(&Blowup, init, &FitSettings { iterations: 3, ..Default::default() }) {
        Err(VisError::NonFiniteLoss { iteration, snapshot, .. }) => {
            assert_eq!(iteration, 1);
            assert_eq!(snapshot[0].0, "x");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn taylor_probe_on_quadratic_is_exact() {
    let a = [1.5, 0.4, 0.4, 0.8];
    let target = Quadratic::new(a.to_vec(), vec![0.0, 0.0]).unwrap();
    let z = [0.7, -1.1];
    let eta = 0.1;
    let (g, corrected) = taylor_gradient_probe(&target, &z, eta).unwrap();
    let az = [a[0] * z[0] + a[1] * z[1], a[2] * z[0] + a[3] * z[1]];
    let aaz = [a[0] * az[0] + a[1] * az[1], a[2] * az[0] + a[3] * az[1]];
    for c in 0..2 {
        assert!((g[c] + az[c]).abs() < 1e-12);
        assert!((corrected[c] - (-(az[c] - eta * aaz[c]))).abs() < 1e-12);
    }
    let (g0, c0) = taylor_gradient_probe(&target, &z, 0.0).unwrap();
    assert_eq!(g0, c0);
}

#[test]
fn taylor_probe_matches_fast_gradient_on_funnel() {
    let z = [0.2, 0.1];
    let eta = 1e-3;
    let (_, corrected) = taylor_gradient_probe(&Funnel::default(), &z, eta).unwrap();
    let fast = fast_refined_gradient(&Funnel::default(), &z, eta).unwrap();
    for c in 0..2 {
        assert!((corrected[c] - fast[c]).abs() < 1e-4, "{corrected:?} vs {fast:?}");
    }
}

#[test]
fn line_searched_step_never_lowers_the_objective() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let step = line_search_step(&Funnel::default(), &z, 0.5, 60).unwrap();
        assert!(step.refined >= step.base, "{z:?}");
    }
}
