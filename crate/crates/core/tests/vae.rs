use vis_autodiff::{Expr, Shape, Tape};
use vis_core::samplers::{AdMode, SamplerConfig, SamplerKind};
use vis_core::targets::{batch_dims, TargetDensity};
use vis_core::vae::{
    bayes_classify, bernoulli_log_likelihood, importance_weighted_estimate, pattern_dataset, test_log_likelihood,
    train_cvae, train_vae, vae_relbo, Dataset, DecoderTarget, Mlp, VaeModel, VaeTrainConfig,
};
use vis_core::vis::{elbo_standard, Draws, EntropyMode, Guide, ParamStore, Refinement};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn refinement<'t>(tape: &'t Tape, steps: usize, eta: f64, mode: AdMode) -> Refinement<'t> {
    Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgld, steps),
        eta: tape.scalar(eta),
        entropy: EntropyMode::Mc,
        mode,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn accuracy(model: &VaeModel, params: &ParamStore, test: &Dataset, t_test: usize, eta: f64, seed: u64) -> f64 {
    let out = bayes_classify(model, params, test, 5, t_test, eta, seed).unwrap();
    let labels = test.labels.as_ref().unwrap();
    out.iter().zip(labels).filter(|(c, &y)| c.label == y).count() as f64 / labels.len() as f64
}

/// Sets every parameter whose name starts with `prefix` to zero.
fn zero(params: &mut ParamStore, prefix: &str) {
    for p in params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
        p.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn zero_refinement_is_the_standard_elbo() {
    let model = VaeModel::new(64, 2, vec![8, 8]);
    let params = model.init_params(0);
    let data = pattern_dataset(6, 2, 0.1, 1).unwrap();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let est = vae_relbo(&model, &bound, &data, &refinement(&tape, 0, 0.01, AdMode::Full), &mut Draws::new(3)).unwrap();

    let x = tape.constant(data.x.clone(), Shape::matrix(data.len(), 64));
    let (loc, scale) = model.encode(&bound, x, None).unwrap();
    let target = DecoderTarget { model: &model, params: &bound, x, y: None };
    let std = elbo_standard(&Guide::amortized(loc, scale), &target, data.len(), &mut Draws::new(3)).unwrap();
    assert_eq!(est.value.item().to_bits(), std.value.item().to_bits());
}

#[test]
fn zero_logits_on_zero_data_give_half_probability_per_pixel() {
    let model = VaeModel::new(64, 3, vec![8, 8]);
    let mut params = model.init_params(1);
    zero(&mut params, "dec.");
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.zeros(Shape::matrix(4, 64));
    let target = DecoderTarget { model: &model, params: &bound, x, y: None };
    let z = tape.constant(vec![0.3, -1.0, 2.0, 0.0, 0.1, 0.2, -0.5, 0.5, 1.5, 1.0, 1.0, -2.0], Shape::matrix(4, 3));
    for ll in target.log_likelihood(z).unwrap().value() {
        assert!((ll - 64.0 * 0.5f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn bernoulli_log_likelihood_matches_direct_form() {
    let tape = Tape::new();
    let logits: Vec<f64> = (0..41).map(|i| -5.0 + 0.25 * i as f64).collect();
    for bit in [0.0, 1.0] {
        let x = vec![bit; logits.len()];
        let stable = bernoulli_log_likelihood(
            tape.constant(logits.clone(), Shape::matrix(logits.len(), 1)),
            tape.constant(x, Shape::matrix(logits.len(), 1)),
        )
        .value();
        for (l, s) in logits.iter().zip(stable) {
            let p = 1.0 / (1.0 + (-l).exp());
            let direct = bit * p.ln() + (1.0 - bit) * (1.0 - p).ln();
            assert!((s - direct).abs() < 1e-12, "logit {l}: {s} vs {direct}");
        }
    }
}

#[test]
fn non_binary_data_is_rejected() {
    let model = VaeModel::new(2, 1, vec![4]);
    let params = model.init_params(0);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let data = Dataset { dim: 2, x: vec![0.0, 0.5], labels: None, classes: 0 };
    assert!(vae_relbo(&model, &bound, &data, &refinement(&tape, 1, 0.01, AdMode::Full), &mut Draws::new(0)).is_err());
    assert!(train_vae(&model, &data, &VaeTrainConfig::default()).is_err());
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    // one data point, latent dimension 1, linear networks
    let mut model = VaeModel::new(1, 1, vec![]);
    model.decoder = Mlp::new("dec", vec![1], vec![], 1);
    let data = Dataset { dim: 1, x: vec![1.0], labels: None, classes: 0 };
    let base = model.init_params(2);
    let names = ["enc_mu.0.b", "enc_sigma.0.b"];
    let elbo = |vals: &[f64], steps: usize| -> (f64, Vec<f64>) {
        let mut p = base.clone();
        for (n, v) in names.iter().zip(vals) {
            p.insert(n, vec![*v], Shape::vector(1));
        }
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let est = vae_relbo(&model, &bound, &data, &refinement(&tape, steps, 0.05, AdMode::Full), &mut Draws::new(4))
            .unwrap();
        let inputs: Vec<Expr> = names.iter().map(|n| bound.get(n).unwrap()).collect();
        let g = tape.gradient(est.value, &inputs, false).unwrap();
        (est.value.item(), g.iter().map(|g| g.item()).collect())
    };
    for steps in [0, 2] {
        let at = [0.3, -0.2];
        let (_, ad) = elbo(&at, steps);
        let h = 1e-5;
        for i in 0..2 {
            let (mut up, mut down) = (at, at);
            up[i] += h;
            down[i] -= h;
            let fd = (elbo(&up, steps).0 - elbo(&down, steps).0) / (2.0 * h);
            assert!((ad[i] - fd).abs() / (fd.abs() + 1e-12) < 1e-4, "T={steps} {}: {} vs {fd}", names[i], ad[i]);
        }
    }
}

#[test]
fn training_loss_falls_epoch_by_epoch() {
    let data = pattern_dataset(1000, 2, 0.1, 11).unwrap();
    let model = VaeModel::new(64, 2, vec![32, 32]);
    for seed in 0..3 {
        let config = VaeTrainConfig { t_train: 5, epochs: 5, seed, ..Default::default() };
        let report = train_vae(&model, &data, &config).unwrap();
        let per_epoch = report.losses.len() / 5;
        let medians: Vec<f64> = report.losses.chunks(per_epoch).map(|c| median(c.to_vec())).collect();
        assert!(medians.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {medians:?}");
    }
}

#[test]
fn posterior_sums_to_one() {
    let model = VaeModel::conditional(64, 2, vec![8, 8], 3);
    let params = model.init_params(0);
    let data = pattern_dataset(12, 3, 0.2, 5).unwrap();
    for c in bayes_classify(&model, &params, &data, 5, 3, 0.01, 0).unwrap() {
        assert!((c.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(c.posterior.iter().all(|p| *p >= 0.0));
    }
}

#[test]
fn label_blind_model_gives_uniform_posterior_and_lowest_label() {
    let model = VaeModel::conditional(64, 2, vec![8, 8], 3);
    let mut params = model.init_params(2);
    for name in ["enc_mu.in1.w", "enc_sigma.in1.w", "dec.in1.w"] {
        zero(&mut params, name);
    }
    let data = pattern_dataset(9, 3, 0.2, 6).unwrap();
    for c in bayes_classify(&model, &params, &data, 5, 2, 0.01, 1).unwrap() {
        assert!(c.posterior.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12), "{:?}", c.posterior);
        assert_eq!(c.label, 0);
    }
}

#[test]
fn one_hot_class_prior_decides() {
    let mut model = VaeModel::conditional(64, 2, vec![8, 8], 3);
    model.class_prior = vec![0.0, 0.0, 1.0];
    let params = model.init_params(0);
    let data = pattern_dataset(9, 3, 0.2, 7).unwrap();
    for c in bayes_classify(&model, &params, &data, 5, 0, 0.0, 0).unwrap() {
        assert_eq!(c.label, 2);
        assert_eq!(c.posterior, vec![0.0, 0.0, 1.0]);
    }
}

#[test]
fn zero_step_size_refinement_leaves_predictions_unchanged() {
    let model = VaeModel::conditional(64, 2, vec![8, 8], 2);
    let params = model.init_params(3);
    let data = pattern_dataset(10, 2, 0.3, 8).unwrap();
    let plain = bayes_classify(&model, &params, &data, 5, 0, 0.0, 4).unwrap();
    let null = bayes_classify(&model, &params, &data, 5, 10, 0.0, 4).unwrap();
    for (a, b) in plain.iter().zip(&null) {
        assert_eq!(a.label, b.label);
        let bits = |c: &[f64]| c.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.posterior), bits(&b.posterior));
    }
}

#[test]
fn classification_leaves_parameters_untouched() {
    let model = VaeModel::conditional(64, 2, vec![8, 8], 2);
    let params = model.init_params(4);
    let before = params.clone();
    let data = pattern_dataset(4, 2, 0.3, 9).unwrap();
    bayes_classify(&model, &params, &data, 5, 10, 0.05, 0).unwrap();
    assert_eq!(params, before);
}

#[test]
fn classification_errors() {
    let model = VaeModel::conditional(64, 2, vec![8], 2);
    let params = model.init_params(0);
    let data = pattern_dataset(4, 2, 0.3, 9).unwrap();
    assert!(bayes_classify(&model, &params, &data, 0, 0, 0.0, 0).is_err());
    let plain = VaeModel::new(64, 2, vec![8]);
    assert!(bayes_classify(&plain, &plain.init_params(0), &data, 5, 0, 0.0, 0).is_err());
}

#[test]
fn disjoint_patterns_are_classified() {
    let train = pattern_dataset(2000, 2, 0.05, 20).unwrap();
    let test = pattern_dataset(200, 2, 0.05, 21).unwrap();
    let model = VaeModel::conditional(64, 2, vec![32, 32], 2);
    let report = train_cvae(&model, &train, &VaeTrainConfig { epochs: 10, seed: 0, ..Default::default() }).unwrap();
    let acc = accuracy(&model, &report.final_params, &test, 0, report.final_eta, 0);
    assert!(acc >= 0.95, "{acc}");
}

/// `z ~ N(0, 1)`, `x | z ~ N(w z + b, s²)` with one observed `x`.
struct LinearGaussian {
    x: f64,
    w: f64,
    b: f64,
    s: f64,
}

impl LinearGaussian {
    fn log_marginal(&self) -> f64 {
        let v = self.w * self.w + self.s * self.s;
        -0.5 * (LN_2PI + v.ln() + (self.x - self.b).powi(2) / v)
    }

    fn posterior(&self) -> (f64, f64) {
        let prec = 1.0 + self.w * self.w / (self.s * self.s);
        ((self.w * (self.x - self.b) / (self.s * self.s)) / prec, prec.recip().sqrt())
    }

    /// `E_q[log p(x, z)] + H[q]` for `q = N(m, sd²)`.
    fn elbo(&self, m: f64, sd: f64) -> f64 {
        let s2 = self.s * self.s;
        let e_prior = -0.5 * (LN_2PI + m * m + sd * sd);
        let r = self.x - self.b - self.w * m;
        let e_lik = -0.5 * (LN_2PI + s2.ln() + (r * r + self.w * self.w * sd * sd) / s2);
        e_prior + e_lik + 0.5 * (LN_2PI + 1.0) + sd.ln()
    }
}

impl<'t> TargetDensity<'t> for LinearGaussian {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, z: Expr<'t>) -> vis_core::Result<Expr<'t>> {
        batch_dims(z, 1)?;
        let prior = (z.square() * -0.5 - 0.5 * LN_2PI).sum_axis(1);
        let r = (z * -self.w + (self.x - self.b)).sum_axis(1);
        Ok(prior + r.square() / (-2.0 * self.s * self.s) - 0.5 * (LN_2PI + (self.s * self.s).ln()))
    }
}

fn toy() -> LinearGaussian {
    LinearGaussian { x: 1.3, w: 1.5, b: -0.2, s: 0.7 }
}

fn iw(target: &LinearGaussian, m: f64, sd: f64, k: usize, seed: u64) -> f64 {
    let tape = Tape::new();
    let guide = Guide::amortized(tape.constant(vec![m], Shape::vector(1)), tape.constant(vec![sd], Shape::vector(1)));
    let r = refinement(&tape, 0, 0.01, AdMode::Fast);
    importance_weighted_estimate(&guide, &r, target, 1, k, &mut Draws::new(seed)).unwrap()
}

#[test]
fn single_draw_estimate_is_the_elbo_in_expectation() {
    let target = toy();
    let (m, sd) = (0.2, 0.9);
    let reps: Vec<f64> = (0..4000).map(|s| iw(&target, m, sd, 1, s)).collect();
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let se = (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let exact = target.elbo(m, sd);
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} ± {se}");
}

#[test]
fn estimate_grows_with_importance_draws() {
    let target = toy();
    // under-dispersed guide at the posterior mean
    let (m, sd) = target.posterior();
    let medians: Vec<f64> =
        [1, 5, 25].iter().map(|&k| median((0..20).map(|s| iw(&target, m, 0.5 * sd, k, s)).collect())).collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
    assert!(medians[2] <= target.log_marginal() + 1e-3);
}

#[test]
fn exact_posterior_guide_recovers_log_marginal() {
    let target = toy();
    let (m, sd) = target.posterior();
    for k in [1, 5, 50] {
        assert!((iw(&target, m, sd, k, 7) - target.log_marginal()).abs() < 1e-10);
    }
}

#[test]
fn test_log_likelihood_is_finite_and_validates() {
    let model = VaeModel::new(64, 2, vec![8, 8]);
    let params = model.init_params(0);
    let data = pattern_dataset(5, 2, 0.1, 2).unwrap();
    let ll = test_log_likelihood(&model, &params, &data, 5, 2, 0.01, 0).unwrap();
    assert!(ll.is_finite() && ll < 0.0);
    assert!(test_log_likelihood(&model, &params, &data, 0, 0, 0.01, 0).is_err());
}
