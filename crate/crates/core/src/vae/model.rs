//! VAE and conditional VAE with Bernoulli decoders and amortized Gaussian
//! guides refined in latent space.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vis_autodiff::{Expr, Shape, Tape};

use crate::samplers::{normal_draws, sgld_step, AdMode, SamplerConfig, SamplerKind};
use crate::targets::{batch_dims, TargetDensity};
use crate::vae::mlp::Mlp;
use crate::vis::{
    fit, refined_elbo, Bound, Draws, ElboEstimate, EntropyMode, Evaluation, FitSettings, Guide, Objective,
    ParamStore, Refinement, TrainReport,
};
use crate::{Result, VisError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Binary data set of `n` row-major vectors of length `dim`, optionally
/// labeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub x: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `idx` gathered into a new data set.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            x: idx.iter().flat_map(|&i| self.row(i).to_vec()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            classes: self.classes,
        }
    }

    fn check_binary(&self) -> Result<()> {
        if self.x.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(VisError::arg("data must be binary (0 or 1)"));
        }
        Ok(())
    }
}

/// `Σ_j x_j l_j - softplus(l_j)` per row: the Bernoulli log-likelihood of
/// `x` under logits `l`.
pub fn bernoulli_log_likelihood<'t>(logits: Expr<'t>, x: Expr<'t>) -> Expr<'t> {
    (x * logits - logits.softplus()).sum_axis(1)
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        out[i * classes + y] = 1.0;
    }
    out
}

/// Encoder `q(z | x[, y])`, decoder `p(x | z[, y])` and prior `N(0, I)`.
/// With `classes > 0` the label enters both networks one-hot encoded.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub classes: usize,
    /// Class prior `p(y)`; empty for an unconditional model.
    pub class_prior: Vec<f64>,
    pub enc_mu: Mlp,
    pub enc_sigma: Mlp,
    pub decoder: Mlp,
}

impl VaeModel {
    pub fn new(data_dim: usize, latent_dim: usize, hidden: Vec<usize>) -> Self {
        Self::build(data_dim, latent_dim, hidden, 0)
    }

    /// Conditional model with a uniform class prior.
    pub fn conditional(data_dim: usize, latent_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self::build(data_dim, latent_dim, hidden, classes)
    }

    fn build(data_dim: usize, latent_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        let with_label = |first: usize| if classes > 0 { vec![first, classes] } else { vec![first] };
        VaeModel {
            data_dim,
            latent_dim,
            classes,
            class_prior: vec![1.0 / classes.max(1) as f64; classes],
            enc_mu: Mlp::new("enc_mu", with_label(data_dim), hidden.clone(), latent_dim),
            enc_sigma: Mlp::new("enc_sigma", with_label(data_dim), hidden.clone(), latent_dim),
            decoder: Mlp::new("dec", with_label(latent_dim), hidden, data_dim),
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(5);
        let mut store = ParamStore::new();
        self.enc_mu.init(&mut store, &mut rng);
        self.enc_sigma.init(&mut store, &mut rng);
        self.decoder.init(&mut store, &mut rng);
        store
    }

    fn blocks<'t>(&self, first: Expr<'t>, y: Option<Expr<'t>>) -> Result<Vec<Expr<'t>>> {
        match (self.classes, y) {
            (0, None) => Ok(vec![first]),
            (c, Some(y)) if c > 0 => Ok(vec![first, y]),
            _ => Err(VisError::config("labels must be given exactly for conditional models")),
        }
    }

    /// Guide location and scale (`softplus`), each `[B, d]`.
    pub fn encode<'t>(&self, p: &Bound<'t>, x: Expr<'t>, y: Option<Expr<'t>>) -> Result<(Expr<'t>, Expr<'t>)> {
        let inputs = self.blocks(x, y)?;
        let loc = self.enc_mu.forward(p, &inputs)?;
        let scale = self.enc_sigma.forward(p, &inputs)?.softplus() + 1e-6;
        Ok((loc, scale))
    }

    /// Decoder logits `[B, D]`.
    pub fn decode_logits<'t>(&self, p: &Bound<'t>, z: Expr<'t>, y: Option<Expr<'t>>) -> Result<Expr<'t>> {
        self.decoder.forward(p, &self.blocks(z, y)?)
    }
}

/// `log p(x_b, z_b [| y_b])` for a fixed batch, as a density over `z`.
pub struct DecoderTarget<'a, 't> {
    pub model: &'a VaeModel,
    pub params: &'a Bound<'t>,
    pub x: Expr<'t>,
    pub y: Option<Expr<'t>>,
}

impl<'t> DecoderTarget<'_, 't> {
    pub fn log_likelihood(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        let logits = self.model.decode_logits(self.params, z, self.y)?;
        Ok(bernoulli_log_likelihood(logits, self.x))
    }
}

impl<'t> TargetDensity<'t> for DecoderTarget<'_, 't> {
    fn dim(&self) -> usize {
        self.model.latent_dim
    }

    fn log_density(&self, z: Expr<'t>) -> Result<Expr<'t>> {
        batch_dims(z, self.model.latent_dim)?;
        let prior = (z.square() * -0.5 - HALF_LN_2PI).sum_axis(1);
        Ok(self.log_likelihood(z)? + prior)
    }
}

fn batch_exprs<'t>(tape: &'t Tape, model: &VaeModel, data: &Dataset) -> Result<(Expr<'t>, Option<Expr<'t>>)> {
    data.check_binary()?;
    let n = data.len();
    let x = tape.constant(data.x.clone(), Shape::matrix(n, data.dim));
    let y = match (&data.labels, model.classes) {
        (_, 0) => None,
        (Some(l), c) => Some(tape.constant(one_hot(l, c), Shape::matrix(n, c))),
        (None, _) => return Err(VisError::config("conditional model needs labeled data")),
    };
    Ok((x, y))
}

/// Mean per-example refined ELBO of a batch.
pub fn vae_relbo<'t>(
    model: &VaeModel,
    params: &Bound<'t>,
    batch: &Dataset,
    refinement: &Refinement<'t>,
    draws: &mut Draws,
) -> Result<ElboEstimate<'t>> {
    let tape = refinement.eta.tape();
    let (x, y) = batch_exprs(tape, model, batch)?;
    let (loc, scale) = model.encode(params, x, y)?;
    let target = DecoderTarget { model, params, x, y };
    refined_elbo(&Guide::amortized(loc, scale), refinement, &target, batch.len(), draws)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeTrainConfig {
    pub t_train: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eta0: f64,
    pub entropy: EntropyMode,
    pub mode: AdMode,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            t_train: 0,
            epochs: 10,
            batch_size: 50,
            lr: 0.01,
            eta0: 5e-5,
            entropy: EntropyMode::Mc,
            mode: AdMode::Full,
            seed: 0,
        }
    }
}

/// Negative rELBO over minibatches, visited in order and cycled, one per
/// evaluation.
pub struct VaeObjective<'a> {
    model: &'a VaeModel,
    batches: Vec<Dataset>,
    next: Cell<usize>,
    sampler: SamplerConfig,
    entropy: EntropyMode,
}

impl<'a> VaeObjective<'a> {
    /// Shuffled minibatches for `config.epochs` epochs of `data`.
    pub fn new(model: &'a VaeModel, data: &Dataset, config: &VaeTrainConfig) -> Result<Self> {
        data.check_binary()?;
        if config.epochs == 0 || config.batch_size == 0 {
            return Err(VisError::arg("epochs and batch size must be positive"));
        }
        Ok(VaeObjective {
            model,
            batches: shuffled_batches(data, config.batch_size, config.epochs, config.seed),
            next: Cell::new(0),
            sampler: SamplerConfig::new(SamplerKind::Sgld, config.t_train),
            entropy: config.entropy,
        })
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }
}

impl Objective for VaeObjective<'_> {
    fn evaluate<'t>(
        &self,
        _tape: &'t Tape,
        params: &Bound<'t>,
        eta: Expr<'t>,
        mode: AdMode,
        draws: &mut Draws,
    ) -> Result<Evaluation<'t>> {
        let i = self.next.get();
        self.next.set(i + 1);
        let batch = &self.batches[i % self.batches.len()];
        let refinement = Refinement { sampler: self.sampler, eta, entropy: self.entropy, mode };
        let est = vae_relbo(self.model, params, batch, &refinement, draws)?;
        Ok(Evaluation { loss: -est.value, monitor: None })
    }
}

fn shuffled_batches(data: &Dataset, batch_size: usize, epochs: usize, seed: u64) -> Vec<Dataset> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(6);
    let mut out = Vec::new();
    for _ in 0..epochs {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(batch_size) {
            out.push(data.subset(chunk));
        }
    }
    out
}

/// Trains a (conditional) VAE by minibatch Adam on the negative rELBO with
/// an SGLD chain of `t_train` steps in latent space. One loss entry per
/// minibatch.
pub fn train_vae(model: &VaeModel, data: &Dataset, config: &VaeTrainConfig) -> Result<TrainReport> {
    let objective = VaeObjective::new(model, data, config)?;
    let settings = FitSettings {
        iterations: objective.n_batches(),
        lr: config.lr,
        eta_lr: config.lr,
        eta0: config.eta0,
        mode: config.mode,
        seed: config.seed,
    };
    fit(&objective, model.init_params(config.seed), &settings)
}

/// [`train_vae`] for a conditional model on labeled data.
pub fn train_cvae(model: &VaeModel, data: &Dataset, config: &VaeTrainConfig) -> Result<TrainReport> {
    if model.classes == 0 || data.labels.is_none() {
        return Err(VisError::config("train_cvae needs a conditional model and labeled data"));
    }
    train_vae(model, data, config)
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

fn repeat_rows(data: &Dataset, k: usize) -> Dataset {
    let idx: Vec<usize> = (0..data.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    data.subset(&idx)
}

/// `mean_x log (1/K Σ_k exp w_k)` over the per-sample integrand `w` of the
/// refined ELBO, with the `rows · K` draws laid out as `K` consecutive
/// rows per example.
pub fn importance_weighted_estimate<'t>(
    guide: &Guide<'t>,
    refinement: &Refinement<'t>,
    target: &dyn TargetDensity<'t>,
    rows: usize,
    k: usize,
    draws: &mut Draws,
) -> Result<f64> {
    if k == 0 || rows == 0 {
        return Err(VisError::arg("importance estimate needs at least one row and one draw"));
    }
    let est = refined_elbo(guide, refinement, target, rows * k, draws)?;
    let w = est.per_sample.value();
    Ok(w.chunks(k).map(log_mean_exp).sum::<f64>() / rows as f64)
}

/// Importance-weighted test log-likelihood with `n_importance` draws per
/// example from the guide refined by `t_test` SGLD steps, weighted by the
/// VIS-MC density of the chain.
pub fn test_log_likelihood(
    model: &VaeModel,
    params: &ParamStore,
    data: &Dataset,
    n_importance: usize,
    t_test: usize,
    eta: f64,
    seed: u64,
) -> Result<f64> {
    if n_importance == 0 {
        return Err(VisError::arg("n_importance must be at least 1"));
    }
    let rep = repeat_rows(data, n_importance);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let (x, y) = batch_exprs(&tape, model, &rep)?;
    let (loc, scale) = model.encode(&bound, x, y)?;
    let target = DecoderTarget { model, params: &bound, x, y };
    let refinement = Refinement {
        sampler: SamplerConfig::new(SamplerKind::Sgld, t_test),
        eta: tape.scalar(eta),
        entropy: EntropyMode::Mc,
        mode: AdMode::Fast,
    };
    let guide = Guide::amortized(loc, scale);
    importance_weighted_estimate(&guide, &refinement, &target, data.len(), n_importance, &mut Draws::new(seed))
}

/// Classification of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub label: usize,
    pub posterior: Vec<f64>,
}

/// Bayes-rule classification with a conditional model:
/// `p(y | x) ∝ p(y) · 1/K Σ_k p(x | z_k, y)`, `z_k ~ q(z | x, y)` refined by
/// `t_test` SGLD steps at step size `eta`. Parameters are held fixed;
/// only the latent draws move. Ties go to the lowest label.
pub fn bayes_classify(
    model: &VaeModel,
    params: &ParamStore,
    x: &Dataset,
    k: usize,
    t_test: usize,
    eta: f64,
    seed: u64,
) -> Result<Vec<Classification>> {
    let c = model.classes;
    if c == 0 {
        return Err(VisError::config("classification needs a conditional model"));
    }
    if k == 0 {
        return Err(VisError::arg("K must be at least 1"));
    }
    if model.class_prior.len() != c {
        return Err(VisError::config("class prior length does not match the class count"));
    }
    let n = x.len();
    // rows ordered (example, class, draw)
    let idx: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, c * k)).collect();
    let labels: Vec<usize> = (0..n * c * k).map(|r| (r / k) % c).collect();
    let mut rep = x.subset(&idx);
    rep.labels = Some(labels);
    rep.classes = c;

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let (xe, ye) = batch_exprs(&tape, model, &rep)?;
    let (loc, scale) = model.encode(&bound, xe, ye)?;
    let target = DecoderTarget { model, params: &bound, x: xe, y: ye };
    // every class sees the same guide and chain noise
    let d = model.latent_dim;
    let shared = |rng: &mut ChaCha8Rng| {
        let e = normal_draws(rng, n * k * d);
        let rows: Vec<f64> = (0..n * c * k)
            .flat_map(|r| {
                let (i, j) = (r / (c * k), r % k);
                e[(i * k + j) * d..(i * k + j + 1) * d].to_vec()
            })
            .collect();
        tape.constant(rows, Shape::matrix(n * c * k, d))
    };
    let mut draws = Draws::new(seed);
    let mut z = loc + scale * shared(&mut draws.guide);
    let eta = tape.scalar(eta);
    for _ in 0..t_test {
        z = sgld_step(z, &target, eta, shared(&mut draws.chain), AdMode::Fast)?;
    }
    let ll = target.log_likelihood(z)?.value();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let scores: Vec<f64> = (0..c)
            .map(|y| {
                let start = (i * c + y) * k;
                model.class_prior[y].ln() + log_mean_exp(&ll[start..start + k])
            })
            .collect();
        let norm = log_mean_exp(&scores) + (c as f64).ln();
        let posterior: Vec<f64> = scores.iter().map(|s| (s - norm).exp()).collect();
        let label = crate::statespace::metrics::argmax(&posterior);
        out.push(Classification { label, posterior });
    }
    Ok(out)
}
