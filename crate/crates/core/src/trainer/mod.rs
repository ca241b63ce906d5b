//! Alternating discriminator/generator optimization.

mod config;
mod optim;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use config::{Conditioning, RunConfig};
pub use optim::{adam_update, ema_update, Adam, AdamHyper, Moments};

use crate::error::{Error, Result};
use crate::losses::{
    acgan_ce, cross_entropy, d2dce_embedding_grads, d2dce_per_sample_graph, discriminator_loss,
    false_negative_mask, generator_loss, similarity_nodes, target_probabilities,
    two_c_embedding_grads, two_c_from_similarities, D2dceParams, Denominator, EmbeddingBatch,
    SimilarityBundle,
};
use crate::math;
use crate::metrics::sliced_w1;
use crate::models::{
    Discriminator, DiscriminatorOutput, DiscriminatorSpec, Generator, GeneratorSpec, Heads,
    ParamStore,
};
use crate::tensor::{Graph, RealArray, TensorError, Var};

/// Labelled data the trainer draws real batches from.
pub trait Dataset {
    fn dim(&self) -> usize;
    fn classes(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<(RealArray, Vec<usize>)>;
}

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    GeneratorInit = 0,
    DiscriminatorInit = 1,
    Data = 2,
    Noise = 3,
    Mask = 4,
    Eval = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Outcome of one discriminator update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DStepStats {
    pub adv_loss: f64,
    pub cond_loss: f64,
    pub twin_loss: f64,
    pub mean_raw_feature_norm: f64,
    pub classifier_grad_norm: f64,
    pub mean_target_probability: f64,
    pub max_embedding_grad_norm: f64,
    pub min_embedding_norm: f64,
    pub max_embedding_norm: f64,
}

/// Outcome of one generator update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GStepStats {
    pub adv_loss: f64,
    pub cond_loss: f64,
}

/// One line of the training log, aggregated over a logging interval.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub d_steps: usize,
    pub d_adv_loss: f64,
    pub d_cond_loss: f64,
    pub g_adv_loss: f64,
    pub g_cond_loss: f64,
    pub mean_raw_feature_norm: f64,
    pub mean_classifier_grad_norm: f64,
    pub mean_target_probability: f64,
    /// Largest per-sample conditioning-loss gradient norm with respect to a
    /// unit-norm embedding (zero for losses without one).
    pub max_embedding_grad_norm: f64,
    /// Extremes of the norms of the vectors the classifier consumes.
    pub min_embedding_norm: f64,
    pub max_embedding_norm: f64,
    /// Sliced W1 between generated and real evaluation samples.
    pub w1: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 13] = [
        "iter",
        "d_steps",
        "d_adv_loss",
        "d_cond_loss",
        "g_adv_loss",
        "g_cond_loss",
        "mean_raw_feature_norm",
        "mean_classifier_grad_norm",
        "mean_target_probability",
        "max_embedding_grad_norm",
        "min_embedding_norm",
        "max_embedding_norm",
        "w1",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.iter as f64,
            self.d_steps as f64,
            self.d_adv_loss,
            self.d_cond_loss,
            self.g_adv_loss,
            self.g_cond_loss,
            self.mean_raw_feature_norm,
            self.mean_classifier_grad_norm,
            self.mean_target_probability,
            self.max_embedding_grad_norm,
            self.min_embedding_norm,
            self.max_embedding_norm,
            self.w1,
        ]
    }
}

#[derive(Clone, Debug, Default)]
struct Accumulator {
    d: Vec<DStepStats>,
    g: Vec<GStepStats>,
}

impl Accumulator {
    fn mean<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
        if items.is_empty() {
            0.0
        } else {
            items.iter().map(f).sum::<f64>() / items.len() as f64
        }
    }

    fn finish(&mut self, iter: usize, d_steps: usize, w1: f64) -> MetricsRow {
        let d = &self.d;
        let row = MetricsRow {
            iter,
            d_steps,
            d_adv_loss: Self::mean(d, |s| s.adv_loss),
            d_cond_loss: Self::mean(d, |s| s.cond_loss),
            g_adv_loss: Self::mean(&self.g, |s| s.adv_loss),
            g_cond_loss: Self::mean(&self.g, |s| s.cond_loss),
            mean_raw_feature_norm: Self::mean(d, |s| s.mean_raw_feature_norm),
            mean_classifier_grad_norm: Self::mean(d, |s| s.classifier_grad_norm),
            mean_target_probability: Self::mean(d, |s| s.mean_target_probability),
            max_embedding_grad_norm: d
                .iter()
                .map(|s| s.max_embedding_grad_norm)
                .fold(0.0, f64::max),
            min_embedding_norm: d
                .iter()
                .map(|s| s.min_embedding_norm)
                .fold(f64::INFINITY, f64::min),
            max_embedding_norm: d.iter().map(|s| s.max_embedding_norm).fold(0.0, f64::max),
            w1,
        };
        self.d.clear();
        self.g.clear();
        row
    }
}

/// Networks, optimizer state and random streams of a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub ema: Option<ParamStore>,
    /// Completed generator updates.
    pub iter: usize,
    /// Completed discriminator updates.
    pub d_steps: usize,
    d_opt: Adam,
    g_opt: Adam,
    d2dce: D2dceParams,
    data_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    mask_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    last_d: DStepStats,
}

fn heads_for(config: &RunConfig) -> Heads {
    Heads {
        classifier: config.conditioning == Conditioning::Acgan,
        projection: config.conditioning == Conditioning::Projection,
        twin: config.tac_enabled,
    }
}

impl TrainState {
    pub fn new<D: Dataset + ?Sized>(config: RunConfig, data: &D) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(
            GeneratorSpec {
                z_dim: config.z_dim,
                classes: data.classes(),
                label_embed_dim: config.label_embed_dim,
                hidden_width: config.g_hidden_width,
                hidden_layers: config.g_hidden_layers,
                output_dim: data.dim(),
                slope: config.leaky_slope,
            },
            &mut stream_rng(config.seed, Stream::GeneratorInit),
        )?;
        let discriminator = Discriminator::new(
            DiscriminatorSpec {
                input_dim: data.dim(),
                classes: data.classes(),
                hidden_width: config.d_hidden_width,
                hidden_layers: config.d_hidden_layers,
                embed_dim: config.embed_dim,
                slope: config.leaky_slope,
                heads: heads_for(&config),
            },
            &mut stream_rng(config.seed, Stream::DiscriminatorInit),
        )?;
        let hyper = |lr| AdamHyper {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
        };
        Ok(Self {
            d_opt: Adam::new(hyper(config.lr_d), &discriminator.params),
            g_opt: Adam::new(hyper(config.lr_g), &generator.params),
            ema: config.ema_enabled.then(|| generator.params.clone()),
            d2dce: config.d2dce_params()?,
            data_rng: stream_rng(config.seed, Stream::Data),
            noise_rng: stream_rng(config.seed, Stream::Noise),
            mask_rng: stream_rng(config.seed, Stream::Mask),
            eval_rng: stream_rng(config.seed, Stream::Eval),
            generator,
            discriminator,
            iter: 0,
            d_steps: 0,
            last_d: DStepStats::default(),
            config,
        })
    }

    /// Weights used for evaluation: the EMA copy when enabled.
    pub fn sampler_params(&self) -> &ParamStore {
        self.ema.as_ref().unwrap_or(&self.generator.params)
    }

    /// Latent codes and uniformly drawn fake labels.
    fn draw_noise(&mut self, n: usize) -> (RealArray, Vec<usize>) {
        noise(
            &mut self.noise_rng,
            n,
            self.config.z_dim,
            self.generator.spec.classes,
        )
    }

    /// Generates samples for the given labels with the evaluation weights.
    pub fn generate<R: Rng + ?Sized>(&self, y: &[usize], rng: &mut R) -> Result<RealArray> {
        let z = normal_matrix(rng, y.len(), self.config.z_dim);
        self.generator.sample(self.sampler_params(), &z, y)
    }

    /// Sliced W1 between fresh real data and generated samples with matching
    /// labels, drawn from the evaluation stream.
    pub fn evaluate_w1<D: Dataset + ?Sized>(&mut self, data: &D) -> Result<f64> {
        let mut rng = self.eval_rng.clone();
        let (real, y) = data.sample(self.config.eval_samples, &mut rng)?;
        let fake = self.generate(&y, &mut rng)?;
        self.eval_rng = rng;
        sliced_w1(&real, &fake)
    }

    fn diagnostic(&self, err: &Error) -> String {
        let s = &self.last_d;
        format!(
            "{err}; last discriminator step: adv={:.6e} cond={:.6e} mean|F(x)|={:.6e} max|grad|={:.6e}",
            s.adv_loss, s.cond_loss, s.mean_raw_feature_norm, s.max_embedding_grad_norm
        )
    }

    fn wrap(&self, err: Error) -> Error {
        match err {
            Error::Tensor(TensorError::NonFinite { .. }) => Error::Diverged {
                iter: self.iter,
                detail: self.diagnostic(&err),
            },
            other => other,
        }
    }
}

pub(crate) fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> RealArray {
    let data = (0..r * c)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    RealArray::matrix(r, c, data).expect("finite normal draws")
}

fn noise<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    z_dim: usize,
    classes: usize,
) -> (RealArray, Vec<usize>) {
    let z = normal_matrix(rng, n, z_dim);
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (z, y)
}

struct CondTerm {
    loss: Option<Var>,
    target_probability: f64,
    max_grad_norm: f64,
}

/// Records the configured conditioning loss on one discriminator output.
fn conditioning_term(
    g: &mut Graph,
    kind: Conditioning,
    out: &DiscriminatorOutput,
    y: &[usize],
    p: &D2dceParams,
    mask_rng: &mut ChaCha8Rng,
    with_stats: bool,
) -> Result<CondTerm> {
    let mut term = CondTerm {
        loss: None,
        target_probability: 0.0,
        max_grad_norm: 0.0,
    };
    let ce_term = |g: &mut Graph, logits: Var, term: &mut CondTerm| -> Result<()> {
        term.loss = Some(cross_entropy(g, logits, y)?);
        if with_stats {
            let (_, probs) = acgan_ce(g.value(logits), y)?;
            let t = target_probabilities(&probs, y);
            term.target_probability = t.iter().sum::<f64>() / t.len() as f64;
        }
        Ok(())
    };
    let unit_batch = |g: &Graph| {
        EmbeddingBatch::new(
            g.value(out.embeddings).clone(),
            y.to_vec(),
            g.value(out.proxies).clone(),
        )
    };
    match kind {
        Conditioning::None | Conditioning::Projection => {}
        Conditioning::Acgan => {
            let logits = out.class_logits.expect("classifier head present");
            ce_term(g, logits, &mut term)?;
        }
        Conditioning::NormalizedCe => {
            let vt = g.transpose(out.proxies)?;
            let sims = g.matmul(out.embeddings, vt)?;
            let logits = g.scale(sims, 1.0 / p.tau)?;
            ce_term(g, logits, &mut term)?;
        }
        Conditioning::D2dce => {
            let mask = false_negative_mask(y, p.mask_drop_p, mask_rng)?;
            let (s_pos, s_neg) = similarity_nodes(g, out.embeddings, out.proxies, y)?;
            let per = d2dce_per_sample_graph(g, s_pos, s_neg, &mask, p)?;
            term.loss = Some(g.mean(per)?);
            if with_stats {
                let per = g.value(per).data();
                term.target_probability =
                    per.iter().map(|&l| math::exp(-l)).sum::<f64>() / per.len() as f64;
                let batch = unit_batch(g)?;
                let bundle = SimilarityBundle::from_batch(&batch, mask)?;
                let grads = d2dce_embedding_grads(&batch, &bundle, p);
                term.max_grad_norm = grads.per_sample_norms().into_iter().fold(0.0, f64::max);
            }
        }
        Conditioning::TwoC => {
            let (s_pos, s_neg) = similarity_nodes(g, out.embeddings, out.proxies, y)?;
            let loss = two_c_from_similarities(g, s_pos, s_neg, y, p.tau, Denominator::AllOthers)?;
            term.loss = Some(loss);
            if with_stats {
                term.target_probability = math::exp(-g.value(loss).item());
                let batch = unit_batch(g)?;
                let bundle =
                    SimilarityBundle::from_batch(&batch, crate::losses::exact_negative_mask(y))?;
                let grads = two_c_embedding_grads(&batch, &bundle, p.tau);
                term.max_grad_norm = grads.per_sample_norms().into_iter().fold(0.0, f64::max);
            }
        }
    }
    Ok(term)
}

fn collect_grads(g: &Graph, root: Var, vars: &[Var]) -> Result<Vec<RealArray>> {
    let grads = g.backward(root)?;
    Ok(vars
        .iter()
        .map(|&v| grads.get_or_zeros(v, g.value(v)))
        .collect())
}

fn add_weighted(g: &mut Graph, total: Var, term: Var, k: f64) -> Result<Var> {
    let w = g.scale(term, k)?;
    Ok(g.add(total, w)?)
}

/// One discriminator update on a fresh real batch and a fresh fake batch.
pub fn train_step_discriminator<D: Dataset + ?Sized>(
    state: &mut TrainState,
    data: &D,
) -> Result<DStepStats> {
    d_step(state, data).map_err(|e| state.wrap(e))
}

fn d_step<D: Dataset + ?Sized>(state: &mut TrainState, data: &D) -> Result<DStepStats> {
    let n = state.config.batch_size;
    let (x_real, y_real) = data.sample(n, &mut state.data_rng)?;
    let (z, y_fake) = state.draw_noise(n);
    let x_fake = state
        .generator
        .sample(&state.generator.params, &z, &y_fake)?;

    let cfg = &state.config;
    let disc = &state.discriminator;
    let mut g = Graph::new();
    let vars = disc.params.bind(&mut g);
    let xr = g.leaf(x_real);
    let xf = g.leaf(x_fake);
    let real = disc.forward(&mut g, &vars, xr, &y_real)?;
    let fake = disc.forward(&mut g, &vars, xf, &y_fake)?;
    let adv = discriminator_loss(&mut g, cfg.adversarial, real.adv_logits, fake.adv_logits)?;
    let cond = conditioning_term(
        &mut g,
        cfg.conditioning,
        &real,
        &y_real,
        &state.d2dce,
        &mut state.mask_rng,
        true,
    )?;
    let mut total = adv;
    let mut stats = DStepStats {
        adv_loss: g.value(adv).item(),
        mean_target_probability: cond.target_probability,
        max_embedding_grad_norm: cond.max_grad_norm,
        ..DStepStats::default()
    };
    if let Some(c) = cond.loss {
        stats.cond_loss = g.value(c).item();
        total = add_weighted(&mut g, total, c, cfg.lambda)?;
    }
    if cfg.tac_enabled {
        let twin = cross_entropy(
            &mut g,
            fake.twin_logits.expect("twin head present"),
            &y_fake,
        )?;
        stats.twin_loss = g.value(twin).item();
        total = add_weighted(&mut g, total, twin, cfg.lambda)?;
    }
    let grads = collect_grads(&g, total, &vars)?;

    let norms = &real.raw_feature_norms;
    stats.mean_raw_feature_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    let classifier_norms = grads[disc.classifier_param()].row_norms();
    stats.classifier_grad_norm = if cfg.lambda > 0.0 {
        classifier_norms.iter().sum::<f64>() / classifier_norms.len() as f64 / cfg.lambda
    } else {
        0.0
    };
    let input_norms = if cfg.conditioning == Conditioning::Acgan {
        norms.clone()
    } else {
        g.value(real.embeddings).row_norms()
    };
    stats.min_embedding_norm = input_norms.iter().copied().fold(f64::INFINITY, f64::min);
    stats.max_embedding_norm = input_norms.iter().copied().fold(0.0, f64::max);

    state.d_opt.step(&mut state.discriminator.params, &grads)?;
    state.d_steps += 1;
    state.last_d = stats.clone();
    Ok(stats)
}

/// One generator update; the conditioning loss sees generated samples only.
pub fn train_step_generator(state: &mut TrainState) -> Result<GStepStats> {
    g_step(state).map_err(|e| state.wrap(e))
}

fn g_step(state: &mut TrainState) -> Result<GStepStats> {
    let n = state.config.batch_size;
    let (z, y) = state.draw_noise(n);
    let cfg = &state.config;
    let gen = &state.generator;
    let disc = &state.discriminator;
    let mut g = Graph::new();
    let gvars = gen.params.bind(&mut g);
    let dvars = disc.params.bind(&mut g);
    let zv = g.leaf(z);
    let x = gen.forward(&mut g, &gvars, zv, &y)?;
    let out = disc.forward(&mut g, &dvars, x, &y)?;
    let adv = generator_loss(&mut g, cfg.adversarial, out.adv_logits)?;
    let cond = conditioning_term(
        &mut g,
        cfg.conditioning,
        &out,
        &y,
        &state.d2dce,
        &mut state.mask_rng,
        false,
    )?;
    let mut stats = GStepStats {
        adv_loss: g.value(adv).item(),
        cond_loss: 0.0,
    };
    let mut total = adv;
    if let Some(c) = cond.loss {
        stats.cond_loss = g.value(c).item();
        total = add_weighted(&mut g, total, c, cfg.lambda)?;
    }
    if cfg.tac_enabled {
        let twin = cross_entropy(&mut g, out.twin_logits.expect("twin head present"), &y)?;
        total = add_weighted(&mut g, total, twin, -cfg.lambda)?;
    }
    let grads = collect_grads(&g, total, &gvars)?;
    state.g_opt.step(&mut state.generator.params, &grads)?;
    state.iter += 1;
    if let Some(ema) = state.ema.as_mut() {
        let decay = if state.iter >= state.config.ema_start {
            state.config.ema_decay
        } else {
            0.0
        };
        ema_update(ema, &state.generator.params, decay)?;
    }
    Ok(stats)
}

/// Final state, the metrics log and the error that stopped training early,
/// if any.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<MetricsRow>,
    pub failure: Option<Error>,
}

/// Runs `total_iters` generator updates with `n_dis` discriminator updates
/// each. Step failures end the run and are returned in
/// [`TrainOutcome::failure`] together with the rows logged so far.
pub fn train<D: Dataset + ?Sized>(config: RunConfig, data: &D) -> Result<TrainOutcome> {
    let mut state = TrainState::new(config, data)?;
    let mut log = Vec::new();
    let mut acc = Accumulator::default();
    let mut failure = None;
    while state.iter < state.config.total_iters {
        let step = (|| -> Result<()> {
            for _ in 0..state.config.n_dis {
                acc.d.push(train_step_discriminator(&mut state, data)?);
            }
            acc.g.push(train_step_generator(&mut state)?);
            if state.iter % state.config.log_interval == 0 {
                let w1 = state.evaluate_w1(data).map_err(|e| state.wrap(e))?;
                log.push(acc.finish(state.iter, state.d_steps, w1));
            }
            Ok(())
        })();
        if let Err(e) = step {
            failure = Some(e);
            break;
        }
    }
    Ok(TrainOutcome {
        state,
        log,
        failure,
    })
}

/// Like [`train`], but a failing step is returned as the error.
pub fn run_training<D: Dataset + ?Sized>(
    config: RunConfig,
    data: &D,
) -> Result<(TrainState, Vec<MetricsRow>)> {
    let out = train(config, data)?;
    match out.failure {
        Some(e) => Err(e),
        None => Ok((out.state, out.log)),
    }
}

#[cfg(test)]
mod tests;
