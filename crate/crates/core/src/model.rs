//! The assembled model: manifold + diffusion + networks.
//!
//! `elbo_loss` runs one reparametrized posterior draw per datapoint and
//! returns exact pathwise gradients through encoder, projection, random
//! walk, decoder and the KL term. `train` wraps it in a seeded, fully
//! deterministic loop; `importance_loglik` and `evaluate` produce the
//! test-time metrics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use std::f64::consts::TAU;
use std::time::Instant;

use crate::diffusion::{
    self, kl_asymptotic, kl_asymptotic_dt, kl_gaussian, prior_log_density,
    random_walk_sample_with_jacobians, KernelSeriesConfig, PosteriorParams, RandomWalkConfig,
};
use crate::error::{Error, Result};
use crate::manifold::{Manifold, ManifoldPoint, SINGULAR_TOL};
use crate::nets::{
    adam_step, even_feature_dim, even_feature_jacobian, even_feature_map, hidden_trunk, AdamHyper,
    AdamState, DenseLayer, EncoderHead, LayerGrads, MlpNetwork,
};
use crate::rng::NoiseSequencer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    Asymptotic,
    Numeric,
    Gaussian,
}

/// Architecture and sampler settings for building a model.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub width: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub walk_steps: usize,
    pub likelihood: Likelihood,
    /// Hidden activation (relu by default; gradient checks against finite
    /// differences want a smooth one).
    pub hidden_activation: crate::nets::Activation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(data_dim: usize, seed: u64) -> Self {
        ModelConfig {
            data_dim,
            width: 256,
            encoder_depth: 3,
            decoder_depth: 2,
            t_min: 1e-4,
            t_max: 4e-3,
            walk_steps: 16,
            likelihood: Likelihood::Gaussian,
            hidden_activation: crate::nets::Activation::Relu,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DvaeModel {
    pub manifold: Manifold,
    /// Shared encoder hidden layers.
    pub trunk: MlpNetwork,
    pub head: EncoderHead,
    pub decoder: MlpNetwork,
    pub walk: RandomWalkConfig,
    pub likelihood: Likelihood,
    pub kl_mode: KlMode,
    /// Per-sample noise streams; `(seed, counter)` is checkpointed.
    pub noise: NoiseSequencer,
}

impl DvaeModel {
    /// Build a freshly initialized model. The time head emits one scalar on
    /// closed manifolds and a per-dimension log-variance on the Euclidean
    /// baseline; projective manifolds get the even (quadratic-feature)
    /// decoder.
    pub fn build(manifold: Manifold, cfg: &ModelConfig) -> Result<Self> {
        if !(cfg.t_min > 0.0 && cfg.t_min < cfg.t_max) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < t_min < t_max, got {} and {}",
                cfg.t_min, cfg.t_max
            )));
        }
        let mut rng = crate::rng::substream(cfg.seed, u64::MAX);
        let n = manifold.ambient_dim();
        let trunk = hidden_trunk(
            cfg.data_dim,
            cfg.width,
            cfg.encoder_depth,
            cfg.hidden_activation,
            &mut rng,
        );
        let time_out = match manifold {
            Manifold::Euclidean { dim } => dim,
            _ => 1,
        };
        let head = EncoderHead::new(
            DenseLayer::init(n, cfg.width, crate::nets::Activation::Identity, &mut rng),
            DenseLayer::init(
                time_out,
                cfg.width,
                crate::nets::Activation::Identity,
                &mut rng,
            ),
            cfg.t_min,
            cfg.t_max,
        )?;
        let dec_in = decoder_input_dim(&manifold);
        let mut dec_layers = Vec::new();
        let mut d = dec_in;
        for _ in 0..cfg.decoder_depth {
            dec_layers.push(DenseLayer::init(cfg.width, d, cfg.hidden_activation, &mut rng));
            d = cfg.width;
        }
        dec_layers.push(DenseLayer::init(
            cfg.data_dim,
            d,
            crate::nets::Activation::Sigmoid,
            &mut rng,
        ));
        let kl_mode = match manifold {
            Manifold::Euclidean { .. } => KlMode::Gaussian,
            _ => KlMode::Asymptotic,
        };
        Ok(DvaeModel {
            manifold,
            trunk,
            head,
            decoder: MlpNetwork::new(dec_layers)?,
            walk: RandomWalkConfig::new(cfg.walk_steps, cfg.seed)?,
            likelihood: cfg.likelihood,
            kl_mode,
            noise: NoiseSequencer::new(cfg.seed),
        })
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    /// All dense layers in checkpoint order.
    pub fn layers(&self) -> Vec<&DenseLayer> {
        let mut v: Vec<&DenseLayer> = self.trunk.layers.iter().collect();
        v.push(&self.head.ambient);
        v.push(&self.head.time);
        v.extend(self.decoder.layers.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = self.trunk.layers.iter_mut().collect();
        v.push(&mut self.head.ambient);
        v.push(&mut self.head.time);
        v.extend(self.decoder.layers.iter_mut());
        v
    }

    /// Encode one datapoint to its posterior parameters.
    pub fn encode(&self, x: ArrayView1<f64>) -> Result<PosteriorParams> {
        let xb = x.insert_axis(Axis(0));
        let h = self.trunk.forward(xb)?;
        let ambient = self.head.ambient.forward(h.view())?;
        let raw_t = self.head.time.forward(h.view())?;
        let a = nudge_ambient(&self.manifold, ambient.row(0).to_vec());
        let z = self.manifold.project(&a)?;
        let time = match self.manifold {
            Manifold::Euclidean { .. } => raw_t.row(0).iter().map(|v| v.exp()).sum::<f64>()
                / raw_t.ncols() as f64, // mean variance, for reporting only
            _ => self.head.time_transform(raw_t[[0, 0]]),
        };
        PosteriorParams::new(z, time)
    }

    /// Decode a latent point to the data-space parameter vector.
    pub fn decode(&self, z: &ManifoldPoint) -> Result<Vec<f64>> {
        let feats = decoder_features(&self.manifold, z.coords());
        let x = Array2::from_shape_vec((1, feats.len()), feats)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.decoder.forward(x.view())?.row(0).to_vec())
    }
}

pub(crate) fn decoder_input_dim(m: &Manifold) -> usize {
    match m {
        Manifold::ProjectiveSphere { dim } => even_feature_dim(dim + 1),
        Manifold::Euclidean { dim } => *dim,
        _ => m.ambient_dim(),
    }
}

pub(crate) fn decoder_features(m: &Manifold, z: &[f64]) -> Vec<f64> {
    match m {
        Manifold::ProjectiveSphere { .. } => even_feature_map(z),
        _ => z.to_vec(),
    }
}

/// Shift an encoder's raw ambient output off the projection's singular set.
/// Measure-zero event; 1e-6 on the offending coordinate is far below any
/// gradient scale that matters and avoids aborting a run.
fn nudge_ambient(m: &Manifold, mut a: Vec<f64>) -> Vec<f64> {
    match m {
        Manifold::Sphere { .. } | Manifold::ProjectiveSphere { .. } => {
            if a.iter().map(|v| v * v).sum::<f64>().sqrt() < SINGULAR_TOL {
                a[0] += 1e-6;
            }
        }
        Manifold::FlatTorus2 => {
            if a[0].hypot(a[1]) < SINGULAR_TOL {
                a[0] += 1e-6;
            }
            if a[2].hypot(a[3]) < SINGULAR_TOL {
                a[2] += 1e-6;
            }
        }
        Manifold::EmbeddedTorus { major, .. } => {
            if a[0].hypot(a[1]) < SINGULAR_TOL {
                a[0] += 1e-6;
            }
            let rho = a[0].hypot(a[1]);
            if (rho - major).hypot(a[2]) < SINGULAR_TOL {
                a[2] += 1e-6;
            }
        }
        Manifold::Euclidean { .. } => {}
    }
    a
}

/// Per-batch loss components, in nats per datapoint. `elbo` is defined as
/// `-(re + kl)`; `mse` is the per-pixel mean squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub re: f64,
    pub kl: f64,
    pub elbo: f64,
    pub mse: f64,
}

impl LossBreakdown {
    pub fn new(re: f64, kl: f64, mse: f64) -> Self {
        LossBreakdown {
            re,
            kl,
            elbo: -(re + kl),
            mse,
        }
    }
}

/// Model-level gradients, shaped like [`DvaeModel::layers`].
#[derive(Debug)]
pub struct GradientSet {
    pub per_layer: Vec<LayerGrads>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().all(|g| g.is_finite())
    }

    fn scale(&mut self, s: f64) {
        for g in &mut self.per_layer {
            g.scale(s);
        }
    }
}

/// One reparametrized posterior sample per datapoint; average loss over the
/// batch with exact pathwise gradients.
pub fn elbo_loss(
    model: &DvaeModel,
    batch: ArrayView2<f64>,
    noise: &mut NoiseSequencer,
) -> Result<(LossBreakdown, GradientSet)> {
    let b = batch.nrows();
    if b == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let m = &model.manifold;
    let n = m.ambient_dim();
    let d_data = model.data_dim() as f64;

    // encoder forward
    let trunk_cache = model.trunk.forward_cached(batch)?;
    let h = trunk_cache.output().clone();
    let ambient = model.head.ambient.forward(h.view())?;
    let raw_t = model.head.time.forward(h.view())?;

    let euclidean = matches!(m, Manifold::Euclidean { .. });
    let u_dim = decoder_input_dim(m);
    let mut dec_in = Array2::zeros((b, u_dim));
    let mut kl_sum = 0.0;

    // per-sample state kept for the backward pass
    struct SampleCtx {
        proj_input: Vec<f64>,
        z: Vec<f64>,
        t: f64,
        raw_s: f64,
        walk_d_dz: Array2<f64>,
        walk_d_dt: Array1<f64>,
        y: Vec<f64>,
        eps: Vec<f64>,    // euclidean reparam noise
        sigma: Vec<f64>,  // euclidean posterior std
    }
    let mut ctxs: Vec<SampleCtx> = Vec::with_capacity(b);

    for i in 0..b {
        let mut rng = noise.next_stream();
        if euclidean {
            let mean = ambient.row(i).to_vec();
            let logvar = raw_t.row(i).to_vec();
            let sigma: Vec<f64> = logvar.iter().map(|v| (0.5 * v).exp()).collect();
            let eps: Vec<f64> = (0..n)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            let y: Vec<f64> = mean
                .iter()
                .zip(&sigma)
                .zip(&eps)
                .map(|((mu, s), e)| mu + s * e)
                .collect();
            let var: Vec<f64> = sigma.iter().map(|s| s * s).collect();
            kl_sum += kl_gaussian(&mean, &var)?;
            for (j, v) in y.iter().enumerate() {
                dec_in[[i, j]] = *v;
            }
            ctxs.push(SampleCtx {
                proj_input: mean,
                z: y.clone(),
                t: 0.0,
                raw_s: 0.0,
                walk_d_dz: Array2::zeros((0, 0)),
                walk_d_dt: Array1::zeros(0),
                y,
                eps,
                sigma,
            });
        } else {
            let a = nudge_ambient(m, ambient.row(i).to_vec());
            let z = m.project(&a)?;
            let raw_s = raw_t[[i, 0]];
            let t = model.head.time_transform(raw_s);
            let params = PosteriorParams::new(z.clone(), t)?;
            let out = random_walk_sample_with_jacobians(m, &params, &model.walk, &mut rng)?;
            kl_sum += match model.kl_mode {
                KlMode::Asymptotic => kl_asymptotic(m, &params)?,
                KlMode::Numeric => {
                    diffusion::kl_numeric(m, &params, &KernelSeriesConfig::standard())?
                }
                KlMode::Gaussian => {
                    return Err(Error::InvalidConfig(
                        "gaussian KL needs the Euclidean baseline".into(),
                    ))
                }
            };
            let y = out.point.coords().to_vec();
            for (j, v) in decoder_features(m, &y).into_iter().enumerate() {
                dec_in[[i, j]] = v;
            }
            ctxs.push(SampleCtx {
                proj_input: a,
                z: z.into_coords(),
                t,
                raw_s,
                walk_d_dz: out.d_dz,
                walk_d_dt: out.d_dt,
                y,
                eps: Vec::new(),
                sigma: Vec::new(),
            });
        }
    }

    // decoder forward + reconstruction terms
    let dec_cache = model.decoder.forward_cached(dec_in.view())?;
    let beta = dec_cache.output();
    let mut re_sum = 0.0;
    let mut mse_sum = 0.0;
    for i in 0..b {
        let x = batch.row(i);
        let out = beta.row(i);
        let mut sq = 0.0;
        for (xv, bv) in x.iter().zip(out.iter()) {
            sq += (xv - bv) * (xv - bv);
        }
        mse_sum += sq / d_data;
        re_sum += match model.likelihood {
            Likelihood::Gaussian => 0.5 * sq + 0.5 * d_data * TAU.ln(),
            Likelihood::Bernoulli => {
                let mut ce = 0.0;
                for (xv, bv) in x.iter().zip(out.iter()) {
                    let p = bv.clamp(1e-12, 1.0 - 1e-12);
                    ce -= xv * p.ln() + (1.0 - xv) * (1.0 - p).ln();
                }
                ce
            }
        };
    }

    let breakdown = LossBreakdown::new(
        re_sum / b as f64,
        kl_sum / b as f64,
        mse_sum / b as f64,
    );
    if !(breakdown.re.is_finite() && breakdown.kl.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss diverged: re = {}, kl = {}",
            breakdown.re, breakdown.kl
        )));
    }

    // backward: d(loss)/d(last decoder pre-activation) is (beta - x) for
    // Bernoulli and (beta - x) * sigmoid' for Gaussian; both exact, no
    // division by saturated sigmoid outputs
    let mut dz_dec = Array2::zeros((b, beta.ncols()));
    for i in 0..b {
        for j in 0..beta.ncols() {
            let bv = beta[[i, j]];
            let resid = bv - batch[[i, j]];
            dz_dec[[i, j]] = match model.likelihood {
                Likelihood::Gaussian => resid * bv * (1.0 - bv),
                Likelihood::Bernoulli => resid,
            };
        }
    }
    let (dec_grads, du) = model
        .decoder
        .backward_from_pre_activation(&dec_cache, dz_dec.view())?;

    // pull the decoder-input gradient back through walk + projection + heads
    let mut d_ambient = Array2::zeros((b, n));
    let mut d_raw_t = Array2::zeros((b, raw_t.ncols()));
    for (i, ctx) in ctxs.iter().enumerate() {
        if euclidean {
            let dy: Vec<f64> = du.row(i).to_vec();
            let mean = &ctx.proj_input;
            for j in 0..n {
                // reconstruction path + KL gradient for the closed-form
                // Gaussian term
                d_ambient[[i, j]] = dy[j] + mean[j];
                let var = ctx.sigma[j] * ctx.sigma[j];
                d_raw_t[[i, j]] =
                    dy[j] * ctx.eps[j] * ctx.sigma[j] * 0.5 + 0.5 * (var - 1.0);
            }
        } else {
            // decoder features -> latent point
            let dy: Vec<f64> = match m {
                Manifold::ProjectiveSphere { .. } => {
                    let jv = even_feature_jacobian(&ctx.y);
                    let dfeat = du.row(i);
                    (0..n)
                        .map(|c| (0..jv.nrows()).map(|r| jv[[r, c]] * dfeat[r]).sum())
                        .collect()
                }
                _ => du.row(i).to_vec(),
            };
            // through the walk
            let mut dz: Vec<f64> = (0..n)
                .map(|c| (0..n).map(|r| ctx.walk_d_dz[[r, c]] * dy[r]).sum())
                .collect();
            let mut dt: f64 = (0..n).map(|r| ctx.walk_d_dt[r] * dy[r]).sum();
            // KL term
            let params = PosteriorParams {
                center: ManifoldPoint::new(m, ctx.z.clone())?,
                time: ctx.t,
            };
            dt += kl_asymptotic_dt(m, &params);
            let sc_grad = kl_curvature_gradient(m, &ctx.z, ctx.t);
            for (g, s) in dz.iter_mut().zip(&sc_grad) {
                *g += s;
            }
            // through the projection at the encoder output
            let pj = m.project_jacobian(&ctx.proj_input)?;
            for c in 0..n {
                d_ambient[[i, c]] = (0..n).map(|r| pj[[r, c]] * dz[r]).sum();
            }
            d_raw_t[[i, 0]] = dt * model.head.time_transform_derivative(ctx.raw_s);
        }
    }

    // heads + trunk backward
    let (amb_grads, dh_a) = single_layer_backward(&model.head.ambient, &h, d_ambient.view());
    let (time_grads, dh_t) = single_layer_backward(&model.head.time, &h, d_raw_t.view());
    let dh = &dh_a + &dh_t;
    let (trunk_grads, _) = model.trunk.backward(&trunk_cache, dh.view())?;

    let mut per_layer = trunk_grads;
    per_layer.push(amb_grads);
    per_layer.push(time_grads);
    per_layer.extend(dec_grads);
    let mut grads = GradientSet { per_layer };
    grads.scale(1.0 / b as f64);
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient blow-up".into()));
    }
    Ok((breakdown, grads))
}

/// d(KL)/dz contribution of the curvature term (Sc t / 4); nonzero only on
/// the embedded torus.
fn kl_curvature_gradient(m: &Manifold, z: &[f64], t: f64) -> Vec<f64> {
    m.scalar_curvature_gradient(z)
        .into_iter()
        .map(|g| 0.25 * t * g)
        .collect()
}

/// Backward through a single head layer (identity activation).
fn single_layer_backward(
    layer: &DenseLayer,
    input: &Array2<f64>,
    upstream: ArrayView2<f64>,
) -> (LayerGrads, Array2<f64>) {
    let d_weights = upstream.t().dot(input);
    let d_bias = upstream.sum_axis(Axis(0));
    let d_input = upstream.dot(&layer.weights);
    (LayerGrads { d_weights, d_bias }, d_input)
}

/// Training settings for [`train`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamHyper,
    /// Record wall-clock seconds per epoch. Off by default so that repeated
    /// runs produce byte-identical metrics files.
    pub timing: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            seed,
            adam: AdamHyper::default(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub stats: LossBreakdown,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainRun {
    pub history: Vec<EpochStats>,
    /// Set when training aborted on a non-finite loss; the model is rolled
    /// back to the last finished epoch.
    pub aborted: Option<String>,
}

/// Deterministic training loop: seeded shuffles, per-sample noise streams,
/// Adam updates after every batch. `on_epoch` fires after each epoch with
/// the epoch's averaged loss.
pub fn train(
    model: &mut DvaeModel,
    data: ArrayView2<f64>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &DvaeModel, &LossBreakdown),
) -> Result<TrainRun> {
    if data.nrows() == 0 {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut opt: Vec<AdamState> = model
        .layers()
        .iter()
        .map(|l| AdamState::zeros_like(l))
        .collect();
    let mut step: u64 = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_good = model.clone();
    let n = data.nrows();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, cfg.seed, epoch as u64);
        let mut re = 0.0;
        let mut kl = 0.0;
        let mut mse = 0.0;
        let mut seen = 0usize;
        let mut failure: Option<String> = None;

        'batches: for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Array2::zeros((chunk.len(), data.ncols()));
            for (r, &idx) in chunk.iter().enumerate() {
                batch.row_mut(r).assign(&data.row(idx));
            }
            let mut seq = model.noise.clone();
            let (stats, grads) = match elbo_loss(model, batch.view(), &mut seq) {
                Ok(v) => v,
                Err(Error::NonFinite(msg)) => {
                    failure = Some(msg);
                    break 'batches;
                }
                Err(e) => return Err(e),
            };
            model.noise = seq;
            step += 1;
            for (layer, (g, st)) in model
                .layers_mut()
                .into_iter()
                .zip(grads.per_layer.iter().zip(opt.iter_mut()))
            {
                adam_step(layer, g, st, &cfg.adam, step)?;
            }
            re += stats.re * chunk.len() as f64;
            kl += stats.kl * chunk.len() as f64;
            mse += stats.mse * chunk.len() as f64;
            seen += chunk.len();
        }

        if let Some(msg) = failure {
            *model = last_good;
            return Ok(TrainRun {
                history,
                aborted: Some(msg),
            });
        }

        let breakdown = LossBreakdown::new(
            re / seen as f64,
            kl / seen as f64,
            mse / seen as f64,
        );
        let wall = if cfg.timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        history.push(EpochStats {
            epoch,
            stats: breakdown,
            wall_seconds: wall,
        });
        on_epoch(epoch, model, &breakdown);
        last_good = model.clone();
    }
    Ok(TrainRun {
        history,
        aborted: None,
    })
}

/// Seeded Fisher-Yates.
fn shuffle(order: &mut [usize], seed: u64, epoch: u64) {
    let mut rng = crate::rng::substream(seed ^ 0x5851_f42d_4c95_7f2d, epoch);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Importance-sampled log-likelihood of one datapoint:
/// `log( (1/L) sum_l p(x | beta(z_l)) p_Z(z_l) / q(t; z, z_l) )`
/// over L posterior draws, evaluated with log-sum-exp.
pub fn importance_loglik(
    model: &DvaeModel,
    x: ArrayView1<f64>,
    l_samples: usize,
    kernel_cfg: &KernelSeriesConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    if l_samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let m = &model.manifold;
    let xb = x.insert_axis(Axis(0));
    let h = model.trunk.forward(xb)?;
    let ambient = model.head.ambient.forward(h.view())?;
    let raw_t = model.head.time.forward(h.view())?;

    // draw the L latent samples, collecting log prior - log q per draw, and
    // batch all L decoder passes into one forward
    let u_dim = decoder_input_dim(m);
    let mut dec_in = Array2::zeros((l_samples, u_dim));
    let mut log_prior_minus_q = Vec::with_capacity(l_samples);
    if let Manifold::Euclidean { dim } = m {
        let mean = ambient.row(0).to_vec();
        let logvar = raw_t.row(0).to_vec();
        let sigma: Vec<f64> = logvar.iter().map(|v| (0.5 * v).exp()).collect();
        for l in 0..l_samples {
            let y: Vec<f64> = mean
                .iter()
                .zip(&sigma)
                .map(|(mu, s)| mu + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let point = ManifoldPoint::new(m, y.clone())?;
            let mut log_q = 0.0;
            for j in 0..*dim {
                let zn = (y[j] - mean[j]) / sigma[j];
                log_q += -0.5 * TAU.ln() - sigma[j].ln() - 0.5 * zn * zn;
            }
            let log_prior = prior_log_density(m, &point)?;
            for (j, v) in y.iter().enumerate() {
                dec_in[[l, j]] = *v;
            }
            log_prior_minus_q.push(log_prior - log_q);
        }
    } else {
        let a = nudge_ambient(m, ambient.row(0).to_vec());
        let z = m.project(&a)?;
        let t = model.head.time_transform(raw_t[[0, 0]]);
        let params = PosteriorParams::new(z.clone(), t)?;
        for l in 0..l_samples {
            let y = diffusion::random_walk_sample(m, &params, &model.walk, rng)?;
            let q = diffusion::heat_kernel_density(m, t, &z, &y, kernel_cfg)?;
            let log_prior = prior_log_density(m, &y)?;
            for (j, v) in decoder_features(m, y.coords()).into_iter().enumerate() {
                dec_in[[l, j]] = v;
            }
            log_prior_minus_q.push(log_prior - q.log_density);
        }
    }
    let beta = model.decoder.forward(dec_in.view())?;
    let mut log_weights = Vec::with_capacity(l_samples);
    for l in 0..l_samples {
        log_weights.push(log_likelihood_row(model, x, beta.row(l)) + log_prior_minus_q[l]);
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let sum: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    Ok(max + (sum / l_samples as f64).ln())
}

/// log p(x | beta) under the model's likelihood.
fn log_likelihood_row(model: &DvaeModel, x: ArrayView1<f64>, beta: ArrayView1<f64>) -> f64 {
    let d = beta.len() as f64;
    match model.likelihood {
        Likelihood::Gaussian => {
            let sq: f64 = x
                .iter()
                .zip(&beta)
                .map(|(xv, bv)| (xv - bv) * (xv - bv))
                .sum();
            -0.5 * sq - 0.5 * d * TAU.ln()
        }
        Likelihood::Bernoulli => x
            .iter()
            .zip(&beta)
            .map(|(xv, bv)| {
                let p = bv.clamp(1e-12, 1.0 - 1e-12);
                xv * p.ln() + (1.0 - xv) * (1.0 - p).ln()
            })
            .sum(),
    }
}

/// A Table-style evaluation row: dataset-averaged log-likelihood, ELBO, KL
/// and MSE (Gaussian runs) or RE (Bernoulli runs).
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub manifold: String,
    pub ll: f64,
    pub elbo: f64,
    pub kl: f64,
    pub mse_or_re: f64,
    pub seed: u64,
    pub l_samples: usize,
}

impl EvalRow {
    pub fn csv_header() -> &'static str {
        "manifold,ll,elbo,kl,mse_or_re,seed,L"
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.manifold, self.ll, self.elbo, self.kl, self.mse_or_re, self.seed, self.l_samples
        )
    }
}

/// Dataset-averaged evaluation. Deterministic given `seed`: datapoint i
/// uses substreams (2i, 2i+1) for its ELBO draw and its importance draws.
/// On manifolds with a quadrature KL the asymptotic formula is cross-checked
/// once against `kl_numeric` before use.
pub fn evaluate(
    model: &DvaeModel,
    data: ArrayView2<f64>,
    l_samples: usize,
    seed: u64,
    kernel_cfg: &KernelSeriesConfig,
) -> Result<EvalRow> {
    if data.nrows() == 0 {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let n = data.nrows();
    let mut ll_sum = 0.0;
    let mut re_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut mse_sum = 0.0;
    let mut audited = false;
    for i in 0..n {
        let x = data.row(i);
        // one-sample ELBO pieces
        let mut seq = NoiseSequencer::with_counter(seed, 2 * i as u64);
        let (stats, _) = elbo_loss(model, x.insert_axis(Axis(0)), &mut seq)?;
        re_sum += stats.re;
        kl_sum += stats.kl;
        mse_sum += stats.mse;
        if !audited && model.kl_mode == KlMode::Asymptotic {
            audit_kl(model, x, kernel_cfg)?;
            audited = true;
        }
        let mut rng = crate::rng::substream(seed, 2 * i as u64 + 1);
        match importance_loglik(model, x, l_samples, kernel_cfg, &mut rng) {
            Ok(ll) => ll_sum += ll,
            Err(Error::DegenerateWeights) => ll_sum += f64::NEG_INFINITY,
            Err(e) => return Err(e),
        }
    }
    let nf = n as f64;
    Ok(EvalRow {
        manifold: model.manifold.name(),
        ll: ll_sum / nf,
        elbo: -(re_sum + kl_sum) / nf,
        kl: kl_sum / nf,
        mse_or_re: match model.likelihood {
            Likelihood::Gaussian => mse_sum / nf,
            Likelihood::Bernoulli => re_sum / nf,
        },
        seed,
        l_samples,
    })
}

/// Cross-audit the asymptotic KL against quadrature at the posterior of one
/// datapoint (manifolds with quadrature support only).
fn audit_kl(model: &DvaeModel, x: ArrayView1<f64>, kernel_cfg: &KernelSeriesConfig) -> Result<()> {
    let supported = matches!(
        model.manifold,
        Manifold::Sphere { dim: 1 } | Manifold::Sphere { dim: 2 } | Manifold::FlatTorus2
    );
    if !supported {
        return Ok(());
    }
    let params = model.encode(x)?;
    let asym = kl_asymptotic(&model.manifold, &params)?;
    let num = diffusion::kl_numeric(&model.manifold, &params, kernel_cfg)?;
    if (asym - num).abs() > 0.01 * num.abs().max(1.0) {
        return Err(Error::DomainError(format!(
            "asymptotic KL {asym} disagrees with quadrature {num} at t = {}",
            params.time
        )));
    }
    Ok(())
}

/// Metrics-history CSV (one row per epoch).
pub fn metrics_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,re,kl,elbo,mse,wall_seconds\n");
    for e in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.stats.re, e.stats.kl, e.stats.elbo, e.stats.mse, e.wall_seconds
        ));
    }
    out
}
