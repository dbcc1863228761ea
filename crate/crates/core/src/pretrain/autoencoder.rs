use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::PlayDataset;
use crate::error::{Error, Result};
use crate::models::{
    alexnet_convs, build_backbone, build_mlp, frames_to_tensor, spatial_sizes, CheckpointMeta, ConvSpec,
    FeaturePooling, PretrainMode, WeightBundle,
};
use crate::nn::{ConvTranspose2d, Layer, Linear, Param, Scalar, Sequential, Tensor, Unflatten};
use crate::rng;

use super::byol::{augmented_batch, init_convs_from};
use super::loss::mse_loss;
use super::{with_workers, PretrainConfig, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutoEncoderKind {
    Plain,
    Variational,
}

/// Conv encoder with a linear bottleneck and a transposed-conv mirror decoder.
///
/// The decoder undoes each convolution, and each max-pool, with a
/// transposed convolution of the same geometry, so reconstructions come
/// back at the input size.
#[derive(Debug, Clone)]
pub struct AutoEncoder<T> {
    pub kind: AutoEncoderKind,
    pub backbone: Sequential<T>,
    /// `bottleneck` (plain) or `mu` (variational).
    pub mean: Sequential<T>,
    pub logvar: Option<Sequential<T>>,
    pub decoder: Sequential<T>,
    input_size: usize,
    cached: Option<VaeCache<T>>,
}

#[derive(Debug, Clone)]
struct VaeCache<T> {
    mu: Tensor<T>,
    logvar: Tensor<T>,
    noise: Vec<T>,
}

impl<T: Scalar> AutoEncoder<T> {
    pub fn new(kind: AutoEncoderKind, convs: &[ConvSpec], input_size: usize, latent: usize, seed: u64) -> Result<Self> {
        let sizes = spatial_sizes(convs, input_size)?;
        let channels = convs.last().map_or(3, |c| c.out_channels);
        let mut backbone = build_backbone(convs, FeaturePooling::Global);
        let (mut mean, mut logvar) = match kind {
            AutoEncoderKind::Plain => (build_mlp("bottleneck", channels, &[latent]), None),
            AutoEncoderKind::Variational => (
                build_mlp("mu", channels, &[latent]),
                Some(build_mlp("logvar", channels, &[latent])),
            ),
        };
        let mut decoder = build_decoder(convs, input_size, &sizes, latent)?;
        backbone.init(seed);
        mean.init(seed);
        if let Some(l) = &mut logvar {
            l.init(seed);
        }
        decoder.init(seed);
        Ok(Self {
            kind,
            backbone,
            mean,
            logvar,
            decoder,
            input_size,
            cached: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    /// Deterministic reconstruction through the latent mean.
    pub fn reconstruct(&mut self, x: Tensor<T>) -> Tensor<T> {
        let v = self.backbone.forward(x);
        let z = self.mean.forward(v);
        self.decoder.forward(z)
    }

    /// Mean squared reconstruction error per pixel through the latent mean.
    pub fn reconstruction_loss(&mut self, x: &Tensor<T>) -> Result<f64> {
        let recon = self.reconstruct(x.clone());
        Ok(mse_loss(&recon, x)?.0.to_f64().unwrap_or(f64::NAN))
    }

    /// Forward + backward of the training objective; returns
    /// `(total, reconstruction, kl)`. `noise` supplies the VAE draws.
    pub fn train_loss(&mut self, x: &Tensor<T>, beta: f64, noise: &mut impl Rng) -> Result<(f64, f64, f64)> {
        let v = self.backbone.forward(x.clone());
        let mu = self.mean.forward(v.clone());
        let (z, kl) = match &mut self.logvar {
            None => (mu.clone(), 0.0),
            Some(lv_head) => {
                let lv = lv_head.forward(v);
                let eps: Vec<T> = (0..mu.len())
                    .map(|_| T::lit(noise.sample::<f64, _>(StandardNormal)))
                    .collect();
                let z_data = mu
                    .data()
                    .iter()
                    .zip(lv.data())
                    .zip(&eps)
                    .map(|((&m, &l), &e)| m + (l * T::lit(0.5)).exp() * e)
                    .collect();
                let b = mu.shape()[0];
                let d = mu.shape()[1];
                let mut kl = 0.0;
                for i in 0..b {
                    let m: Vec<f64> = mu.row(i).iter().map(|v| v.to_f64().unwrap()).collect();
                    let l: Vec<f64> = lv.row(i).iter().map(|v| v.to_f64().unwrap()).collect();
                    kl += super::gaussian_kl(&m, &l);
                }
                let z = Tensor::from_vec(&[b, d], z_data);
                self.cached = Some(VaeCache {
                    mu: mu.clone(),
                    logvar: lv,
                    noise: eps,
                });
                (z, kl / b as f64)
            }
        };
        let recon = self.decoder.forward(z);
        let (rec_loss, d_recon) = mse_loss(&recon, x)?;
        let dz = self.decoder.backward(d_recon, true).expect("input gradient requested");
        let dv = match self.cached.take() {
            None => self.mean.backward(dz, true).expect("input gradient requested"),
            Some(cache) => {
                let b = T::lit(cache.mu.shape()[0] as f64);
                let beta_t = T::lit(beta);
                let half = T::lit(0.5);
                let dmu_data = dz
                    .data()
                    .iter()
                    .zip(cache.mu.data())
                    .map(|(&g, &m)| g + beta_t * m / b)
                    .collect();
                let dlv_data = dz
                    .data()
                    .iter()
                    .zip(cache.logvar.data())
                    .zip(&cache.noise)
                    .map(|((&g, &l), &e)| g * e * half * (l * half).exp() - beta_t * half * (T::one() - l.exp()) / b)
                    .collect();
                let shape = cache.mu.shape().to_vec();
                let dv_mu = self
                    .mean
                    .backward(Tensor::from_vec(&shape, dmu_data), true)
                    .expect("input gradient requested");
                let dv_lv = self
                    .logvar
                    .as_mut()
                    .expect("variational head")
                    .backward(Tensor::from_vec(&shape, dlv_data), true)
                    .expect("input gradient requested");
                let sum = dv_mu.data().iter().zip(dv_lv.data()).map(|(&a, &c)| a + c).collect();
                Tensor::from_vec(dv_mu.shape(), sum)
            }
        };
        self.backbone.backward(dv, false);
        let rec = rec_loss.to_f64().unwrap_or(f64::NAN);
        Ok((rec + beta * kl, rec, kl))
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.backbone
            .params()
            .chain(self.mean.params())
            .chain(self.logvar.iter().flat_map(|l| l.params()))
            .chain(self.decoder.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.backbone
            .params_mut()
            .chain(self.mean.params_mut())
            .chain(self.logvar.iter_mut().flat_map(|l| l.params_mut()))
            .chain(self.decoder.params_mut())
    }

    /// Encoder arrays only: conv layers plus the bottleneck (or `mu`/`logvar`) heads.
    pub fn encoder_bundle(&self, meta: CheckpointMeta) -> WeightBundle<T> {
        WeightBundle::from_params(
            self.backbone
                .params()
                .chain(self.mean.params())
                .chain(self.logvar.iter().flat_map(|l| l.params())),
            meta,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn mirror<T: Scalar>(
    name: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    s: usize,
    p: usize,
    from: usize,
    to: usize,
) -> Result<ConvTranspose2d<T>> {
    let base = ((from - 1) * s + k).saturating_sub(2 * p);
    if to < base || to - base >= s.max(1) {
        return Err(Error::Shape(format!(
            "{name}: cannot mirror {from}px back to {to}px with kernel {k}, stride {s}"
        )));
    }
    Ok(ConvTranspose2d::new(name, in_ch, out_ch, k, s, p, to - base))
}

fn build_decoder<T: Scalar>(convs: &[ConvSpec], input: usize, sizes: &[usize], latent: usize) -> Result<Sequential<T>> {
    let last = *sizes.last().expect("at least one conv");
    let channels = convs.last().map_or(3, |c| c.out_channels);
    let mut seq = Sequential::new();
    seq.push(Layer::Linear(Linear::new("dec.fc", latent, channels * last * last)));
    seq.push(Layer::relu());
    seq.push(Layer::Unflatten(Unflatten {
        channels,
        height: last,
        width: last,
    }));
    let mut n = 0;
    for i in (0..convs.len()).rev() {
        let c = &convs[i];
        let in_ch = if i == 0 { 3 } else { convs[i - 1].out_channels };
        let prev_out = if i == 0 { input } else { sizes[i - 1] };
        // side after the pool (if any), i.e. the conv's own input side
        let pre_conv = match c.pool {
            Some(p) => (prev_out - p.kernel) / p.stride + 1,
            None => prev_out,
        };
        n += 1;
        let t = mirror(
            &format!("dec.t{n}"),
            c.out_channels,
            in_ch,
            c.kernel,
            c.stride,
            c.padding,
            sizes[i],
            pre_conv,
        )?;
        seq.push(Layer::ConvTranspose(t));
        let is_final = i == 0 && c.pool.is_none();
        if !is_final {
            seq.push(Layer::relu());
        }
        if let Some(p) = c.pool {
            n += 1;
            let t = mirror(
                &format!("dec.t{n}"),
                in_ch,
                in_ch,
                p.kernel,
                p.stride,
                0,
                pre_conv,
                prev_out,
            )?;
            seq.push(Layer::ConvTranspose(t));
            if i != 0 {
                seq.push(Layer::relu());
            }
        }
    }
    Ok(seq)
}

pub fn pretrain_autoencoder(ds: &PlayDataset, cfg: &PretrainConfig) -> Result<(WeightBundle, TrainingLog)> {
    pretrain_autoencoder_from(ds, cfg, AutoEncoderKind::Plain, None)
}

pub fn pretrain_vae(ds: &PlayDataset, cfg: &PretrainConfig) -> Result<(WeightBundle, TrainingLog)> {
    pretrain_autoencoder_from(ds, cfg, AutoEncoderKind::Variational, None)
}

/// Autoencoder pretraining, optionally starting the conv layers from `init`.
pub fn pretrain_autoencoder_from(
    ds: &PlayDataset,
    cfg: &PretrainConfig,
    kind: AutoEncoderKind,
    init: Option<&WeightBundle>,
) -> Result<(WeightBundle, TrainingLog)> {
    cfg.validate()?;
    let frames: Vec<(usize, usize)> = ds
        .trajectories()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.n_frames).map(move |f| (i, f)))
        .collect();
    if frames.is_empty() {
        return Err(Error::Config("play dataset has no frames".into()));
    }
    let mut cfg = cfg.clone();
    cfg.augment.output_size = cfg.input_size;
    let echo = serde_json::to_value(&cfg)?;
    let mut convs = alexnet_convs();
    convs.truncate(cfg.depth);
    let mut model = AutoEncoder::<f32>::new(kind, &convs, cfg.input_size, cfg.latent_dim, cfg.seed)?;
    if let Some(init) = init {
        init_convs_from(model.backbone.params_mut(), init)?;
    }
    let mut opt = crate::nn::Adam::new(cfg.lr);
    let mut log = TrainingLog::new(cfg.seed, echo.clone());
    let tag: &[u8] = match kind {
        AutoEncoderKind::Plain => b"ae",
        AutoEncoderKind::Variational => b"vae",
    };
    let trajectories = ds.trajectories();
    with_workers(cfg.workers, || -> Result<()> {
        for step in 0..cfg.steps {
            let start = Instant::now();
            let step_bytes = (step as u64).to_le_bytes();
            let mut pick = rng::stream(cfg.seed, &[tag, b"frames", &step_bytes]);
            let picks: Vec<_> = (0..cfg.batch_size)
                .map(|_| frames[pick.gen_range(0..frames.len())])
                .collect();
            let batch = augmented_batch(trajectories, &picks, &cfg, step, std::str::from_utf8(tag).unwrap())?;
            let x = frames_to_tensor(&batch.iter().collect::<Vec<_>>())?;
            let mut noise = rng::stream(cfg.seed, &[tag, b"noise", &step_bytes]);
            for p in model.params_mut() {
                p.zero_grad();
            }
            let (loss, _, _) = model.train_loss(&x, cfg.beta, &mut noise)?;
            if !loss.is_finite() {
                return Err(Error::Validation(format!("loss diverged at step {}", step + 1)));
            }
            opt.step(model.params_mut());
            log.push(loss, start.elapsed().as_secs_f64());
            log.report_progress(std::str::from_utf8(tag).unwrap(), cfg.log_every, cfg.steps);
        }
        Ok(())
    })??;
    let mode = match kind {
        AutoEncoderKind::Plain => PretrainMode::Ae,
        AutoEncoderKind::Variational => PretrainMode::Vae,
    };
    let mut meta = CheckpointMeta::new(mode, cfg.depth as u8);
    meta.steps = cfg.steps as u64;
    meta.source_dataset = ds.corpus.dataset_id().to_string();
    meta.seed = cfg.seed;
    meta.classification_init = init.is_some();
    meta.config = echo;
    Ok((model.encoder_bundle(meta), log))
}
