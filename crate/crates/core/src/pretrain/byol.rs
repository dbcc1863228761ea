use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{augment_frame, Frame, PlayDataset, StreamKey, Trajectory};
use crate::error::{Error, Result};
use crate::models::{frames_to_tensor, CheckpointMeta, PlayEncoder, PlayEncoderConfig, PretrainMode, WeightBundle};
use crate::nn::{Adam, Scalar, Tensor};
use crate::rng;

use super::ema::ema_params;
use super::loss::byol_time_loss;
use super::{with_workers, PretrainConfig, TrainingLog};

/// Uniform sampler over every `(trajectory, t)` with a frame at `t + offset`.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pairs: Vec<(u32, u32)>,
    offset: usize,
}

impl PairSampler {
    pub fn new(trajectories: &[Trajectory], offset: usize) -> Result<Self> {
        Self::from_lengths(trajectories.iter().map(|t| t.n_frames), offset)
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>, offset: usize) -> Result<Self> {
        if offset == 0 {
            return Err(Error::Config("temporal offset must be at least 1".into()));
        }
        let pairs: Vec<(u32, u32)> = lengths
            .into_iter()
            .enumerate()
            .flat_map(|(i, len)| (0..len.saturating_sub(offset)).map(move |t| (i as u32, t as u32)))
            .collect();
        if pairs.is_empty() {
            return Err(Error::Config(format!(
                "no trajectory is longer than the temporal offset {offset}"
            )));
        }
        Ok(Self { pairs, offset })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(trajectory index, t, t + offset)`, drawn with replacement.
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, usize, usize) {
        let (traj, t) = self.pairs[rng.gen_range(0..self.pairs.len())];
        (traj as usize, t as usize, t as usize + self.offset)
    }
}

/// Online (query) encoder trained by gradient descent and a key encoder that
/// only follows it by momentum.
#[derive(Debug, Clone)]
pub struct ByolTrainer<T> {
    pub online: PlayEncoder<T>,
    pub target: PlayEncoder<T>,
    optimizer: Adam<T>,
    normalize: bool,
    symmetric: bool,
}

impl<T: Scalar> ByolTrainer<T> {
    /// The key encoder starts as an exact copy of the online encoder.
    pub fn new(online: PlayEncoder<T>, lr: f64, normalize: bool, symmetric: bool) -> Self {
        let target = online.without_predictor();
        Self {
            online,
            target,
            optimizer: Adam::new(lr),
            normalize,
            symmetric,
        }
    }

    /// One optimizer step on the online branch followed by the momentum
    /// update of the key branch. Returns the loss before the update.
    pub fn step(&mut self, query: Tensor<T>, key: Tensor<T>, tau: f64) -> Result<f64> {
        self.online.zero_grad();
        let mut total = self.half_step(query.clone(), key.clone())?;
        if self.symmetric {
            total += self.half_step(key, query)?;
        }
        self.optimizer.step(self.online.params_mut());
        ema_params(self.target.params_mut(), self.online.params(), tau)?;
        Ok(total)
    }

    fn half_step(&mut self, query: Tensor<T>, key: Tensor<T>) -> Result<f64> {
        let q = self.online.query(query)?;
        let k = self.target.project(key)?;
        let (loss, grad) = byol_time_loss(&q, &k, self.normalize)?;
        self.online.backward_query(grad);
        Ok(loss.to_f64().unwrap_or(f64::NAN))
    }
}

pub(crate) fn encoder_config(cfg: &PretrainConfig) -> PlayEncoderConfig {
    let mut enc = PlayEncoderConfig::standard(cfg.depth, cfg.input_size);
    enc.proj_dims = vec![384, cfg.latent_dim];
    enc.predictor_dims = cfg.predictor.then(|| vec![384, cfg.latent_dim]);
    enc.head_batch_norm = cfg.head_batch_norm;
    enc
}

/// Loads the first `depth` conv layers from classification weights.
pub(crate) fn init_convs_from<'a, T: Scalar>(
    params: impl Iterator<Item = &'a mut crate::nn::Param<T>>,
    init: &WeightBundle<T>,
) -> Result<()> {
    for p in params {
        if p.name.starts_with("conv") {
            let a = init
                .get(&p.name)
                .ok_or_else(|| Error::Transfer(format!("initialization bundle lacks {}", p.name)))?;
            if a.shape != p.shape {
                return Err(Error::Transfer(format!(
                    "{}: initialization shape {:?} vs encoder shape {:?}",
                    p.name, a.shape, p.shape
                )));
            }
            p.value.copy_from_slice(&a.data);
        }
    }
    Ok(())
}

/// Augmented frames for a batch of `(trajectory, frame)` picks on one branch.
pub(crate) fn augmented_batch(
    trajectories: &[Trajectory],
    picks: &[(usize, usize)],
    cfg: &PretrainConfig,
    step: usize,
    branch: &str,
) -> Result<Vec<Frame>> {
    picks
        .par_iter()
        .enumerate()
        .map(|(slot, &(traj, t))| {
            let trajectory = &trajectories[traj];
            let frame = trajectory.frame(t, cfg.input_size)?;
            let key = StreamKey {
                seed: rng::derive(
                    cfg.seed,
                    &[b"draw", &(step as u64).to_le_bytes(), &(slot as u64).to_le_bytes()],
                ),
                trajectory: &trajectory.id,
                frame: t,
                branch,
            };
            Ok(augment_frame(&frame, &cfg.augment, &key))
        })
        .collect()
}

pub fn pretrain_byol(ds: &PlayDataset, cfg: &PretrainConfig) -> Result<(WeightBundle, TrainingLog)> {
    pretrain_byol_from(ds, cfg, None)
}

/// Time-contrastive pretraining, optionally starting the conv layers from
/// `init` (classification weights for the "-I" variants).
pub fn pretrain_byol_from(
    ds: &PlayDataset,
    cfg: &PretrainConfig,
    init: Option<&WeightBundle>,
) -> Result<(WeightBundle, TrainingLog)> {
    cfg.validate()?;
    let sampler = PairSampler::new(ds.trajectories(), cfg.offset)?;
    let mut cfg = cfg.clone();
    cfg.augment.output_size = cfg.input_size;
    let echo = serde_json::to_value(&cfg)?;
    let mut online = PlayEncoder::<f32>::new(encoder_config(&cfg), cfg.seed)?;
    if let Some(init) = init {
        init_convs_from(online.params_mut(), init)?;
    }
    let mut trainer = ByolTrainer::new(online, cfg.lr, cfg.normalize, cfg.symmetric);
    let mut log = TrainingLog::new(cfg.seed, echo.clone());
    let trajectories = ds.trajectories();
    with_workers(cfg.workers, || -> Result<()> {
        for step in 0..cfg.steps {
            let start = Instant::now();
            let mut pick_rng = rng::stream(cfg.seed, &[b"byol-pairs", &(step as u64).to_le_bytes()]);
            let draws: Vec<_> = (0..cfg.batch_size).map(|_| sampler.sample(&mut pick_rng)).collect();
            let q_picks: Vec<_> = draws.iter().map(|&(i, t, _)| (i, t)).collect();
            let k_picks: Vec<_> = draws.iter().map(|&(i, _, u)| (i, u)).collect();
            let q_frames = augmented_batch(trajectories, &q_picks, &cfg, step, "query")?;
            let k_frames = augmented_batch(trajectories, &k_picks, &cfg, step, "key")?;
            let xq = frames_to_tensor(&q_frames.iter().collect::<Vec<_>>())?;
            let xk = frames_to_tensor(&k_frames.iter().collect::<Vec<_>>())?;
            let tau = cfg.tau_schedule.at(cfg.tau, step, cfg.steps);
            let loss = trainer.step(xq, xk, tau)?;
            if !loss.is_finite() {
                return Err(Error::Validation(format!("loss diverged at step {}", step + 1)));
            }
            log.push(loss, start.elapsed().as_secs_f64());
            log.report_progress("pretrain", cfg.log_every, cfg.steps);
        }
        Ok(())
    })??;
    let mut meta = CheckpointMeta::new(PretrainMode::ByolTime, cfg.depth as u8);
    meta.steps = cfg.steps as u64;
    meta.source_dataset = ds.corpus.dataset_id().to_string();
    meta.seed = cfg.seed;
    meta.classification_init = init.is_some();
    meta.config = echo;
    Ok((trainer.online.to_bundle(meta), log))
}
