//! Self-supervised pretraining: the time-contrastive objective with a
//! momentum key encoder, plus autoencoder and VAE baselines.

mod autoencoder;
mod byol;
mod ema;
mod loss;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use autoencoder::{pretrain_autoencoder, pretrain_autoencoder_from, pretrain_vae, AutoEncoder, AutoEncoderKind};
pub use byol::{pretrain_byol, pretrain_byol_from, ByolTrainer, PairSampler};
pub use ema::ema_update;
pub use loss::{byol_time_loss, gaussian_kl, mse_loss, NORM_EPS};

use crate::dataset::AugmentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerTag {
    Adam,
}

/// How the momentum coefficient evolves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSchedule {
    Constant,
    /// `1 − (1 − τ₀)(cos(πk/K) + 1)/2`, rising from τ₀ to 1.
    Cosine,
}

impl TauSchedule {
    pub fn at(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            TauSchedule::Constant => base,
            TauSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                1.0 - (1.0 - base) * ((std::f64::consts::PI * frac).cos() + 1.0) / 2.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Frame-index gap between the query and key frames.
    pub offset: usize,
    pub lr: f64,
    pub optimizer: OptimizerTag,
    pub tau: f64,
    pub tau_schedule: TauSchedule,
    pub normalize: bool,
    pub predictor: bool,
    /// Also score the swapped pair (key frame through the query branch).
    pub symmetric: bool,
    /// Batch normalization inside the projection and predictor heads.
    pub head_batch_norm: bool,
    /// Number of leading conv layers in the pretrained encoder.
    pub depth: usize,
    pub seed: u64,
    pub input_size: usize,
    pub augment: AugmentConfig,
    /// KL weight of the VAE baseline.
    pub beta: f64,
    pub latent_dim: usize,
    /// Threads for batch assembly; 0 uses the global pool.
    pub workers: usize,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 4500,
            batch_size: 64,
            offset: 3,
            lr: 1e-3,
            optimizer: OptimizerTag::Adam,
            tau: 0.996,
            tau_schedule: TauSchedule::Constant,
            normalize: true,
            predictor: true,
            symmetric: false,
            head_batch_norm: false,
            depth: 3,
            seed: 0,
            input_size: 224,
            augment: AugmentConfig::default(),
            beta: 1.0,
            latent_dim: 128,
            workers: 0,
            log_every: 100,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.offset == 0 {
            return Err(Error::Config("temporal offset must be at least 1".into()));
        }
        ema::check_tau(self.tau)?;
        if !(3..=5).contains(&self.depth) {
            return Err(Error::Config(format!(
                "pretrain depth {} outside {{3, 4, 5}}",
                self.depth
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        self.augment.validate()
    }
}

/// Per-step losses and timings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
    pub seconds: Vec<f64>,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl TrainingLog {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        Self {
            losses: Vec::new(),
            seconds: Vec::new(),
            seed,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn push(&mut self, loss: f64, seconds: f64) {
        self.losses.push(loss);
        self.seconds.push(seconds);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,seconds\n");
        for (i, (l, t)) in self.losses.iter().zip(&self.seconds).enumerate() {
            let _ = writeln!(s, "{},{l},{t:.6}", i + 1);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(Error::io(path))
    }

    pub(crate) fn report_progress(&self, what: &str, every: usize, total: usize) {
        let step = self.losses.len();
        if every == 0 || (step % every != 0 && step != total) {
            return;
        }
        let window = &self.losses[step.saturating_sub(every.max(1))..];
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        let secs = self.seconds[step.saturating_sub(every.max(1))..].iter().sum::<f64>() / window.len() as f64;
        log::info!("{what} step {step}/{total} loss {mean:.5} ({secs:.3} s/step)");
    }
}

/// Runs `f` on a dedicated pool of `workers` threads, or inline when zero.
pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
