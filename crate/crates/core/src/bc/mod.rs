//! Behavior cloning of the action policy from expert demonstrations.

mod loss;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use loss::{bc_loss, direction_term, DIRECTION_EPS};

use crate::dataset::{augment_frame, AugmentConfig, DemoDataset, PlayDataset, StreamKey};
use crate::error::{Error, Result};
use crate::models::{
    frames_to_tensor, transfer_pretrained_weights, CheckpointMeta, FeaturePooling, Policy, PolicyConfig, PretrainMode,
    TransferSummary, WeightBundle,
};
use crate::nn::{Adam, Tensor};
use crate::pretrain::{pretrain_autoencoder_from, pretrain_byol_from, AutoEncoderKind, PretrainConfig, TrainingLog};
use crate::rng;

/// Source of the policy weights before fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitMode {
    Scratch,
    Ae,
    Vae,
    Play,
    Classification,
    AeClassification,
    VaeClassification,
    PlayClassification,
    OtherTask,
}

impl InitMode {
    /// Column order of the results table.
    pub const TABLE_ORDER: [InitMode; 9] = [
        InitMode::Scratch,
        InitMode::Ae,
        InitMode::Vae,
        InitMode::Play,
        InitMode::Classification,
        InitMode::AeClassification,
        InitMode::VaeClassification,
        InitMode::PlayClassification,
        InitMode::OtherTask,
    ];

    pub fn table_label(self) -> &'static str {
        match self {
            InitMode::Scratch => "BC",
            InitMode::Ae => "AE",
            InitMode::Vae => "VAE",
            InitMode::Play => "PLAY",
            InitMode::Classification => "BC-I",
            InitMode::AeClassification => "AE-I",
            InitMode::VaeClassification => "VAE-I",
            InitMode::PlayClassification => "PLAY-I",
            InitMode::OtherTask => "BC-OTHER",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Scratch => "SCRATCH",
            InitMode::Ae => "AE",
            InitMode::Vae => "VAE",
            InitMode::Play => "PLAY",
            InitMode::Classification => "CLASSIFICATION",
            InitMode::AeClassification => "AE_CLASSIFICATION",
            InitMode::VaeClassification => "VAE_CLASSIFICATION",
            InitMode::PlayClassification => "PLAY_CLASSIFICATION",
            InitMode::OtherTask => "OTHER_TASK",
        }
    }

    /// Pretraining mode the supplied bundle must carry, if any.
    pub fn required_source(self) -> Option<PretrainMode> {
        match self {
            InitMode::Scratch => None,
            InitMode::Classification => Some(PretrainMode::Classification),
            InitMode::Play | InitMode::PlayClassification => Some(PretrainMode::ByolTime),
            InitMode::Ae | InitMode::AeClassification => Some(PretrainMode::Ae),
            InitMode::Vae | InitMode::VaeClassification => Some(PretrainMode::Vae),
            InitMode::OtherTask => Some(PretrainMode::OtherTask),
        }
    }

    /// Pretrained on play data after starting from classification weights.
    pub fn classification_pretrained(self) -> bool {
        matches!(
            self,
            InitMode::PlayClassification | InitMode::AeClassification | InitMode::VaeClassification
        )
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::TABLE_ORDER
            .into_iter()
            .find(|m| m.as_str() == norm || m.table_label().replace('-', "_") == norm)
            .ok_or_else(|| Error::Argument(format!("unknown init mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BCConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the `1 − cos` direction term.
    pub lambda_dir: f64,
    /// Conv layers taken from a pretrained bundle.
    pub depth: usize,
    pub seed: u64,
    pub input_size: usize,
    /// How the policy turns its last feature map into the action-head input.
    pub pooling: FeaturePooling,
    /// Standardize the pooled features before the action head.
    pub feature_norm: bool,
    pub augment: AugmentConfig,
    pub workers: usize,
    pub log_every: usize,
}

impl Default for BCConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            lr: 3e-4,
            lambda_dir: 1.0,
            depth: 3,
            seed: 0,
            input_size: 224,
            pooling: FeaturePooling::default(),
            feature_norm: true,
            augment: AugmentConfig::default(),
            workers: 0,
            log_every: 100,
        }
    }
}

impl BCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be at least 1".into()));
        }
        if !(self.lambda_dir >= 0.0) {
            return Err(Error::Config(format!(
                "λ_dir must be non-negative, got {}",
                self.lambda_dir
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(3..=5).contains(&self.depth) {
            return Err(Error::Config(format!(
                "transfer depth {} outside {{3, 4, 5}}",
                self.depth
            )));
        }
        self.augment.validate()
    }
}

/// Init mode plus the bundle it draws from.
#[derive(Debug, Clone)]
pub struct InitSource {
    pub mode: InitMode,
    pub bundle: Option<WeightBundle>,
}

impl InitSource {
    pub fn scratch() -> Self {
        Self {
            mode: InitMode::Scratch,
            bundle: None,
        }
    }

    pub fn with_bundle(mode: InitMode, bundle: WeightBundle) -> Self {
        Self {
            mode,
            bundle: Some(bundle),
        }
    }
}

/// Result of one fine-tuning run.
#[derive(Debug, Clone)]
pub struct BcRun {
    pub policy: WeightBundle,
    pub log: TrainingLog,
    pub transfer: Option<TransferSummary>,
}

/// Applies the init mode to a freshly built policy. Returns the transfer summary
/// and the depth recorded in the checkpoint.
pub fn initialize_policy(
    policy: &mut Policy<f32>,
    init: &InitSource,
    depth: usize,
) -> Result<(Option<TransferSummary>, usize)> {
    let Some(required) = init.mode.required_source() else {
        if init.bundle.is_some() {
            log::warn!("SCRATCH init ignores the supplied bundle");
        }
        return Ok((None, depth));
    };
    let bundle = init
        .bundle
        .as_ref()
        .ok_or_else(|| Error::Config(format!("init mode {} needs a weight bundle", init.mode)))?;
    let source = if init.mode == InitMode::OtherTask {
        if bundle.meta.init_mode.is_none() {
            return Err(Error::Config(
                "OTHER_TASK needs a behavior-cloning policy checkpoint".into(),
            ));
        }
        PretrainMode::OtherTask
    } else {
        bundle.meta.pretrain_mode
    };
    if source != required {
        return Err(Error::Config(format!(
            "init mode {} needs a {required} bundle, got {source}",
            init.mode
        )));
    }
    if init.mode.classification_pretrained() && !bundle.meta.classification_init {
        return Err(Error::Config(format!(
            "init mode {} needs a bundle pretrained from classification weights",
            init.mode
        )));
    }
    let depth = match init.mode {
        InitMode::Classification => {
            let mapped = (1..=policy.conv_count())
                .take_while(|i| bundle.get(&format!("conv{i}.weight")).is_some())
                .count();
            if mapped == 0 {
                return Err(Error::Transfer("classification bundle maps no conv layers".into()));
            }
            mapped
        }
        InitMode::OtherTask => policy.conv_count(),
        _ => {
            if bundle.meta.pretrain_depth as usize != depth {
                return Err(Error::Transfer(format!(
                    "bundle was pretrained to depth {}, transfer asks for depth {depth}",
                    bundle.meta.pretrain_depth
                )));
            }
            depth
        }
    };
    let summary = transfer_pretrained_weights(bundle, policy, depth)?;
    Ok((Some(summary), depth))
}

pub fn train_bc(ds: &DemoDataset, init: &InitSource, cfg: &BCConfig) -> Result<BcRun> {
    train_bc_with_hook(ds, init, cfg, |_| {})
}

/// [`train_bc`] with a callback that sees the policy after initialization and
/// before the first update.
pub fn train_bc_with_hook(
    ds: &DemoDataset,
    init: &InitSource,
    cfg: &BCConfig,
    before_first_step: impl FnOnce(&Policy<f32>),
) -> Result<BcRun> {
    cfg.validate()?;
    let samples: Vec<(usize, usize)> = ds
        .trajectories()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.n_frames.saturating_sub(1)).map(move |f| (i, f)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Config("demonstration dataset has no transitions".into()));
    }
    let mut cfg = cfg.clone();
    cfg.augment.output_size = cfg.input_size;
    let policy_cfg = PolicyConfig {
        pooling: cfg.pooling,
        feature_norm: cfg.feature_norm,
        ..PolicyConfig::standard(cfg.input_size)
    };
    let echo = serde_json::json!({ "bc": &cfg, "policy": &policy_cfg, "init_mode": init.mode });
    let mut policy = Policy::<f32>::new(policy_cfg, cfg.seed)?;
    let (transfer, depth) = initialize_policy(&mut policy, init, cfg.depth)?;
    before_first_step(&policy);

    let mut opt = Adam::new(cfg.lr);
    let mut log = TrainingLog::new(cfg.seed, echo.clone());
    let trajectories = ds.trajectories();
    crate::pretrain::with_workers(cfg.workers, || -> Result<()> {
        use rayon::prelude::*;
        for step in 0..cfg.steps {
            let start = Instant::now();
            let step_bytes = (step as u64).to_le_bytes();
            let mut pick = rng::stream(cfg.seed, &[b"bc-batch", &step_bytes]);
            let picks: Vec<_> = (0..cfg.batch_size)
                .map(|_| samples[pick.gen_range(0..samples.len())])
                .collect();
            let frames = picks
                .par_iter()
                .enumerate()
                .map(|(slot, &(ti, t))| {
                    let traj = &trajectories[ti];
                    let frame = traj.frame(t, cfg.input_size)?;
                    let key = StreamKey {
                        seed: rng::derive(cfg.seed, &[b"bc-draw", &step_bytes, &(slot as u64).to_le_bytes()]),
                        trajectory: &traj.id,
                        frame: t,
                        branch: "bc",
                    };
                    Ok(augment_frame(&frame, &cfg.augment, &key))
                })
                .collect::<Result<Vec<_>>>()?;
            let gt: Vec<f32> = picks.iter().flat_map(|&(ti, t)| ds.actions(ti)[t].0).collect();
            let x = frames_to_tensor(&frames.iter().collect::<Vec<_>>())?;
            let gt = Tensor::from_vec(&[picks.len(), 3], gt);
            policy.zero_grad();
            let pred = policy.forward(x)?;
            let (loss, grad) = bc_loss(&pred, &gt, cfg.lambda_dir)?;
            if !loss.is_finite() {
                return Err(Error::Validation(format!("loss diverged at step {}", step + 1)));
            }
            policy.backward(grad);
            opt.step(policy.params_mut());
            log.push(loss as f64, start.elapsed().as_secs_f64());
            log.report_progress("bc", cfg.log_every, cfg.steps);
        }
        Ok(())
    })??;

    let pretrain_mode = match init.mode {
        InitMode::Scratch => PretrainMode::None,
        InitMode::OtherTask => PretrainMode::OtherTask,
        _ => init
            .bundle
            .as_ref()
            .map_or(PretrainMode::None, |b| b.meta.pretrain_mode),
    };
    let mut meta = CheckpointMeta::new(pretrain_mode, depth.clamp(3, 5) as u8);
    meta.steps = cfg.steps as u64;
    meta.source_dataset = ds.corpus.dataset_id().to_string();
    meta.seed = cfg.seed;
    meta.init_mode = Some(init.mode);
    meta.task = Some(ds.task);
    meta.classification_init = init.mode.classification_pretrained() || init.mode == InitMode::Classification;
    meta.config = echo;
    Ok(BcRun {
        policy: policy.to_bundle(meta),
        log,
        transfer,
    })
}

/// Runs the pretraining an init mode calls for and returns the matching source.
///
/// `classification` supplies the ImageNet-style weights for the classification
/// modes. OTHER_TASK needs an existing policy checkpoint and is not handled here.
pub fn prepare_init(
    mode: InitMode,
    play: &PlayDataset,
    pretrain: &PretrainConfig,
    classification: Option<&WeightBundle>,
) -> Result<(InitSource, Option<TrainingLog>)> {
    let needs_cls = mode == InitMode::Classification || mode.classification_pretrained();
    let cls = if needs_cls {
        Some(classification.ok_or_else(|| Error::Config(format!("init mode {mode} needs classification weights")))?)
    } else {
        None
    };
    let (bundle, log) = match mode {
        InitMode::Scratch => return Ok((InitSource::scratch(), None)),
        InitMode::Classification => {
            let bundle = cls.cloned().expect("checked above");
            return Ok((InitSource::with_bundle(mode, bundle), None));
        }
        InitMode::Play | InitMode::PlayClassification => pretrain_byol_from(play, pretrain, cls)?,
        InitMode::Ae | InitMode::AeClassification => {
            pretrain_autoencoder_from(play, pretrain, AutoEncoderKind::Plain, cls)?
        }
        InitMode::Vae | InitMode::VaeClassification => {
            pretrain_autoencoder_from(play, pretrain, AutoEncoderKind::Variational, cls)?
        }
        InitMode::OtherTask => {
            return Err(Error::Config(
                "OTHER_TASK needs a policy checkpoint trained on another task".into(),
            ))
        }
    };
    Ok((InitSource::with_bundle(mode, bundle), Some(log)))
}
