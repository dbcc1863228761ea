//! Held-out evaluation, action overlays, ablations and results tables.

mod ablation;
mod overlay;
mod table;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablation::{
    median, run_ablation, split_hash, AblationData, AblationKind, AblationPlan, AblationPoint, AblationResult,
};
pub use overlay::{render_action_overlay, render_overlay_strip, OverlayStyle};
pub use table::{compile_results_table, ResultsTable, TableLayout};

use crate::bc::InitMode;
use crate::dataset::{DemoDataset, Frame, Task, Trajectory};
use crate::error::{Error, Result};
use crate::models::{Policy, PolicyConfig, WeightBundle};

/// Declared in every report so numbers stay comparable across runs.
pub const MSE_REDUCTION: &str = "mean over the 3 action components, then mean over all transitions";

/// Anything that predicts one action per transition of a trajectory.
pub trait ActionModel {
    fn id(&self) -> String;

    /// `frames[t]` is frame `t`; returns one prediction per transition.
    fn predict(&mut self, trajectory: &Trajectory, frames: &[Frame]) -> Result<Vec<[f32; 3]>>;
}

/// Network policy evaluated in chunks.
pub struct PolicyModel {
    pub policy: Policy<f32>,
    pub id: String,
    pub chunk: usize,
}

impl PolicyModel {
    /// Rebuilds the policy described by a behavior-cloning checkpoint.
    pub fn from_checkpoint(bundle: &WeightBundle) -> Result<Self> {
        let cfg: PolicyConfig = bundle
            .meta
            .config
            .get("policy")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no policy configuration".into()))
            .and_then(|v| serde_json::from_value(v).map_err(Error::from))?;
        let mut policy = Policy::new(cfg, 0)?;
        policy.load_bundle(bundle)?;
        Ok(Self {
            policy,
            id: bundle.content_id(),
            chunk: 64,
        })
    }
}

impl ActionModel for PolicyModel {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn predict(&mut self, trajectory: &Trajectory, frames: &[Frame]) -> Result<Vec<[f32; 3]>> {
        let inputs: Vec<&Frame> = frames[..trajectory.n_frames - 1].iter().collect();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.chunk.max(1)) {
            out.extend(self.policy.predict_frames(chunk)?);
        }
        Ok(out)
    }
}

/// Replays the recorded ground truth.
pub struct ReplayOracle;

impl ActionModel for ReplayOracle {
    fn id(&self) -> String {
        "replay-oracle".into()
    }

    fn predict(&mut self, trajectory: &Trajectory, _frames: &[Frame]) -> Result<Vec<[f32; 3]>> {
        let actions = trajectory
            .actions
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("trajectory {:?} is unlabeled", trajectory.id)))?;
        Ok(actions.iter().map(|a| a.0).collect())
    }
}

/// Predicts the same action everywhere.
pub struct ConstantModel(pub [f32; 3]);

impl ActionModel for ConstantModel {
    fn id(&self) -> String {
        format!("constant{:?}", self.0)
    }

    fn predict(&mut self, trajectory: &Trajectory, _frames: &[Frame]) -> Result<Vec<[f32; 3]>> {
        Ok(vec![self.0; trajectory.n_frames - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMse {
    pub id: String,
    pub transitions: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub dataset_id: String,
    pub task: Option<Task>,
    pub init_mode: Option<InitMode>,
    #[serde(default)]
    pub run_id: Option<String>,
    pub trajectories: usize,
    pub transitions: usize,
    pub overall_mse: f64,
    pub per_trajectory: Vec<TrajectoryMse>,
    pub reduction: String,
}

impl EvalReport {
    /// Frame-weighted mean of the per-trajectory values.
    pub fn weighted_mean(&self) -> f64 {
        let n: usize = self.per_trajectory.iter().map(|t| t.transitions).sum();
        self.per_trajectory
            .iter()
            .map(|t| t.mse * t.transitions as f64)
            .sum::<f64>()
            / n.max(1) as f64
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(Error::io(path))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Mean squared action error over every transition of `heldout`.
///
/// Frames are only resized to `input_size`; no augmentation is applied.
pub fn evaluate_mse(model: &mut dyn ActionModel, heldout: &DemoDataset, input_size: usize) -> Result<EvalReport> {
    if heldout.trajectory_count() == 0 {
        return Err(Error::Argument("held-out dataset is empty".into()));
    }
    let mut per_trajectory = Vec::with_capacity(heldout.trajectory_count());
    let mut total = 0.0f64;
    let mut count = 0usize;
    for traj in heldout.trajectories() {
        let actions = traj
            .actions
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("trajectory {:?} is unlabeled", traj.id)))?;
        let frames = (0..traj.n_frames - 1)
            .map(|t| traj.frame(t, input_size))
            .collect::<Result<Vec<_>>>()?;
        let preds = model.predict(traj, &frames)?;
        if preds.len() != actions.len() {
            return Err(Error::Shape(format!(
                "model returned {} predictions for {} transitions of {:?}",
                preds.len(),
                actions.len(),
                traj.id
            )));
        }
        let sum: f64 = preds
            .iter()
            .zip(actions)
            .map(|(p, a)| {
                p.iter()
                    .zip(&a.0)
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum::<f64>()
                    / 3.0
            })
            .sum();
        total += sum;
        count += actions.len();
        per_trajectory.push(TrajectoryMse {
            id: traj.id.clone(),
            transitions: actions.len(),
            mse: sum / actions.len() as f64,
        });
    }
    let report = EvalReport {
        checkpoint_id: model.id(),
        dataset_id: heldout.corpus.dataset_id().to_string(),
        task: Some(heldout.task),
        init_mode: None,
        run_id: None,
        trajectories: heldout.trajectory_count(),
        transitions: count,
        overall_mse: total / count as f64,
        per_trajectory,
        reduction: MSE_REDUCTION.into(),
    };
    let weighted = report.weighted_mean();
    if (weighted - report.overall_mse).abs() > 1e-9 * report.overall_mse.abs().max(1e-12) {
        return Err(Error::Validation(format!(
            "inconsistent report: overall {} vs frame-weighted {weighted}",
            report.overall_mse
        )));
    }
    Ok(report)
}

/// Evaluates a behavior-cloning checkpoint; the report inherits its init mode.
pub fn evaluate_checkpoint(bundle: &WeightBundle, heldout: &DemoDataset) -> Result<EvalReport> {
    let mut model = PolicyModel::from_checkpoint(bundle)?;
    let size = model.policy.config.input_size;
    let mut report = evaluate_mse(&mut model, heldout, size)?;
    report.init_mode = bundle.meta.init_mode;
    Ok(report)
}
