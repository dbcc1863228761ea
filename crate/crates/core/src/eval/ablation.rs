use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate_checkpoint, EvalReport};
use crate::bc::{prepare_init, train_bc, BCConfig, InitMode, InitSource};
use crate::dataset::{subsample_fraction, take_trajectories, DemoDataset, PlayDataset};
use crate::error::{Error, Result};
use crate::models::WeightBundle;
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Number of pretrained conv layers transferred (3, 4 or 5).
    Layers,
    /// Fraction of the play corpus used for pretraining.
    Fraction,
    /// Number of expert demonstrations used for behavior cloning.
    DemoCount,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Layers => "layers",
            AblationKind::Fraction => "fraction",
            AblationKind::DemoCount => "demo_count",
        }
    }

    pub fn validate_grid(self, grid: &[f64]) -> Result<()> {
        if grid.is_empty() {
            return Err(Error::Argument("ablation grid is empty".into()));
        }
        for &g in grid {
            let ok = match self {
                AblationKind::Layers => [3.0, 4.0, 5.0].contains(&g),
                AblationKind::Fraction => g > 0.0 && g <= 1.0,
                AblationKind::DemoCount => g >= 1.0 && g.fract() == 0.0 && g.is_finite(),
            };
            if !ok {
                return Err(Error::Argument(format!(
                    "grid value {g} is invalid for a {} ablation",
                    self.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// What to sweep and the base configurations every grid point starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub kind: AblationKind,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<InitMode>,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub bc: BCConfig,
}

impl AblationPlan {
    pub fn validate(&self) -> Result<()> {
        self.kind.validate_grid(&self.grid)?;
        if self.seeds.is_empty() {
            return Err(Error::Argument("ablation needs at least one seed".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Argument("ablation needs at least one init mode".into()));
        }
        if self.modes.contains(&InitMode::OtherTask) {
            return Err(Error::Argument("OTHER_TASK is not supported in ablations".into()));
        }
        self.pretrain.validate()?;
        self.bc.validate()
    }
}

/// Inputs shared by every grid point; `heldout` stays fixed for the whole sweep.
#[derive(Clone, Copy)]
pub struct AblationData<'a> {
    pub play: &'a PlayDataset,
    pub train: &'a DemoDataset,
    pub heldout: &'a DemoDataset,
    pub classification: Option<&'a WeightBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub grid_value: f64,
    pub seed: u64,
    pub init_mode: InitMode,
    pub pretrain_depth: u8,
    pub split_hash: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub kind: AblationKind,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub split_hash: String,
    pub points: Vec<AblationPoint>,
}

impl AblationResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,grid_value,seed,task,init_mode,mse\n");
        for p in &self.points {
            let task = p.report.task.map_or("", |t| t.as_str());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.9}",
                self.kind.as_str(),
                p.grid_value,
                p.seed,
                task,
                p.init_mode.as_str(),
                p.report.overall_mse
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(Error::io(path))
    }

    /// Held-out MSE values for one grid value and mode, in seed order.
    pub fn values(&self, grid_value: f64, mode: InitMode) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.grid_value == grid_value && p.init_mode == mode)
            .map(|p| p.report.overall_mse)
            .collect()
    }

    pub fn median(&self, grid_value: f64, mode: InitMode) -> Option<f64> {
        median(&self.values(grid_value, mode))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Hash of the held-out trajectory ids.
pub fn split_hash(heldout: &DemoDataset) -> String {
    let mut ids: Vec<&str> = heldout.corpus.ids();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Sweeps the grid: for each point, seed and mode, pretrains as needed, fine-tunes
/// and evaluates on the shared held-out set.
pub fn run_ablation(plan: &AblationPlan, data: AblationData<'_>) -> Result<AblationResult> {
    plan.validate()?;
    let hash = split_hash(data.heldout);
    let mut points = Vec::new();
    // Demo-count sweeps reuse one pretraining per (seed, mode).
    let mut cached: BTreeMap<(u64, InitMode), InitSource> = BTreeMap::new();
    for &g in &plan.grid {
        for &seed in &plan.seeds {
            let mut pcfg = plan.pretrain.clone();
            let mut bcfg = plan.bc.clone();
            pcfg.seed = seed;
            bcfg.seed = seed;
            let mut play = data.play.clone();
            let mut train = data.train.clone();
            match plan.kind {
                AblationKind::Layers => {
                    pcfg.depth = g as usize;
                    bcfg.depth = g as usize;
                }
                AblationKind::Fraction => play = subsample_fraction(data.play, g, seed)?,
                AblationKind::DemoCount => train = take_trajectories(data.train, g as usize, seed)?,
            }
            for &mode in &plan.modes {
                log::info!(
                    "ablation {} = {g}, seed {seed}, {}",
                    plan.kind.as_str(),
                    mode.table_label()
                );
                let init = match (plan.kind, cached.get(&(seed, mode))) {
                    (AblationKind::DemoCount, Some(init)) => init.clone(),
                    _ => {
                        let (init, _) = prepare_init(mode, &play, &pcfg, data.classification)?;
                        if plan.kind == AblationKind::DemoCount {
                            cached.insert((seed, mode), init.clone());
                        }
                        init
                    }
                };
                let run = train_bc(&train, &init, &bcfg)?;
                let mut report = evaluate_checkpoint(&run.policy, data.heldout)?;
                report.run_id = Some(format!("{}={g}/seed{seed}/{}", plan.kind.as_str(), mode.as_str()));
                points.push(AblationPoint {
                    grid_value: g,
                    seed,
                    init_mode: mode,
                    pretrain_depth: run.policy.meta.pretrain_depth,
                    split_hash: hash.clone(),
                    report,
                });
            }
        }
    }
    Ok(AblationResult {
        kind: plan.kind,
        grid: plan.grid.clone(),
        seeds: plan.seeds.clone(),
        split_hash: hash,
        points,
    })
}
