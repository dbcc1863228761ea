//! Experiment orchestration: TOML run configs, content-addressed run ids and an
//! append-only JSONL run registry.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bc::{train_bc, BCConfig, InitMode, InitSource};
use crate::dataset::{load_demo_dataset, load_play_dataset, split_holdout, Task};
use crate::error::{Error, Result};
use crate::eval::{
    compile_results_table, evaluate_checkpoint, render_overlay_strip, run_ablation, AblationData, AblationKind,
    AblationPlan, EvalReport, OverlayStyle, PolicyModel, TableLayout,
};
use crate::models::{checkpoint, import_classification_weights, NameMapping, WeightBundle};
use crate::pretrain::{pretrain_autoencoder_from, pretrain_byol_from, AutoEncoderKind, PretrainConfig};
use crate::synthgen::{generate_expert_demos, generate_play_synthetic, SynthConfig};

pub const REGISTRY_FILE: &str = "registry.jsonl";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrain,
    TrainBc,
    Eval,
    Ablate,
    Synthgen,
    ImportWeights,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Pretrain,
        Stage::TrainBc,
        Stage::Eval,
        Stage::Ablate,
        Stage::Synthgen,
        Stage::ImportWeights,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::TrainBc => "train-bc",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
            Stage::Synthgen => "synthgen",
            Stage::ImportWeights => "import-weights",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stage {s:?}")))
    }
}

/// Pretraining objective of the `pretrain` stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMethod {
    #[default]
    Byol,
    Ae,
    Vae,
}

/// Input and reference paths. Relative paths resolve against the data root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub play: Option<PathBuf>,
    pub demos: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub task: Option<Task>,
    /// Held-out trajectories split off `demos` when `heldout` is absent.
    pub n_holdout: Option<usize>,
    /// Pretrained bundle used by `train-bc`.
    pub init_checkpoint: Option<PathBuf>,
    /// Policy checkpoint evaluated by `eval`.
    pub checkpoint: Option<PathBuf>,
    /// Classification bundle (checkpoint format) for the "-I" modes.
    pub classification: Option<PathBuf>,
    /// safetensors file read by `import-weights`.
    pub weights: Option<PathBuf>,
    /// JSON layer-name mapping for `import-weights`.
    pub mapping: Option<PathBuf>,
    /// Evaluation reports compiled by `report`; empty means all registered ones.
    pub reports: Vec<PathBuf>,
}

impl DataPaths {
    fn each_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [
            &mut self.play,
            &mut self.demos,
            &mut self.heldout,
            &mut self.init_checkpoint,
            &mut self.checkpoint,
            &mut self.classification,
            &mut self.weights,
            &mut self.mapping,
        ]
        .into_iter()
        .flatten()
        .chain(self.reports.iter_mut())
    }
}

/// Dataset sizes for the `synthgen` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCounts {
    pub play: usize,
    pub demos: usize,
    pub heldout: usize,
    pub task: Task,
}

impl Default for SynthCounts {
    fn default() -> Self {
        Self {
            play: 200,
            demos: 20,
            heldout: 50,
            task: Task::SyntheticPush,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub kind: AblationKind,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<InitMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stage: Stage,
    /// Overrides the seed of every nested block when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub init_mode: Option<InitMode>,
    #[serde(default)]
    pub method: PretrainMethod,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub bc: BCConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub synth_counts: SynthCounts,
    #[serde(default)]
    pub ablation: Option<AblationSpec>,
    #[serde(default)]
    pub table_layout: Option<TableLayout>,
    /// Number of held-out frames drawn in the `eval` overlay strip; 0 disables it.
    #[serde(default)]
    pub overlay_frames: usize,
}

impl ExperimentConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            seed: None,
            output_dir: None,
            init_mode: None,
            method: PretrainMethod::default(),
            data: DataPaths::default(),
            pretrain: PretrainConfig::default(),
            bc: BCConfig::default(),
            synth: SynthConfig::default(),
            synth_counts: SynthCounts::default(),
            ablation: None,
            table_layout: None,
            overlay_frames: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("invalid experiment config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Pushes the top-level seed into every nested block.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.pretrain.seed = seed;
        self.bc.seed = seed;
        self.synth.seed = seed;
    }

    /// Makes relative data paths absolute under `root`.
    pub fn resolve_paths(&mut self, root: &Path) {
        for p in self.data.each_mut() {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
    }

    fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        let p = path
            .as_deref()
            .ok_or_else(|| Error::Validation(format!("stage {} needs data.{what}", self.stage)))?;
        if !p.exists() {
            return Err(Error::Validation(format!(
                "data.{what} path {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    fn require_task(&self) -> Result<Task> {
        self.data
            .task
            .ok_or_else(|| Error::Validation(format!("stage {} needs data.task", self.stage)))
    }

    fn check_optional(&self, path: &Option<PathBuf>, what: &str) -> Result<()> {
        match path {
            Some(p) if !p.exists() => Err(Error::Validation(format!(
                "data.{what} path {} does not exist",
                p.display()
            ))),
            _ => Ok(()),
        }
    }

    /// Schema and path checks; runs before any work.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Validation(m),
            other => other,
        };
        let d = &self.data;
        match self.stage {
            Stage::Pretrain => {
                self.require(&d.play, "play")?;
                self.check_optional(&d.classification, "classification")?;
                self.pretrain.validate().map_err(wrap)?;
            }
            Stage::TrainBc => {
                self.require(&d.demos, "demos")?;
                self.require_task()?;
                let mode = self
                    .init_mode
                    .ok_or_else(|| Error::Validation("stage train-bc needs init_mode".into()))?;
                if mode != InitMode::Scratch {
                    self.require(&d.init_checkpoint, "init_checkpoint")?;
                }
                self.check_optional(&d.heldout, "heldout")?;
                self.bc.validate().map_err(wrap)?;
            }
            Stage::Eval => {
                self.require(&d.checkpoint, "checkpoint")?;
                self.require(&d.heldout, "heldout")?;
                self.require_task()?;
            }
            Stage::Ablate => {
                self.require(&d.play, "play")?;
                self.require(&d.demos, "demos")?;
                self.require_task()?;
                if d.heldout.is_none() && d.n_holdout.is_none() {
                    return Err(Error::Validation(
                        "stage ablate needs data.heldout or data.n_holdout".into(),
                    ));
                }
                self.check_optional(&d.heldout, "heldout")?;
                self.check_optional(&d.classification, "classification")?;
                self.ablation_plan()?.validate().map_err(|e| match e {
                    Error::Argument(m) | Error::Config(m) => Error::Validation(m),
                    other => other,
                })?;
            }
            Stage::Synthgen => {
                self.synth.validate().map_err(wrap)?;
                let c = &self.synth_counts;
                if c.play == 0 || c.demos == 0 || c.heldout == 0 {
                    return Err(Error::Validation("synth_counts entries must be at least 1".into()));
                }
                if !matches!(c.task, Task::SyntheticPush | Task::SyntheticStack) {
                    return Err(Error::Validation(format!("synthgen cannot produce task {}", c.task)));
                }
            }
            Stage::ImportWeights => {
                self.require(&d.weights, "weights")?;
                self.check_optional(&d.mapping, "mapping")?;
            }
            Stage::Report => {
                for p in &d.reports {
                    if !p.exists() {
                        return Err(Error::Validation(format!("report {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    fn ablation_plan(&self) -> Result<AblationPlan> {
        let spec = self
            .ablation
            .as_ref()
            .ok_or_else(|| Error::Validation("stage ablate needs an [ablation] block".into()))?;
        Ok(AblationPlan {
            kind: spec.kind,
            grid: spec.grid.clone(),
            seeds: spec.seeds.clone(),
            modes: spec.modes.clone(),
            pretrain: self.pretrain.clone(),
            bc: self.bc.clone(),
        })
    }

    /// Canonical JSON echo: keys sorted, output directory excluded.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        Ok(serde_json::to_string(&v)?)
    }

    /// Content hash of the canonical config and the code version.
    pub fn run_id(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.canonical_json()?.as_bytes());
        h.update(b"\0");
        h.update(CODE_VERSION.as_bytes());
        Ok(hex::encode(&h.finalize()[..8]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Hash of the config; equal across forced re-runs.
    pub config_hash: String,
    pub stage: Stage,
    pub code_version: String,
    pub config: serde_json::Value,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub status: RunStatus,
    #[serde(default)]
    pub diagnostics: Option<String>,
    pub output_dir: PathBuf,
    pub artifacts: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub init_mode: Option<InitMode>,
}

/// Options of one invocation that are not part of the config hash.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Root holding `registry.jsonl` and one directory per run.
    pub out: PathBuf,
    /// Re-run even when an identical config already completed.
    pub force: bool,
}

/// Runs one stage, writes artifacts under `<out>/<run_id>/` and appends a record.
///
/// Validation errors and duplicate runs fail before any work. A failing stage
/// still produces a record with status `failed`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let config_hash = cfg.run_id()?;
    let registry = opts.out.join(REGISTRY_FILE);
    let (existing, _) = read_registry(&registry)?;
    let previous: Vec<&RunRecord> = existing.iter().filter(|r| r.config_hash == config_hash).collect();
    if let Some(done) = previous.iter().find(|r| r.status == RunStatus::Completed) {
        if !opts.force {
            return Err(Error::Conflict(format!(
                "an identical config already ran as {}; pass --force to run it again",
                done.run_id
            )));
        }
        log::warn!("re-running config {config_hash} (already completed as {})", done.run_id);
    }
    let run_id = if previous.is_empty() {
        config_hash.clone()
    } else {
        format!("{config_hash}-r{}", previous.len())
    };
    let dir = opts.out.join(&run_id);
    fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?).map_err(Error::io(&config_path))?;

    let started = Utc::now();
    log::info!("run {run_id}: stage {}", cfg.stage);
    let outcome = execute(cfg, &dir, &registry);
    let finished = Utc::now();
    let (status, diagnostics, mut artifacts) = match outcome {
        Ok(a) => (RunStatus::Completed, None, a),
        Err(e) => {
            log::error!("run {run_id} failed: {e}");
            (RunStatus::Failed, Some(e.to_string()), BTreeMap::new())
        }
    };
    artifacts.insert("config".into(), config_path);
    let record = RunRecord {
        run_id,
        config_hash,
        stage: cfg.stage,
        code_version: CODE_VERSION.into(),
        config: serde_json::from_str(&cfg.canonical_json()?)?,
        started,
        finished,
        status,
        diagnostics,
        output_dir: dir,
        artifacts,
        task: cfg.data.task.or(match cfg.stage {
            Stage::Synthgen => Some(cfg.synth_counts.task),
            _ => None,
        }),
        init_mode: cfg.init_mode,
    };
    append_record(&registry, &record)?;
    Ok(record)
}

type Artifacts = BTreeMap<String, PathBuf>;

fn execute(cfg: &ExperimentConfig, dir: &Path, registry: &Path) -> Result<Artifacts> {
    let d = &cfg.data;
    let mut out = Artifacts::new();
    let load_classification =
        || -> Result<Option<WeightBundle>> { d.classification.as_deref().map(checkpoint::load::<f32>).transpose() };
    match cfg.stage {
        Stage::Pretrain => {
            let play = load_play_dataset(d.play.as_deref().expect("validated"))?;
            let cls = load_classification()?;
            let (bundle, log) = match cfg.method {
                PretrainMethod::Byol => pretrain_byol_from(&play, &cfg.pretrain, cls.as_ref())?,
                PretrainMethod::Ae => {
                    pretrain_autoencoder_from(&play, &cfg.pretrain, AutoEncoderKind::Plain, cls.as_ref())?
                }
                PretrainMethod::Vae => {
                    pretrain_autoencoder_from(&play, &cfg.pretrain, AutoEncoderKind::Variational, cls.as_ref())?
                }
            };
            out.insert("checkpoint".into(), save_bundle(&bundle, dir, "encoder.ckpt")?);
            out.insert("log".into(), write_log(&log, dir)?);
        }
        Stage::TrainBc => {
            let task = cfg.data.task.expect("validated");
            let demos = load_demo_dataset(d.demos.as_deref().expect("validated"), task)?;
            let mode = cfg.init_mode.expect("validated");
            let init = match mode {
                InitMode::Scratch => InitSource::scratch(),
                _ => InitSource::with_bundle(
                    mode,
                    checkpoint::load(d.init_checkpoint.as_deref().expect("validated"))?,
                ),
            };
            let run = train_bc(&demos, &init, &cfg.bc)?;
            out.insert("checkpoint".into(), save_bundle(&run.policy, dir, "policy.ckpt")?);
            out.insert("log".into(), write_log(&run.log, dir)?);
            if let Some(summary) = &run.transfer {
                let path = dir.join("transfer.json");
                fs::write(&path, serde_json::to_string_pretty(summary)?).map_err(Error::io(&path))?;
                out.insert("transfer".into(), path);
            }
            if let Some(h) = &d.heldout {
                let heldout = load_demo_dataset(h, task)?;
                let mut report = evaluate_checkpoint(&run.policy, &heldout)?;
                report.run_id = Some(dir_name(dir));
                out.insert("report".into(), write_report(&report, dir)?);
            }
        }
        Stage::Eval => {
            let task = cfg.data.task.expect("validated");
            let bundle = checkpoint::load::<f32>(d.checkpoint.as_deref().expect("validated"))?;
            let heldout = load_demo_dataset(d.heldout.as_deref().expect("validated"), task)?;
            let mut report = evaluate_checkpoint(&bundle, &heldout)?;
            report.run_id = Some(dir_name(dir));
            out.insert("report".into(), write_report(&report, dir)?);
            if cfg.overlay_frames > 0 {
                out.insert(
                    "overlay".into(),
                    write_overlay(&bundle, &heldout, cfg.overlay_frames, dir)?,
                );
            }
        }
        Stage::Ablate => {
            let task = cfg.data.task.expect("validated");
            let play = load_play_dataset(d.play.as_deref().expect("validated"))?;
            let demos = load_demo_dataset(d.demos.as_deref().expect("validated"), task)?;
            let (train, heldout) = match &d.heldout {
                Some(h) => (demos, load_demo_dataset(h, task)?),
                None => split_holdout(&demos, d.n_holdout.expect("validated"), cfg.seed.unwrap_or(0))?,
            };
            let cls = load_classification()?;
            let plan = cfg.ablation_plan()?;
            let result = run_ablation(
                &plan,
                AblationData {
                    play: &play,
                    train: &train,
                    heldout: &heldout,
                    classification: cls.as_ref(),
                },
            )?;
            let points = dir.join("points");
            fs::create_dir_all(&points).map_err(Error::io(&points))?;
            for (i, p) in result.points.iter().enumerate() {
                let name = format!("{:03}_{}_seed{}_{}", i, p.grid_value, p.seed, p.init_mode.as_str());
                let path = points.join(format!("{name}.json"));
                p.report.write_json(&path)?;
                out.insert(format!("point/{name}"), path);
            }
            let csv = dir.join("ablation.csv");
            result.write_csv(&csv)?;
            out.insert("csv".into(), csv);
            let json = dir.join("ablation.json");
            fs::write(&json, serde_json::to_string_pretty(&result)?).map_err(Error::io(&json))?;
            out.insert("result".into(), json);
        }
        Stage::Synthgen => {
            let c = &cfg.synth_counts;
            let seed = cfg.synth.seed;
            let play = dir.join("play");
            generate_play_synthetic(&cfg.synth, c.play, seed, &play)?;
            out.insert("play".into(), play);
            let demos = dir.join("demos");
            generate_expert_demos(
                &cfg.synth,
                c.demos,
                crate::rng::derive(seed, &[b"train"]),
                &demos,
                c.task,
            )?;
            out.insert("demos".into(), demos);
            let heldout = dir.join("heldout");
            generate_expert_demos(
                &cfg.synth,
                c.heldout,
                crate::rng::derive(seed, &[b"heldout"]),
                &heldout,
                c.task,
            )?;
            out.insert("heldout".into(), heldout);
        }
        Stage::ImportWeights => {
            let path = d.weights.as_deref().expect("validated");
            let bytes = fs::read(path).map_err(Error::io(path))?;
            let mapping = match &d.mapping {
                Some(m) => NameMapping::from_json_file(m)?,
                None => NameMapping::torchvision_alexnet(),
            };
            let bundle = import_classification_weights(&bytes, &mapping, &path.display().to_string())?;
            out.insert("checkpoint".into(), save_bundle(&bundle, dir, "classification.ckpt")?);
        }
        Stage::Report => {
            let reports = if d.reports.is_empty() {
                registered_reports(registry)?
            } else {
                d.reports
                    .iter()
                    .map(|p| EvalReport::read_json(p))
                    .collect::<Result<Vec<_>>>()?
            };
            let table = compile_results_table(&reports, cfg.table_layout.unwrap_or(TableLayout::Full))?;
            let txt = dir.join("table.txt");
            fs::write(&txt, table.to_text()).map_err(Error::io(&txt))?;
            let csv = dir.join("table.csv");
            fs::write(&csv, table.to_csv()).map_err(Error::io(&csv))?;
            print!("{}", table.to_text());
            out.insert("table".into(), txt);
            out.insert("csv".into(), csv);
        }
    }
    Ok(out)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn save_bundle(bundle: &WeightBundle, dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    checkpoint::save(bundle, &path)?;
    Ok(path)
}

fn write_log(log: &crate::pretrain::TrainingLog, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("log.csv");
    log.write_csv(&path)?;
    Ok(path)
}

fn write_report(report: &EvalReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("report.json");
    report.write_json(&path)?;
    Ok(path)
}

fn write_overlay(
    bundle: &WeightBundle,
    heldout: &crate::dataset::DemoDataset,
    n: usize,
    dir: &Path,
) -> Result<PathBuf> {
    let mut model = PolicyModel::from_checkpoint(bundle)?;
    let size = model.policy.config.input_size;
    let traj = &heldout.trajectories()[0];
    let count = n.min(traj.n_frames - 1);
    let frames = (0..count).map(|t| traj.frame(t, size)).collect::<Result<Vec<_>>>()?;
    let preds = model.policy.predict_frames(&frames.iter().collect::<Vec<_>>())?;
    let gts: Vec<[f32; 3]> = heldout.actions(0)[..count].iter().map(|a| a.0).collect();
    let strip = render_overlay_strip(&frames, &preds, &gts, &OverlayStyle::default());
    let path = dir.join("overlay.png");
    strip.save(&path)?;
    Ok(path)
}

/// Reports of completed runs, read from their artifact paths.
fn registered_reports(registry: &Path) -> Result<Vec<EvalReport>> {
    let (records, _) = read_registry(registry)?;
    records
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .filter_map(|r| r.artifacts.get("report"))
        .map(|p| EvalReport::read_json(p))
        .collect()
}

fn append_record(registry: &Path, record: &RunRecord) -> Result<()> {
    if let Some(parent) = registry.parent() {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(registry)
        .map_err(Error::io(registry))?;
    file.lock().map_err(Error::io(registry))?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let res = file.write_all(line.as_bytes()).map_err(Error::io(registry));
    let _ = file.unlock();
    res
}

/// All parseable records plus the number of corrupt lines skipped.
/// A missing registry reads as empty.
pub fn read_registry(registry: &Path) -> Result<(Vec<RunRecord>, usize)> {
    let file = match File::open(registry) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => {
            return Err(Error::Io {
                path: registry.into(),
                source: e,
            })
        }
    };
    file.lock_shared().map_err(Error::io(registry))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for (i, line) in BufReader::new(&file).lines().enumerate() {
        let line = line.map_err(Error::io(registry))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}:{}: skipping corrupt registry line ({e})", registry.display(), i + 1);
                skipped += 1;
            }
        }
    }
    let _ = file.unlock();
    Ok((records, skipped))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryFilter {
    pub stage: Option<Stage>,
    pub task: Option<Task>,
    pub init_mode: Option<InitMode>,
    /// Records that started at or after this instant.
    pub since: Option<DateTime<Utc>>,
    /// Records that started before this instant.
    pub until: Option<DateTime<Utc>>,
}

impl RegistryFilter {
    pub fn matches(&self, r: &RunRecord) -> bool {
        self.stage.map_or(true, |s| r.stage == s)
            && self.task.map_or(true, |t| r.task == Some(t))
            && self.init_mode.map_or(true, |m| r.init_mode == Some(m))
            && self.since.map_or(true, |t| r.started >= t)
            && self.until.map_or(true, |t| r.started < t)
    }
}

/// Records matching `filter`, plus the count of corrupt lines skipped.
pub fn record_registry(registry: &Path, filter: &RegistryFilter) -> Result<(Vec<RunRecord>, usize)> {
    let (records, skipped) = read_registry(registry)?;
    Ok((records.into_iter().filter(|r| filter.matches(r)).collect(), skipped))
}
