//! Play and demonstration corpora stored as frame images on disk.
//!
//! Layout under a dataset root:
//!
//! ```text
//! manifest.json                       schema_version, dataset_id, trajectories[] {id, n_frames, checksum}
//! trajectories/<id>/frames/%06d.jpg   0-based, zero-padded frame index
//! trajectories/<id>/actions.csv       optional; "dx,dy,dz" per transition i -> i+1, no header
//! trajectories/<id>/meta.json         collector, location, duration_s
//! ```
//!
//! Datasets are immutable once loaded. Frames are decoded on demand unless
//! [`Corpus::preload`] was called.

mod augment;
mod frame;
mod manifest;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::jpeg::JpegEncoder;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{augment_frame, AugmentConfig, StreamKey};
pub use frame::{stack_nchw, Frame};
use manifest::{count_frames, frame_path, trajectory_checksum, trajectory_dir, trajectory_dirs};
pub use manifest::{DatasetManifest, ManifestEntry, DATASET_SCHEMA_VERSION, MANIFEST_FILE};

use crate::error::{Error, Result};
use crate::rng;

/// Relative end-effector translation between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionLabel(pub [f32; 3]);

impl ActionLabel {
    pub fn new(delta: [f32; 3]) -> Result<Self> {
        if delta.iter().all(|v| v.is_finite()) {
            Ok(Self(delta))
        } else {
            Err(Error::Validation(format!("non-finite action {delta:?}")))
        }
    }

    pub fn zero() -> Self {
        Self([0.0; 3])
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub collector: String,
    pub location: String,
    pub duration_s: f64,
}

impl Default for TrajectoryMeta {
    fn default() -> Self {
        Self {
            collector: "unknown".into(),
            location: "unknown".into(),
            duration_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Push,
    Stack,
    SyntheticPush,
    SyntheticStack,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Push => "push",
            Task::Stack => "stack",
            Task::SyntheticPush => "synthetic-push",
            Task::SyntheticStack => "synthetic-stack",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "push" => Ok(Task::Push),
            "stack" => Ok(Task::Stack),
            "synthetic-push" => Ok(Task::SyntheticPush),
            "synthetic-stack" => Ok(Task::SyntheticStack),
            other => Err(Error::Argument(format!("unknown task tag {other:?}"))),
        }
    }
}

/// One recorded trajectory; frame `i` lives at `frames/{i:06}.jpg` under `dir`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub id: String,
    pub n_frames: usize,
    pub dir: PathBuf,
    pub actions: Option<Vec<ActionLabel>>,
    pub meta: TrajectoryMeta,
    cache: Option<Arc<Vec<Frame>>>,
}

impl Trajectory {
    pub fn frame_path(&self, index: usize) -> PathBuf {
        frame_path(&self.dir, index)
    }

    /// Decodes frame `index` and resizes it to `size × size`.
    pub fn frame(&self, index: usize, size: usize) -> Result<Frame> {
        if index >= self.n_frames {
            return Err(Error::Argument(format!(
                "frame {index} out of range for trajectory {} with {} frames",
                self.id, self.n_frames
            )));
        }
        if let Some(cache) = &self.cache {
            let f = &cache[index];
            if f.height() == size && f.width() == size {
                return Ok(f.clone());
            }
            return Ok(f.resize(size));
        }
        let path = self.frame_path(index);
        let img = image::open(&path)
            .map_err(|e| Error::Load(format!("cannot decode {}: {e}", path.display())))?
            .to_rgb8();
        Ok(Frame::from_rgb(&img).resize(size))
    }

    pub fn temporal_pairs(&self, offset: usize) -> Vec<(usize, usize)> {
        temporal_pairs(self.n_frames, offset)
    }

    /// In-memory trajectory, used for generated data that never touched disk.
    pub fn in_memory(
        id: impl Into<String>,
        frames: Vec<Frame>,
        actions: Option<Vec<ActionLabel>>,
        meta: TrajectoryMeta,
    ) -> Self {
        Self {
            id: id.into(),
            n_frames: frames.len(),
            dir: PathBuf::new(),
            actions,
            meta,
            cache: Some(Arc::new(frames)),
        }
    }
}

/// All `(t, t + offset)` index pairs of a trajectory of `len` frames, `t` ascending.
///
/// # Panics
/// If `offset` is zero.
pub fn temporal_pairs(len: usize, offset: usize) -> Vec<(usize, usize)> {
    assert!(offset >= 1, "temporal offset must be at least 1");
    (0..len.saturating_sub(offset)).map(|t| (t, t + offset)).collect()
}

/// Trajectories plus the manifest describing them. Shared by play and demo datasets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

impl Corpus {
    pub fn dataset_id(&self) -> &str {
        &self.manifest.dataset_id
    }

    pub fn trajectory_count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn frame_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.n_frames).sum()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.trajectories.iter().map(|t| t.id.as_str()).collect()
    }

    /// Decodes every frame once at `size` and keeps them in memory.
    pub fn preload(&mut self, size: usize) -> Result<()> {
        let loaded: Vec<Vec<Frame>> = self
            .trajectories
            .par_iter()
            .map(|t| (0..t.n_frames).map(|i| t.frame(i, size)).collect())
            .collect::<Result<_>>()?;
        for (t, frames) in self.trajectories.iter_mut().zip(loaded) {
            t.cache = Some(Arc::new(frames));
        }
        Ok(())
    }

    fn subset(&self, keep: &[usize], suffix: &str) -> Corpus {
        let keep: BTreeSet<usize> = keep.iter().copied().collect();
        let trajectories: Vec<Trajectory> = keep.iter().map(|&i| self.trajectories[i].clone()).collect();
        let entries = keep
            .iter()
            .filter_map(|&i| {
                let id = &self.trajectories[i].id;
                self.manifest.trajectories.iter().find(|e| &e.id == id).cloned()
            })
            .collect();
        Corpus {
            root: self.root.clone(),
            manifest: DatasetManifest {
                schema_version: self.manifest.schema_version,
                dataset_id: format!("{}{suffix}", self.manifest.dataset_id),
                trajectories: entries,
            },
            trajectories,
        }
    }

    fn load(root: &Path, verify_checksums: bool) -> Result<Corpus> {
        let manifest = DatasetManifest::read(root)?;
        let on_disk: BTreeSet<String> = trajectory_dirs(root)?.into_iter().collect();
        if on_disk.len() != manifest.trajectory_count() {
            return Err(Error::Integrity(format!(
                "manifest lists {} trajectories but {} are on disk under {}",
                manifest.trajectory_count(),
                on_disk.len(),
                root.join("trajectories").display()
            )));
        }
        let mut trajectories = Vec::with_capacity(manifest.trajectory_count());
        for entry in &manifest.trajectories {
            if !on_disk.contains(&entry.id) {
                return Err(Error::Integrity(format!(
                    "manifest trajectory {:?} has no directory on disk",
                    entry.id
                )));
            }
            let dir = trajectory_dir(root, &entry.id);
            let n_frames = count_frames(&dir)?;
            if n_frames != entry.n_frames {
                return Err(Error::Integrity(format!(
                    "trajectory {:?}: manifest says {} frames, disk has {n_frames}",
                    entry.id, entry.n_frames
                )));
            }
            if n_frames < 2 {
                return Err(Error::Validation(format!(
                    "trajectory {:?} has {n_frames} frame(s); at least 2 are required",
                    entry.id
                )));
            }
            if verify_checksums {
                let sum = trajectory_checksum(&dir, n_frames)?;
                if sum != entry.checksum {
                    return Err(Error::Integrity(format!(
                        "trajectory {:?}: checksum mismatch (manifest {}, disk {sum})",
                        entry.id, entry.checksum
                    )));
                }
            }
            trajectories.push(Trajectory {
                id: entry.id.clone(),
                n_frames,
                meta: read_meta(&dir)?,
                dir,
                actions: None,
                cache: None,
            });
        }
        Ok(Corpus {
            root: root.to_path_buf(),
            manifest,
            trajectories,
        })
    }
}

fn read_meta(dir: &Path) -> Result<TrajectoryMeta> {
    let path = dir.join("meta.json");
    if !path.is_file() {
        log::warn!("{} missing, using defaults", path.display());
        return Ok(TrajectoryMeta::default());
    }
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Parses `actions.csv`: one `dx,dy,dz` row per transition, no header.
pub fn parse_actions(text: &str, source: &str) -> Result<Vec<ActionLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Schema(format!(
                "{source} row {}: expected 3 comma-separated values, got {}",
                i + 1,
                fields.len()
            )));
        }
        let mut delta = [0f32; 3];
        for (d, f) in delta.iter_mut().zip(&fields) {
            *d = f
                .trim()
                .parse()
                .map_err(|_| Error::Schema(format!("{source} row {}: {f:?} is not a decimal number", i + 1)))?;
        }
        out.push(ActionLabel::new(delta).map_err(|e| Error::Validation(format!("{source} row {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn format_actions(actions: &[ActionLabel]) -> String {
    let mut s = String::new();
    for a in actions {
        s.push_str(&format!("{},{},{}\n", a.0[0], a.0[1], a.0[2]));
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub verify_checksums: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { verify_checksums: true }
    }
}

/// Unlabeled playful-interaction corpus.
#[derive(Debug, Clone)]
pub struct PlayDataset {
    pub corpus: Corpus,
}

impl PlayDataset {
    pub fn trajectories(&self) -> &[Trajectory] {
        &self.corpus.trajectories
    }

    pub fn trajectory_count(&self) -> usize {
        self.corpus.trajectory_count()
    }

    pub fn frame_count(&self) -> usize {
        self.corpus.frame_count()
    }

    pub fn location_tags(&self) -> BTreeSet<&str> {
        self.trajectories().iter().map(|t| t.meta.location.as_str()).collect()
    }
}

pub fn load_play_dataset(root: impl AsRef<Path>) -> Result<PlayDataset> {
    load_play_dataset_with(root, LoadOptions::default())
}

pub fn load_play_dataset_with(root: impl AsRef<Path>, opts: LoadOptions) -> Result<PlayDataset> {
    Ok(PlayDataset {
        corpus: Corpus::load(root.as_ref(), opts.verify_checksums)?,
    })
}

/// Labeled expert demonstrations: every trajectory carries `n_frames - 1` actions.
#[derive(Debug, Clone)]
pub struct DemoDataset {
    pub corpus: Corpus,
    pub task: Task,
}

impl DemoDataset {
    pub fn trajectories(&self) -> &[Trajectory] {
        &self.corpus.trajectories
    }

    pub fn trajectory_count(&self) -> usize {
        self.corpus.trajectory_count()
    }

    pub fn frame_count(&self) -> usize {
        self.corpus.frame_count()
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories().iter().map(|t| t.n_frames - 1).sum()
    }

    pub fn actions(&self, traj: usize) -> &[ActionLabel] {
        self.trajectories()[traj]
            .actions
            .as_deref()
            .expect("demo trajectories always carry actions")
    }

    /// Builds a dataset from in-memory trajectories (validates the action rule).
    pub fn from_trajectories(dataset_id: &str, task: Task, trajectories: Vec<Trajectory>) -> Result<Self> {
        for t in &trajectories {
            check_actions(t)?;
        }
        let manifest = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            dataset_id: dataset_id.into(),
            trajectories: trajectories
                .iter()
                .map(|t| ManifestEntry {
                    id: t.id.clone(),
                    n_frames: t.n_frames,
                    checksum: String::new(),
                })
                .collect(),
        };
        Ok(Self {
            corpus: Corpus {
                root: PathBuf::new(),
                manifest,
                trajectories,
            },
            task,
        })
    }
}

fn check_actions(t: &Trajectory) -> Result<()> {
    let Some(actions) = &t.actions else {
        return Err(Error::Schema(format!("trajectory {:?} has no action labels", t.id)));
    };
    if actions.len() + 1 != t.n_frames {
        return Err(Error::Schema(format!(
            "trajectory {:?}: {} frames need {} action rows, found {}",
            t.id,
            t.n_frames,
            t.n_frames.saturating_sub(1),
            actions.len()
        )));
    }
    Ok(())
}

pub fn load_demo_dataset(root: impl AsRef<Path>, task: Task) -> Result<DemoDataset> {
    load_demo_dataset_with(root, task, LoadOptions::default())
}

pub fn load_demo_dataset_with(root: impl AsRef<Path>, task: Task, opts: LoadOptions) -> Result<DemoDataset> {
    let mut corpus = Corpus::load(root.as_ref(), opts.verify_checksums)?;
    for t in &mut corpus.trajectories {
        let path = t.dir.join("actions.csv");
        if !path.is_file() {
            return Err(Error::Schema(format!("trajectory {:?} has no actions.csv", t.id)));
        }
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        t.actions = Some(parse_actions(&text, &path.display().to_string())?);
        check_actions(t)?;
    }
    Ok(DemoDataset { corpus, task })
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("fraction must lie in (0, 1], got {fraction}")))
    }
}

/// Whole-trajectory subsample reaching at least `fraction` of the frames.
///
/// Trajectories are taken in the order of one seeded permutation, so for a
/// fixed seed a smaller fraction always selects a prefix of a larger one.
pub fn subsample_fraction(ds: &PlayDataset, fraction: f64, seed: u64) -> Result<PlayDataset> {
    check_fraction(fraction)?;
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let total = ds.frame_count() as f64;
    let target = fraction * total;
    let mut order: Vec<usize> = (0..ds.trajectory_count()).collect();
    order.shuffle(&mut rng::stream(
        seed,
        &[b"subsample", ds.corpus.dataset_id().as_bytes()],
    ));
    let mut keep = Vec::new();
    let mut frames = 0usize;
    for i in order {
        if frames as f64 >= target {
            break;
        }
        frames += ds.trajectories()[i].n_frames;
        keep.push(i);
    }
    Ok(PlayDataset {
        corpus: ds.corpus.subset(&keep, &format!("@frac{fraction}-seed{seed}")),
    })
}

/// Random whole-trajectory split into `(train, test)` with `n_holdout` test trajectories.
pub fn split_holdout(ds: &DemoDataset, n_holdout: usize, seed: u64) -> Result<(DemoDataset, DemoDataset)> {
    let n = ds.trajectory_count();
    if n_holdout >= n {
        return Err(Error::Argument(format!(
            "cannot hold out {n_holdout} of {n} trajectories"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[b"holdout", ds.corpus.dataset_id().as_bytes()]));
    let (test, train) = order.split_at(n_holdout);
    let make = |idx: &[usize], tag: &str| DemoDataset {
        corpus: ds.corpus.subset(idx, &format!("@{tag}-seed{seed}")),
        task: ds.task,
    };
    Ok((make(train, "train"), make(test, "test")))
}

/// First `count` trajectories of a seeded permutation (whole trajectories).
pub fn take_trajectories(ds: &DemoDataset, count: usize, seed: u64) -> Result<DemoDataset> {
    let n = ds.trajectory_count();
    if count == 0 || count > n {
        return Err(Error::Argument(format!("cannot take {count} of {n} trajectories")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[b"take", ds.corpus.dataset_id().as_bytes()]));
    Ok(DemoDataset {
        corpus: ds.corpus.subset(&order[..count], &format!("@n{count}-seed{seed}")),
        task: ds.task,
    })
}

/// Writes trajectories in the on-disk layout and finishes with the manifest.
pub struct DatasetWriter {
    root: PathBuf,
    dataset_id: String,
    jpeg_quality: u8,
}

impl DatasetWriter {
    pub fn create(root: impl AsRef<Path>, dataset_id: &str) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let dir = root.join("trajectories");
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        Ok(Self {
            root,
            dataset_id: dataset_id.into(),
            jpeg_quality: 95,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_trajectory(
        &self,
        id: &str,
        frames: &[Frame],
        actions: Option<&[ActionLabel]>,
        meta: &TrajectoryMeta,
    ) -> Result<()> {
        let dir = trajectory_dir(&self.root, id);
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(Error::io(&frames_dir))?;
        for (i, frame) in frames.iter().enumerate() {
            let path = frame_path(&dir, i);
            let mut bytes = Vec::new();
            JpegEncoder::new_with_quality(&mut bytes, self.jpeg_quality).encode_image(&frame.to_rgb())?;
            fs::write(&path, bytes).map_err(Error::io(&path))?;
        }
        if let Some(actions) = actions {
            let path = dir.join("actions.csv");
            fs::write(&path, format_actions(actions)).map_err(Error::io(&path))?;
        }
        let path = dir.join("meta.json");
        let mut f = fs::File::create(&path).map_err(Error::io(&path))?;
        serde_json::to_writer_pretty(&mut f, meta)?;
        f.write_all(b"\n").map_err(Error::io(&path))?;
        Ok(())
    }

    /// Scans what was written and stores the manifest.
    pub fn finish(self) -> Result<DatasetManifest> {
        let manifest = DatasetManifest::scan(&self.root, &self.dataset_id)?;
        manifest.write(&self.root)?;
        Ok(manifest)
    }
}
