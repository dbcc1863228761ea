use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub n_frames: usize,
    pub checksum: String,
}

/// Index of a dataset directory, stored as `<root>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub dataset_id: String,
    pub trajectories: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn trajectory_count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn total_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.n_frames).sum()
    }

    pub fn frame_counts(&self) -> Vec<usize> {
        self.trajectories.iter().map(|t| t.n_frames).collect()
    }

    /// Canonical byte encoding: pretty JSON plus a trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::Load(format!("missing manifest at {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Load(format!("unreadable manifest {}: {e}", path.display())))?;
        if manifest.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Load(format!(
                "manifest schema version {} is not supported (expected {DATASET_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, self.to_bytes()).map_err(Error::io(&path))
    }

    /// Rebuilds the manifest from what is on disk, trajectories in sorted id order.
    pub fn scan(root: &Path, dataset_id: &str) -> Result<Self> {
        let mut ids = trajectory_dirs(root)?;
        ids.sort();
        let trajectories = ids
            .into_iter()
            .map(|id| {
                let dir = trajectory_dir(root, &id);
                let n_frames = count_frames(&dir)?;
                let checksum = trajectory_checksum(&dir, n_frames)?;
                Ok(ManifestEntry { id, n_frames, checksum })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema_version: DATASET_SCHEMA_VERSION,
            dataset_id: dataset_id.to_string(),
            trajectories,
        })
    }
}

pub(crate) fn trajectory_dir(root: &Path, id: &str) -> PathBuf {
    root.join("trajectories").join(id)
}

pub(crate) fn frame_path(traj_dir: &Path, index: usize) -> PathBuf {
    traj_dir.join("frames").join(format!("{index:06}.jpg"))
}

pub(crate) fn trajectory_dirs(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("trajectories");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(Error::io(&dir))? {
        let entry = entry.map_err(Error::io(&dir))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(ids)
}

/// Number of frames in `<traj>/frames`, requiring names `000000.jpg..` without gaps.
pub(crate) fn count_frames(traj_dir: &Path) -> Result<usize> {
    let dir = traj_dir.join("frames");
    if !dir.is_dir() {
        return Ok(0);
    }
    let mut indices = Vec::new();
    for entry in fs::read_dir(&dir).map_err(Error::io(&dir))? {
        let entry = entry.map_err(Error::io(&dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".jpg") else {
            continue;
        };
        if stem.len() != 6 {
            continue;
        }
        if let Ok(i) = stem.parse::<usize>() {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    if let Some((pos, &i)) = indices.iter().enumerate().find(|(pos, &i)| *pos != i) {
        return Err(Error::Integrity(format!(
            "{}: frame indices are not contiguous (expected {pos:06}.jpg, found {i:06}.jpg)",
            dir.display()
        )));
    }
    Ok(indices.len())
}

/// SHA-256 over the frame files in index order, then `actions.csv` when present.
pub(crate) fn trajectory_checksum(traj_dir: &Path, n_frames: usize) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    let mut feed = |path: &Path, hasher: &mut Sha256| -> Result<()> {
        buf.clear();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(Error::io(path))?;
        hasher.update((buf.len() as u64).to_le_bytes());
        hasher.update(&buf);
        Ok(())
    };
    for i in 0..n_frames {
        feed(&frame_path(traj_dir, i), &mut hasher)?;
    }
    let actions = traj_dir.join("actions.csv");
    if actions.is_file() {
        feed(&actions, &mut hasher)?;
    }
    Ok(hex::encode(hasher.finalize()))
}
