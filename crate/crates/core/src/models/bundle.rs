use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bc::InitMode;
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::nn::{Param, Scalar};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Where a set of weights came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMode {
    None,
    ByolTime,
    Ae,
    Vae,
    Classification,
    OtherTask,
}

impl fmt::Display for PretrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PretrainMode::None => "none",
            PretrainMode::ByolTime => "byol_time",
            PretrainMode::Ae => "ae",
            PretrainMode::Vae => "vae",
            PretrainMode::Classification => "classification",
            PretrainMode::OtherTask => "other_task",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub pretrain_mode: PretrainMode,
    /// Gradient steps of the run that produced these weights.
    pub steps: u64,
    pub source_dataset: String,
    pub pretrain_depth: u8,
    pub seed: u64,
    pub created: String,
    /// Set on behavior-cloning policy checkpoints.
    #[serde(default)]
    pub init_mode: Option<InitMode>,
    #[serde(default)]
    pub task: Option<Task>,
    /// The pretraining run itself started from classification weights.
    #[serde(default)]
    pub classification_init: bool,
    /// Echo of the configuration that produced the weights.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(pretrain_mode: PretrainMode, pretrain_depth: u8) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            pretrain_mode,
            steps: 0,
            source_dataset: String::new(),
            pretrain_depth,
            seed: 0,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            init_mode: None,
            task: None,
            classification_init: false,
            config: serde_json::Value::Null,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=5).contains(&self.pretrain_depth) {
            return Err(Error::Checkpoint(format!(
                "pretrain depth {} is outside {{3, 4, 5}}",
                self.pretrain_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> NamedArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "array of {} values cannot have shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// Named parameter arrays plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle<T = f32> {
    pub arrays: BTreeMap<String, NamedArray<T>>,
    pub meta: CheckpointMeta,
}

impl<T: Scalar> WeightBundle<T> {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self {
            arrays: BTreeMap::new(),
            meta,
        }
    }

    pub fn from_params<'a>(params: impl IntoIterator<Item = &'a Param<T>>, meta: CheckpointMeta) -> Self {
        let arrays = params
            .into_iter()
            .map(|p| {
                (
                    p.name.clone(),
                    NamedArray {
                        shape: p.shape.clone(),
                        data: p.value.clone(),
                    },
                )
            })
            .collect();
        Self { arrays, meta }
    }

    pub fn insert(&mut self, name: impl Into<String>, array: NamedArray<T>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray<T>> {
        self.arrays.get(name)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn param_count(&self) -> usize {
        self.arrays.values().map(|a| a.data.len()).sum()
    }

    /// Keeps only arrays whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            meta: self.meta.clone(),
        }
    }

    /// Content hash over names, shapes and values (metadata excluded).
    pub fn content_id(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, a) in &self.arrays {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in &a.shape {
                h.update((*d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in &a.data {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Copies matching arrays into `params`; every parameter must be present with the same shape.
    pub fn load_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Param<T>>) -> Result<()> {
        for p in params {
            let a = self
                .arrays
                .get(&p.name)
                .ok_or_else(|| Error::Transfer(format!("bundle has no array {:?}", p.name)))?;
            copy_checked(a, p)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> WeightBundle<U> {
        WeightBundle {
            arrays: self
                .arrays
                .iter()
                .map(|(k, a)| {
                    (
                        k.clone(),
                        NamedArray {
                            shape: a.shape.clone(),
                            data: a.data.iter().map(|v| U::from(*v).unwrap()).collect(),
                        },
                    )
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }
}

pub(crate) fn copy_checked<T: Scalar>(a: &NamedArray<T>, p: &mut Param<T>) -> Result<()> {
    if a.shape != p.shape {
        return Err(Error::Transfer(format!(
            "{}: bundle shape {:?} does not match model shape {:?}",
            p.name, a.shape, p.shape
        )));
    }
    p.value.copy_from_slice(&a.data);
    Ok(())
}
