//! Conversion of externally trained classification weights (safetensors
//! files) into canonical `conv1..conv5` bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bundle::{CheckpointMeta, NamedArray, PretrainMode, WeightBundle};

/// External layer prefix → canonical layer name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameMapping {
    pub layers: BTreeMap<String, String>,
}

impl NameMapping {
    /// Layer names of the torchvision AlexNet feature extractor.
    pub fn torchvision_alexnet() -> Self {
        let layers = [
            ("features.0", "conv1"),
            ("features.3", "conv2"),
            ("features.6", "conv3"),
            ("features.8", "conv4"),
            ("features.10", "conv5"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self { layers }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Reads `weight`/`bias` tensors for every mapped layer. Unmapped tensors are skipped.
pub fn import_classification_weights(bytes: &[u8], mapping: &NameMapping, source: &str) -> Result<WeightBundle> {
    let tensors =
        SafeTensors::deserialize(bytes).map_err(|e| Error::Load(format!("{source}: not a safetensors file: {e}")))?;
    let mut meta = CheckpointMeta::new(PretrainMode::Classification, 5);
    meta.source_dataset = source.to_string();
    meta.config = serde_json::to_value(mapping)?;
    let mut bundle = WeightBundle::new(meta);
    for (external, canonical) in &mapping.layers {
        for suffix in ["weight", "bias"] {
            let key = format!("{external}.{suffix}");
            let view = tensors
                .tensor(&key)
                .map_err(|_| Error::Load(format!("{source}: mapped tensor {key:?} not found")))?;
            let data: Vec<f32> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                    .collect(),
                other => return Err(Error::Load(format!("{source}: {key} has unsupported dtype {other:?}"))),
            };
            bundle.insert(
                format!("{canonical}.{suffix}"),
                NamedArray::new(view.shape().to_vec(), data)?,
            );
        }
    }
    Ok(bundle)
}

/// Serializes a bundle as safetensors with canonical names mapped back to
/// external ones. Used to produce stand-in classification files for tests.
pub fn export_safetensors(bundle: &WeightBundle, mapping: &NameMapping) -> Result<Vec<u8>> {
    let reverse: BTreeMap<&str, &str> = mapping
        .layers
        .iter()
        .map(|(ext, can)| (can.as_str(), ext.as_str()))
        .collect();
    let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (name, a) in &bundle.arrays {
        let (layer, suffix) = name.rsplit_once('.').unwrap_or((name, ""));
        let Some(ext) = reverse.get(layer) else { continue };
        let bytes = a.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        owned.push((format!("{ext}.{suffix}"), a.shape.clone(), bytes));
    }
    let views = owned
        .iter()
        .map(|(n, shape, bytes)| {
            safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(format!("{n}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, &None).map_err(|e| Error::Checkpoint(e.to_string()))
}
