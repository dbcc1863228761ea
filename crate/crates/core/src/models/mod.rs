//! Play encoder, behavior-cloning policy, weight bundles and checkpoints.

mod bundle;
pub mod checkpoint;
mod config;
mod import;
mod networks;
mod transfer;

pub use bundle::{CheckpointMeta, NamedArray, PretrainMode, WeightBundle, CHECKPOINT_SCHEMA_VERSION};
pub use config::{
    alexnet_convs, spatial_sizes, Activation, ConvSpec, FeaturePooling, PlayEncoderConfig, PolicyConfig, PoolSpec,
};
pub use import::{export_safetensors, import_classification_weights, NameMapping};
pub use networks::{frames_to_tensor, PlayEncoder, Policy, INPUT_MEAN, INPUT_STD};
pub use transfer::{is_head_key, transfer_pretrained_weights, TransferSummary};

pub(crate) use config::{build_backbone, build_mlp};

use crate::error::Result;
use crate::nn::Scalar;

pub fn build_play_encoder<T: Scalar>(cfg: &PlayEncoderConfig, seed: u64) -> Result<PlayEncoder<T>> {
    PlayEncoder::new(cfg.clone(), seed)
}

pub fn build_policy<T: Scalar>(cfg: &PolicyConfig, seed: u64) -> Result<Policy<T>> {
    Policy::new(cfg.clone(), seed)
}
