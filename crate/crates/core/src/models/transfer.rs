use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

use super::bundle::{copy_checked, WeightBundle};
use super::networks::Policy;

/// What a transfer did with every array of the source bundle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub copied: Vec<String>,
    /// Projection and predictor arrays, which never enter the policy.
    pub ignored_heads: Vec<String>,
    /// Arrays outside the transferred depth or without a policy counterpart.
    pub unused: Vec<String>,
}

pub fn is_head_key(name: &str) -> bool {
    name.starts_with("proj.") || name.starts_with("pred.")
}

/// Copies conv layers `1..=depth` from `bundle` into `policy`.
///
/// Deeper layers and the action head keep their current values. All
/// parameters stay trainable.
pub fn transfer_pretrained_weights<T: Scalar>(
    bundle: &WeightBundle<T>,
    policy: &mut Policy<T>,
    depth: usize,
) -> Result<TransferSummary> {
    if depth == 0 || depth > policy.conv_count() {
        return Err(Error::Transfer(format!(
            "transfer depth {depth} outside 1..={}",
            policy.conv_count()
        )));
    }
    let wanted: Vec<String> = (1..=depth)
        .flat_map(|i| [format!("conv{i}.weight"), format!("conv{i}.bias")])
        .collect();
    // check everything before mutating so a failed transfer leaves the policy untouched
    for name in &wanted {
        let a = bundle
            .get(name)
            .ok_or_else(|| Error::Transfer(format!("bundle is missing {name} needed for depth {depth}")))?;
        let p = policy.param(name).expect("policy declares conv layers up to its depth");
        if a.shape != p.shape {
            return Err(Error::Transfer(format!(
                "{name}: bundle shape {:?} does not match policy shape {:?}",
                a.shape, p.shape
            )));
        }
    }
    for p in policy.params_mut() {
        if wanted.contains(&p.name) {
            copy_checked(&bundle.arrays[&p.name], p)?;
        }
    }
    let mut summary = TransferSummary::default();
    for name in bundle.keys() {
        if wanted.iter().any(|w| w == name) {
            summary.copied.push(name.to_string());
        } else if is_head_key(name) {
            summary.ignored_heads.push(name.to_string());
        } else {
            summary.unused.push(name.to_string());
        }
    }
    if !summary.ignored_heads.is_empty() {
        log::info!("transfer ignored head arrays: {}", summary.ignored_heads.join(", "));
    }
    if !summary.unused.is_empty() {
        log::info!("transfer left unused arrays: {}", summary.unused.join(", "));
    }
    Ok(summary)
}
