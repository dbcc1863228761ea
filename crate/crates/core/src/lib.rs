//! Visual representation learning from play video.
//!
//! Encoders are pretrained on unlabeled play trajectories with a time-contrastive
//! objective (a frame and the frame a few steps later are pulled together in a
//! projected latent space, with a momentum key encoder), then transferred into a
//! policy network trained by behavior cloning on expert demonstrations.
//!
//! | module | contents |
//! |---|---|
//! | [`dataset`] | on-disk corpora, pairing, subsampling, augmentation |
//! | [`models`] | encoder and policy networks, checkpoints, weight transfer |
//! | [`pretrain`] | time-contrastive, autoencoder and VAE pretraining |
//! | [`bc`] | behavior cloning with the direction + MSE loss |
//! | [`eval`] | held-out MSE, overlays, ablations, results tables |
//! | [`synthgen`] | procedural 2D world for desk-scale experiments |
//! | [`experiment`] | run configs and the run registry |
//! | [`nn`] | the small CPU tensor engine everything runs on |

pub mod bc;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
