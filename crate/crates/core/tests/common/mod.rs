//! Shared test oracles: finite differences, tiny float64 networks and small
//! synthetic corpora built without the library's own helpers where possible.
#![allow(dead_code)]

use playrep::dataset::{ActionLabel, DemoDataset, Frame, PlayDataset, Task, Trajectory, TrajectoryMeta};
use playrep::models::{ConvSpec, FeaturePooling, PlayEncoderConfig, Policy, PolicyConfig};
use playrep::nn::{Param, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two small convolutions on 8×8 inputs.
pub fn tiny_convs() -> Vec<ConvSpec> {
    vec![ConvSpec::new(4, 3, 1, 1), ConvSpec::new(5, 3, 2, 1).pooled(2, 1)]
}

pub fn tiny_policy_config(pooling: FeaturePooling) -> PolicyConfig {
    PolicyConfig {
        convs: tiny_convs(),
        action_dim: 3,
        input_size: 8,
        pooling,
        feature_norm: true,
    }
}

pub fn tiny_encoder_config(predictor: bool) -> PlayEncoderConfig {
    PlayEncoderConfig {
        convs: tiny_convs(),
        proj_dims: vec![6, 4],
        predictor_dims: predictor.then(|| vec![6, 4]),
        input_size: 8,
        head_batch_norm: false,
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Moves biases off zero. Zero biases put units whose input patch is all zero
/// exactly on the ReLU kink, where finite differences are meaningless.
pub fn jitter_biases<'a>(params: impl IntoIterator<Item = &'a mut Param<f64>>, seed: u64) {
    let mut r = rng(seed);
    for p in params {
        if p.name.ends_with(".bias") {
            p.value.iter_mut().for_each(|v| *v = r.gen_range(0.01..0.1));
        }
    }
}

/// Replaces the zero-initialized action head with small random weights so
/// gradients reach the convolutions.
pub fn randomize_head(policy: &mut Policy<f64>, seed: u64) {
    let mut r = rng(seed);
    for p in policy.head.params_mut() {
        p.value.iter_mut().for_each(|v| *v = r.gen_range(-0.3..0.3));
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug)]
pub struct GradCheck {
    pub coordinates: usize,
    pub max_rel_err: f64,
}

/// Compares analytic gradients against central differences at `count` random
/// coordinates.
///
/// `grads` holds the analytic gradient of every parameter (same order as
/// `params`); `loss` re-evaluates the objective with the current parameters.
pub fn check_gradients<M>(
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Param<f64>>,
    grads: &[Vec<f64>],
    mut loss: impl FnMut(&mut M) -> f64,
    count: usize,
    seed: u64,
) -> GradCheck {
    let h = 1e-6;
    let mut r = rng(seed);
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut max_rel: f64 = 0.0;
    for _ in 0..count {
        let mut flat = r.gen_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let orig = params(model)[pi].value[flat];
        params(model)[pi].value[flat] = orig + h;
        let up = loss(model);
        params(model)[pi].value[flat] = orig - h;
        let down = loss(model);
        params(model)[pi].value[flat] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[pi][flat];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    GradCheck {
        coordinates: count,
        max_rel_err: max_rel,
    }
}

/// Checkerboard-ish frame with a per-trajectory tint, so frames differ.
pub fn synthetic_frame(size: usize, seed: u64, t: usize) -> Frame {
    let mut data = vec![0f32; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let v = ((x + y + t + c) % 7) as f32 / 7.0 * 0.5 + (seed % 5) as f32 * 0.1;
                data[(c * size + y) * size + x] = v.min(1.0);
            }
        }
    }
    Frame::new(size, size, data).unwrap()
}

pub fn play_in_memory(lengths: &[usize], size: usize) -> PlayDataset {
    let trajs: Vec<Trajectory> = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let frames = (0..n).map(|t| synthetic_frame(size, i as u64, t)).collect();
            Trajectory::in_memory(format!("p{i:03}"), frames, None, TrajectoryMeta::default())
        })
        .collect();
    // Reuse the demo constructor's manifest assembly, then drop the task.
    let demo = DemoDataset::from_trajectories(
        "mem-play",
        Task::SyntheticPush,
        trajs
            .into_iter()
            .map(|mut t| {
                t.actions = Some(vec![ActionLabel::zero(); t.n_frames - 1]);
                t
            })
            .collect(),
    )
    .unwrap();
    let mut corpus = demo.corpus;
    for t in &mut corpus.trajectories {
        t.actions = None;
    }
    PlayDataset { corpus }
}

/// Demo dataset whose action at frame `t` is a fixed function of `t`.
pub fn demo_in_memory(lengths: &[usize], size: usize) -> DemoDataset {
    let trajs = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let frames = (0..n).map(|t| synthetic_frame(size, i as u64, t)).collect();
            let actions = (0..n - 1)
                .map(|t| ActionLabel([((t % 3) as f32 - 1.0) * 0.5, 0.25, 0.0]))
                .collect();
            Trajectory::in_memory(format!("d{i:03}"), frames, Some(actions), TrajectoryMeta::default())
        })
        .collect();
    DemoDataset::from_trajectories("mem-demo", Task::SyntheticPush, trajs).unwrap()
}
