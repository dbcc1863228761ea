//! Procedural 2D tabletop world: a point agent, circular objects and a goal
//! marker, rendered to small RGB frames.
//!
//! Positions live in the unit square; `x` maps to image columns and `y` to rows.
//! Actions are agent displacements. Labels store them divided by
//! `action_scale`, with the third component fixed at zero.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_demo_dataset, load_play_dataset, ActionLabel, DatasetWriter, DemoDataset, Frame, PlayDataset, Task,
    TrajectoryMeta,
};
use crate::error::{Error, Result};
use crate::rng;

const BACKGROUND: [f64; 3] = [0.86, 0.84, 0.79];
const GOAL_COLOR: [u8; 3] = [215, 35, 35];
const AGENT_COLOR: [u8; 3] = [25, 25, 30];
const PALETTE: [[u8; 3]; 5] = [
    [40, 90, 200],
    [235, 190, 40],
    [50, 160, 80],
    [140, 70, 170],
    [240, 130, 30],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub pos: [f64; 2],
    pub radius: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent: [f64; 2],
    pub objects: Vec<WorldObject>,
    pub goal: [f64; 2],
    /// Seed of the stream that generated this state.
    pub rng_seed: u64,
}

impl WorldState {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: [f64; 2]| p.iter().all(|v| (0.0..=1.0).contains(v));
        if !inside(self.agent) || !inside(self.goal) {
            return Err(Error::Validation("agent and goal must lie in the unit square".into()));
        }
        for o in &self.objects {
            if !inside(o.pos) || !(o.radius > 0.0) {
                return Err(Error::Validation(format!("invalid object {o:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Inclusive range of objects per scene.
    pub objects: (usize, usize),
    /// Inclusive range of play trajectory lengths in frames.
    pub length: (usize, usize),
    /// Velocity persistence of play motion in [0, 1).
    pub smoothness: f64,
    /// Expert action noise, relative to `action_scale`.
    pub expert_noise: f64,
    /// Largest agent displacement per step.
    pub action_scale: f64,
    pub agent_radius: f64,
    pub object_radius: (f64, f64),
    pub goal_radius: f64,
    /// Per-step probability that an object jumps during play.
    pub drop_prob: f64,
    /// Smallest share of play trajectories that must move an object.
    pub min_contact_fraction: f64,
    pub max_expert_steps: usize,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            objects: (1, 3),
            length: (20, 60),
            smoothness: 0.8,
            expert_noise: 0.1,
            action_scale: 0.04,
            agent_radius: 0.04,
            object_radius: (0.06, 0.09),
            goal_radius: 0.06,
            drop_prob: 0.02,
            min_contact_fraction: 0.5,
            max_expert_steps: 200,
            max_retries: 20,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 32 {
            return bad(format!("image size {} is below 32", self.image_size));
        }
        if self.length.0 < 2 || self.length.0 > self.length.1 {
            return bad(format!("invalid length range {:?}", self.length));
        }
        if self.objects.0 > self.objects.1 || self.objects.1 > PALETTE.len() {
            return bad(format!("invalid object count range {:?}", self.objects));
        }
        if !(0.0..1.0).contains(&self.smoothness) {
            return bad(format!("smoothness {} outside [0, 1)", self.smoothness));
        }
        if !(self.action_scale > 0.0 && self.action_scale < 0.5) {
            return bad(format!("action scale {} outside (0, 0.5)", self.action_scale));
        }
        let (r0, r1) = self.object_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1 < 0.2) || !(self.agent_radius > 0.0) || !(self.goal_radius > 0.0) {
            return bad("radii must be positive and object radii below 0.2".into());
        }
        if !(0.0..=1.0).contains(&self.drop_prob) || !(0.0..=1.0).contains(&self.min_contact_fraction) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.expert_noise < 0.0 {
            return bad("expert noise must be non-negative".into());
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn clamp_norm(v: [f64; 2], max: f64) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n > max {
        [v[0] * max / n, v[1] * max / n]
    } else {
        v
    }
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        [0.0, 0.0]
    }
}

/// Rasterizes the state: background, goal ring, objects, agent marker.
///
/// A pixel takes a shape's color when its center lies inside the shape.
pub fn render_world(state: &WorldState, cfg: &SynthConfig) -> Frame {
    let n = cfg.image_size;
    let mut img = RgbImage::new(n as u32, n as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let p = [(x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64];
        let shade = 1.0 - 0.08 * p[1];
        let mut c = BACKGROUND.map(|v| (v * shade * 255.0).round() as u8);
        let g = dist(p, state.goal);
        if g <= cfg.goal_radius && g >= 0.65 * cfg.goal_radius {
            c = GOAL_COLOR;
        }
        for o in &state.objects {
            if dist(p, o.pos) <= o.radius {
                c = o.color;
            }
        }
        if dist(p, state.agent) <= cfg.agent_radius {
            c = AGENT_COLOR;
        }
        *px = Rgb(c);
    }
    Frame::from_rgb(&img)
}

/// Moves the agent by `delta` (clamped to the unit square) and pushes every
/// overlapping object out along the agent-to-object direction.
///
/// Returns whether any object moved.
pub fn step_world(state: &mut WorldState, delta: [f64; 2], cfg: &SynthConfig) -> bool {
    for k in 0..2 {
        state.agent[k] = (state.agent[k] + delta[k]).clamp(0.0, 1.0);
    }
    let mut moved = false;
    let dir = unit(delta);
    for o in &mut state.objects {
        let reach = o.radius + cfg.agent_radius;
        let d = dist(state.agent, o.pos);
        if d >= reach {
            continue;
        }
        let away = if d > 1e-12 {
            [(o.pos[0] - state.agent[0]) / d, (o.pos[1] - state.agent[1]) / d]
        } else if dir != [0.0, 0.0] {
            dir
        } else {
            [1.0, 0.0]
        };
        for k in 0..2 {
            o.pos[k] = (state.agent[k] + away[k] * reach).clamp(o.radius, 1.0 - o.radius);
        }
        moved = true;
    }
    moved
}

/// Random scene. With `marked_target`, object 0 exists and always takes the
/// first palette color, which no other object uses.
fn random_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng, seed: u64, marked_target: bool) -> WorldState {
    let mut count = rng.gen_range(cfg.objects.0..=cfg.objects.1);
    if marked_target {
        count = count.max(1);
    }
    let mut objects: Vec<WorldObject> = Vec::with_capacity(count);
    let mut colors = PALETTE.to_vec();
    for i in 0..count {
        let radius = rng.gen_range(cfg.object_radius.0..=cfg.object_radius.1);
        // Rejection sampling for non-overlapping placement; falls back to the last draw.
        let mut pos = [0.5, 0.5];
        for _ in 0..50 {
            pos = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
            if objects.iter().all(|o| dist(o.pos, pos) > o.radius + radius + 0.02) {
                break;
            }
        }
        let pick = if marked_target && i == 0 {
            0
        } else {
            rng.gen_range(usize::from(marked_target)..colors.len())
        };
        let color = colors.remove(pick);
        objects.push(WorldObject { pos, radius, color });
    }
    let mut agent = [0.5, 0.5];
    for _ in 0..50 {
        agent = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        if objects
            .iter()
            .all(|o| dist(o.pos, agent) > o.radius + cfg.agent_radius + 0.02)
        {
            break;
        }
    }
    let goal = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    WorldState {
        agent,
        objects,
        goal,
        rng_seed: seed,
    }
}

fn gaussian2(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

/// One play trajectory: frames plus whether any object was pushed.
pub fn play_trajectory(cfg: &SynthConfig, seed: u64) -> (Vec<Frame>, bool) {
    let mut rng = rng::stream(seed, &[b"synth-play"]);
    let mut state = random_scene(cfg, &mut rng, seed, false);
    let len = rng.gen_range(cfg.length.0..=cfg.length.1);
    let mut frames = Vec::with_capacity(len);
    frames.push(render_world(&state, cfg));
    let mut velocity = [0.0f64; 2];
    let mut interest = if state.objects.is_empty() {
        None
    } else {
        Some(rng.gen_range(0..state.objects.len()))
    };
    let mut contact = false;
    for _ in 1..len {
        if !state.objects.is_empty() && rng.gen_bool(0.08) {
            interest = Some(rng.gen_range(0..state.objects.len()));
        }
        let noise = gaussian2(&mut rng);
        let pull = interest.map_or([0.0, 0.0], |i| {
            unit([
                state.objects[i].pos[0] - state.agent[0],
                state.objects[i].pos[1] - state.agent[1],
            ])
        });
        for k in 0..2 {
            let drive = cfg.action_scale * (noise[k] + 0.6 * pull[k]);
            velocity[k] = cfg.smoothness * velocity[k] + (1.0 - cfg.smoothness) * drive * 2.0;
        }
        velocity = clamp_norm(velocity, cfg.action_scale);
        contact |= step_world(&mut state, velocity, cfg);
        if !state.objects.is_empty() && rng.gen_bool(cfg.drop_prob) {
            let i = rng.gen_range(0..state.objects.len());
            let o = &mut state.objects[i];
            let jitter = gaussian2(&mut rng);
            for k in 0..2 {
                o.pos[k] = (o.pos[k] + 0.05 * jitter[k]).clamp(o.radius, 1.0 - o.radius);
            }
        }
        frames.push(render_world(&state, cfg));
    }
    (frames, contact)
}

/// Writes `n_traj` play trajectories under `out_dir` and loads them back.
///
/// Fails when fewer than `min_contact_fraction` of the trajectories move an object.
pub fn generate_play_synthetic(cfg: &SynthConfig, n_traj: usize, seed: u64, out_dir: &Path) -> Result<PlayDataset> {
    cfg.validate()?;
    if n_traj == 0 {
        return Err(Error::Argument("n_traj must be at least 1".into()));
    }
    let writer = DatasetWriter::create(out_dir, &format!("synthetic-play-seed{seed}"))?;
    let contacts = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let (frames, contact) = play_trajectory(cfg, rng::derive(seed, &[b"play", &(i as u64).to_le_bytes()]));
            let meta = TrajectoryMeta {
                collector: "synthgen".into(),
                location: "synthetic".into(),
                duration_s: frames.len() as f64 / 10.0,
            };
            writer.write_trajectory(&format!("play_{i:05}"), &frames, None, &meta)?;
            Ok(contact)
        })
        .collect::<Result<Vec<bool>>>()?;
    let share = contacts.iter().filter(|&&c| c).count() as f64 / n_traj as f64;
    if share < cfg.min_contact_fraction {
        return Err(Error::Generation(format!(
            "only {:.0}% of play trajectories touch an object (need {:.0}%)",
            share * 100.0,
            cfg.min_contact_fraction * 100.0
        )));
    }
    log::info!("play corpus: {n_traj} trajectories, {:.0}% with contact", share * 100.0);
    writer.finish()?;
    load_play_dataset(out_dir)
}

/// One successful expert demonstration.
#[derive(Debug, Clone)]
pub struct ExpertDemo {
    pub initial: WorldState,
    pub frames: Vec<Frame>,
    pub actions: Vec<ActionLabel>,
}

fn goal_radius(cfg: &SynthConfig, task: Task) -> f64 {
    match task {
        Task::SyntheticStack => 0.5 * cfg.goal_radius,
        _ => cfg.goal_radius,
    }
}

/// Expert controller: get behind the target (object 0), then push it into the goal.
fn expert_move(state: &WorldState, cfg: &SynthConfig) -> [f64; 2] {
    let obj = &state.objects[0];
    let push = unit([state.goal[0] - obj.pos[0], state.goal[1] - obj.pos[1]]);
    let reach = obj.radius + cfg.agent_radius;
    let contact_point = [obj.pos[0] - push[0] * reach, obj.pos[1] - push[1] * reach];
    let behind = [
        obj.pos[0] - push[0] * (reach + 0.03),
        obj.pos[1] - push[1] * (reach + 0.03),
    ];
    let rel = [state.agent[0] - obj.pos[0], state.agent[1] - obj.pos[1]];
    let along = rel[0] * push[0] + rel[1] * push[1];
    let lateral = rel[0] * -push[1] + rel[1] * push[0];
    let aligned = along < -0.5 * reach && lateral.abs() < 0.35 * reach;
    let target = if aligned {
        // Steer onto the contact point while driving toward the goal.
        return clamp_norm(
            [
                push[0] * cfg.action_scale + (contact_point[0] - state.agent[0]) * 0.5,
                push[1] * cfg.action_scale + (contact_point[1] - state.agent[1]) * 0.5,
            ],
            cfg.action_scale,
        );
    } else if along > -reach && lateral.abs() < reach + 0.03 {
        // In front of or beside the object: go around on the near side.
        let side = if lateral >= 0.0 { 1.0 } else { -1.0 };
        let clear = reach + 0.05;
        [
            obj.pos[0] - push[1] * side * clear - push[0] * 0.5 * clear,
            obj.pos[1] + push[0] * side * clear - push[1] * 0.5 * clear,
        ]
    } else {
        behind
    };
    clamp_norm(
        [target[0] - state.agent[0], target[1] - state.agent[1]],
        cfg.action_scale,
    )
}

/// Quantizes a displacement to its f32 label and returns both.
fn quantize(delta: [f64; 2], scale: f64) -> ([f64; 2], ActionLabel) {
    let lx = (delta[0] / scale) as f32;
    let ly = (delta[1] / scale) as f32;
    ([lx as f64 * scale, ly as f64 * scale], ActionLabel([lx, ly, 0.0]))
}

/// Displacement encoded by a label.
pub fn label_delta(label: &ActionLabel, cfg: &SynthConfig) -> [f64; 2] {
    [
        label.0[0] as f64 * cfg.action_scale,
        label.0[1] as f64 * cfg.action_scale,
    ]
}

fn try_demo(cfg: &SynthConfig, task: Task, seed: u64) -> Option<ExpertDemo> {
    let mut rng = rng::stream(seed, &[b"synth-demo"]);
    let mut state = random_scene(cfg, &mut rng, seed, true);
    let radius = goal_radius(cfg, task);
    if dist(state.objects[0].pos, state.goal) < radius * 2.0 {
        return None;
    }
    let initial = state.clone();
    let mut frames = vec![render_world(&state, cfg)];
    let mut actions = Vec::new();
    for _ in 0..cfg.max_expert_steps {
        if dist(state.objects[0].pos, state.goal) < radius {
            return Some(ExpertDemo {
                initial,
                frames,
                actions,
            });
        }
        let mut delta = expert_move(&state, cfg);
        let noise = gaussian2(&mut rng);
        for k in 0..2 {
            delta[k] += noise[k] * cfg.expert_noise * cfg.action_scale;
        }
        // Keep the agent inside so the label equals the realized displacement.
        for k in 0..2 {
            delta[k] = delta[k].clamp(-state.agent[k], 1.0 - state.agent[k]);
        }
        let (applied, label) = quantize(clamp_norm(delta, cfg.action_scale), cfg.action_scale);
        step_world(&mut state, applied, cfg);
        actions.push(label);
        frames.push(render_world(&state, cfg));
    }
    None
}

/// One expert demonstration, resampling the scene on failure.
pub fn expert_demo(cfg: &SynthConfig, task: Task, seed: u64) -> Result<ExpertDemo> {
    for attempt in 0..=cfg.max_retries {
        let s = rng::derive(seed, &[b"attempt", &(attempt as u64).to_le_bytes()]);
        if let Some(demo) = try_demo(cfg, task, s) {
            if demo.actions.is_empty() {
                continue;
            }
            return Ok(demo);
        }
    }
    Err(Error::Generation(format!(
        "no reachable scene after {} retries (seed {seed})",
        cfg.max_retries
    )))
}

/// Re-renders a demonstration by applying its labels from the initial state.
pub fn replay_demo(initial: &WorldState, actions: &[ActionLabel], cfg: &SynthConfig) -> Vec<Frame> {
    let mut state = initial.clone();
    let mut frames = vec![render_world(&state, cfg)];
    for a in actions {
        step_world(&mut state, label_delta(a, cfg), cfg);
        frames.push(render_world(&state, cfg));
    }
    frames
}

/// Writes `n_traj` expert demonstrations under `out_dir` and loads them back.
///
/// Initial states are stored as `initial_state.json` next to each trajectory
/// so demos can be replayed.
pub fn generate_expert_demos(
    cfg: &SynthConfig,
    n_traj: usize,
    seed: u64,
    out_dir: &Path,
    task: Task,
) -> Result<DemoDataset> {
    cfg.validate()?;
    if n_traj == 0 {
        return Err(Error::Argument("n_traj must be at least 1".into()));
    }
    if !matches!(task, Task::SyntheticPush | Task::SyntheticStack) {
        return Err(Error::Argument(format!(
            "synthetic generation does not cover task {task}"
        )));
    }
    let writer = DatasetWriter::create(out_dir, &format!("synthetic-{}-seed{seed}", task.as_str()))?;
    let initial = (0..n_traj)
        .into_par_iter()
        .map(|i| -> Result<WorldState> {
            let demo = expert_demo(cfg, task, rng::derive(seed, &[b"demo", &(i as u64).to_le_bytes()]))?;
            let meta = TrajectoryMeta {
                collector: "synthgen-expert".into(),
                location: "synthetic".into(),
                duration_s: demo.frames.len() as f64 / 10.0,
            };
            writer.write_trajectory(&format!("demo_{i:05}"), &demo.frames, Some(&demo.actions), &meta)?;
            Ok(demo.initial)
        })
        .collect::<Result<Vec<_>>>()?;
    writer.finish()?;
    let ds = load_demo_dataset(out_dir, task)?;
    for (traj, state) in ds.trajectories().iter().zip(&initial) {
        let path = traj.dir.join(INITIAL_STATE_FILE);
        let mut text = serde_json::to_string_pretty(state)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(Error::io(&path))?;
    }
    Ok(ds)
}

/// Initial state stored next to a generated demonstration.
pub fn read_initial_state(trajectory_dir: &Path) -> Result<WorldState> {
    let path = trajectory_dir.join(INITIAL_STATE_FILE);
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    Ok(serde_json::from_str(&text)?)
}

pub const INITIAL_STATE_FILE: &str = "initial_state.json";
