use image::codecs::jpeg::JpegEncoder;
use playrep::dataset::{load_demo_dataset, Task};
use playrep::synthgen::*;
use playrep::Error;
use proptest::prelude::*;

const AGENT: [u8; 3] = [25, 25, 30];

fn small() -> SynthConfig {
    SynthConfig {
        length: (6, 10),
        ..SynthConfig::default()
    }
}

fn final_state(demo: &ExpertDemo, cfg: &SynthConfig) -> WorldState {
    let mut s = demo.initial.clone();
    for a in &demo.actions {
        step_world(&mut s, label_delta(a, cfg), cfg);
    }
    s
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[test]
fn config_validation() {
    assert!(SynthConfig::default().validate().is_ok());
    for bad in [
        SynthConfig {
            image_size: 16,
            ..small()
        },
        SynthConfig {
            length: (1, 4),
            ..small()
        },
        SynthConfig {
            objects: (2, 9),
            ..small()
        },
        SynthConfig {
            smoothness: 1.0,
            ..small()
        },
        SynthConfig {
            action_scale: 0.0,
            ..small()
        },
        SynthConfig {
            drop_prob: 1.5,
            ..small()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn agent_marker_is_centered_on_its_position() {
    let cfg = SynthConfig::default();
    for (i, agent) in [[0.5, 0.5], [0.21, 0.73], [0.9, 0.12]].into_iter().enumerate() {
        let state = WorldState {
            agent,
            objects: vec![],
            goal: [0.1, 0.9],
            rng_seed: i as u64,
        };
        let img = render_world(&state, &cfg).to_rgb();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (x, y, p) in img.enumerate_pixels() {
            if p.0 == AGENT {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1.0;
            }
        }
        assert!(n > 0.0);
        let size = cfg.image_size as f64;
        assert!((sx / n - agent[0] * size).abs() <= 1.0, "x for {agent:?}");
        assert!((sy / n - agent[1] * size).abs() <= 1.0, "y for {agent:?}");
    }
}

#[test]
fn play_trajectories_are_deterministic_per_seed() {
    let cfg = small();
    let (a, ca) = play_trajectory(&cfg, 3);
    let (b, cb) = play_trajectory(&cfg, 3);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let (c, _) = play_trajectory(&cfg, 4);
    assert_ne!(a, c);
    assert!((cfg.length.0..=cfg.length.1).contains(&a.len()));
}

#[test]
fn zero_object_scenes_render_and_never_report_contact() {
    let cfg = SynthConfig {
        objects: (0, 0),
        min_contact_fraction: 0.0,
        ..small()
    };
    let (frames, contact) = play_trajectory(&cfg, 1);
    assert!(!contact);
    assert!(frames.len() >= 6);
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_play_synthetic(&cfg, 2, 0, dir.path()).unwrap();
    assert_eq!(ds.corpus.trajectory_count(), 2);

    let strict = SynthConfig {
        min_contact_fraction: 0.5,
        ..cfg
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        generate_play_synthetic(&strict, 2, 0, dir.path()),
        Err(Error::Generation(_))
    ));
}

#[test]
fn expert_actions_are_bounded_planar_and_reach_the_goal() {
    let cfg = SynthConfig::default();
    for task in [Task::SyntheticPush, Task::SyntheticStack] {
        let radius = if task == Task::SyntheticStack {
            0.5 * cfg.goal_radius
        } else {
            cfg.goal_radius
        };
        for seed in 0..6 {
            let demo = expert_demo(&cfg, task, seed).unwrap();
            assert_eq!(demo.frames.len(), demo.actions.len() + 1);
            for a in &demo.actions {
                assert_eq!(a.0[2], 0.0);
                let d = label_delta(a, &cfg);
                assert!(d[0].hypot(d[1]) <= cfg.action_scale * (1.0 + 1e-6));
            }
            let end = final_state(&demo, &cfg);
            assert!(dist(end.objects[0].pos, end.goal) < radius, "{task} seed {seed}");
            assert!(dist(demo.initial.objects[0].pos, demo.initial.goal) >= radius);
        }
    }
}

#[test]
fn expert_demos_are_deterministic() {
    let cfg = SynthConfig::default();
    let a = expert_demo(&cfg, Task::SyntheticPush, 11).unwrap();
    let b = expert_demo(&cfg, Task::SyntheticPush, 11).unwrap();
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.initial, b.initial);
}

#[test]
fn stored_demos_replay_to_identical_jpeg_bytes() {
    let cfg = SynthConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_expert_demos(&cfg, 3, 5, dir.path(), Task::SyntheticPush).unwrap();
    let reloaded = load_demo_dataset(dir.path(), Task::SyntheticPush).unwrap();
    assert_eq!(reloaded.trajectory_count(), 3);
    for traj in ds.trajectories() {
        let initial = read_initial_state(&traj.dir).unwrap();
        let actions = traj.actions.as_ref().unwrap();
        let frames = replay_demo(&initial, actions, &cfg);
        assert_eq!(frames.len(), traj.n_frames);
        for (i, frame) in frames.iter().enumerate() {
            let mut bytes = Vec::new();
            JpegEncoder::new_with_quality(&mut bytes, 95)
                .encode_image(&frame.to_rgb())
                .unwrap();
            let stored = std::fs::read(traj.frame_path(i)).unwrap();
            assert!(bytes == stored, "{} frame {i}", traj.id);
        }
    }
}

#[test]
fn generation_rejects_real_robot_tasks_and_empty_requests() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        generate_expert_demos(&cfg, 1, 0, dir.path(), Task::Push),
        Err(Error::Argument(_))
    ));
    assert!(matches!(
        generate_expert_demos(&cfg, 0, 0, dir.path(), Task::SyntheticPush),
        Err(Error::Argument(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stepping_keeps_everything_inside_the_square(
        ax in 0.0f64..1.0, ay in 0.0f64..1.0,
        ox in 0.1f64..0.9, oy in 0.1f64..0.9,
        dx in -0.1f64..0.1, dy in -0.1f64..0.1,
    ) {
        let cfg = SynthConfig::default();
        let mut s = WorldState {
            agent: [ax, ay],
            objects: vec![WorldObject { pos: [ox, oy], radius: 0.07, color: [1, 2, 3] }],
            goal: [0.5, 0.5],
            rng_seed: 0,
        };
        step_world(&mut s, [dx, dy], &cfg);
        for k in 0..2 {
            prop_assert!((0.0..=1.0).contains(&s.agent[k]));
            prop_assert!(s.objects[0].pos[k] >= 0.07 - 1e-12 && s.objects[0].pos[k] <= 0.93 + 1e-12);
        }
    }
}
