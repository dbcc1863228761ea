mod common;

use common::*;
use playrep::dataset::AugmentConfig;
use playrep::models::{CheckpointMeta, NamedArray, PlayEncoder, PretrainMode, WeightBundle};
use playrep::nn::Tensor;
use playrep::pretrain::*;
use playrep::Error;
use proptest::prelude::*;
use rand::Rng;

fn bundle_from(values: &[(&str, Vec<f64>)]) -> WeightBundle<f64> {
    let mut b = WeightBundle::new(CheckpointMeta::new(PretrainMode::ByolTime, 3));
    for (name, v) in values {
        b.insert(*name, NamedArray::new(vec![v.len()], v.clone()).unwrap());
    }
    b
}

fn random_bundle(seed: u64, n: usize) -> WeightBundle<f64> {
    let mut r = rng(seed);
    let a: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..n / 2 + 1).map(|_| r.gen_range(-3.0..3.0)).collect();
    bundle_from(&[("conv1.weight", a), ("conv1.bias", b)])
}

fn rows(v: &[&[f64]]) -> Tensor<f64> {
    let d = v[0].len();
    Tensor::from_vec(&[v.len(), d], v.iter().flat_map(|r| r.iter().copied()).collect())
}

#[test]
fn byol_loss_per_pair_values() {
    let q = rows(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 4.0]]);
    let same = rows(&[&[2.0, 0.0], &[0.0, 0.5], &[0.3, 0.4]]);
    let orth = rows(&[&[0.0, 1.0], &[5.0, 0.0], &[-4.0, 3.0]]);
    let anti = rows(&[&[-1.0, 0.0], &[0.0, -7.0], &[-3.0, -4.0]]);
    for (key, want) in [(same, 0.0), (orth, 2.0), (anti, 4.0)] {
        let (l, _) = byol_time_loss(&q, &key, true).unwrap();
        assert!((l - want).abs() < 1e-6, "{l} vs {want}");
    }
}

#[test]
fn raw_byol_loss_is_squared_distance() {
    let q = rows(&[&[1.0, 2.0]]);
    let k = rows(&[&[0.0, 4.0]]);
    let (l, g) = byol_time_loss(&q, &k, false).unwrap();
    assert_eq!(l, 5.0);
    assert_eq!(g.data(), &[2.0, -4.0]);
}

#[test]
fn byol_loss_handles_zero_vectors_and_rejects_bad_shapes() {
    let q = rows(&[&[0.0, 0.0, 0.0]]);
    let k = rows(&[&[0.0, 1.0, 0.0]]);
    let (l, g) = byol_time_loss(&q, &k, true).unwrap();
    assert!(l.is_finite() && g.data().iter().all(|v| v.is_finite()));
    assert!((l - 1.0).abs() < 1e-6);
    let bad = rows(&[&[0.0, 1.0]]);
    assert!(matches!(byol_time_loss(&q, &bad, true), Err(Error::Shape(_))));
}

#[test]
fn ema_matches_closed_form() {
    let t = random_bundle(1, 40);
    let o = random_bundle(2, 40);
    for tau in [0.0, 1.0, 0.99] {
        let out = ema_update(&t, &o, tau).unwrap();
        for (name, a) in &out.arrays {
            for ((&got, &tv), &ov) in a.data.iter().zip(&t.arrays[name].data).zip(&o.arrays[name].data) {
                let want = tau * tv + (1.0 - tau) * ov;
                assert!((got - want).abs() <= 1e-12, "{name} τ={tau}");
            }
        }
    }
    assert_eq!(ema_update(&t, &o, 0.0).unwrap().arrays, o.arrays);
    assert_eq!(ema_update(&t, &o, 1.0).unwrap().arrays, t.arrays);
}

#[test]
fn ema_rejects_mismatched_inputs() {
    let t = random_bundle(1, 4);
    let o = random_bundle(2, 4);
    assert!(matches!(ema_update(&t, &o, 1.5), Err(Error::Config(_))));
    assert!(matches!(ema_update(&t, &o, -0.1), Err(Error::Config(_))));
    let missing = o.filtered(|k| k != "conv1.bias");
    assert!(matches!(ema_update(&t, &missing, 0.5), Err(Error::Argument(_))));
    let short = random_bundle(3, 6);
    assert!(matches!(ema_update(&t, &short, 0.5), Err(Error::Shape(_))));
}

#[test]
fn key_branch_follows_the_momentum_recursion_of_the_online_history() {
    let mut r = rng(5);
    let enc = PlayEncoder::<f64>::new(tiny_encoder_config(true), 3).unwrap();
    let tau = 0.9;
    let mut trainer = ByolTrainer::new(enc, 1e-2, true, false);
    let mut expected: Vec<Vec<f64>> = trainer.target.params().map(|p| p.value.clone()).collect();
    let names: Vec<String> = trainer.target.param_names();
    for _ in 0..3 {
        let q = random_tensor(&[3, 4, 8, 8], &mut r, 0.0, 1.0);
        let k = random_tensor(&[3, 4, 8, 8], &mut r, 0.0, 1.0);
        trainer.step(q, k, tau).unwrap();
        for (name, e) in names.iter().zip(&mut expected) {
            let online = trainer.online.params().find(|p| &p.name == name).unwrap();
            for (t, &o) in e.iter_mut().zip(&online.value) {
                *t = tau * *t + (1.0 - tau) * o;
            }
        }
        assert!(trainer.target.params().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }
    for (p, e) in trainer.target.params().zip(&expected) {
        assert_eq!(&p.value, e, "{}", p.name);
    }
    assert!(trainer.target.pred.is_none());
    let online_names: Vec<String> = trainer.online.param_names();
    assert!(online_names.iter().any(|n| n.starts_with("pred.")));
}

#[test]
fn pair_sampler_rejects_zero_offset_and_short_corpora() {
    assert!(PairSampler::from_lengths([10], 0).is_err());
    assert!(PairSampler::from_lengths([3, 2], 3).is_err());
    assert_eq!(PairSampler::from_lengths([10, 4, 3], 3).unwrap().len(), 8);
}

#[test]
fn pair_sampling_is_uniform_over_pairs() {
    let sampler = PairSampler::from_lengths([5, 10], 3).unwrap();
    let n_pairs = sampler.len();
    assert_eq!(n_pairs, 9);
    let draws = 90_000;
    let mut counts = std::collections::BTreeMap::new();
    let mut r = rng(8);
    for _ in 0..draws {
        let (traj, t, u) = sampler.sample(&mut r);
        assert_eq!(u, t + 3);
        *counts.entry((traj, t)).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), n_pairs);
    let p = 1.0 / n_pairs as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (k, &c) in &counts {
        assert!((c as f64 - mean).abs() < 5.0 * sd, "{k:?}: {c}");
    }
}

fn tiny_pretrain_config(steps: usize) -> PretrainConfig {
    PretrainConfig {
        steps,
        batch_size: 4,
        input_size: 32,
        log_every: 0,
        augment: AugmentConfig::default(),
        ..PretrainConfig::default()
    }
}

#[test]
fn byol_pretraining_produces_a_tagged_bundle_and_log() {
    let ds = play_in_memory(&[6, 7, 8], 32);
    let cfg = tiny_pretrain_config(3);
    let (bundle, log) = pretrain_byol(&ds, &cfg).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log.losses.iter().all(|l| l.is_finite() && (0.0..=4.0).contains(l)));
    assert_eq!(bundle.meta.pretrain_mode, PretrainMode::ByolTime);
    assert_eq!(bundle.meta.steps, 3);
    assert_eq!(bundle.meta.pretrain_depth, 3);
    assert!(bundle.get("conv3.weight").is_some());
    assert!(bundle.get("conv4.weight").is_none());
    assert!(bundle.get("proj.0.weight").is_some());
    assert!(bundle.get("pred.0.weight").is_some());
    assert!(log.to_csv().starts_with("step,loss,seconds\n1,"));
}

#[test]
fn head_batch_norm_adds_named_norm_layers() {
    let ds = play_in_memory(&[6, 7], 32);
    let cfg = PretrainConfig {
        head_batch_norm: true,
        ..tiny_pretrain_config(2)
    };
    let (bundle, _) = pretrain_byol(&ds, &cfg).unwrap();
    for k in [
        "proj.0.weight",
        "proj.1.weight",
        "proj.1.bias",
        "proj.3.weight",
        "pred.1.weight",
    ] {
        assert!(bundle.get(k).is_some(), "{k}");
    }
}

#[test]
fn pretraining_is_deterministic_and_worker_independent() {
    let ds = play_in_memory(&[9, 7, 8, 6], 32);
    let mut cfg = tiny_pretrain_config(5);
    cfg.workers = 1;
    let (a, la) = pretrain_byol(&ds, &cfg).unwrap();
    cfg.workers = 3;
    let (b, lb) = pretrain_byol(&ds, &cfg).unwrap();
    assert_eq!(la.losses, lb.losses);
    assert_eq!(a.arrays, b.arrays);
    cfg.seed = 1;
    let (_, lc) = pretrain_byol(&ds, &cfg).unwrap();
    assert_ne!(la.losses, lc.losses);
}

#[test]
fn autoencoder_baselines_produce_tagged_encoder_bundles() {
    let ds = play_in_memory(&[5, 6], 32);
    let cfg = tiny_pretrain_config(2);
    let (ae, log) = pretrain_autoencoder(&ds, &cfg).unwrap();
    assert_eq!(ae.meta.pretrain_mode, PretrainMode::Ae);
    assert_eq!(log.len(), 2);
    assert!(ae.get("conv1.weight").is_some());
    let (vae, log) = pretrain_vae(&ds, &cfg).unwrap();
    assert_eq!(vae.meta.pretrain_mode, PretrainMode::Vae);
    assert!(log.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
}

#[test]
fn invalid_pretrain_configs_are_rejected() {
    let ds = play_in_memory(&[6], 32);
    for cfg in [
        PretrainConfig {
            steps: 0,
            ..tiny_pretrain_config(1)
        },
        PretrainConfig {
            offset: 0,
            ..tiny_pretrain_config(1)
        },
        PretrainConfig {
            depth: 2,
            ..tiny_pretrain_config(1)
        },
        PretrainConfig {
            tau: 1.2,
            ..tiny_pretrain_config(1)
        },
        PretrainConfig {
            lr: 0.0,
            ..tiny_pretrain_config(1)
        },
    ] {
        assert!(matches!(pretrain_byol(&ds, &cfg), Err(Error::Config(_))));
    }
    let short = play_in_memory(&[3, 2], 32);
    assert!(pretrain_byol(&short, &tiny_pretrain_config(1)).is_err());
}

#[test]
fn cosine_schedule_runs_from_base_to_one() {
    assert_eq!(TauSchedule::Constant.at(0.996, 50, 100), 0.996);
    assert!((TauSchedule::Cosine.at(0.996, 0, 100) - 0.996).abs() < 1e-12);
    assert!((TauSchedule::Cosine.at(0.996, 100, 100) - 1.0).abs() < 1e-12);
    assert!((TauSchedule::Cosine.at(0.99, 50, 100) - 0.995).abs() < 1e-12);
}

#[test]
fn gaussian_kl_examples() {
    assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-12);
    // σ² = e: ½(e − 1 − 1)
    assert!((gaussian_kl(&[0.0], &[1.0]) - 0.5 * (std::f64::consts::E - 2.0)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn ema_updates_compose(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0, seed in any::<u64>()) {
        let t = random_bundle(seed, 16);
        let o = random_bundle(seed.wrapping_add(1), 16);
        let twice = ema_update(&ema_update(&t, &o, t1).unwrap(), &o, t2).unwrap();
        let once = ema_update(&t, &o, t1 * t2).unwrap();
        for (name, a) in &twice.arrays {
            for (x, y) in a.data.iter().zip(&once.arrays[name].data) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_is_non_negative_additive_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-4.0f64..4.0, 1..6),
        lv in prop::collection::vec(-4.0f64..4.0, 1..6),
    ) {
        let n = mu.len().min(lv.len());
        let (mu, lv) = (&mu[..n], &lv[..n]);
        let kl = gaussian_kl(mu, lv);
        prop_assert!(kl >= 0.0);
        let split: f64 = (0..n).map(|i| gaussian_kl(&mu[i..=i], &lv[i..=i])).sum();
        prop_assert!((kl - split).abs() < 1e-9 * (1.0 + kl));
        if mu.iter().chain(lv).any(|v| v.abs() > 1e-3) {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn byol_loss_is_permutation_invariant(seed in any::<u64>(), shift in 1usize..5) {
        let mut r = rng(seed);
        let q = random_tensor(&[5, 4], &mut r, -1.0, 1.0);
        let k = random_tensor(&[5, 4], &mut r, -1.0, 1.0);
        let perm = |t: &Tensor<f64>| {
            let data = (0..5).flat_map(|i| t.row((i + shift) % 5).to_vec()).collect();
            Tensor::from_vec(&[5, 4], data)
        };
        let (a, _) = byol_time_loss(&q, &k, true).unwrap();
        let (b, _) = byol_time_loss(&perm(&q), &perm(&k), true).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=4.0 + 1e-9).contains(&a));
    }
}
