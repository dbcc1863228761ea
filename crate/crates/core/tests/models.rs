mod common;

use std::collections::BTreeSet;

use common::*;
use playrep::models::checkpoint::{self, decode, encode};
use playrep::models::*;
use playrep::nn::Tensor;
use playrep::Error;
use rand::Rng;

fn random_bundle(seed: u64) -> WeightBundle<f32> {
    let mut r = rng(seed);
    let mut meta = CheckpointMeta::new(PretrainMode::ByolTime, 3);
    meta.steps = 4500;
    meta.seed = seed;
    meta.source_dataset = "play-fixture".into();
    let mut b = WeightBundle::new(meta);
    for (name, shape) in [
        ("conv1.weight", vec![4, 3, 3, 3]),
        ("conv1.bias", vec![4]),
        ("proj.0.weight", vec![2, 4]),
    ] {
        let n = shape.iter().product();
        let data = (0..n).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        b.insert(name, NamedArray::new(shape, data).unwrap());
    }
    b
}

fn encoder_bundle(seed: u64) -> WeightBundle<f32> {
    let enc = build_play_encoder::<f32>(&PlayEncoderConfig::standard(3, 64), seed).unwrap();
    enc.to_bundle(CheckpointMeta::new(PretrainMode::ByolTime, 3))
}

#[test]
fn encoder_output_shapes_at_several_input_sizes() {
    for (size, batch) in [(64, 2), (128, 1), (224, 4)] {
        let mut enc = build_play_encoder::<f32>(&PlayEncoderConfig::standard(3, size), 0).unwrap();
        let x = Tensor::<f32>::zeros(&[3, batch, size, size]);
        let v = enc.features(x.clone()).unwrap();
        assert_eq!(v.shape(), &[batch, 384]);
        let z = enc.project(x.clone()).unwrap();
        assert_eq!(z.shape(), &[batch, 128]);
        let q = enc.query(x).unwrap();
        assert_eq!(q.shape(), &[batch, 128]);
    }
}

#[test]
fn encoder_rejects_non_rgb_input() {
    let mut enc = build_play_encoder::<f32>(&PlayEncoderConfig::standard(3, 64), 0).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 2, 64, 64]);
    assert!(matches!(enc.features(x), Err(Error::Shape(_))));
}

#[test]
fn same_seed_gives_identical_initial_parameters() {
    let a = encoder_bundle(7);
    let b = encoder_bundle(7);
    let c = encoder_bundle(8);
    assert_eq!(a.arrays, b.arrays);
    assert_ne!(a.arrays, c.arrays);
}

#[test]
fn policy_outputs_three_finite_values_per_frame() {
    let mut p = build_policy::<f32>(&PolicyConfig::standard(64), 1).unwrap();
    let y = p.forward(Tensor::zeros(&[3, 8, 64, 64])).unwrap();
    assert_eq!(y.shape(), &[8, 3]);
    assert!(y.data().iter().all(|v| v.is_finite()));
}

#[test]
fn policy_and_encoder_share_conv_names() {
    let enc = build_play_encoder::<f32>(&PlayEncoderConfig::standard(3, 64), 0).unwrap();
    let pol = build_policy::<f32>(&PolicyConfig::standard(64), 0).unwrap();
    let conv = |names: Vec<String>| -> BTreeSet<String> {
        names
            .into_iter()
            .filter(|n| ["conv1.", "conv2.", "conv3."].iter().any(|p| n.starts_with(p)))
            .collect()
    };
    let e = conv(enc.param_names());
    assert_eq!(e.len(), 6);
    assert_eq!(e, conv(pol.param_names()));
}

#[test]
fn global_pooling_policy_has_channel_width_features() {
    let cfg = PolicyConfig {
        pooling: FeaturePooling::Global,
        ..PolicyConfig::standard(64)
    };
    assert_eq!(cfg.feature_dim().unwrap(), 256);
    assert_eq!(PolicyConfig::standard(64).feature_dim().unwrap(), 256 * 3 * 3);
    assert_eq!(spatial_sizes(&alexnet_convs(), 64).unwrap(), vec![15, 7, 3, 3, 3]);
    assert_eq!(spatial_sizes(&alexnet_convs(), 224).unwrap(), vec![55, 27, 13, 13, 13]);
}

#[test]
fn depth_three_transfer_copies_conv1_to_conv3_only() {
    let bundle = encoder_bundle(3);
    let mut policy = build_policy::<f32>(&PolicyConfig::standard(64), 11).unwrap();
    let fresh = policy.clone();
    let summary = transfer_pretrained_weights(&bundle, &mut policy, 3).unwrap();
    for i in 1..=3 {
        for s in ["weight", "bias"] {
            let name = format!("conv{i}.{s}");
            let got: Vec<u32> = policy.param(&name).unwrap().value.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = bundle.get(&name).unwrap().data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(got, want, "{name}");
        }
    }
    for name in [
        "conv4.weight",
        "conv4.bias",
        "conv5.weight",
        "conv5.bias",
        "head.0.weight",
        "head.0.bias",
    ] {
        assert_eq!(
            policy.param(name).unwrap().value,
            fresh.param(name).unwrap().value,
            "{name}"
        );
    }
    assert_eq!(summary.copied.len(), 6);
    assert!(summary.unused.is_empty());
    let heads: BTreeSet<&str> = summary.ignored_heads.iter().map(String::as_str).collect();
    let expected: BTreeSet<&str> = bundle.keys().filter(|k| is_head_key(k)).collect();
    assert!(!expected.is_empty());
    assert_eq!(heads, expected);
}

#[test]
fn transfer_is_idempotent_and_survives_checkpointing() {
    let bundle = encoder_bundle(4);
    let mut once = build_policy::<f32>(&PolicyConfig::standard(64), 2).unwrap();
    transfer_pretrained_weights(&bundle, &mut once, 3).unwrap();
    let mut twice = once.clone();
    transfer_pretrained_weights(&bundle, &mut twice, 3).unwrap();
    let a = once.to_bundle(CheckpointMeta::new(PretrainMode::None, 3));
    let b = twice.to_bundle(CheckpointMeta::new(PretrainMode::None, 3));
    assert_eq!(a.arrays, b.arrays);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    checkpoint::save(&a, &path).unwrap();
    let back: WeightBundle<f32> = checkpoint::load(&path).unwrap();
    for i in 1..=3 {
        let name = format!("conv{i}.weight");
        assert_eq!(back.get(&name).unwrap().data, bundle.get(&name).unwrap().data);
    }
}

#[test]
fn transfer_errors_leave_the_policy_untouched() {
    let bundle = encoder_bundle(5);
    let mut policy = build_policy::<f32>(&PolicyConfig::standard(64), 2).unwrap();
    let before = policy.clone();
    let missing = bundle.filtered(|k| !k.starts_with("conv2."));
    assert!(matches!(
        transfer_pretrained_weights(&missing, &mut policy, 3),
        Err(Error::Transfer(_))
    ));
    let mut wrong = bundle.clone();
    wrong.arrays.get_mut("conv3.bias").unwrap().shape = vec![2, 192];
    assert!(matches!(
        transfer_pretrained_weights(&wrong, &mut policy, 3),
        Err(Error::Transfer(_))
    ));
    assert!(matches!(
        transfer_pretrained_weights(&bundle, &mut policy, 4),
        Err(Error::Transfer(_))
    ));
    assert!(matches!(
        transfer_pretrained_weights(&bundle, &mut policy, 0),
        Err(Error::Transfer(_))
    ));
    assert_eq!(
        policy.to_bundle(CheckpointMeta::new(PretrainMode::None, 3)).arrays,
        before.to_bundle(CheckpointMeta::new(PretrainMode::None, 3)).arrays
    );
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let b = random_bundle(1);
    let back: WeightBundle<f32> = decode(&encode(&b).unwrap()).unwrap();
    assert_eq!(back, b);
    assert_eq!(back.meta.pretrain_mode, PretrainMode::ByolTime);
    assert_eq!(back.meta.steps, 4500);
    assert_eq!(back.meta.schema_version, CHECKPOINT_SCHEMA_VERSION);

    let wide = b.cast::<f64>();
    let back: WeightBundle<f64> = decode(&encode(&wide).unwrap()).unwrap();
    assert_eq!(back, wide);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = encode(&random_bundle(2)).unwrap();
    let truncated = &bytes[..bytes.len() - 9];
    let err = decode::<f32>(truncated).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    assert!(err.to_string().contains("checksum"), "{err}");

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode::<f32>(&flipped), Err(Error::Checkpoint(_))));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode::<f32>(&magic), Err(Error::Checkpoint(_))));

    assert!(matches!(decode::<f64>(&bytes), Err(Error::Checkpoint(_))));
}

#[test]
fn checkpoint_with_newer_schema_reports_the_version() {
    let mut b = random_bundle(3);
    b.meta.schema_version = CHECKPOINT_SCHEMA_VERSION + 1;
    let err = decode::<f32>(&encode(&b).unwrap()).unwrap_err();
    assert!(
        err.to_string().contains(&(CHECKPOINT_SCHEMA_VERSION + 1).to_string()),
        "{err}"
    );
}

#[test]
fn meta_depth_must_be_three_to_five() {
    for (d, ok) in [(2, false), (3, true), (5, true), (6, false)] {
        assert_eq!(
            CheckpointMeta::new(PretrainMode::Ae, d).validate().is_ok(),
            ok,
            "depth {d}"
        );
    }
}

#[test]
fn classification_weights_import_through_a_name_mapping() {
    let mut p = build_policy::<f32>(&PolicyConfig::standard(64), 9).unwrap();
    randomize_f32(&mut p);
    let source = p.to_bundle(CheckpointMeta::new(PretrainMode::None, 5));
    let mapping = NameMapping::torchvision_alexnet();
    let bytes = export_safetensors(&source, &mapping).unwrap();
    let imported = import_classification_weights(&bytes, &mapping, "fixture.safetensors").unwrap();
    assert_eq!(imported.meta.pretrain_mode, PretrainMode::Classification);
    assert_eq!(imported.keys().count(), 10);
    for k in imported.keys() {
        assert_eq!(imported.get(k), source.get(k), "{k}");
    }
    let mut partial = mapping.clone();
    partial.layers.insert("features.99".into(), "conv6".into());
    assert!(matches!(
        import_classification_weights(&bytes, &partial, "fixture"),
        Err(Error::Load(_))
    ));
    assert!(matches!(
        import_classification_weights(b"garbage", &mapping, "x"),
        Err(Error::Load(_))
    ));
}

fn randomize_f32(p: &mut Policy<f32>) {
    let mut r = rng(17);
    for param in p.params_mut() {
        param.value.iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
    }
}
