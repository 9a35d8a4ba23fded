use blindqe_core::checkpoint::{param_digest, ModelKind, ModelWeights};
use blindqe_core::codec::manifest::ClipPair;
use blindqe_core::codec::synth::{synthetic_clip, SynthOptions};
use blindqe_core::codec::{degrade_clip, CodecConfig};
use blindqe_core::data::Augment;
use blindqe_core::drl::{DrlConfig, DrlModel};
use blindqe_core::losses::charbonnier_loss;
use blindqe_core::net::{NetConfig, QecvNet};
use blindqe_core::nn::Conv2d;
use blindqe_core::train::{train_blind, TrainConfig};
use blindqe_core::Error;
use blindqe_tensor::ops::Conv2dOpts;
use blindqe_tensor::{ParamStore, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_net() -> NetConfig {
    NetConfig {
        feat_channels: 8,
        max_stages: 5,
        window: 4,
        heads: 2,
        attn_depth: 2,
        degradation_dim: 16,
        qe_reduction: 2,
        ..NetConfig::default()
    }
}

fn toy_drl() -> ModelWeights {
    let cfg = DrlConfig {
        stage_channels: vec![4, 4, 8, 16],
        residual_blocks_per_stage: 1,
        working_channels: 8,
        mlp_hidden: 8,
        ..DrlConfig::default()
    };
    DrlModel::new(&cfg, 5).unwrap().to_weights(serde_json::json!({})).unwrap()
}

fn pairs() -> Vec<ClipPair> {
    let codec = CodecConfig::default();
    (0..2)
        .flat_map(|s| {
            let raw = synthetic_clip(48, 48, 3, s, SynthOptions::default()).unwrap();
            [22, 42].map(|qp| ClipPair::new(raw.clone(), degrade_clip(&raw, qp, &codec).unwrap()).unwrap())
        })
        .collect()
}

fn quick() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        samples_per_epoch: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_return_initialization() {
    let tc = TrainConfig { epochs: 0, ..quick() };
    let out = train_blind(&pairs(), &toy_drl(), &toy_net(), &tc).unwrap();
    let init = QecvNet::new(&toy_net(), tc.seed).unwrap();
    assert_eq!(param_digest(&out.net.params), param_digest(&init.params));
    assert!(out.curve.is_empty());
    assert_eq!(out.initial_probe_loss, out.final_probe_loss);
}

#[test]
fn encoder_is_frozen_and_runs_repeat() {
    let drl = toy_drl();
    let before = drl.to_bytes();
    let a = train_blind(&pairs(), &drl, &toy_net(), &quick()).unwrap();
    assert_eq!(drl.to_bytes(), before);
    assert_eq!(a.drl_digest, param_digest(&drl.params));
    let b = train_blind(&pairs(), &drl, &toy_net(), &quick()).unwrap();
    assert_eq!(a.weights(&drl).unwrap().to_bytes(), b.weights(&drl).unwrap().to_bytes());
    assert_eq!(a.curve, b.curve);
}

#[test]
fn one_toy_epoch_reduces_loss() {
    let tc = TrainConfig::default();
    let out = train_blind(&pairs(), &toy_drl(), &toy_net(), &tc).unwrap();
    assert_eq!(out.curve.len(), 50);
    assert!(
        out.final_probe_loss < out.initial_probe_loss,
        "{} -> {}",
        out.initial_probe_loss,
        out.final_probe_loss
    );
}

#[test]
fn training_errors_are_typed() {
    let drl = toy_drl();
    assert!(matches!(train_blind(&[], &drl, &toy_net(), &quick()), Err(Error::Config(_))));
    let mut other = toy_net();
    other.feat_channels = 4;
    assert!(matches!(train_blind(&pairs(), &drl, &other, &quick()), Err(Error::Compatibility(_))));
    let net_w = QecvNet::new(&toy_net(), 0).unwrap().to_weights(None, serde_json::json!({})).unwrap();
    assert!(matches!(
        train_blind(&pairs(), &net_w, &toy_net(), &quick()),
        Err(Error::WrongModelKind { ref expected, .. }) if *expected == ModelKind::Drl.to_string()
    ));
    let bad = TrainConfig { patch: 40, ..quick() };
    assert!(matches!(train_blind(&pairs(), &drl, &toy_net(), &bad), Err(Error::Config(_))));
    let bad = TrainConfig { epsilon: 0.0, ..quick() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn flips_leave_pointwise_network_loss_unchanged() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conv = Conv2d::new(&mut store, "p", 3, 1, 1, Conv2dOpts::default(), 1.0, &mut rng);
    let s = Session::new(&store, false);
    let raw = synthetic_clip(16, 16, 3, 3, SynthOptions::default()).unwrap();
    let deg = degrade_clip(&raw, 37, &CodecConfig::default()).unwrap();
    let loss = |aug: Augment| {
        let mut x = Vec::new();
        for f in deg.frames() {
            x.extend(aug.apply(f).data().iter().map(|v| v / 255.0));
        }
        let out = conv.forward(&s, &Var::constant(Tensor::new(vec![1, 3, 16, 16], x)));
        let target: Vec<f64> = aug.apply(raw.frame(1)).data().iter().map(|v| v / 255.0).collect();
        charbonnier_loss(out.value().data(), &target, 1e-6).unwrap()
    };
    let base = loss(Augment::default());
    for aug in [
        Augment { flip_h: true, ..Augment::default() },
        Augment { flip_v: true, ..Augment::default() },
        Augment { quarter_turns: 1, ..Augment::default() },
        Augment { flip_h: true, flip_v: true, quarter_turns: 3 },
    ] {
        assert!((loss(aug) - base).abs() < 1e-5);
    }
}
