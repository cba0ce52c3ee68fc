use dept_core::gradcheck::{check_toy_net, GradcheckConfig};
use dept_core::toygrad::{
    constant_depth_scenes, depth_mae, generate_scenes, train, transfer_experiment,
    transfer_scene_sets, NetShape, SceneConfig, ToyNet, TrainConfig, TrainMode, TransferConfig,
    CSV_HEADER,
};

#[test]
fn every_parameter_passes_finite_differences() {
    for seed in 0..3 {
        let cfg = GradcheckConfig {
            seed,
            ..Default::default()
        };
        for block in check_toy_net(&cfg).unwrap() {
            assert!(block.passed, "seed {seed}: {block:?}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let scenes = generate_scenes(&SceneConfig::default(), 4, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        seed: 11,
        ..Default::default()
    };
    let run = || {
        let mut net = ToyNet::init(NetShape::standard(3), 2);
        let h = train(&mut net, &scenes, &cfg, TrainMode::Combined).unwrap();
        (net, h.to_csv())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}

#[test]
fn duplicated_frame_batch_equals_doubled_step() {
    let scene = generate_scenes(&SceneConfig::default(), 1, 8).unwrap();
    let pair = vec![scene[0].clone(), scene[0].clone()];
    let init = ToyNet::init(NetShape::standard(3), 4);
    let mut batched = init.clone();
    let cfg = TrainConfig {
        epochs: 1,
        batch: 2,
        learning_rate: 0.01,
        ..Default::default()
    };
    train(&mut batched, &pair, &cfg, TrainMode::Combined).unwrap();
    let mut single = init;
    let cfg = TrainConfig {
        epochs: 1,
        batch: 1,
        learning_rate: 0.02,
        ..Default::default()
    };
    train(&mut single, &scene, &cfg, TrainMode::Combined).unwrap();
    assert_eq!(batched.params(), single.params());
}

#[test]
fn history_has_one_row_per_epoch() {
    let scenes = generate_scenes(&SceneConfig::default(), 2, 1).unwrap();
    let mut net = ToyNet::init(NetShape::standard(3), 0);
    let h = train(
        &mut net,
        &scenes,
        &TrainConfig {
            epochs: 7,
            ..Default::default()
        },
        TrainMode::DepthOnly,
    )
    .unwrap();
    assert_eq!(h.len(), 7);
    assert_eq!(h.to_csv().lines().count(), 8);
    let empty = train(
        &mut net,
        &scenes,
        &TrainConfig {
            epochs: 0,
            ..Default::default()
        },
        TrainMode::DepthOnly,
    )
    .unwrap();
    assert_eq!(empty.to_csv(), format!("{CSV_HEADER}\n"));
}

#[test]
fn parameters_stay_finite_at_the_default_rate() {
    let scenes = generate_scenes(&SceneConfig::default(), 6, 21).unwrap();
    for mode in [
        TrainMode::DepthOnly,
        TrainMode::DetectionOnly,
        TrainMode::Combined,
    ] {
        let mut net = ToyNet::init(NetShape::standard(3), 5);
        let cfg = TrainConfig {
            epochs: 30,
            ..Default::default()
        };
        train(&mut net, &scenes, &cfg, mode).unwrap();
        assert!(net.params().iter().all(|p| p.is_finite()));
    }
}

#[test]
fn constant_depth_scenes_converge() {
    let scenes = constant_depth_scenes(8, 10.0, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..Default::default()
    };
    let mut net = ToyNet::init(NetShape::standard(3), 1);
    let h = train(&mut net, &scenes, &cfg, TrainMode::DepthOnly).unwrap();
    assert_eq!(h.len(), 200);
    let mae = depth_mae(&net, &scenes, &cfg).unwrap();
    assert!(mae < 0.1, "final depth MAE {mae}");
    // confident predictions propagate seeds into their neighbors
    let last = h.epochs.last().unwrap();
    assert!(last.supervised_cells > last.seed_cells, "{last:?}");
}

#[test]
fn zero_pretrain_epochs_match_scratch_bit_for_bit() {
    let (pre, fine) = transfer_scene_sets(&SceneConfig::default(), 3, 4).unwrap();
    let mut cfg = TransferConfig::standard(4, 3);
    cfg.pretrain.epochs = 0;
    cfg.finetune.epochs = 6;
    let r = transfer_experiment(&pre, &fine, &cfg).unwrap();
    assert!(r.pretrain.is_empty());
    assert_eq!(r.pretrained, r.scratch);
    assert_eq!(r.pretrained.to_csv(), r.scratch.to_csv());
}
