use std::io::Write;

use dept_core::toygrad::{
    constant_depth_scenes, depth_mae, generate_scenes, train, transfer_experiment,
    transfer_scene_sets, NetShape, SceneConfig, ToyNet, TrainConfig, TrainMode, TransferConfig,
    TransferCurves, TransferVerdict,
};

use crate::args::{Mode, ScheduleArgs, ToyTrainArgs, ToyTransferArgs};
use crate::{emit, write_bytes, CliResult};

fn train_config(s: &ScheduleArgs, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: s.learning_rate,
        seed,
        batch: s.batch,
        propagated_weight: s.propagated_weight,
        final_lr_fraction: s.final_lr_fraction,
        ..Default::default()
    }
}

pub fn run_toy_train(args: &ToyTrainArgs, out: &mut dyn Write) -> CliResult {
    let scene_cfg = SceneConfig::default();
    let scenes = match args.constant_depth {
        Some(d) => constant_depth_scenes(args.scenes, d, args.seed)?,
        None => generate_scenes(&scene_cfg, args.scenes, args.seed)?,
    };
    let cfg = train_config(&args.schedule, args.epochs, args.seed);
    let mode = match args.mode {
        Mode::Depth => TrainMode::DepthOnly,
        Mode::Detection => TrainMode::DetectionOnly,
        Mode::Combined => TrainMode::Combined,
    };
    let mut net = ToyNet::init(NetShape::standard(scene_cfg.n_classes), args.seed);
    let history = train(&mut net, &scenes, &cfg, mode)?;
    log::info!("final depth MAE {:.4} m", depth_mae(&net, &scenes, &cfg)?);
    match &args.out {
        Some(path) => {
            write_bytes(path, history.to_csv().as_bytes())?;
            let last = history
                .epochs
                .last()
                .map_or(String::from("no epochs run"), |e| {
                    format!(
                        "epoch {} total {:.6} depth {:.6}",
                        e.epoch, e.loss.total, e.loss.depth
                    )
                });
            emit(out, &format!("wrote {} ({last})\n", path.display()))
        }
        None => emit(out, &history.to_csv()),
    }
}

/// Runs the experiment for every seed and prints the verdict.
pub fn run_toy_transfer(args: &ToyTransferArgs, out: &mut dyn Write) -> CliResult<TransferVerdict> {
    let scene_cfg = SceneConfig::default();
    let mut runs: Vec<TransferCurves> = Vec::new();
    let mut text = format!(
        "{:<5} {:>16} {:>16} {:>12}\n",
        "seed",
        format!("pretrained e1-{}", args.window),
        format!("scratch e1-{}", args.window),
        "final gap"
    );
    for seed in 0..args.seeds {
        let (pre, fine) = transfer_scene_sets(&scene_cfg, args.scenes, seed)?;
        let pre = if args.same_data { fine.clone() } else { pre };
        let cfg = TransferConfig {
            pretrain: train_config(&args.schedule, args.pretrain_epochs, seed),
            finetune: train_config(&args.schedule, args.finetune_epochs, seed),
            ..TransferConfig::standard(seed, scene_cfg.n_classes)
        };
        let r = transfer_experiment(&pre, &fine, &cfg)?;
        text.push_str(&format!(
            "{seed:<5} {:>16.6} {:>16.6} {:>11.2}%\n",
            r.pretrained.early_depth_mean(args.window),
            r.scratch.early_depth_mean(args.window),
            100.0 * r.final_gap()
        ));
        if let Some(dir) = &args.out {
            write_bytes(
                &dir.join(format!("seed{seed}_pretrain.csv")),
                r.pretrain.to_csv().as_bytes(),
            )?;
            write_bytes(
                &dir.join(format!("seed{seed}_pretrained.csv")),
                r.pretrained.to_csv().as_bytes(),
            )?;
            write_bytes(
                &dir.join(format!("seed{seed}_scratch.csv")),
                r.scratch.to_csv().as_bytes(),
            )?;
        }
        runs.push(r);
    }
    let v = TransferVerdict::from_runs(&runs, args.window);
    text.push_str(&format!(
        "mean depth loss over fine-tune epochs 1-{}: pretrained {:.6}, scratch {:.6}\nverdict: {}\n",
        args.window,
        v.pretrained_mean,
        v.scratch_mean,
        v.label()
    ));
    emit(out, &text)?;
    Ok(v)
}
