//! `capstraffic train` — the full pipeline: load, clean, impute, split,
//! scale, window, train, checkpoint.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use capstraffic_core::data::{prepare, SpeedMatrix};
use capstraffic_core::layers::AdamConfig;
use capstraffic_core::model::{build_model, TrainConfig, Trainer};

use crate::commands::{parse_model, parse_split, parse_task, split_display};
use crate::config::{entry, write_manifest, CliError, ConfigFile};
use crate::TrainArgs;

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data_path: PathBuf = cfg.resolve_required(args.data, "data")?;
    let model_name: String = cfg.resolve(args.model, "model", "cnn".to_string())?;
    let task_name: String = cfg.resolve(args.task, "task", "task1".to_string())?;
    let lr0: f64 = cfg.resolve(args.lr0, "lr0", 0.0005)?;
    let decay: f64 = cfg.resolve(args.decay, "decay", 0.9999)?;
    let epochs: usize = cfg.resolve(args.epochs, "epochs", 50)?;
    let batch: usize = cfg.resolve(args.batch, "batch", 32)?;
    let seed: u64 = cfg.resolve(args.seed, "seed", 42)?;
    let split_text: String = cfg.resolve(args.split, "split", "0.75".to_string())?;
    let day_drop: f64 = cfg.resolve(args.day_drop_threshold, "day-drop-threshold", 0.5)?;

    if lr0 <= 0.0 || decay <= 0.0 {
        return Err(CliError::Usage("lr0 and decay must be positive".into()));
    }
    if batch == 0 {
        return Err(CliError::Usage("batch must be at least 1".into()));
    }
    let task = parse_task(&task_name)?;
    let model_spec = parse_model(&model_name, seed)?;
    let split = parse_split(&split_text)?;

    fs::create_dir_all(&args.output)?;

    let matrix = SpeedMatrix::load_csv(&data_path)?;
    let prepared = prepare(&matrix, &task, split, day_drop)?;
    println!(
        "data: {} training / {} evaluation samples, boundary {}",
        prepared.train.len(),
        prepared.eval.len(),
        prepared.boundary.format("%Y-%m-%dT%H:%M:%S")
    );

    let train_config = TrainConfig {
        epochs,
        batch_size: batch,
        adam: AdamConfig {
            lr0,
            decay,
            ..AdamConfig::default()
        },
        seed,
    };
    let model = build_model(&model_spec, &task)?;
    println!(
        "model: {} on {} ({} trainable parameters)",
        model_spec.kind_name(),
        task.name,
        model.count_parameters()
    );

    let mut trainer = Trainer::new(model, train_config);
    let mut loss_log = String::from("epoch,mean_mse\n");
    for epoch in 1..=epochs {
        let loss = trainer.run_epoch(&prepared.train)?;
        loss_log.push_str(&format!("{epoch},{loss}\n"));
        println!("epoch {epoch}/{epochs}: training mse {loss:.6}");
    }

    let checkpoint = trainer.checkpoint(prepared.stats);
    let ckpt_path = args.output.join("checkpoint.bin");
    checkpoint.save(&ckpt_path)?;
    let loss_path = args.output.join("loss.csv");
    fs::File::create(&loss_path)?.write_all(loss_log.as_bytes())?;

    write_manifest(
        &args.output.join("manifest.txt"),
        &[
            entry("command", "train"),
            entry("data", data_path.display()),
            entry("model", model_name),
            entry("task", &task.name),
            entry("horizon", task.horizon),
            entry("history", task.history),
            entry("segments", task.segments),
            entry("lr0", lr0),
            entry("decay", decay),
            entry("epochs", epochs),
            entry("batch", batch),
            entry("seed", seed),
            entry("split", split_display(&split)),
            entry("boundary", prepared.boundary.format("%Y-%m-%dT%H:%M:%S")),
            entry("day-drop-threshold", day_drop),
            entry("output", args.output.display()),
        ],
    )?;

    println!("checkpoint: {}", ckpt_path.display());
    println!("loss log:   {}", loss_path.display());
    Ok(())
}
