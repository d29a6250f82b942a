//! `capstraffic evaluate` — metrics for a checkpoint and the persistence
//! baseline on the held-out period, plus image-style comparison dumps.

use std::fs;
use std::path::PathBuf;

use capstraffic_core::data::{prepare, prepare_eval, SpeedMatrix, WindowedDataset};
use capstraffic_core::eval::{
    compute_metrics, dump_comparison, persistence_baseline, persistence_predictions, MetricsReport,
};
use capstraffic_core::model::{predict_dataset, Checkpoint};
use capstraffic_core::Tensor;

use crate::commands::{parse_split, parse_task, split_display};
use crate::config::{entry, write_manifest, CliError, ConfigFile};
use crate::EvaluateArgs;

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label:<12} mre {:>8.4}  mae {:>8.4} km/h  rmse {:>8.4} km/h  (samples {}, zero-target exclusions {})",
        r.mre, r.mae, r.rmse, r.sample_count, r.excluded_zero_targets
    );
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data_path: PathBuf = cfg.resolve_required(args.data, "data")?;
    let split_text: String = cfg.resolve(args.split, "split", "0.75".to_string())?;
    let day_drop: f64 = cfg.resolve(args.day_drop_threshold, "day-drop-threshold", 0.5)?;
    let split = parse_split(&split_text)?;

    if !args.baseline_only && args.checkpoint.is_none() {
        return Err(CliError::Usage(
            "either --checkpoint or --baseline-only is required".into(),
        ));
    }

    fs::create_dir_all(&args.output)?;
    let matrix = SpeedMatrix::load_csv(&data_path)?;

    let (eval_ds, boundary, model_report, checkpoint): (WindowedDataset, _, Option<MetricsReport>, Option<Checkpoint>) =
        if let Some(ckpt_path) = &args.checkpoint {
            let checkpoint = Checkpoint::load(ckpt_path)?;
            let task = checkpoint.model.task().clone();
            let (eval_ds, boundary) = prepare_eval(&matrix, &task, split, day_drop, checkpoint.stats)?;
            let (pred, truth) = predict_dataset(&checkpoint.model, &eval_ds)?;
            let report = compute_metrics(&pred, &truth)?;

            let shape = vec![eval_ds.len(), task.label_len()];
            let truth_matrix = Tensor::new(shape.clone(), truth)?;
            let pred_matrix = Tensor::new(shape, pred)?;
            dump_comparison(&truth_matrix, &pred_matrix, &args.output.join("comparison"))?;
            (eval_ds, boundary, Some(report), Some(checkpoint))
        } else {
            let task_name: String = cfg.resolve(args.task, "task", "task1".to_string())?;
            let task = parse_task(&task_name)?;
            let prepared = prepare(&matrix, &task, split, day_drop)?;
            let eval_ds = prepared.eval;

            // Dump the baseline forecast as the prediction image.
            let (pred, truth) = persistence_predictions(&eval_ds);
            let shape = vec![eval_ds.len(), task.label_len()];
            let truth_matrix = Tensor::new(shape.clone(), truth)?;
            let pred_matrix = Tensor::new(shape, pred)?;
            dump_comparison(&truth_matrix, &pred_matrix, &args.output.join("comparison"))?;
            (eval_ds, prepared.boundary, None, None)
        };

    let baseline = persistence_baseline(&eval_ds)?;
    if let Some(report) = &model_report {
        print_report("model", report);
    }
    print_report("persistence", &baseline);

    let metrics_json = serde_json::json!({
        "model": model_report,
        "baseline": baseline,
        "samples": eval_ds.len(),
        "boundary": boundary.format("%Y-%m-%dT%H:%M:%S").to_string(),
    });
    fs::write(
        args.output.join("metrics.json"),
        serde_json::to_string_pretty(&metrics_json).expect("metrics serialize"),
    )?;

    write_manifest(
        &args.output.join("manifest.txt"),
        &[
            entry("command", "evaluate"),
            entry("data", data_path.display()),
            entry(
                "checkpoint",
                args.checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "-".into()),
            ),
            entry("baseline-only", args.baseline_only),
            entry("task", &eval_ds.task.name),
            entry("split", split_display(&split)),
            entry("boundary", boundary.format("%Y-%m-%dT%H:%M:%S")),
            entry("day-drop-threshold", day_drop),
            entry("train-step", checkpoint.map(|c| c.train_step()).unwrap_or(0)),
            entry("output", args.output.display()),
        ],
    )?;
    Ok(())
}
