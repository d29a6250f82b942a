//! `capstraffic predict` — one forward pass from a checkpoint on a history
//! window taken from a data file.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use capstraffic_core::data::{SpeedMatrix, CADENCE_MINUTES};
use capstraffic_core::model::Checkpoint;
use capstraffic_core::Tensor;
use chrono::Duration;

use crate::commands::parse_timestamp;
use crate::config::{entry, write_manifest, CliError, ConfigFile};
use crate::PredictArgs;

pub fn run(args: PredictArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data_path: PathBuf = cfg.resolve_required(args.data, "data")?;

    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let task = checkpoint.model.task().clone();
    let matrix = SpeedMatrix::load_csv(&data_path)?.impute()?;
    if matrix.sensors() != task.segments {
        return Err(CliError::Runtime(format!(
            "checkpoint task '{}' expects {} sensors but the data has {}",
            task.name,
            task.segments,
            matrix.sensors()
        )));
    }

    // The window ends at --at (default: the last row).
    let end_row = match &args.at {
        None => matrix.rows() - 1,
        Some(text) => {
            let ts = parse_timestamp(text)
                .ok_or_else(|| CliError::Usage(format!("cannot parse --at timestamp '{text}'")))?;
            matrix
                .timestamps()
                .iter()
                .position(|&t| t == ts)
                .ok_or_else(|| CliError::Runtime(format!("timestamp {text} is not a row of the data")))?
        }
    };
    if end_row + 1 < task.history {
        return Err(CliError::Runtime(format!(
            "need {} history rows before {}, found {}",
            task.history,
            matrix.timestamps()[end_row],
            end_row + 1
        )));
    }
    let start_row = end_row + 1 - task.history;
    let mut window = Vec::with_capacity(task.history * task.segments);
    for r in start_row..=end_row {
        for c in 0..task.segments {
            window.push(matrix.raw(r, c));
        }
    }
    let window = Tensor::new(vec![task.history, task.segments], window)
        ?;
    let speeds = checkpoint.predict(&window)?;

    let mut rendered = String::new();
    rendered.push_str("timestamp");
    for id in matrix.sensor_ids() {
        rendered.push(',');
        rendered.push_str(id);
    }
    rendered.push('\n');
    let last_ts = matrix.timestamps()[end_row];
    for step in 0..task.horizon {
        let ts = last_ts + Duration::minutes(CADENCE_MINUTES * (step as i64 + 1));
        rendered.push_str(&ts.format("%Y-%m-%dT%H:%M:%S").to_string());
        for c in 0..task.segments {
            rendered.push(',');
            rendered.push_str(&format!("{:.3}", speeds.data()[step * task.segments + c]));
        }
        rendered.push('\n');
    }
    print!("{rendered}");

    if let Some(out) = &args.output {
        fs::File::create(out)?.write_all(rendered.as_bytes())?;
        let manifest_path = {
            let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".manifest");
            out.with_file_name(name)
        };
        write_manifest(
            &manifest_path,
            &[
                entry("command", "predict"),
                entry("checkpoint", args.checkpoint.display()),
                entry("data", data_path.display()),
                entry("at", last_ts.format("%Y-%m-%dT%H:%M:%S")),
                entry("output", out.display()),
            ],
        )?;
    }
    Ok(())
}
