//! `capstraffic audit` — trainable-parameter accounting for both
//! architectures on the four built-in tasks.
//!
//! Every count is pure layer arithmetic, so the audit runs instantly even for
//! the largest configuration. Exact counts are checked against built-in
//! expected values; the four configurations with published rounded totals
//! are additionally checked to be within 1% of those references.

use capstraffic_core::model::{ModelSpec, TaskSpec};

use crate::config::CliError;
use crate::AuditArgs;

struct Row {
    model: &'static str,
    task: &'static str,
    expected: usize,
    /// Rounded reference total, when one exists for this configuration.
    reference: Option<f64>,
}

const ROWS: [Row; 8] = [
    Row { model: "cnn", task: "task1", expected: 373_972, reference: Some(0.374e6) },
    Row { model: "cnn", task: "task2", expected: 376_552, reference: None },
    Row { model: "cnn", task: "task3", expected: 390_642, reference: None },
    Row { model: "cnn", task: "task4", expected: 409_892, reference: Some(0.410e6) },
    Row { model: "capsnet", task: "task1", expected: 8_238_560, reference: Some(8.24e6) },
    Row { model: "capsnet", task: "task2", expected: 16_430_560, reference: None },
    Row { model: "capsnet", task: "task3", expected: 71_726_560, reference: None },
    Row { model: "capsnet", task: "task4", expected: 143_406_560, reference: Some(143e6) },
];

pub fn run(args: AuditArgs) -> Result<(), CliError> {
    let mut all_ok = true;
    let mut json_rows = Vec::new();

    if !args.json {
        println!("{:<9} {:<7} {:>13} {:>12} {:>10}  status", "model", "task", "parameters", "reference", "deviation");
    }
    for row in &ROWS {
        let spec = match row.model {
            "cnn" => ModelSpec::cnn(0),
            _ => ModelSpec::capsnet(0),
        };
        let task = TaskSpec::by_name(row.task).expect("built-in task");
        let count = spec.parameter_count(&task).map_err(|e| CliError::Runtime(e.to_string()))?;

        let exact_ok = count == row.expected;
        let (ref_text, dev_text, ref_ok) = match row.reference {
            Some(reference) => {
                let deviation = (count as f64 - reference).abs() / reference;
                (
                    format!("{:.3}e6", reference / 1e6),
                    format!("{:.2}%", deviation * 100.0),
                    deviation <= 0.01,
                )
            }
            None => ("-".to_string(), "-".to_string(), true),
        };
        let ok = exact_ok && ref_ok;
        all_ok &= ok;

        if args.json {
            json_rows.push(serde_json::json!({
                "model": row.model,
                "task": row.task,
                "parameters": count,
                "expected": row.expected,
                "reference": row.reference,
                "ok": ok,
            }));
        } else {
            println!(
                "{:<9} {:<7} {:>13} {:>12} {:>10}  {}",
                row.model,
                row.task,
                count,
                ref_text,
                dev_text,
                if ok { "ok" } else { "DEVIATES" }
            );
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&json_rows).expect("audit rows serialize"));
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::AuditMismatch)
    }
}
