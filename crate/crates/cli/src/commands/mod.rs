//! Subcommand implementations and shared argument parsing.

pub mod audit;
pub mod evaluate;
pub mod generate;
pub mod predict;
pub mod train;

use chrono::NaiveDateTime;

use capstraffic_core::data::SplitSpec;
use capstraffic_core::model::{ModelSpec, TaskSpec};

use crate::config::CliError;

/// `task1..task4` or a custom `L,M,N` triple.
pub fn parse_task(text: &str) -> Result<TaskSpec, CliError> {
    if let Some(task) = TaskSpec::by_name(text) {
        return Ok(task);
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() == 3 {
        let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.parse()).collect();
        if let Ok(nums) = nums {
            if nums.iter().all(|&v| v >= 1) {
                return Ok(TaskSpec::new(text, nums[0], nums[1], nums[2]));
            }
        }
    }
    Err(CliError::Usage(format!(
        "task '{text}' is neither task1..task4 nor a positive 'L,M,N' triple"
    )))
}

/// `cnn`, `capsnet`, or `capsnet-reduced`.
pub fn parse_model(text: &str, seed: u64) -> Result<ModelSpec, CliError> {
    match text {
        "cnn" => Ok(ModelSpec::cnn(seed)),
        "capsnet" => Ok(ModelSpec::capsnet(seed)),
        "capsnet-reduced" => Ok(ModelSpec::capsnet_reduced(seed)),
        other => Err(CliError::Usage(format!(
            "model '{other}' is not one of cnn, capsnet, capsnet-reduced"
        ))),
    }
}

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M"))
        .ok()
}

/// A fraction strictly inside (0, 1) or an ISO timestamp.
pub fn parse_split(text: &str) -> Result<SplitSpec, CliError> {
    if let Ok(frac) = text.parse::<f64>() {
        if 0.0 < frac && frac < 1.0 {
            return Ok(SplitSpec::Fraction(frac));
        }
        return Err(CliError::Usage(format!(
            "split fraction {frac} must lie strictly between 0 and 1"
        )));
    }
    parse_timestamp(text)
        .map(SplitSpec::At)
        .ok_or_else(|| CliError::Usage(format!("split '{text}' is neither a fraction nor an ISO timestamp")))
}

/// Human-readable split text for manifests.
pub fn split_display(split: &SplitSpec) -> String {
    match split {
        SplitSpec::Fraction(f) => f.to_string(),
        SplitSpec::At(t) => t.format("%Y-%m-%dT%H:%M:%S").to_string(),
    }
}
