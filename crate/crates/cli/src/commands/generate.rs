//! `capstraffic generate` — synthesize a speed CSV.

use capstraffic_core::data::{generate_synthetic, SyntheticProfile};

use crate::config::{entry, write_manifest, CliError, ConfigFile};
use crate::GenerateArgs;

pub fn run(args: GenerateArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let sensors: usize = cfg.resolve(args.sensors, "sensors", 20)?;
    let days: usize = cfg.resolve(args.days, "days", 30)?;
    let seed: u64 = cfg.resolve(args.seed, "seed", 42)?;
    let defaults = SyntheticProfile::default();
    let profile = SyntheticProfile {
        noise_std: cfg.resolve(args.noise_std, "noise-std", defaults.noise_std)?,
        day_factor_std: cfg.resolve(args.day_factor_std, "day-factor-std", defaults.day_factor_std)?,
        missing_rate: cfg.resolve(args.missing_rate, "missing-rate", defaults.missing_rate)?,
        ..defaults
    };
    if sensors == 0 {
        return Err(CliError::Usage("--sensors must be at least 1".into()));
    }
    if days == 0 {
        return Err(CliError::Usage("--days must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&profile.missing_rate) {
        return Err(CliError::Usage(format!(
            "--missing-rate {} must lie in [0, 1)",
            profile.missing_rate
        )));
    }
    if profile.noise_std < 0.0 || profile.day_factor_std < 0.0 {
        return Err(CliError::Usage("noise parameters must be non-negative".into()));
    }

    let matrix = generate_synthetic(sensors, days, seed, &profile);
    matrix.write_csv(&args.output)?;

    let manifest_path = {
        let mut name = args.output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest");
        args.output.with_file_name(name)
    };
    write_manifest(
        &manifest_path,
        &[
            entry("command", "generate"),
            entry("sensors", sensors),
            entry("days", days),
            entry("seed", seed),
            entry("missing-rate", profile.missing_rate),
            entry("noise-std", profile.noise_std),
            entry("day-factor-std", profile.day_factor_std),
            entry("output", args.output.display()),
        ],
    )?;

    println!(
        "wrote {} rows x {} sensors to {} (missing cells: {})",
        matrix.rows(),
        matrix.sensors(),
        args.output.display(),
        matrix.missing_count()
    );
    Ok(())
}
