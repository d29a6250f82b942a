//! Synthetic traffic generator for desk-scale experiments.
//!
//! Each sensor gets a daily periodic mean curve — a free-flow level with two
//! rush-hour dips — plus Gaussian measurement noise and a shared per-day
//! latent factor that modulates congestion depth across all sensors (this is
//! what makes the columns correlated). Everything is drawn from a single
//! seeded stream, so a `(seed, profile)` pair pins the matrix exactly.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SpeedMatrix, CADENCE_MINUTES, SLOTS_PER_DAY};

/// Knobs of the generator. `noise_std` is per-cell measurement noise in km/h;
/// `day_factor_std` scales the shared day-to-day congestion modulation. With
/// both at zero every day of a sensor repeats exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticProfile {
    pub noise_std: f64,
    pub day_factor_std: f64,
    pub missing_rate: f64,
    pub start: NaiveDateTime,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            noise_std: 4.0,
            day_factor_std: 0.12,
            missing_rate: 0.0,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
        }
    }
}

impl SyntheticProfile {
    /// Profile with every stochastic term switched off.
    pub fn noiseless() -> Self {
        SyntheticProfile {
            noise_std: 0.0,
            day_factor_std: 0.0,
            missing_rate: 0.0,
            ..SyntheticProfile::default()
        }
    }
}

struct SensorCurve {
    free_flow: f64,
    morning_depth: f64,
    morning_center: f64,
    morning_width: f64,
    evening_depth: f64,
    evening_center: f64,
    evening_width: f64,
    coupling: f64,
}

impl SensorCurve {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        SensorCurve {
            free_flow: rng.random_range(42.0..58.0),
            morning_depth: rng.random_range(12.0..22.0),
            morning_center: rng.random_range(33.0..36.0), // around 08:15-09:00
            morning_width: rng.random_range(5.0..8.0),
            evening_depth: rng.random_range(14.0..24.0),
            evening_center: rng.random_range(69.0..72.0), // around 17:15-18:00
            evening_width: rng.random_range(6.0..9.0),
            coupling: rng.random_range(0.6..1.4),
        }
    }

    fn congestion(&self, slot: usize) -> f64 {
        let bump = |center: f64, width: f64| {
            let d = slot as f64 - center;
            (-d * d / (2.0 * width * width)).exp()
        };
        self.morning_depth * bump(self.morning_center, self.morning_width)
            + self.evening_depth * bump(self.evening_center, self.evening_width)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 is kept strictly positive so the log is finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates `days` full days of 15-minute readings for `sensors` sensors.
pub fn generate_synthetic(sensors: usize, days: usize, seed: u64, profile: &SyntheticProfile) -> SpeedMatrix {
    assert!(sensors >= 1, "need at least one sensor");
    assert!(days >= 1, "need at least one day");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves: Vec<SensorCurve> = (0..sensors).map(|_| SensorCurve::draw(&mut rng)).collect();

    let rows = days * SLOTS_PER_DAY;
    let mut values = Vec::with_capacity(rows * sensors);
    let mut missing = Vec::with_capacity(rows * sensors);
    let timestamps: Vec<NaiveDateTime> = (0..rows)
        .map(|r| profile.start + Duration::minutes(CADENCE_MINUTES * r as i64))
        .collect();

    for _day in 0..days {
        let day_factor = standard_normal(&mut rng) * profile.day_factor_std;
        for slot in 0..SLOTS_PER_DAY {
            for curve in &curves {
                let congestion = curve.congestion(slot) * (1.0 + day_factor * curve.coupling);
                let noise = standard_normal(&mut rng) * profile.noise_std;
                let speed = (curve.free_flow - congestion + noise).clamp(0.0, 130.0);
                let hole = rng.random::<f64>() < profile.missing_rate;
                values.push(speed);
                missing.push(hole);
            }
        }
    }
    SpeedMatrix::new(timestamps, (0..sensors).map(|s| format!("s{s:02}")).collect(), values, missing)
        .expect("generator output is valid by construction")
}
