//! Missing-value imputation by same-time-of-day averages.

use super::{DataError, SpeedMatrix, SLOTS_PER_DAY};

impl SpeedMatrix {
    /// Fills every missing cell with the mean of the same sensor at the same
    /// time-of-day slot on the other days; when that slot has no measurement
    /// on any day, the sensor's overall mean is used instead. Present values
    /// are never altered. The returned matrix has an empty mask.
    pub fn impute(&self) -> Result<SpeedMatrix, DataError> {
        self.impute_using_rows(self.rows())
    }

    /// Same as [`SpeedMatrix::impute`], but slot and sensor means are
    /// computed from the first `stat_rows` rows only, so gaps in a held-out
    /// evaluation period never see evaluation data.
    pub fn impute_using_rows(&self, stat_rows: usize) -> Result<SpeedMatrix, DataError> {
        let cols = self.sensors();
        let stat_rows = stat_rows.min(self.rows());

        // Per (sensor, slot) sums over present cells in the statistics rows.
        let mut slot_sum = vec![0.0; cols * SLOTS_PER_DAY];
        let mut slot_count = vec![0usize; cols * SLOTS_PER_DAY];
        let mut sensor_sum = vec![0.0; cols];
        let mut sensor_count = vec![0usize; cols];
        for r in 0..stat_rows {
            let slot = self.slot_index(r);
            for c in 0..cols {
                if let Some(v) = self.value(r, c) {
                    slot_sum[c * SLOTS_PER_DAY + slot] += v;
                    slot_count[c * SLOTS_PER_DAY + slot] += 1;
                    sensor_sum[c] += v;
                    sensor_count[c] += 1;
                }
            }
        }

        let mut values = self.values().to_vec();
        for r in 0..self.rows() {
            let slot = self.slot_index(r);
            for c in 0..cols {
                if !self.is_missing(r, c) {
                    continue;
                }
                let k = c * SLOTS_PER_DAY + slot;
                values[r * cols + c] = if slot_count[k] > 0 {
                    slot_sum[k] / slot_count[k] as f64
                } else if sensor_count[c] > 0 {
                    sensor_sum[c] / sensor_count[c] as f64
                } else {
                    return Err(DataError::EmptySensor {
                        id: self.sensor_ids()[c].clone(),
                    });
                };
            }
        }
        SpeedMatrix::new(
            self.timestamps().to_vec(),
            self.sensor_ids().to_vec(),
            values,
            vec![false; self.rows() * cols],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::matrix_from_fn;

    #[test]
    fn same_slot_average_over_other_days() {
        // Three days; sensor 0 missing on day 3 at slot 40.
        // Days 1 and 2 hold 10 and 20 there, so the imputed value is 15.
        let m = matrix_from_fn(
            96 * 3,
            1,
            |r, _| match r {
                40 => 10.0,
                136 => 20.0, // 96 + 40
                _ => 50.0,
            },
            |r, _| r == 96 * 2 + 40,
        );
        let filled = m.impute().unwrap();
        assert_eq!(filled.missing_count(), 0);
        assert_eq!(filled.value(96 * 2 + 40, 0), Some(15.0));
    }

    #[test]
    fn no_missing_values_is_identity() {
        let m = matrix_from_fn(96, 3, |r, c| (r + c) as f64, |_, _| false);
        let filled = m.impute().unwrap();
        assert_eq!(filled, m);
    }

    #[test]
    fn falls_back_to_sensor_mean_when_slot_is_always_missing() {
        // Slot 10 missing on every day; sensor mean over the rest is 42.
        let m = matrix_from_fn(96 * 2, 1, |_, _| 42.0, |r, _| r % 96 == 10);
        let filled = m.impute().unwrap();
        assert_eq!(filled.value(10, 0), Some(42.0));
        assert_eq!(filled.value(96 + 10, 0), Some(42.0));
    }

    #[test]
    fn fully_missing_sensor_is_an_error() {
        let m = matrix_from_fn(96, 2, |_, _| 30.0, |_, c| c == 1);
        match m.impute() {
            Err(DataError::EmptySensor { id }) => assert_eq!(id, "s01"),
            other => panic!("expected empty-sensor error, got {other:?}"),
        }
    }

    #[test]
    fn present_values_are_never_altered() {
        let m = matrix_from_fn(96 * 2, 2, |r, c| (r * 2 + c) as f64, |r, c| (r + c) % 7 == 0);
        let filled = m.impute().unwrap();
        for r in 0..m.rows() {
            for c in 0..m.sensors() {
                if let Some(v) = m.value(r, c) {
                    assert_eq!(filled.value(r, c), Some(v));
                }
            }
        }
    }

    #[test]
    fn training_rows_only_variant_ignores_later_rows() {
        // Slot 5, sensor 0: day 1 holds 10 (train), day 2 holds 90 (eval,
        // present), day 3 is missing. Stats restricted to the first day must
        // impute 10, not the 50 average.
        let m = matrix_from_fn(
            96 * 3,
            1,
            |r, _| match r {
                5 => 10.0,
                101 => 90.0,
                _ => 30.0,
            },
            |r, _| r == 96 * 2 + 5,
        );
        let filled = m.impute_using_rows(96).unwrap();
        assert_eq!(filled.value(96 * 2 + 5, 0), Some(10.0));
        let unrestricted = m.impute().unwrap();
        assert_eq!(unrestricted.value(96 * 2 + 5, 0), Some(50.0));
    }
}
