//! CSV ingestion and emission for speed matrices.
//!
//! Format: a header row `timestamp,<sensor id>,...` followed by one row per
//! 15-minute step. Timestamps are ISO-8601 (`2024-01-01T06:15:00`, seconds
//! optional); an empty field is a missing measurement. Gaps in the cadence
//! and out-of-order rows are rejected with the offending line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use super::{DataError, SpeedMatrix, CADENCE_MINUTES};

fn parse_timestamp(text: &str, line: usize) -> Result<NaiveDateTime, DataError> {
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M"))
        .map_err(|_| DataError::Csv {
            line,
            detail: format!("cannot parse timestamp '{text}'"),
        })
}

impl SpeedMatrix {
    /// Loads and validates a speed CSV. The cadence must be exactly uniform.
    pub fn load_csv(path: &Path) -> Result<SpeedMatrix, DataError> {
        let file = File::open(path)?;
        let mut lines = BufReader::new(file).lines();

        let header = lines.next().ok_or(DataError::Csv {
            line: 1,
            detail: "empty file".into(),
        })??;
        let mut fields = header.split(',');
        match fields.next() {
            Some("timestamp") => {}
            other => {
                return Err(DataError::Csv {
                    line: 1,
                    detail: format!("first header field must be 'timestamp', got '{}'", other.unwrap_or("")),
                })
            }
        }
        let sensor_ids: Vec<String> = fields.map(|f| f.trim().to_string()).collect();
        if sensor_ids.is_empty() || sensor_ids.iter().any(|id| id.is_empty()) {
            return Err(DataError::Csv {
                line: 1,
                detail: "header must name at least one non-empty sensor id".into(),
            });
        }
        let cols = sensor_ids.len();

        let mut timestamps: Vec<NaiveDateTime> = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let text = line?;
            if text.is_empty() {
                continue;
            }
            let mut fields = text.split(',');
            let ts_text = fields.next().unwrap_or("");
            let ts = parse_timestamp(ts_text, line_no)?;
            if let Some(&prev) = timestamps.last() {
                let delta = (ts - prev).num_minutes();
                if delta <= 0 {
                    return Err(DataError::Csv {
                        line: line_no,
                        detail: format!("timestamp {ts} is not after the previous row ({prev})"),
                    });
                }
                if delta != CADENCE_MINUTES {
                    return Err(DataError::Csv {
                        line: line_no,
                        detail: format!("cadence gap: {delta} minutes since the previous row, expected {CADENCE_MINUTES}"),
                    });
                }
            }
            timestamps.push(ts);

            let row_values: Vec<&str> = fields.collect();
            if row_values.len() != cols {
                return Err(DataError::Csv {
                    line: line_no,
                    detail: format!("expected {cols} value fields, got {}", row_values.len()),
                });
            }
            for field in row_values {
                let trimmed = field.trim();
                if trimmed.is_empty() {
                    values.push(0.0);
                    missing.push(true);
                    continue;
                }
                let v: f64 = trimmed.parse().map_err(|_| DataError::Csv {
                    line: line_no,
                    detail: format!("cannot parse speed '{trimmed}'"),
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(DataError::Csv {
                        line: line_no,
                        detail: format!("speed {v} is negative or non-finite"),
                    });
                }
                values.push(v);
                missing.push(false);
            }
        }
        if timestamps.is_empty() {
            return Err(DataError::Csv {
                line: 2,
                detail: "no data rows".into(),
            });
        }
        SpeedMatrix::new(timestamps, sensor_ids, values, missing)
    }

    /// Writes the matrix in the same format `load_csv` reads. Values use the
    /// shortest representation that round-trips, so a write/load cycle is
    /// lossless.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "timestamp")?;
        for id in self.sensor_ids() {
            write!(out, ",{id}")?;
        }
        writeln!(out)?;
        for r in 0..self.rows() {
            write!(out, "{}", self.timestamps()[r].format("%Y-%m-%dT%H:%M:%S"))?;
            for c in 0..self.sensors() {
                match self.value(r, c) {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::matrix_from_fn;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_file_with_one_hole() {
        let f = write_temp(
            "timestamp,a,b\n\
             2024-01-01T00:00:00,10,20\n\
             2024-01-01T00:15:00,,21\n\
             2024-01-01T00:30:00,12,22\n",
        );
        let m = SpeedMatrix::load_csv(f.path()).unwrap();
        assert_eq!((m.rows(), m.sensors()), (3, 2));
        assert_eq!(m.missing_count(), 1);
        assert!(m.is_missing(1, 0));
        assert_eq!(m.value(1, 1), Some(21.0));
    }

    #[test]
    fn rejects_out_of_order_timestamps_with_line_number() {
        let f = write_temp(
            "timestamp,a\n\
             2024-01-01T00:15:00,10\n\
             2024-01-01T00:00:00,11\n",
        );
        match SpeedMatrix::load_csv(f.path()) {
            Err(DataError::Csv { line: 3, detail }) => assert!(detail.contains("not after"), "{detail}"),
            other => panic!("expected line-3 error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_cadence_gaps() {
        let f = write_temp(
            "timestamp,a\n\
             2024-01-01T00:00:00,10\n\
             2024-01-01T00:45:00,11\n",
        );
        match SpeedMatrix::load_csv(f.path()) {
            Err(DataError::Csv { line: 3, detail }) => assert!(detail.contains("cadence gap"), "{detail}"),
            other => panic!("expected cadence error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_rows() {
        let f = write_temp(
            "timestamp,a,b\n\
             2024-01-01T00:00:00,10\n",
        );
        match SpeedMatrix::load_csv(f.path()) {
            Err(DataError::Csv { line: 2, detail }) => assert!(detail.contains("expected 2"), "{detail}"),
            other => panic!("expected ragged-row error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_speeds() {
        let f = write_temp(
            "timestamp,a\n\
             2024-01-01T00:00:00,-3\n",
        );
        assert!(matches!(
            SpeedMatrix::load_csv(f.path()),
            Err(DataError::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn write_then_load_is_lossless() {
        let m = matrix_from_fn(
            10,
            3,
            |r, c| 30.0 + (r as f64) * 0.123456789 + c as f64,
            |r, c| r == 4 && c == 1,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speeds.csv");
        m.write_csv(&path).unwrap();
        let back = SpeedMatrix::load_csv(&path).unwrap();
        assert_eq!(back.sensor_ids(), m.sensor_ids());
        assert_eq!(back.rows(), m.rows());
        for r in 0..m.rows() {
            for c in 0..m.sensors() {
                assert_eq!(back.value(r, c), m.value(r, c), "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn full_year_scale_shape() {
        // A year-scale file (33054 rows) loads to the expected shape.
        let rows = 33_054usize;
        let m = matrix_from_fn(rows, 4, |r, c| (r % 96) as f64 + c as f64, |_, _| false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speeds.csv");
        m.write_csv(&path).unwrap();
        let back = SpeedMatrix::load_csv(&path).unwrap();
        assert_eq!((back.rows(), back.sensors()), (rows, 4));
    }
}
