//! Per-round metrics and the CSV they are written to.

use std::io::Write;

use serde::Serialize;

use super::SimError;

pub const CSV_COLUMNS: [&str; 7] = [
    "round",
    "wallclock_virtual",
    "accuracy",
    "loss",
    "mean_staleness",
    "dropouts",
    "overflow_warnings",
];

/// One CSV row. `round` counts global updates applied so far.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub wallclock_virtual: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub mean_staleness: f64,
    pub dropouts: usize,
    pub overflow_warnings: usize,
}

/// Diagnostics kept alongside each row but not written to the CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundDetail {
    /// Staleness of each buffered update, in buffer order.
    pub staleness: Vec<u64>,
    pub responders: usize,
    /// Recovery attempts that got fewer than `U` responses.
    pub failed_recoveries: usize,
    /// Arrivals dropped since the previous flush because no download round
    /// was left for that user.
    pub skipped_uploads: usize,
    /// Uploads whose payload wrapped with the guard disabled.
    pub wrapped_uploads: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<RoundMetrics>,
    pub details: Vec<RoundDetail>,
    pub final_model: Vec<f64>,
}

impl RunMetrics {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.accuracy)
    }

    /// Mean accuracy over the last `n` rounds, which is less noisy than the final value.
    pub fn tail_accuracy(&self, n: usize) -> Option<f64> {
        let n = n.min(self.rows.len());
        if n == 0 {
            return None;
        }
        Some(self.rows[self.rows.len() - n..].iter().map(|r| r.accuracy).sum::<f64>() / n as f64)
    }

    pub fn staleness_histogram(&self, tau_max: u64) -> Vec<u64> {
        let mut h = vec![0u64; tau_max as usize + 1];
        for d in &self.details {
            for &s in &d.staleness {
                h[s as usize] += 1;
            }
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, SimError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| SimError::Data(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_schema() {
        let mut m = RunMetrics::default();
        assert_eq!(m.to_csv_string().unwrap().trim(), CSV_COLUMNS.join(","));
        m.rows.push(RoundMetrics {
            round: 1,
            wallclock_virtual: 1.5,
            accuracy: 0.5,
            loss: 0.69,
            mean_staleness: 2.0,
            dropouts: 0,
            overflow_warnings: 0,
        });
        let s = m.to_csv_string().unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "1,1.5,0.5,0.69,2.0,0,0");
    }
}
