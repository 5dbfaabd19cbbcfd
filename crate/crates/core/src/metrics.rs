//! Error metrics and multi-run summaries.

use std::fmt::Write as _;

use thiserror::Error;

use crate::scenario::HOURS;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} needs at least one value")]
    Empty(&'static str),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Signed error `T - D`: positive when the output undershoots the target.
pub fn relative_error(target: f64, output: f64) -> f64 {
    target - output
}

/// Mean absolute deviation over `(target, output)` pairs.
pub fn are(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("are"));
    }
    Ok(pairs.iter().map(|(t, d)| (t - d).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Mean absolute hourly error of a full day.
pub fn mae(targets: &[f64], outputs: &[f64]) -> Result<f64, MetricsError> {
    for v in [targets, outputs] {
        if v.len() != HOURS {
            return Err(MetricsError::LengthMismatch {
                expected: HOURS,
                got: v.len(),
            });
        }
    }
    Ok(targets.iter().zip(outputs).map(|(t, d)| (t - d).abs()).sum::<f64>() / HOURS as f64)
}

/// Hourly `T - D` series.
pub fn hourly_errors(targets: &[f64], outputs: &[f64]) -> Result<Vec<f64>, MetricsError> {
    mae(targets, outputs)?;
    Ok(targets.iter().zip(outputs).map(|(t, d)| relative_error(*t, *d)).collect())
}

/// Mean and population standard deviation.
pub fn aggregate_runs(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty("aggregate_runs"));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// One summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub detector: String,
    pub metric: String,
    pub mu: f64,
    pub sigma: f64,
}

/// Per-detector summaries plus the raw per-run values behind them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<SummaryRow>,
    /// `(detector, metric, run, hourly T - D)`.
    pub hourly: Vec<(String, String, usize, Vec<f64>)>,
}

impl MetricsReport {
    /// Adds the `(mu, sigma)` summary of `values` for `detector` / `metric`.
    pub fn add(&mut self, detector: &str, metric: &str, values: &[f64]) -> Result<(), MetricsError> {
        let (mu, sigma) = aggregate_runs(values)?;
        self.rows.push(SummaryRow {
            detector: detector.to_string(),
            metric: metric.to_string(),
            mu,
            sigma,
        });
        Ok(())
    }

    pub fn row(&self, detector: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.detector == detector && r.metric == metric)
    }

    /// `detector,metric,mu,sigma`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detector,metric,mu,sigma\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.detector, r.metric, r.mu, r.sigma);
        }
        out
    }

    /// `detector,metric,run,hour,re`
    pub fn hourly_csv(&self) -> String {
        let mut out = String::from("detector,metric,run,hour,re\n");
        for (det, metric, run, series) in &self.hourly {
            for (h, re) in series.iter().enumerate() {
                let _ = writeln!(out, "{det},{metric},{run},{h},{re}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(100.0, 90.0), 10.0);
        assert_eq!(relative_error(50.0, 50.0), 0.0);
        assert_eq!(relative_error(90.0, 100.0), -10.0);
    }

    #[test]
    fn are_examples() {
        assert_eq!(are(&[(1.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(are(&[(10.0, 8.0), (10.0, 12.0)]).unwrap(), 2.0);
        assert_eq!(are(&[]), Err(MetricsError::Empty("are")));
    }

    #[test]
    fn mae_examples() {
        let t: Vec<f64> = (0..24).map(|h| 100.0 + h as f64).collect();
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 24.0).collect();
        assert_eq!(mae(&t, &shifted).unwrap(), 24.0);
        assert_eq!(
            mae(&t[..23], &t),
            Err(MetricsError::LengthMismatch { expected: 24, got: 23 })
        );
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_runs(&[7.5]).unwrap(), (7.5, 0.0));
        assert_eq!(aggregate_runs(&[1.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let mut r = MetricsReport::default();
        r.add("d1", "mae_calibrated", &[2.0]).unwrap();
        assert_eq!(r.to_csv(), "detector,metric,mu,sigma\nd1,mae_calibrated,2,0\n");
        assert_eq!(r.row("d1", "mae_calibrated").unwrap().sigma, 0.0);
    }
}
