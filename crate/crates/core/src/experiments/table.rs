use std::io::Write;

use crate::error::{Result, SmcError};

pub const TABLE_HEADER: [&str; 8] = ["replicate", "seed", "algorithm", "N", "n", "estimator", "value", "reference"];
pub const SUMMARY_HEADER: [&str; 3] = ["scope", "statistic", "value"];

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub algorithm: String,
    pub particles: usize,
    pub n: usize,
    pub estimator: String,
    pub value: f64,
    /// Exact value of the estimated quantity, when an oracle exists.
    pub reference: Option<f64>,
}

/// One `(scope, statistic, value)` line of a summary file.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryEntry {
    pub scope: String,
    pub statistic: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplicateTable {
    pub rows: Vec<ReplicateRow>,
    /// Extra summary lines (oracle values, selected parameters, check outcomes).
    pub notes: Vec<SummaryEntry>,
    /// Algorithms that were requested but not run, with the reason.
    pub skipped: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance (`NaN` for fewer than two values).
    pub variance: f64,
    pub stderr: f64,
}

pub fn sample_stats(values: &[f64]) -> SampleStats {
    let count = values.len();
    let mean = crate::fk::mean(values);
    let variance = if count > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64
    } else {
        f64::NAN
    };
    SampleStats { count, mean, variance, stderr: (variance / count as f64).sqrt() }
}

impl ReplicateTable {
    pub fn note(&mut self, scope: impl Into<String>, statistic: impl Into<String>, value: f64) {
        self.notes.push(SummaryEntry { scope: scope.into(), statistic: statistic.into(), value });
    }

    /// Values of one `(algorithm, estimator)` column, in row order.
    pub fn column(&self, algorithm: &str, estimator: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.algorithm == algorithm && r.estimator == estimator)
            .map(|r| r.value)
            .collect()
    }

    /// Distinct `(algorithm, estimator)` pairs in first-appearance order.
    pub fn groups(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(a, e)| *a == r.algorithm && *e == r.estimator) {
                out.push((r.algorithm.clone(), r.estimator.clone()));
            }
        }
        out
    }

    pub fn summary(&self) -> Vec<SummaryEntry> {
        let mut out = Vec::new();
        for (alg, est) in self.groups() {
            let s = sample_stats(&self.column(&alg, &est));
            let scope = format!("{alg}/{est}");
            for (name, v) in [("count", s.count as f64), ("mean", s.mean), ("variance", s.variance), ("stderr", s.stderr)] {
                out.push(SummaryEntry { scope: scope.clone(), statistic: name.into(), value: v });
            }
        }
        out.extend(self.notes.iter().cloned());
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(TABLE_HEADER).map_err(io_err)?;
        for r in &self.rows {
            w.write_record([
                r.replicate.to_string(),
                r.seed.to_string(),
                r.algorithm.clone(),
                r.particles.to_string(),
                r.n.to_string(),
                r.estimator.clone(),
                format_float(r.value),
                r.reference.map(format_float).unwrap_or_default(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| SmcError::Input(e.to_string()))
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(SUMMARY_HEADER).map_err(io_err)?;
        for e in self.summary() {
            w.write_record([e.scope, e.statistic, format_float(e.value)]).map_err(io_err)?;
        }
        for (alg, reason) in &self.skipped {
            w.write_record([format!("{alg}/skipped"), reason.clone(), "NaN".into()]).map_err(io_err)?;
        }
        w.flush().map_err(|e| SmcError::Input(e.to_string()))
    }
}

fn io_err(e: csv::Error) -> SmcError {
    SmcError::Input(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0, 1e-7, 123456.789, -2.5e300, 1.0 / 3.0] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(0.1), "0.1");
    }

    #[test]
    fn csv_layout() {
        let mut t = ReplicateTable::default();
        t.rows.push(ReplicateRow {
            replicate: 0,
            seed: 7,
            algorithm: "BPF".into(),
            particles: 10,
            n: 2,
            estimator: "normconst".into(),
            value: 0.5,
            reference: None,
        });
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "replicate,seed,algorithm,N,n,estimator,value,reference\n0,7,BPF,10,2,normconst,0.5,\n"
        );
        let mut buf = Vec::new();
        t.write_summary_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("scope,statistic,value\nBPF/normconst,count,1.0\nBPF/normconst,mean,0.5\n"));
    }

    #[test]
    fn stats() {
        let s = sample_stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
    }
}
