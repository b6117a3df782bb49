//! Serialized evaluation results and the CSV side files used for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{self, AurocResult, ThresholdPoint, UncertaintyDensity};
use super::SweepRow;
use crate::error::{Result, TmcError};

/// Tolerance for the aggregate self-consistency check.
pub const AGGREGATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub predicted: usize,
    pub truth: usize,
    /// Joint uncertainty mass.
    pub uncertainty: f64,
    pub view_uncertainties: Vec<f64>,
    /// Whether the sample was corrupted with noise.
    pub ood: bool,
    /// Expected class probabilities of the joint Dirichlet.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub accuracy: f64,
    /// `None` when fewer than two classes are present.
    pub auroc: Option<f64>,
    #[serde(default)]
    pub auroc_skipped_pairs: Vec<(usize, usize)>,
    pub mean_uncertainty: f64,
    pub mean_uncertainty_in: Option<f64>,
    pub mean_uncertainty_ood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub class_count: usize,
    pub records: Vec<SampleRecord>,
    pub aggregates: Aggregates,
    pub threshold_curve: Vec<ThresholdPoint>,
    /// Resolved configuration of the run that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn compute_aggregates(records: &[SampleRecord], class_count: usize) -> Result<Aggregates> {
    let accuracy = metrics::accuracy(records.iter().map(|r| (r.predicted, r.truth)))?;
    let scores: Vec<Vec<f64>> = records.iter().map(|r| r.probabilities.clone()).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.truth).collect();
    let (auroc, auroc_skipped_pairs) = match metrics::auroc_multiclass(&scores, &labels, class_count) {
        Ok(AurocResult {
            value,
            skipped_pairs,
        }) => (Some(value), skipped_pairs),
        Err(TmcError::InvalidDataset(_)) => (None, Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(Aggregates {
        samples: records.len(),
        accuracy,
        auroc,
        auroc_skipped_pairs,
        mean_uncertainty: mean(records.iter().map(|r| r.uncertainty)).expect("non-empty"),
        mean_uncertainty_in: mean(records.iter().filter(|r| !r.ood).map(|r| r.uncertainty)),
        mean_uncertainty_ood: mean(records.iter().filter(|r| r.ood).map(|r| r.uncertainty)),
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= AGGREGATE_TOLERANCE
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

impl ExperimentReport {
    /// Builds a report with aggregates and the default 101-point threshold
    /// curve computed from the records.
    pub fn from_records(
        records: Vec<SampleRecord>,
        class_count: usize,
        config: serde_json::Value,
    ) -> Result<Self> {
        let aggregates = compute_aggregates(&records, class_count)?;
        let threshold_curve =
            metrics::threshold_curve(&Self::certainty_pairs(&records), &metrics::default_thresholds(101))?;
        Ok(ExperimentReport {
            class_count,
            records,
            aggregates,
            threshold_curve,
            config,
        })
    }

    fn certainty_pairs(records: &[SampleRecord]) -> Vec<(f64, bool)> {
        records
            .iter()
            .map(|r| (r.uncertainty, r.predicted == r.truth))
            .collect()
    }

    /// `(uncertainty, correct)` for every record.
    pub fn uncertainty_correctness(&self) -> Vec<(f64, bool)> {
        Self::certainty_pairs(&self.records)
    }

    /// `(uncertainty, ood)` for every record.
    pub fn uncertainty_ood(&self) -> Vec<(f64, bool)> {
        self.records.iter().map(|r| (r.uncertainty, r.ood)).collect()
    }

    pub fn threshold_curve_at(&self, thresholds: &[f64]) -> Result<Vec<ThresholdPoint>> {
        metrics::threshold_curve(&self.uncertainty_correctness(), thresholds)
    }

    pub fn density(&self, bins: usize) -> Result<UncertaintyDensity> {
        metrics::uncertainty_density(&self.uncertainty_ood(), bins)
    }

    /// Recomputes the aggregates from the records and checks they match the
    /// stored ones.
    pub fn verify(&self) -> Result<()> {
        let fresh = compute_aggregates(&self.records, self.class_count)?;
        let stored = &self.aggregates;
        let consistent = fresh.samples == stored.samples
            && close(fresh.accuracy, stored.accuracy)
            && close_opt(fresh.auroc, stored.auroc)
            && fresh.auroc_skipped_pairs == stored.auroc_skipped_pairs
            && close(fresh.mean_uncertainty, stored.mean_uncertainty)
            && close_opt(fresh.mean_uncertainty_in, stored.mean_uncertainty_in)
            && close_opt(fresh.mean_uncertainty_ood, stored.mean_uncertainty_ood);
        if consistent {
            Ok(())
        } else {
            Err(TmcError::InvalidConfig(format!(
                "report aggregates {stored:?} do not match records {fresh:?}"
            )))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| TmcError::io(path, e))
    }

    /// Reads a report and runs [`ExperimentReport::verify`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TmcError::io(path, e))?;
        let report: ExperimentReport =
            serde_json::from_str(&text).map_err(|e| TmcError::parse(path, e.to_string()))?;
        report.verify()?;
        Ok(report)
    }
}

/// CSV side files start with one `#` comment line holding the run
/// configuration; the data rows themselves are headerless.
fn comment_line(config: &serde_json::Value) -> String {
    format!("# config: {}\n", serde_json::to_string(config).unwrap_or_default())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Rows `threshold,accuracy,retained_fraction`; accuracy is empty when no
/// sample is retained.
pub fn threshold_csv(points: &[ThresholdPoint], config: &serde_json::Value) -> String {
    let mut out = comment_line(config);
    for p in points {
        let _ = writeln!(out, "{:?},{},{:?}", p.threshold, fmt_opt(p.accuracy), p.retained_fraction);
    }
    out
}

/// Rows `bin_low,bin_high,in_density,ood_density`; a group with no samples
/// leaves its column empty.
pub fn density_csv(density: &UncertaintyDensity, config: &serde_json::Value) -> String {
    let mut out = comment_line(config);
    for (b, edge) in density.bin_edges.windows(2).enumerate() {
        let in_d = density.in_distribution.as_ref().map(|h| h[b]);
        let ood_d = density.out_of_distribution.as_ref().map(|h| h[b]);
        let _ = writeln!(out, "{:?},{:?},{},{}", edge[0], edge[1], fmt_opt(in_d), fmt_opt(ood_d));
    }
    out
}

/// Rows `sigma,tmc_accuracy,baseline_accuracy`.
pub fn sweep_csv(rows: &[SweepRow], config: &serde_json::Value) -> String {
    let mut out = comment_line(config);
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{}", r.sigma, r.tmc_accuracy, fmt_opt(r.baseline_accuracy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, predicted: usize, truth: usize, u: f64, ood: bool) -> SampleRecord {
        let mut probabilities = vec![0.1; 3];
        probabilities[predicted] = 0.8;
        SampleRecord {
            index: i,
            predicted,
            truth,
            uncertainty: u,
            view_uncertainties: vec![u, u],
            ood,
            probabilities,
        }
    }

    fn sample_report() -> ExperimentReport {
        let records = vec![
            record(0, 0, 0, 0.1, false),
            record(1, 1, 1, 0.2, false),
            record(2, 2, 1, 0.7, true),
            record(3, 2, 2, 0.3, true),
        ];
        ExperimentReport::from_records(records, 3, serde_json::json!({"seed": 42})).unwrap()
    }

    #[test]
    fn aggregates_are_self_consistent() {
        let r = sample_report();
        assert_eq!(r.aggregates.accuracy, 0.75);
        assert_eq!(r.aggregates.mean_uncertainty_in, Some(0.15000000000000002));
        assert_eq!(r.aggregates.mean_uncertainty_ood, Some(0.5));
        r.verify().unwrap();
        let last = r.threshold_curve.last().unwrap();
        assert_eq!(last.threshold, 1.0);
        assert_eq!(last.accuracy, Some(r.aggregates.accuracy));
        let inf = r.threshold_curve_at(&[f64::INFINITY]).unwrap();
        assert_eq!(inf[0].accuracy, Some(r.aggregates.accuracy));
    }

    #[test]
    fn tampered_report_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut r = sample_report();
        r.save(&path).unwrap();
        assert_eq!(ExperimentReport::load(&path).unwrap(), r);
        r.aggregates.accuracy = 0.5;
        r.save(&path).unwrap();
        assert!(ExperimentReport::load(&path).is_err());
    }

    #[test]
    fn csv_layouts() {
        let r = sample_report();
        let cfg = serde_json::json!({"seed": 1});
        let text = threshold_csv(&r.threshold_curve_at(&[0.0, 1.0]).unwrap(), &cfg);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"# config: {"seed":1}"#);
        assert_eq!(lines[1], "0.0,,0.0");
        assert_eq!(lines[2], "1.0,0.75,1.0");

        let d = r.density(2).unwrap();
        let text = density_csv(&d, &cfg);
        assert_eq!(text.lines().nth(1).unwrap(), "0.0,0.5,2.0,1.0");

        let rows = [SweepRow {
            sigma: 0.0,
            tmc_accuracy: 0.9,
            baseline_accuracy: None,
        }];
        assert_eq!(sweep_csv(&rows, &cfg).lines().nth(1).unwrap(), "0.0,0.9,");
    }
}
