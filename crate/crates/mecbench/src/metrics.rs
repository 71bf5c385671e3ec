//! Per-scenario summary statistics and cross-scenario percent
//! improvements, plus CSV/JSON/plot-data export.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::loadgen::DeviceRun;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("at least two samples required, got {0}")]
    InsufficientSamples(usize),
    #[error("baseline mean must be positive")]
    ZeroBaseline,
    #[error("comparison references missing scenario {0}")]
    MissingScenario(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator).
    pub sd: f64,
    /// Student-t 95% two-sided half-width of the mean.
    pub ci95_half: f64,
    pub min: f64,
    pub max: f64,
}

/// Upper 0.975 quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("valid dof")
        .inverse_cdf(0.975)
}

pub fn summarize(samples: &[f64]) -> Result<SummaryStats, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::InsufficientSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let ci95_half = t_quantile_975(n - 1) * sd / (n as f64).sqrt();
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SummaryStats { n, mean, sd, ci95_half, min, max })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "LOWER_IS_BETTER")]
    LowerIsBetter,
    #[serde(rename = "HIGHER_IS_BETTER")]
    HigherIsBetter,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LowerIsBetter => "LOWER_IS_BETTER",
            Direction::HigherIsBetter => "HIGHER_IS_BETTER",
        }
    }
}

/// Percent improvement of the variant over the baseline.
pub fn improvement(
    baseline_mean: f64,
    variant_mean: f64,
    direction: Direction,
) -> Result<f64, StatsError> {
    if baseline_mean <= 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(match direction {
        Direction::LowerIsBetter => (baseline_mean - variant_mean) / baseline_mean * 100.0,
        Direction::HigherIsBetter => (variant_mean - baseline_mean) / baseline_mean * 100.0,
    })
}

/// Metric order is fixed so exports are byte-stable.
pub const METRICS: [(&str, Direction); 4] = [
    ("rtt_ms", Direction::LowerIsBetter),
    ("processing_ms", Direction::LowerIsBetter),
    ("response_ms", Direction::LowerIsBetter),
    ("throughput_mbps", Direction::HigherIsBetter),
];

/// Metrics compared across scenario pairs (RTT is reported but not
/// compared, matching the summary tables).
pub const COMPARED_METRICS: [(&str, Direction); 3] = [
    ("processing_ms", Direction::LowerIsBetter),
    ("response_ms", Direction::LowerIsBetter),
    ("throughput_mbps", Direction::HigherIsBetter),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    /// (metric name, stats) in [`METRICS`] order.
    pub metrics: Vec<(String, SummaryStats)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub baseline: String,
    pub variant: String,
    pub baseline_mean: f64,
    pub variant_mean: f64,
    pub improvement_pct: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenarios: Vec<ScenarioSummary>,
    pub comparisons: Vec<Comparison>,
    /// Comparison pairs skipped because a side was absent or failed.
    pub missing: Vec<String>,
}

fn metric_values(runs: &[DeviceRun], metric: &str) -> Vec<f64> {
    runs.iter()
        .flat_map(|r| r.samples.iter())
        .map(|s| match metric {
            "rtt_ms" => s.rtt_ms,
            "processing_ms" => s.processing_ms,
            "response_ms" => s.response_ms,
            "throughput_mbps" => s.throughput_mbps,
            _ => unreachable!("unknown metric {metric}"),
        })
        .collect()
}

/// Pools all devices' samples per scenario, summarizes every metric, and
/// computes the configured pairwise improvements.
pub fn build_report(
    scenarios: &[(String, Vec<DeviceRun>)],
    comparisons: &[(String, String)],
) -> Result<ScenarioReport, StatsError> {
    let mut summaries = Vec::new();
    for (name, runs) in scenarios {
        let mut metrics = Vec::new();
        for (metric, _) in METRICS {
            let values = metric_values(runs, metric);
            let stats = summarize(&values)?;
            metrics.push((metric.to_string(), stats));
        }
        summaries.push(ScenarioSummary { scenario: name.clone(), metrics });
    }

    let mut out_comparisons = Vec::new();
    let mut missing = Vec::new();
    for (baseline, variant) in comparisons {
        let find = |n: &str| summaries.iter().find(|s| s.scenario == n);
        let (Some(base), Some(var)) = (find(baseline), find(variant)) else {
            missing.push(format!("{baseline} vs {variant}"));
            continue;
        };
        for (metric, direction) in COMPARED_METRICS {
            let mean_of = |s: &ScenarioSummary| {
                s.metrics.iter().find(|(m, _)| m == metric).map(|(_, st)| st.mean).unwrap()
            };
            let (baseline_mean, variant_mean) = (mean_of(base), mean_of(var));
            let improvement_pct = improvement(baseline_mean, variant_mean, direction)?;
            out_comparisons.push(Comparison {
                metric: metric.to_string(),
                baseline: baseline.clone(),
                variant: variant.clone(),
                baseline_mean,
                variant_mean,
                improvement_pct,
                direction,
            });
        }
    }
    Ok(ScenarioReport { scenarios: summaries, comparisons: out_comparisons, missing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    PlotData,
}

/// Byte-stable export: four decimal places, dot separator, fixed ordering.
pub fn export(report: &ScenarioReport, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
            bytes.push(b'\n');
            bytes
        }
        ExportFormat::Csv => {
            let mut out = String::from("scenario,metric,n,mean,sd,ci95_half,min,max\n");
            for s in &report.scenarios {
                for (metric, st) in &s.metrics {
                    out.push_str(&format!(
                        "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                        s.scenario, metric, st.n, st.mean, st.sd, st.ci95_half, st.min, st.max
                    ));
                }
            }
            if !report.comparisons.is_empty() {
                out.push_str(
                    "metric,baseline,variant,baseline_mean,variant_mean,improvement_pct,direction\n",
                );
                for c in &report.comparisons {
                    out.push_str(&format!(
                        "{},{},{},{:.4},{:.4},{:.4},{}\n",
                        c.metric,
                        c.baseline,
                        c.variant,
                        c.baseline_mean,
                        c.variant_mean,
                        c.improvement_pct,
                        c.direction.as_str()
                    ));
                }
            }
            out.into_bytes()
        }
        ExportFormat::PlotData => {
            let mut out = String::new();
            for s in &report.scenarios {
                for (metric, st) in &s.metrics {
                    out.push_str(&format!(
                        "{} {} {:.4} {:.4}\n",
                        s.scenario, metric, st.mean, st.ci95_half
                    ));
                }
            }
            out.into_bytes()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadgen::MetricSample;

    fn runs_with(values: &[f64]) -> Vec<DeviceRun> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricSample {
                device_id: 0,
                seq: i as u64,
                rtt_ms: v,
                processing_ms: v,
                response_ms: v,
                bytes_sent: 1,
                bytes_received: 1,
                throughput_mbps: v,
                t_start_ms: 0.0,
            })
            .collect();
        vec![DeviceRun { device_id: 0, samples, complete: true, error: None }]
    }

    #[test]
    fn constant_samples_zero_spread() {
        let s = summarize(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.sd, 0.0);
        assert_eq!(s.ci95_half, 0.0);
        assert_eq!((s.min, s.max), (5.0, 5.0));
    }

    #[test]
    fn hand_computed_summary() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((s.mean - 3.0).abs() < 1e-12);
        assert!((s.sd - 1.5811388300841898).abs() < 1e-9);
        // t(0.975, 4) = 2.7764 -> ci = 2.7764 * sd / sqrt(5) = 1.9630
        assert!((s.ci95_half - 1.9630).abs() < 1e-3, "ci {}", s.ci95_half);
    }

    #[test]
    fn single_sample_insufficient() {
        assert_eq!(summarize(&[1.0]).unwrap_err(), StatsError::InsufficientSamples(1));
    }

    #[test]
    fn t_quantiles_match_published_table() {
        // standard t-table values at 0.975
        let table = [(4, 2.7764), (9, 2.2622), (99, 1.9842), (999, 1.9623)];
        for (df, expected) in table {
            assert!((t_quantile_975(df) - expected).abs() < 1e-4, "df {df}");
        }
    }

    #[test]
    fn improvement_reproduces_reported_figures() {
        let lower = Direction::LowerIsBetter;
        let higher = Direction::HigherIsBetter;
        assert!((improvement(717.2, 206.1, lower).unwrap() - 71.3).abs() < 0.05);
        assert!((improvement(1483.9, 258.0, lower).unwrap() - 82.6).abs() < 0.05);
        assert_eq!(improvement(1.0, 3.6, higher).unwrap(), 260.0);
        assert!((improvement(0.6, 2.9, higher).unwrap() - 383.33).abs() < 0.01);
        assert_eq!(improvement(5.0, 5.0, lower).unwrap(), 0.0);
        assert_eq!(improvement(5.0, 5.0, higher).unwrap(), 0.0);
    }

    #[test]
    fn zero_baseline_rejected() {
        assert_eq!(
            improvement(0.0, 1.0, Direction::LowerIsBetter).unwrap_err(),
            StatsError::ZeroBaseline
        );
    }

    #[test]
    fn report_from_constant_paper_means() {
        // constant samples at the reported means reproduce the reported
        // percent improvements
        let scenarios = vec![
            ("Cloud1".to_string(), runs_with(&[717.2, 717.2])),
            ("MEC1".to_string(), runs_with(&[206.1, 206.1])),
        ];
        let report =
            build_report(&scenarios, &[("Cloud1".into(), "MEC1".into())]).unwrap();
        assert_eq!(report.comparisons.len(), 3);
        let resp = report
            .comparisons
            .iter()
            .find(|c| c.metric == "response_ms")
            .unwrap();
        assert!((resp.improvement_pct - 71.3).abs() < 0.05);
        assert!(report.missing.is_empty());
    }

    #[test]
    fn missing_counterpart_noted() {
        let scenarios = vec![("MEC1".to_string(), runs_with(&[1.0, 2.0]))];
        let report =
            build_report(&scenarios, &[("Cloud1".into(), "MEC1".into())]).unwrap();
        assert!(report.comparisons.is_empty());
        assert_eq!(report.missing, vec!["Cloud1 vs MEC1".to_string()]);
    }

    #[test]
    fn pooled_samples_count_both_devices() {
        let mut runs = runs_with(&[1.0, 2.0, 3.0]);
        let mut second = runs_with(&[4.0, 5.0, 6.0]).remove(0);
        second.device_id = 1;
        runs.push(second);
        let report = build_report(&[("S".to_string(), runs)], &[]).unwrap();
        assert_eq!(report.scenarios[0].metrics[0].1.n, 6);
    }

    #[test]
    fn exports_are_deterministic() {
        let scenarios = vec![("MEC1".to_string(), runs_with(&[1.0, 2.0, 3.0]))];
        let report = build_report(&scenarios, &[]).unwrap();
        for fmt in [ExportFormat::Csv, ExportFormat::Json, ExportFormat::PlotData] {
            assert_eq!(export(&report, fmt), export(&report, fmt));
        }
        let csv = String::from_utf8(export(&report, ExportFormat::Csv)).unwrap();
        assert!(csv.starts_with("scenario,metric,n,mean,sd,ci95_half,min,max\n"));
        // summaries only, no comparison section
        assert!(!csv.contains("improvement_pct"));
        let parsed: ScenarioReport =
            serde_json::from_slice(&export(&report, ExportFormat::Json)).unwrap();
        assert_eq!(parsed.scenarios.len(), 1);
        let plot = String::from_utf8(export(&report, ExportFormat::PlotData)).unwrap();
        assert!(plot.lines().next().unwrap().starts_with("MEC1 rtt_ms "));
    }
}
