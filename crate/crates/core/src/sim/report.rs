use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Hop, Placement};

use super::policy::PolicyKind;

/// What happened to one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub client: usize,
    pub arrival: f64,
    pub input_len: u32,
    pub output_len: u32,
    /// Sessions in the system at arrival, this one included.
    pub concurrent: u64,
    pub completion: Option<Completion>,
}

impl RequestRecord {
    pub fn dropped(&self) -> bool {
        self.completion.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub hops: Vec<Hop>,
    pub start: f64,
    pub end: f64,
    /// Time from arrival to session start.
    pub wait: f64,
    /// Time from arrival to the first output token.
    pub ttft: f64,
    /// Time from arrival to the last output token.
    pub total: f64,
    /// Decode time per token after the first.
    pub per_remaining: f64,
    /// Cost of the route when it was chosen (waits plus `l_out` hop times).
    pub path_cost: f64,
    pub completion_estimate: f64,
    /// Times the start had to be re-planned because capacity was taken.
    pub reroutes: u32,
}

impl Completion {
    pub fn chain(&self) -> Vec<usize> {
        self.hops.iter().map(|h| h.server).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub arrivals: usize,
    pub completed: usize,
    pub dropped: usize,
    /// Mean over requests of total time divided by output length.
    pub per_token: f64,
    pub ttft: f64,
    pub per_remaining: f64,
    pub wait: f64,
    pub max_wait: f64,
}

impl Aggregates {
    pub fn from_records(records: &[RequestRecord]) -> Self {
        let done: Vec<(&RequestRecord, &Completion)> = records
            .iter()
            .filter_map(|r| r.completion.as_ref().map(|c| (r, c)))
            .collect();
        let n = done.len();
        let mean = |f: &dyn Fn(&RequestRecord, &Completion) -> f64| {
            if n == 0 {
                0.0
            } else {
                done.iter().map(|&(r, c)| f(r, c)).sum::<f64>() / n as f64
            }
        };
        Self {
            arrivals: records.len(),
            completed: n,
            dropped: records.len() - n,
            per_token: mean(&|r, c| c.total / f64::from(r.output_len)),
            ttft: mean(&|_, c| c.ttft),
            per_remaining: mean(&|_, c| c.per_remaining),
            wait: mean(&|_, c| c.wait),
            max_wait: done.iter().map(|(_, c)| c.wait).fold(0.0, f64::max),
        }
    }

    /// Metric values by name, in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("per_token", self.per_token),
            ("ttft", self.ttft),
            ("per_remaining", self.per_remaining),
            ("wait", self.wait),
            ("max_wait", self.max_wait),
            ("completed", self.completed as f64),
            ("dropped", self.dropped as f64),
        ]
    }
}

/// Deterministic outcome of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: PolicyKind,
    pub seed: u64,
    pub target: u64,
    pub placement: Placement,
    pub aggregates: Aggregates,
    pub records: Vec<RequestRecord>,
}

/// Wall-clock cost of the routing decisions of one run. Kept apart from
/// [`SimReport`] so reports stay reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTiming {
    pub decisions: u64,
    pub total_seconds: f64,
    pub placement_seconds: f64,
}

impl DecisionTiming {
    pub fn mean_seconds(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.total_seconds / self.decisions as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation of every metric over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub policy: PolicyKind,
    pub runs: usize,
    pub seed: u64,
    pub metrics: Vec<MetricSummary>,
    pub reports: Vec<SimReport>,
}

impl MonteCarloReport {
    pub fn from_reports(policy: PolicyKind, seed: u64, reports: Vec<SimReport>) -> Self {
        let mut metrics = Vec::new();
        if let Some(first) = reports.first() {
            for (k, (name, _)) in first.aggregates.metrics().into_iter().enumerate() {
                let values: Vec<f64> = reports
                    .iter()
                    .map(|r| r.aggregates.metrics()[k].1)
                    .collect();
                let (mean, std) = mean_std(&values);
                metrics.push(MetricSummary {
                    metric: name.to_string(),
                    mean,
                    std,
                });
            }
        }
        Self {
            policy,
            runs: reports.len(),
            seed,
            metrics,
            reports,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One CSV row: `policy,metric,mean,std,runs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn csv_rows(report: &MonteCarloReport, timing: Option<&[DecisionTiming]>) -> Vec<CsvRow> {
    let mut rows: Vec<CsvRow> = report
        .metrics
        .iter()
        .map(|m| CsvRow {
            policy: report.policy.to_string(),
            metric: m.metric.clone(),
            mean: m.mean,
            std: m.std,
            runs: report.runs,
        })
        .collect();
    if let Some(t) = timing {
        let values: Vec<f64> = t.iter().map(|t| t.mean_seconds()).collect();
        let (mean, std) = mean_std(&values);
        rows.push(CsvRow {
            policy: report.policy.to_string(),
            metric: "decision_seconds".into(),
            mean,
            std,
            runs: report.runs,
        });
    }
    rows
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
