//! Objective metrics over traces and the experiment drivers built on them.
//!
//! Violation series, per hour `t` of a trace:
//!
//! * flood: `max(h(t) - h_F, 0)`, m
//! * demand deficit: `max(w(t) - r(t), 0)`, m³/s, against the applied release
//! * dry: `max(h_D - h(t), 0)`, m
//!
//! For each series, `hours` counts strictly positive entries, `area` is the
//! sum over hours and `rmse` is the root mean square over violation hours
//! only (zero when there are none).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::hydrology::LakeParams;
use crate::mpc::{self, MpcConfig, MpcMode};
use crate::report::fmt_sig;
use crate::scenario::Scenario;
use crate::trace::ClosedLoopTrace;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FloodMetrics {
    pub rmse: f64,
    /// Highest level reached, m.
    pub peak: f64,
    pub hours: usize,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DemandMetrics {
    pub rmse: f64,
    /// Largest deficit, reported with a negative sign.
    pub deficit_peak: f64,
    pub hours: usize,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DryMetrics {
    pub rmse: f64,
    /// Lowest level reached, m.
    pub level_min: f64,
    pub hours: usize,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunReport {
    pub flood: FloodMetrics,
    pub demand: DemandMetrics,
    pub dry: DryMetrics,
}

struct Violations {
    hours: usize,
    area: f64,
    sum_sq: f64,
}

impl Violations {
    fn of(series: impl Iterator<Item = f64>) -> Self {
        let mut v = Self {
            hours: 0,
            area: 0.0,
            sum_sq: 0.0,
        };
        for x in series {
            if x > 0.0 {
                v.hours += 1;
                v.area += x;
                v.sum_sq += x * x;
            }
        }
        v
    }

    fn rmse(&self) -> f64 {
        if self.hours == 0 {
            0.0
        } else {
            (self.sum_sq / self.hours as f64).sqrt()
        }
    }
}

pub fn compute_report(params: &LakeParams, trace: &ClosedLoopTrace) -> RunReport {
    let levels = &trace.levels;
    let flood = Violations::of(levels.iter().map(|h| (h - params.flood_threshold).max(0.0)));
    let deficits: Vec<f64> = trace
        .demands
        .iter()
        .zip(&trace.releases)
        .map(|(w, r)| (w - r).max(0.0))
        .collect();
    let demand = Violations::of(deficits.iter().copied());
    let dry = Violations::of(levels.iter().map(|h| (params.dry_threshold - h).max(0.0)));

    let peak = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let level_min = levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_deficit = deficits.iter().cloned().fold(0.0, f64::max);
    RunReport {
        flood: FloodMetrics {
            rmse: flood.rmse(),
            peak: if levels.is_empty() { 0.0 } else { peak },
            hours: flood.hours,
            area: flood.area,
        },
        demand: DemandMetrics {
            rmse: demand.rmse(),
            deficit_peak: -max_deficit,
            hours: demand.hours,
            area: demand.area,
        },
        dry: DryMetrics {
            rmse: dry.rmse(),
            level_min: if levels.is_empty() { 0.0 } else { level_min },
            hours: dry.hours,
            area: dry.area,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Block {
    Flood,
    Demand,
    Dry,
}

/// `(block, label, value)` for every metric, in table order.
pub fn metric_rows(r: &RunReport) -> [(Block, &'static str, f64); 12] {
    [
        (Block::Flood, "RMSE Flood [m]", r.flood.rmse),
        (Block::Flood, "Lake Level Peak [m]", r.flood.peak),
        (Block::Flood, "Flood Hours", r.flood.hours as f64),
        (Block::Flood, "Area Flood [m*h]", r.flood.area),
        (Block::Demand, "RMSE Demand [m3/s]", r.demand.rmse),
        (Block::Demand, "Deficit Peak [m3/s]", r.demand.deficit_peak),
        (Block::Demand, "Deficit Hours", r.demand.hours as f64),
        (Block::Demand, "Area Deficit [m3/s*h]", r.demand.area),
        (Block::Dry, "RMSE Dry [m]", r.dry.rmse),
        (Block::Dry, "Lake Level Minimum [m]", r.dry.level_min),
        (Block::Dry, "Dry Hours", r.dry.hours as f64),
        (Block::Dry, "Area Dry [m*h]", r.dry.area),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub report: RunReport,
    pub recovery_hours: usize,
    /// Flood hours divided by their maximum over the sweep.
    pub normalized_flood_hours: f64,
    /// Deficit hours divided by their maximum over the sweep.
    pub normalized_deficit_hours: f64,
}

/// One closed-loop run per `lambda`, in parallel.
pub fn lambda_sweep(
    params: &LakeParams,
    base_config: &MpcConfig,
    scenario: &Scenario,
    s0: f64,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(domain("lambda sweep needs at least one value"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(domain(format!("sweep values must be positive, got {l}")));
    }
    let runs: Vec<Result<(f64, RunReport, usize)>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let cfg = MpcConfig {
                lambda,
                mode: MpcMode::Hourly,
                ..*base_config
            };
            let run = mpc::run_hourly(params, &cfg, scenario, s0).map_err(|e| match e {
                Error::Run { hour, message } => Error::Run {
                    hour,
                    message: format!("lambda = {lambda:e}: {message}"),
                },
                other => other,
            })?;
            Ok((lambda, compute_report(params, &run.trace), run.trace.recovery_hours))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let max_flood = runs.iter().map(|r| r.1.flood.hours).max().unwrap_or(0);
    let max_deficit = runs.iter().map(|r| r.1.demand.hours).max().unwrap_or(0);
    let norm = |v: usize, m: usize| if m == 0 { 0.0 } else { v as f64 / m as f64 };
    Ok(runs
        .into_iter()
        .map(|(lambda, report, recovery_hours)| SweepRow {
            lambda,
            report,
            recovery_hours,
            normalized_flood_hours: norm(report.flood.hours, max_flood),
            normalized_deficit_hours: norm(report.demand.hours, max_deficit),
        })
        .collect())
}

/// `10^lo, 10^(lo+1), ..., 10^hi`.
pub fn decades(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

/// Denominator floor of relative differences.
pub const REL_DIFF_EPS: f64 = 1e-9;

pub fn relative_difference(reference: f64, value: f64) -> f64 {
    (value - reference) / reference.abs().max(value.abs()).max(REL_DIFF_EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub block: Block,
    pub metric: &'static str,
    pub values: Vec<f64>,
    /// Relative difference of each column against the first.
    pub rel_diff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side metrics of two or more runs.
pub fn compare_runs(reports: &[(String, RunReport)]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(domain("comparison needs at least two reports"));
    }
    let tables: Vec<_> = reports.iter().map(|(_, r)| metric_rows(r)).collect();
    let rows = (0..tables[0].len())
        .map(|i| {
            let values: Vec<f64> = tables.iter().map(|t| t[i].2).collect();
            let rel_diff = values.iter().map(|&v| relative_difference(values[0], v)).collect();
            ComparisonRow {
                block: tables[0][i].0,
                metric: tables[0][i].1,
                values,
                rel_diff,
            }
        })
        .collect();
    Ok(ComparisonTable {
        names: reports.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

impl ComparisonTable {
    /// Keep only the given blocks.
    pub fn blocks(&self, keep: &[Block]) -> Self {
        Self {
            names: self.names.clone(),
            rows: self.rows.iter().filter(|r| keep.contains(&r.block)).cloned().collect(),
        }
    }

    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        for n in self.names.iter().skip(1) {
            out.push_str(&format!(",rel_diff_{n}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(r.metric);
            for v in &r.values {
                out.push(',');
                out.push_str(&fmt_sig(*v));
            }
            for d in r.rel_diff.iter().skip(1) {
                out.push(',');
                out.push_str(&fmt_sig(*d));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let col_w = self.names.iter().map(|n| n.len()).max().unwrap_or(0).max(12);
        let mut out = format!("{:<label_w$}", "");
        for n in &self.names {
            out.push_str(&format!("  {n:>col_w$}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<label_w$}", r.metric));
            for v in &r.values {
                out.push_str(&format!("  {:>col_w$}", fmt_sig(*v)));
            }
            out.push('\n');
        }
        out
    }
}

/// Report as `metric,value` CSV.
pub fn report_csv(report: &RunReport) -> String {
    let mut out = String::from("metric,value\n");
    for (_, label, v) in metric_rows(report) {
        out.push_str(&format!("{label},{}\n", fmt_sig(v)));
    }
    out
}

pub fn report_text(title: &str, report: &RunReport) -> String {
    let mut out = format!("{title}\n");
    for (_, label, v) in metric_rows(report) {
        out.push_str(&format!("  {label:<24} {:>12}\n", fmt_sig(v)));
    }
    out
}
