//! Deterministic CSV and text output. Every number goes through [`fmt_sig`]
//! so two runs on the same inputs write byte-identical files.

use crate::hydrology::LakeParams;
use crate::metrics::{metric_rows, SweepRow};
use crate::mpc::StepDiagnostics;
use crate::trace::ClosedLoopTrace;

/// Format with 6 significant digits: fixed notation for magnitudes in
/// `[1e-4, 1e6)`, scientific otherwise. Trailing zeros are trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.5e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, mant.parse::<f64>().unwrap() * 10f64.powi(exp)))
    } else {
        format!("{}e{}", trim(mant.to_string()), exp)
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".into()
        } else {
            t.into()
        }
    } else {
        s
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_sig).collect::<Vec<_>>().join(",")
}

/// One row per hour: the flows of the hour and the state at its end.
pub fn trace_csv(trace: &ClosedLoopTrace) -> String {
    let mut out = String::from("hour,inflow_m3s,demand_m3s,command_m3s,release_m3s,storage_m3,level_m\n");
    for t in 0..trace.len() {
        out.push_str(&format!(
            "{t},{}\n",
            join([
                trace.inflows[t],
                trace.demands[t],
                trace.commands[t],
                trace.releases[t],
                trace.storages[t + 1],
                trace.levels[t],
            ])
        ));
    }
    out
}

pub fn steps_csv(steps: &[StepDiagnostics]) -> String {
    let mut out = String::from("hour,objective,kkt_residual,slack_error,recovery_used\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{}\n",
            s.hour,
            join([s.objective, s.kkt_residual, s.slack_error]),
            u8::from(s.recovery_used)
        ));
    }
    out
}

/// Level trajectories of several runs side by side, with both thresholds.
pub fn levels_plot_csv(params: &LakeParams, runs: &[(&str, &ClosedLoopTrace)]) -> String {
    let mut out = String::from("hour");
    for (name, _) in runs {
        out.push_str(&format!(",level_{name}_m"));
    }
    out.push_str(",flood_threshold_m,dry_threshold_m\n");
    let len = runs.iter().map(|(_, t)| t.len()).min().unwrap_or(0);
    for t in 0..len {
        let levels = runs.iter().map(|(_, tr)| tr.levels[t]);
        out.push_str(&format!(
            "{t},{}\n",
            join(levels.chain([params.flood_threshold, params.dry_threshold]))
        ));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda");
    if let Some(first) = rows.first() {
        for (_, label, _) in metric_rows(&first.report) {
            out.push(',');
            out.push_str(label);
        }
    }
    out.push_str(",Recovery Hours,Normalized Flood Hours,Normalized Deficit Hours\n");
    for r in rows {
        let metrics = metric_rows(&r.report).map(|m| m.2);
        out.push_str(&join(
            std::iter::once(r.lambda)
                .chain(metrics)
                .chain([r.recovery_hours as f64, r.normalized_flood_hours, r.normalized_deficit_hours]),
        ));
        out.push('\n');
    }
    out
}

/// The two normalized curves against lambda.
pub fn sweep_plot_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,normalized_flood_hours,normalized_deficit_hours\n");
    for r in rows {
        out.push_str(&join([r.lambda, r.normalized_flood_hours, r.normalized_deficit_hours]));
        out.push('\n');
    }
    out
}

pub fn sweep_text(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>10}  {:>12}  {:>12}  {:>12}  {:>14}  {:>9}\n",
        "lambda", "flood hours", "flood area", "deficit hrs", "deficit area", "dry hours"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>10}  {:>12}  {:>12}  {:>12}  {:>14}  {:>9}\n",
            fmt_sig(r.lambda),
            r.report.flood.hours,
            fmt_sig(r.report.flood.area),
            r.report.demand.hours,
            fmt_sig(r.report.demand.area),
            r.report.dry.hours
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::fmt_sig;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(218_850_000.0), "2.1885e8");
        assert_eq!(fmt_sig(1.1), "1.1");
        assert_eq!(fmt_sig(-144.19), "-144.19");
        assert_eq!(fmt_sig(0.15811388300841897), "0.158114");
        assert_eq!(fmt_sig(123456.7), "123457");
        assert_eq!(fmt_sig(999999.7), "1e6");
        assert_eq!(fmt_sig(1.234e-7), "1.234e-7");
        assert_eq!(fmt_sig(0.00012345678), "0.000123457");
    }
}
