//! Deterministic dynamic programming over a storage grid: the offline
//! benchmark that sees the whole inflow series in advance.
//!
//! Backward induction interpolates the cost-to-go linearly between grid
//! nodes; the forward pass looks the action up at the nearest node and runs it
//! through the hourly plant.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hydrology::{mass_balance, step_hourly, LakeParams, LakeState, ReleaseBounds, HOURS_PER_DAY, SECONDS_PER_HOUR};
use crate::trace::ClosedLoopTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    #[default]
    Hourly,
    /// One decision per day on daily mean flows, held for 24 hours.
    Daily,
}

impl FromStr for TimeStep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hourly" => Ok(TimeStep::Hourly),
            "daily" => Ok(TimeStep::Daily),
            other => Err(domain(format!("unknown time step `{other}` (hourly|daily)"))),
        }
    }
}

impl TimeStep {
    fn hours(self) -> usize {
        match self {
            TimeStep::Hourly => 1,
            TimeStep::Daily => HOURS_PER_DAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpConfig {
    pub w_flood: f64,
    pub w_demand: f64,
    pub w_dry: f64,
    pub grid_points: usize,
    /// Grid extent `(lo, hi)`, m³.
    pub storage_range: (f64, f64),
    /// Releases sampled uniformly in `[r_min, r_max]` at each node. The
    /// saturated demand is always added as one more candidate.
    pub action_samples: usize,
    pub time_step: TimeStep,
    /// Flow that normalizes the deficit term, m³/s.
    pub demand_ref: f64,
    /// Fixed candidate releases (saturated per node) replacing the uniform
    /// samples; handy for small exact instances.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_releases: Option<Vec<f64>>,
}

impl Default for DdpConfig {
    fn default() -> Self {
        Self::for_lake(&LakeParams::default())
    }
}

impl DdpConfig {
    /// Benchmark weights 0.4 / 0.6 / 0, 201 nodes over three times the flood
    /// storage, 101 release samples.
    pub fn for_lake(params: &LakeParams) -> Self {
        Self {
            w_flood: 0.4,
            w_demand: 0.6,
            w_dry: 0.0,
            grid_points: 201,
            storage_range: (0.0, 3.0 * params.flood_storage()),
            action_samples: 101,
            time_step: TimeStep::Hourly,
            demand_ref: 100.0,
            candidate_releases: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_flood, self.w_demand, self.w_dry];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(domain("weights must be nonnegative with a positive sum"));
        }
        if self.grid_points < 3 {
            return Err(domain("grid_points must be at least 3"));
        }
        if self.action_samples < 2 {
            return Err(domain("action_samples must be at least 2"));
        }
        let (lo, hi) = self.storage_range;
        if !(lo >= 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(domain(format!("storage_range ({lo}, {hi}) must satisfy 0 <= lo < hi")));
        }
        if !(self.demand_ref > 0.0) || !self.demand_ref.is_finite() {
            return Err(domain("demand_ref must be positive"));
        }
        if let Some(c) = &self.candidate_releases {
            if c.is_empty() || c.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return Err(domain("candidate_releases must be a nonempty list of nonnegative flows"));
            }
        }
        Ok(())
    }

    fn candidates(&self, bounds: ReleaseBounds, demand: f64) -> Vec<f64> {
        let mut c: Vec<f64> = match &self.candidate_releases {
            Some(list) => list.iter().map(|&r| bounds.saturate(r)).collect(),
            None => {
                let n = self.action_samples - 1;
                let span = bounds.max - bounds.min;
                (0..=n)
                    .map(|k| bounds.min + span * k as f64 / n as f64)
                    .chain(std::iter::once(bounds.saturate(demand)))
                    .collect()
            }
        };
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

/// Weighted quadratic hinge cost of one step, on the level reached at its end
/// and the release actually delivered.
pub fn stage_cost(params: &LakeParams, config: &DdpConfig, level: f64, release: f64, demand: f64) -> f64 {
    let flood = (level - params.flood_threshold).max(0.0);
    let deficit = ((demand - release) / config.demand_ref).max(0.0);
    let dry = (params.dry_threshold - level).max(0.0);
    config.w_flood * flood * flood + config.w_demand * deficit * deficit + config.w_dry * dry * dry
}

/// Cost-to-go and policy on the storage grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    /// Grid nodes, m³, uniformly spaced.
    pub storages: Vec<f64>,
    /// `values[k][i]`: optimal cost from node `i` at stage `k`; the last layer
    /// is zero.
    pub values: Vec<Vec<f64>>,
    /// `policy[k][i]`: release command at node `i` for stage `k`, m³/s.
    pub policy: Vec<Vec<f64>>,
    pub time_step: TimeStep,
    /// Transitions that left the grid and were clamped to its edge.
    pub clamped: usize,
}

impl ValueTable {
    /// Number of decision stages.
    pub fn stages(&self) -> usize {
        self.policy.len()
    }

    fn spacing(&self) -> f64 {
        (self.storages[self.storages.len() - 1] - self.storages[0]) / (self.storages.len() - 1) as f64
    }

    pub fn nearest_node(&self, storage: f64) -> usize {
        let k = ((storage - self.storages[0]) / self.spacing()).round();
        (k.max(0.0) as usize).min(self.storages.len() - 1)
    }

    /// Linearly interpolated cost-to-go at stage `k`.
    pub fn value_at(&self, k: usize, storage: f64) -> f64 {
        interpolate(&self.storages, &self.values[k], storage).0
    }
}

/// Linear interpolation on a uniform grid; the flag reports clamping.
fn interpolate(grid: &[f64], values: &[f64], x: f64) -> (f64, bool) {
    let n = grid.len();
    let (lo, hi) = (grid[0], grid[n - 1]);
    if x <= lo {
        return (values[0], x < lo);
    }
    if x >= hi {
        return (values[n - 1], x > hi);
    }
    let pos = (x - lo) / (hi - lo) * (n - 1) as f64;
    let i = (pos.floor() as usize).min(n - 2);
    let frac = pos - i as f64;
    if frac == 0.0 {
        return (values[i], false);
    }
    (values[i] + frac * (values[i + 1] - values[i]), false)
}

/// Per-stage flows: the hourly series, or daily means in daily mode.
fn stage_flows(step: TimeStep, series: &[f64]) -> Vec<f64> {
    match step {
        TimeStep::Hourly => series.to_vec(),
        TimeStep::Daily => series
            .chunks(HOURS_PER_DAY)
            .map(|d| d.iter().sum::<f64>() / HOURS_PER_DAY as f64)
            .collect(),
    }
}

fn check_series(step: TimeStep, inflow: &[f64], demand: &[f64]) -> Result<()> {
    if inflow.len() != demand.len() {
        return Err(domain(format!(
            "inflow has {} values but demand has {}",
            inflow.len(),
            demand.len()
        )));
    }
    if inflow.is_empty() || !inflow.len().is_multiple_of(step.hours()) {
        return Err(domain(format!(
            "series of {} hours does not split into {:?} stages",
            inflow.len(),
            step
        )));
    }
    if inflow.iter().chain(demand).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(domain("inflow and demand must be finite and nonnegative"));
    }
    Ok(())
}

/// Optimal cost-to-go over the whole series by backward induction.
///
/// In daily mode each stage is one day of mean flows; its stage cost is
/// counted once per hour of the day so both modes share a scale.
pub fn backward_induction(params: &LakeParams, config: &DdpConfig, inflow: &[f64], demand: &[f64]) -> Result<ValueTable> {
    params.validate()?;
    config.validate()?;
    check_series(config.time_step, inflow, demand)?;
    let step = config.time_step;
    let dt = SECONDS_PER_HOUR * step.hours() as f64;
    let weight = step.hours() as f64;
    let q = stage_flows(step, inflow);
    let w = stage_flows(step, demand);
    let stages = q.len();

    let g = config.grid_points;
    let (lo, hi) = config.storage_range;
    let storages: Vec<f64> = (0..g)
        .map(|i| if i == g - 1 { hi } else { lo + (hi - lo) * i as f64 / (g - 1) as f64 })
        .collect();
    let bounds: Vec<ReleaseBounds> = storages
        .iter()
        .map(|&s| params.release_bounds(params.level_of_storage_unchecked(s)))
        .collect();

    let mut values = vec![vec![0.0; g]; stages + 1];
    let mut policy = vec![vec![0.0; g]; stages];
    let mut clamped = 0;
    for k in (0..stages).rev() {
        let next = &values[k + 1];
        let layer: Vec<(f64, f64, usize)> = (0..g)
            .into_par_iter()
            .map(|i| {
                let s = storages[i];
                let mut best = (f64::INFINITY, 0.0, 0);
                for r in config.candidates(bounds[i], w[k]) {
                    let (s_next, applied) = mass_balance(s, q[k], r, dt);
                    let level = params.level_of_storage_unchecked(s_next);
                    let (to_go, off) = interpolate(&storages, next, s_next);
                    let cost = weight * stage_cost(params, config, level, applied, w[k]) + to_go;
                    // candidates ascend, so strict improvement keeps the
                    // smaller release on ties
                    if cost < best.0 {
                        best = (cost, r, usize::from(off));
                    }
                }
                best
            })
            .collect();
        for (i, (v, r, off)) in layer.into_iter().enumerate() {
            values[k][i] = v;
            policy[k][i] = r;
            clamped += off;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} transitions left the storage grid and were clamped to its edge");
    }
    Ok(ValueTable {
        storages,
        values,
        policy,
        time_step: step,
        clamped,
    })
}

/// Run the policy forward from `s0` through the hourly plant, looking the
/// action up at the nearest grid node at the start of each stage.
pub fn simulate_policy(
    params: &LakeParams,
    table: &ValueTable,
    inflow: &[f64],
    demand: &[f64],
    s0: f64,
) -> Result<ClosedLoopTrace> {
    check_series(table.time_step, inflow, demand)?;
    let per_stage = table.time_step.hours();
    if inflow.len() / per_stage != table.stages() {
        return Err(domain(format!(
            "value table has {} stages but the series has {} hours",
            table.stages(),
            inflow.len()
        )));
    }
    let mut trace = ClosedLoopTrace::with_initial_storage(s0, inflow.len());
    let mut state = LakeState::new(s0, 0)?;
    for k in 0..table.stages() {
        let command = table.policy[k][table.nearest_node(state.storage)];
        for t in k * per_stage..(k + 1) * per_stage {
            let (next, release) = step_hourly(params, state, inflow[t], command)?;
            trace.push(params, next.storage, inflow[t], demand[t], command, release);
            state = next;
        }
    }
    Ok(trace)
}

/// Hourly stage cost summed along a realized trace.
pub fn trajectory_cost(params: &LakeParams, config: &DdpConfig, trace: &ClosedLoopTrace) -> f64 {
    trace
        .levels
        .iter()
        .zip(&trace.releases)
        .zip(&trace.demands)
        .map(|((&h, &r), &w)| stage_cost(params, config, h, r, w))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Unit area so one m³/s for one hour moves the level by exactly 1 m.
    fn toy_lake() -> LakeParams {
        LakeParams {
            surface_area: 3600.0,
            level_offset: 0.0,
            flood_threshold: 1.5,
            dry_threshold: 0.5,
            mef: 0.0,
            sat_k: 1.0,
            sat_n: 0.0,
            sat_e: 1.0,
        }
    }

    fn toy_config() -> DdpConfig {
        DdpConfig {
            w_flood: 0.4,
            w_demand: 0.6,
            w_dry: 0.3,
            grid_points: 3,
            storage_range: (0.0, 7200.0),
            action_samples: 3,
            time_step: TimeStep::Hourly,
            demand_ref: 1.0,
            candidate_releases: Some(vec![0.0, 1.0, 2.0]),
        }
    }

    fn brute_force(p: &LakeParams, c: &DdpConfig, s0: f64, q: &[f64], w: &[f64]) -> f64 {
        if q.is_empty() {
            return 0.0;
        }
        let state = LakeState::new(s0, 0).unwrap();
        c.candidate_releases
            .as_ref()
            .unwrap()
            .iter()
            .map(|&r| {
                let (next, applied) = step_hourly(p, state, q[0], r).unwrap();
                let h = p.level_of_storage(next.storage).unwrap();
                stage_cost(p, c, h, applied, w[0]) + brute_force(p, c, next.storage, &q[1..], &w[1..])
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn stage_cost_examples() {
        let p = LakeParams::default();
        let c = DdpConfig::default();
        assert_eq!(stage_cost(&p, &c, 1.0, 100.0, 100.0), 0.0);
        assert_abs_diff_eq!(stage_cost(&p, &c, 1.6, 120.0, 100.0), 0.1, epsilon = 1e-12);
        assert_eq!(stage_cost(&p, &c, -0.3, 100.0, 100.0), 0.0);
        let dry = DdpConfig { w_dry: 1.0, ..c };
        assert_abs_diff_eq!(stage_cost(&p, &dry, -0.3, 100.0, 100.0), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn single_stage_policy_serves_demand() {
        let p = LakeParams::default();
        let c = DdpConfig::default();
        let table = backward_induction(&p, &c, &[100.0], &[150.0]).unwrap();
        for (i, &s) in table.storages.iter().enumerate() {
            let h = p.level_of_storage(s).unwrap();
            if h > 1.0 {
                continue;
            }
            let b = p.release_bounds(h);
            let expect = 150f64.max(b.min).min(b.max);
            assert_abs_diff_eq!(table.policy[0][i], expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn flat_cost_takes_smallest_release() {
        let p = LakeParams::default();
        let c = DdpConfig::default();
        let table = backward_induction(&p, &c, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        for (i, &s) in table.storages.iter().enumerate() {
            let h = p.level_of_storage(s).unwrap();
            if h > p.flood_threshold {
                continue;
            }
            assert_eq!(table.policy[0][i], p.release_bounds(h).min);
        }
    }

    #[test]
    fn exact_grid_matches_enumeration() {
        let p = toy_lake();
        let c = toy_config();
        for (q, w) in [
            (vec![1.0, 0.0], vec![1.0, 1.0]),
            (vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 1.0]),
            (vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0]),
        ] {
            let table = backward_induction(&p, &c, &q, &w).unwrap();
            assert_eq!(table.clamped, 0);
            for (i, &s0) in table.storages.iter().enumerate() {
                let oracle = brute_force(&p, &c, s0, &q, &w);
                assert_abs_diff_eq!(table.values[0][i], oracle, epsilon = 1e-9);
                let trace = simulate_policy(&p, &table, &q, &w, s0).unwrap();
                assert_abs_diff_eq!(trajectory_cost(&p, &c, &trace), oracle, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn value_table_shape() {
        let p = toy_lake();
        let table = backward_induction(&p, &toy_config(), &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(table.stages(), 2);
        assert!(table.values[2].iter().all(|&v| v == 0.0));
        assert!(table.values.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn forward_pass_conserves_mass() {
        let p = LakeParams::default();
        let c = DdpConfig {
            grid_points: 41,
            action_samples: 11,
            ..DdpConfig::default()
        };
        let q: Vec<f64> = (0..96).map(|t| 150.0 + 100.0 * (t as f64 / 10.0).sin()).collect();
        let w = vec![120.0; 96];
        let table = backward_induction(&p, &c, &q, &w).unwrap();
        let trace = simulate_policy(&p, &table, &q, &w, p.storage_of_level(0.5).unwrap()).unwrap();
        assert!(trace.conservation_error() <= 1e-12);
        assert_eq!(trace.len(), 96);
    }

    #[test]
    fn daily_stages_hold_release_for_a_day() {
        let p = LakeParams::default();
        let c = DdpConfig {
            time_step: TimeStep::Daily,
            grid_points: 41,
            action_samples: 11,
            ..DdpConfig::default()
        };
        let q = vec![150.0; 72];
        let w = vec![120.0; 72];
        let table = backward_induction(&p, &c, &q, &w).unwrap();
        assert_eq!(table.stages(), 3);
        let trace = simulate_policy(&p, &table, &q, &w, p.storage_of_level(0.5).unwrap()).unwrap();
        for day in trace.commands.chunks(24) {
            assert!(day.iter().all(|&u| u == day[0]));
        }
        assert!(backward_induction(&p, &c, &q[..50], &w[..50]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = LakeParams::default();
        let c = DdpConfig::default();
        assert!(backward_induction(&p, &c, &[1.0, 2.0], &[1.0]).is_err());
        assert!(backward_induction(&p, &DdpConfig { grid_points: 2, ..c.clone() }, &[1.0], &[1.0]).is_err());
        assert!(backward_induction(&p, &DdpConfig { w_flood: 0.0, w_demand: 0.0, ..c.clone() }, &[1.0], &[1.0]).is_err());
        let table = backward_induction(&p, &c, &[1.0], &[1.0]).unwrap();
        assert!(simulate_policy(&p, &table, &[1.0, 1.0], &[1.0, 1.0], 1e6).is_err());
        assert_eq!("daily".parse::<TimeStep>().unwrap(), TimeStep::Daily);
    }
}
