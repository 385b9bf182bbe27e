//! Linear-quadratic receding-horizon controller.
//!
//! Each decision step solves
//!
//! ```text
//!   min  sum_t eps_max(t)^2 + lambda (eps_dem(t) / F)^2 + mu ((u(t) - w(t)) / F)^2
//!   s.t. s(t) = s0 + 3600 sum_{k<=t} (q(k) - u(k))
//!        r_min <= u(t) <= r_max
//!        u(t) >= w(t) + eps_dem(t)
//!        s_min <= s(t) <= s_max + A eps_max(t),   eps_max(t) >= 0
//! ```
//!
//! with storage eliminated by forward substitution. `eps_max` is in metres
//! of level, demand quantities are divided by the flow scale `F` so that one
//! metre of flood slack and `F` m³/s of demand slack cost the same at
//! `lambda = 1`. The small `mu` term selects the demand-tracking point among
//! otherwise equivalent release plans.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hydrology::{step_hourly, LakeParams, LakeState, ReleaseBounds, HOURS_PER_DAY, SECONDS_PER_HOUR};
use crate::qp::{self, QpProblem, QpStatus};
use crate::scenario::Scenario;
use crate::trace::ClosedLoopTrace;

/// Relative distance below which a planned release is taken to equal demand.
const RELEASE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MpcMode {
    /// Re-plan every hour and apply the first action.
    #[default]
    Hourly,
    /// Plan once a day and apply the 24 actions open loop.
    Daily,
}

impl std::str::FromStr for MpcMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hourly" => Ok(MpcMode::Hourly),
            "daily" => Ok(MpcMode::Daily),
            other => Err(domain(format!("unknown mode `{other}` (hourly|daily)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon, hours.
    pub horizon: usize,
    /// Weight of the demand slack relative to the flood slack.
    pub lambda: f64,
    /// Hard lower storage bound, m³.
    pub s_min: f64,
    /// Storage above which flood slack is charged, m³.
    pub s_max: f64,
    /// Weight of the demand-tracking tie-break term.
    pub tie_break_weight: f64,
    /// Soften the dry bound instead of failing when the step is infeasible.
    pub feasibility_recovery: bool,
    pub mode: MpcMode,
    /// Flow normalization `F`, m³/s.
    pub flow_scale: f64,
    /// Weight of the dry slack used by recovery, relative to the flood slack.
    pub recovery_weight: f64,
    /// Back-off of both level thresholds, m. The controller aims slightly
    /// inside them so rounding in the plant update cannot leave the realized
    /// level a few ulps on the wrong side.
    pub level_margin: f64,
}

impl MpcConfig {
    /// Defaults with storage bounds at the lake's dry and flood thresholds.
    pub fn for_lake(params: &LakeParams) -> Self {
        Self {
            horizon: 24,
            lambda: 1.0,
            s_min: params.dry_storage(),
            s_max: params.flood_storage(),
            tie_break_weight: 1e-6,
            feasibility_recovery: true,
            mode: MpcMode::Hourly,
            flow_scale: 100.0,
            recovery_weight: 1e6,
            level_margin: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(domain("horizon must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(domain("lambda must be finite and nonnegative"));
        }
        if !(self.s_min < self.s_max) || !self.s_max.is_finite() {
            return Err(domain("s_min must lie below s_max"));
        }
        if !(self.tie_break_weight >= 0.0) || !self.tie_break_weight.is_finite() {
            return Err(domain("tie_break_weight must be finite and nonnegative"));
        }
        if !(self.flow_scale > 0.0) || !(self.recovery_weight > 0.0) {
            return Err(domain("flow_scale and recovery_weight must be positive"));
        }
        if !(self.level_margin >= 0.0) || !self.level_margin.is_finite() {
            return Err(domain("level_margin must be finite and nonnegative"));
        }
        if self.mode == MpcMode::Daily && self.horizon != HOURS_PER_DAY {
            return Err(domain("daily mode plans exactly 24 hours"));
        }
        Ok(())
    }
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self::for_lake(&LakeParams::default())
    }
}

/// Column layout of the assembled QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub soft_dry: bool,
}

impl Layout {
    pub fn release(&self, t: usize) -> usize {
        t
    }
    pub fn slack_max(&self, t: usize) -> usize {
        self.horizon + t
    }
    pub fn slack_demand(&self, t: usize) -> usize {
        2 * self.horizon + t
    }
    pub fn slack_dry(&self, t: usize) -> Option<usize> {
        self.soft_dry.then_some(3 * self.horizon + t)
    }
    pub fn num_vars(&self) -> usize {
        if self.soft_dry {
            4 * self.horizon
        } else {
            3 * self.horizon
        }
    }
}

/// The QP of one decision step together with what is needed to read it back
/// in physical units.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub problem: QpProblem,
    pub layout: Layout,
    pub flow_scale: f64,
    /// Constant dropped from the QP objective (`mu sum (w/F)^2`).
    pub objective_offset: f64,
    /// Level at the start of the step and per-hour level increments, used to
    /// reconstruct predicted levels.
    level0: f64,
    level_per_flow: f64,
    inflow: Vec<f64>,
    demand: Vec<f64>,
}

fn check_inputs(
    config: &MpcConfig,
    s0: f64,
    inflow: &[f64],
    demand: &[f64],
    bounds: &[ReleaseBounds],
) -> Result<()> {
    let h = config.horizon;
    if inflow.len() != h || demand.len() != h || bounds.len() != h {
        return Err(domain(format!(
            "horizon is {h} but got {} inflows, {} demands, {} bounds",
            inflow.len(),
            demand.len(),
            bounds.len()
        )));
    }
    if !(s0 >= 0.0) || !s0.is_finite() {
        return Err(domain(format!("initial storage must be nonnegative, got {s0}")));
    }
    if inflow.iter().chain(demand).any(|v| !v.is_finite()) {
        return Err(domain("forecast values must be finite"));
    }
    if let Some(t) = bounds.iter().position(|b| !(b.min <= b.max)) {
        return Err(domain(format!("release bounds at step {t} are inverted")));
    }
    Ok(())
}

/// Build the QP of one decision step.
pub fn assemble_qp(
    params: &LakeParams,
    config: &MpcConfig,
    s0: f64,
    inflow_forecast: &[f64],
    demand: &[f64],
    u_bounds: &[ReleaseBounds],
) -> Result<MpcQp> {
    config.validate()?;
    check_inputs(config, s0, inflow_forecast, demand, u_bounds)?;
    Ok(build(params, config, s0, inflow_forecast, demand, u_bounds, false))
}

fn build(
    params: &LakeParams,
    config: &MpcConfig,
    s0: f64,
    inflow: &[f64],
    demand: &[f64],
    u_bounds: &[ReleaseBounds],
    soft_dry: bool,
) -> MpcQp {
    let h = config.horizon;
    let f = config.flow_scale;
    let layout = Layout { horizon: h, soft_dry };
    let n = layout.num_vars();
    let area = params.surface_area;
    // level change per hour per unit of scaled flow
    let kappa = SECONDS_PER_HOUR * f / area;
    let level0 = s0 / area + params.level_offset;
    let level_max = config.s_max / area + params.level_offset - config.level_margin;
    let level_min = config.s_min / area + params.level_offset + config.level_margin;

    let mu = config.tie_break_weight;
    let mut hess = DMatrix::zeros(n, n);
    let mut lin = DVector::zeros(n);
    let mut offset = 0.0;
    for t in 0..h {
        let w = demand[t] / f;
        hess[(layout.release(t), layout.release(t))] = 2.0 * mu;
        lin[layout.release(t)] = -2.0 * mu * w;
        offset += mu * w * w;
        hess[(layout.slack_max(t), layout.slack_max(t))] = 2.0;
        hess[(layout.slack_demand(t), layout.slack_demand(t))] = 2.0 * config.lambda;
        if let Some(j) = layout.slack_dry(t) {
            hess[(j, j)] = 2.0 * config.recovery_weight;
        }
    }

    let mut g = DMatrix::zeros(3 * h, n);
    let mut rhs = DVector::zeros(3 * h);
    let mut cum_q = 0.0;
    for t in 0..h {
        cum_q += inflow[t] / f;
        // demand: -u + eps_dem <= -w
        let r = t;
        g[(r, layout.release(t))] = -1.0;
        g[(r, layout.slack_demand(t))] = 1.0;
        rhs[r] = -demand[t] / f;
        // flood: level(t) <= level_max + eps_max
        let r = h + t;
        for k in 0..=t {
            g[(r, layout.release(k))] = -kappa;
        }
        g[(r, layout.slack_max(t))] = -1.0;
        rhs[r] = level_max - level0 - kappa * cum_q;
        // dry: level(t) >= level_min (- eps_dry when softened)
        let r = 2 * h + t;
        for k in 0..=t {
            g[(r, layout.release(k))] = kappa;
        }
        if let Some(j) = layout.slack_dry(t) {
            g[(r, j)] = -1.0;
        }
        rhs[r] = level0 + kappa * cum_q - level_min;
    }

    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for t in 0..h {
        lower[layout.release(t)] = u_bounds[t].min / f;
        upper[layout.release(t)] = u_bounds[t].max / f;
        lower[layout.slack_max(t)] = 0.0;
        if let Some(j) = layout.slack_dry(t) {
            lower[j] = 0.0;
        }
    }

    MpcQp {
        problem: QpProblem::new(hess, lin)
            .with_inequalities(g, rhs)
            .with_bounds(lower, upper),
        layout,
        flow_scale: f,
        objective_offset: offset,
        level0,
        level_per_flow: kappa / f,
        inflow: inflow.to_vec(),
        demand: demand.to_vec(),
    }
}

/// Result of one decision step, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStepResult {
    /// Planned releases over the horizon, m³/s.
    pub planned_releases: Vec<f64>,
    /// Flood slack per step, m of level.
    pub slack_max: Vec<f64>,
    /// Demand slack per step, m³/s (negative when in deficit).
    pub slack_demand: Vec<f64>,
    /// Dry slack per step, m, when recovery softened the dry bound.
    pub slack_dry: Option<Vec<f64>>,
    /// Predicted level at the end of each step, m.
    pub predicted_levels: Vec<f64>,
    pub objective: f64,
    pub recovery_used: bool,
    pub status: QpStatus,
    pub kkt_residual: f64,
}

impl MpcStepResult {
    /// Largest deviation of the slacks from their closed-form optimal values
    /// `min(u - w, 0)` and `max(level - level_max, 0)`.
    pub fn slack_optimality_error(&self, level_max: f64) -> f64 {
        let mut err: f64 = 0.0;
        for (t, &e) in self.slack_max.iter().enumerate() {
            err = err.max((e - (self.predicted_levels[t] - level_max).max(0.0)).abs());
        }
        err
    }
}

impl MpcQp {
    fn decode(&self, sol: &qp::QpSolution, recovery_used: bool) -> MpcStepResult {
        let l = self.layout;
        let f = self.flow_scale;
        let h = l.horizon;
        // A release that meets demand exactly is the common optimum; do not
        // let solver rounding turn it into a deficit of 1e-12 m3/s.
        let planned: Vec<f64> = (0..h)
            .map(|t| {
                let u = sol.x[l.release(t)] * f;
                let w = self.demand[t];
                if (u - w).abs() <= RELEASE_SNAP * (1.0 + w.abs()) {
                    w
                } else {
                    u
                }
            })
            .collect();
        let mut level = self.level0;
        let predicted_levels = (0..h)
            .map(|t| {
                level += self.level_per_flow * (self.inflow[t] - planned[t]);
                level
            })
            .collect();
        MpcStepResult {
            slack_max: (0..h).map(|t| sol.x[l.slack_max(t)]).collect(),
            slack_demand: (0..h).map(|t| sol.x[l.slack_demand(t)] * f).collect(),
            slack_dry: l
                .soft_dry
                .then(|| (0..h).map(|t| sol.x[l.slack_dry(t).unwrap()]).collect()),
            planned_releases: planned,
            predicted_levels,
            objective: sol.objective + self.objective_offset,
            recovery_used,
            status: sol.status,
            kkt_residual: sol.kkt_residual,
        }
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }
}

/// Optimal demand slack for a given release: the deficit, or zero when met.
pub fn interpret_demand_slack(u: f64, w: f64) -> f64 {
    (u - w).min(0.0)
}

/// Solve one decision step, softening the dry bound if the hard problem is
/// infeasible and recovery is enabled.
pub fn solve_step(
    params: &LakeParams,
    config: &MpcConfig,
    s0: f64,
    inflow_forecast: &[f64],
    demand: &[f64],
    u_bounds: &[ReleaseBounds],
) -> Result<MpcStepResult> {
    let qp_hard = assemble_qp(params, config, s0, inflow_forecast, demand, u_bounds)?;
    let sol = qp::solve(&qp_hard.problem)?;
    match sol.status {
        QpStatus::Optimal => Ok(qp_hard.decode(&sol, false)),
        QpStatus::Infeasible if config.feasibility_recovery => {
            let soft = build(params, config, s0, inflow_forecast, demand, u_bounds, true);
            let sol = qp::solve(&soft.problem)?;
            if sol.status != QpStatus::Optimal {
                return Err(domain(format!("softened problem not solved ({:?})", sol.status)));
            }
            Ok(soft.decode(&sol, true))
        }
        QpStatus::Infeasible => {
            let detail = sol
                .infeasibility
                .map(|c| format!(" (most violated {:?} by {:.3e})", c.most_violated, c.max_violation))
                .unwrap_or_default();
            Err(domain(format!("decision problem infeasible{detail}")))
        }
        QpStatus::IterationLimit => Err(domain(format!(
            "QP solver stopped at the iteration limit (residual {:.3e})",
            sol.kkt_residual
        ))),
    }
}

/// Per-solve record kept alongside the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub hour: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub recovery_used: bool,
    /// See [`MpcStepResult::slack_optimality_error`]; also covers the demand
    /// slack.
    pub slack_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub trace: ClosedLoopTrace,
    pub steps: Vec<StepDiagnostics>,
}

impl ClosedLoopRun {
    pub fn max_kkt_residual(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.kkt_residual))
    }
}

fn diagnose(hour: usize, res: &MpcStepResult, demand: &[f64], level_max: f64) -> StepDiagnostics {
    let mut err = res.slack_optimality_error(level_max);
    for (t, &e) in res.slack_demand.iter().enumerate() {
        let want = interpret_demand_slack(res.planned_releases[t], demand[t]);
        err = err.max((e - want).abs() / 100.0);
    }
    StepDiagnostics {
        hour,
        kkt_residual: res.kkt_residual,
        objective: res.objective,
        recovery_used: res.recovery_used,
        slack_error: err,
    }
}

fn check_run(params: &LakeParams, config: &MpcConfig, scenario: &Scenario, s0: f64) -> Result<()> {
    params.validate()?;
    config.validate()?;
    scenario.validate()?;
    LakeState::new(s0, 0)?;
    Ok(())
}

/// Run the controller in the configured mode.
pub fn run(params: &LakeParams, config: &MpcConfig, scenario: &Scenario, s0: f64) -> Result<ClosedLoopRun> {
    match config.mode {
        MpcMode::Hourly => run_hourly(params, config, scenario, s0),
        MpcMode::Daily => run_daily(params, config, scenario, s0),
    }
}

/// Receding-horizon loop: re-plan every hour with the true inflow as forecast
/// and apply the first action. Near the end of the scenario the horizon
/// shrinks to the hours that remain.
pub fn run_hourly(params: &LakeParams, config: &MpcConfig, scenario: &Scenario, s0: f64) -> Result<ClosedLoopRun> {
    check_run(params, config, scenario, s0)?;
    if config.mode != MpcMode::Hourly {
        return Err(domain("run_hourly needs mode = hourly"));
    }
    let total = scenario.len();
    let level_max = params.level_of_storage_unchecked(config.s_max) - config.level_margin;
    let mut trace = ClosedLoopTrace::with_initial_storage(s0, total);
    let mut steps = Vec::with_capacity(total);
    let mut state = LakeState::new(s0, 0)?;
    let mut cfg = *config;

    for t in 0..total {
        let end = (t + config.horizon).min(total);
        cfg.horizon = end - t;
        let bounds = params.release_bounds(state.level(params));
        let q = &scenario.inflow_hourly[t..end];
        let w = &scenario.demand_hourly[t..end];
        let res = solve_step(params, &cfg, state.storage, q, w, &vec![bounds; cfg.horizon])
            .map_err(|e| Error::Run {
                hour: t,
                message: e.to_string(),
            })?;
        steps.push(diagnose(t, &res, w, level_max));
        if res.recovery_used {
            trace.recovery_hours += 1;
        }
        let command = res.planned_releases[0];
        let (next, release) = step_hourly(params, state, q[0], command)?;
        trace.push(params, next.storage, q[0], w[0], command, release);
        state = next;
    }
    Ok(ClosedLoopRun { trace, steps })
}

/// Plan at the start of every day with release bounds frozen at the level
/// measured then, and apply the plan open loop for the day. The plant still
/// saturates each action at its true hourly bounds.
pub fn run_daily(params: &LakeParams, config: &MpcConfig, scenario: &Scenario, s0: f64) -> Result<ClosedLoopRun> {
    check_run(params, config, scenario, s0)?;
    if config.mode != MpcMode::Daily {
        return Err(domain("run_daily needs mode = daily"));
    }
    let total = scenario.len();
    let level_max = params.level_of_storage_unchecked(config.s_max) - config.level_margin;
    let mut trace = ClosedLoopTrace::with_initial_storage(s0, total);
    let mut steps = Vec::new();
    let mut state = LakeState::new(s0, 0)?;
    let mut cfg = *config;

    let mut t = 0;
    while t < total {
        let to_midnight = HOURS_PER_DAY - (scenario.start_hour + t) % HOURS_PER_DAY;
        let end = (t + to_midnight).min(total);
        cfg.horizon = end - t;
        let bounds = params.release_bounds(state.level(params));
        let q = &scenario.inflow_hourly[t..end];
        let w = &scenario.demand_hourly[t..end];
        let res = solve_step(params, &cfg, state.storage, q, w, &vec![bounds; cfg.horizon])
            .map_err(|e| Error::Run {
                hour: t,
                message: e.to_string(),
            })?;
        steps.push(diagnose(t, &res, w, level_max));
        if res.recovery_used {
            trace.recovery_hours += cfg.horizon;
        }
        for (k, &command) in res.planned_releases.iter().enumerate() {
            let (next, release) = step_hourly(params, state, q[k], command)?;
            trace.push(params, next.storage, q[k], w[k], command, release);
            state = next;
        }
        t = end;
    }
    Ok(ClosedLoopRun { trace, steps })
}
