//! Independent oracles shared by the integration tests. Nothing here calls
//! into the solver or controller code paths it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use lake_mpc::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random strictly convex QP with `n` variables and `m` inequality rows,
/// feasible by construction.
pub fn random_strictly_convex(seed: u64, n: usize, m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = b.transpose() * &b + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &g * &x0 + DVector::from_fn(m, |_, _| rng.gen_range(0.0..0.3));
    QpProblem::new(q, c).with_inequalities(g, h)
}

/// Enumerate every subset of inequality rows as the active set, solve the
/// equality-constrained subproblem, and keep the feasible minimizer.
pub fn active_set_enumeration(p: &QpProblem) -> (DVector<f64>, f64) {
    let n = p.num_vars();
    let m = p.ineq_rhs.len();
    assert!(m <= 16);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        let mut rhs = DVector::zeros(n + k);
        for i in 0..n {
            rhs[i] = -p.linear_cost[i];
        }
        for (a, &r) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a, j)] = p.ineq_matrix[(r, j)];
                kkt[(j, n + a)] = p.ineq_matrix[(r, j)];
            }
            rhs[n + a] = p.ineq_rhs[r];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let slack = &p.ineq_rhs - &p.ineq_matrix * &x;
        if slack.iter().any(|&s| s < -1e-10) {
            continue;
        }
        let obj = 0.5 * x.dot(&(&p.hessian * &x)) + p.linear_cost.dot(&x);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((x, obj));
        }
    }
    best.expect("feasible by construction")
}

/// Hand-rolled rating curve and stage cost for the DP brute force.
pub fn level(params: &lake_mpc::hydrology::LakeParams, storage: f64) -> f64 {
    storage / params.surface_area + params.level_offset
}

pub fn bounds(params: &lake_mpc::hydrology::LakeParams, h: f64) -> (f64, f64) {
    if h <= params.level_offset {
        return (0.0, 0.0);
    }
    let curve = params.sat_k * (h + params.sat_n).powf(params.sat_e);
    if h <= params.flood_threshold {
        (params.mef.min(curve), curve)
    } else {
        (curve, curve)
    }
}

/// Weighted quadratic hinge cost, written out independently.
pub fn hinge_cost(params: &lake_mpc::hydrology::LakeParams, w: (f64, f64, f64), demand_ref: f64, h: f64, r: f64, demand: f64) -> f64 {
    let f = if h > params.flood_threshold { h - params.flood_threshold } else { 0.0 };
    let d = if demand > r { (demand - r) / demand_ref } else { 0.0 };
    let l = if h < params.dry_threshold { params.dry_threshold - h } else { 0.0 };
    w.0 * f * f + w.1 * d * d + w.2 * l * l
}

/// Minimum total cost over every sequence of candidate commands, with the
/// plant stepped by hand: saturate at the pre-step level, floor storage at 0.
pub fn ddp_brute_force(
    params: &lake_mpc::hydrology::LakeParams,
    weights: (f64, f64, f64),
    demand_ref: f64,
    candidates: &[f64],
    s0: f64,
    q: &[f64],
    w: &[f64],
) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    let (lo, hi) = bounds(params, level(params, s0));
    candidates
        .iter()
        .map(|&u| {
            let mut r = u.max(lo).min(hi);
            let mut s = s0 + 3600.0 * (q[0] - r);
            if s < 0.0 {
                r = s0 / 3600.0 + q[0];
                s = 0.0;
            }
            hinge_cost(params, weights, demand_ref, level(params, s), r, w[0])
                + ddp_brute_force(params, weights, demand_ref, candidates, s, &q[1..], &w[1..])
        })
        .fold(f64::INFINITY, f64::min)
}

/// One MPC decision problem in direct (slack-free) form.
pub struct DirectMpc {
    pub level0: f64,
    pub level_max: f64,
    pub level_min: f64,
    /// Level change per m³/s over one hour.
    pub gain: f64,
    pub lambda: f64,
    pub mu: f64,
    pub flow_scale: f64,
    pub inflow: Vec<f64>,
    pub demand: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl DirectMpc {
    /// Piecewise-quadratic cost of a release plan, `None` when the plan breaks
    /// the dry bound.
    pub fn cost(&self, u: &[f64]) -> Option<f64> {
        let mut h = self.level0;
        let mut j = 0.0;
        for t in 0..u.len() {
            h += self.gain * (self.inflow[t] - u[t]);
            if h < self.level_min {
                return None;
            }
            let flood = (h - self.level_max).max(0.0);
            let deficit = (self.demand[t] - u[t]).max(0.0) / self.flow_scale;
            let track = (u[t] - self.demand[t]) / self.flow_scale;
            j += flood * flood + self.lambda * deficit * deficit + self.mu * track * track;
        }
        Some(j)
    }

    /// Dense grid over the release box, then repeated zooming around the
    /// incumbent.
    pub fn grid_search(&self) -> f64 {
        let h = self.inflow.len();
        let mut lo = vec![self.lo; h];
        let mut hi = vec![self.hi; h];
        let mut best = (f64::INFINITY, vec![self.lo; h]);
        for round in 0..40 {
            let pts: usize = if round == 0 { 81 } else { 21 };
            let total = pts.pow(h as u32);
            for idx in 0..total {
                let mut k = idx;
                let u: Vec<f64> = (0..h)
                    .map(|d| {
                        let i = k % pts;
                        k /= pts;
                        lo[d] + (hi[d] - lo[d]) * i as f64 / (pts - 1) as f64
                    })
                    .collect();
                if let Some(c) = self.cost(&u) {
                    if c < best.0 {
                        best = (c, u);
                    }
                }
            }
            for d in 0..h {
                let step = (hi[d] - lo[d]) / (pts - 1) as f64;
                lo[d] = (best.1[d] - 2.0 * step).max(self.lo);
                hi[d] = (best.1[d] + 2.0 * step).min(self.hi);
            }
        }
        best.0
    }
}
