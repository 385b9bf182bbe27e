use super::{QpProblem, QpSolution};

/// Components of the optimality residual, each an infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// `|Qx + c + A_eq'y + A_in'z + d|`.
    pub stationarity: f64,
    /// Largest constraint violation.
    pub primal: f64,
    /// Largest sign violation of the multipliers.
    pub dual: f64,
    /// Largest `|multiplier * slack|`.
    pub complementarity: f64,
}

impl KktReport {
    /// Largest component; infinite if any component is NaN.
    pub fn max(&self) -> f64 {
        [self.stationarity, self.primal, self.dual, self.complementarity]
            .into_iter()
            .fold(0.0, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) })
    }
}

/// Recompute the KKT conditions of `solution` against `problem`.
///
/// Nothing reported by the solver is trusted apart from the primal and dual
/// vectors themselves.
pub fn kkt_report(problem: &QpProblem, solution: &QpSolution) -> KktReport {
    let x = &solution.x;
    let n = problem.num_vars();
    let mut rep = KktReport::default();

    let mut grad = &problem.hessian * x + &problem.linear_cost;
    if !problem.eq_rhs.is_empty() {
        grad += problem.eq_matrix.transpose() * &solution.eq_duals;
    }
    if !problem.ineq_rhs.is_empty() {
        grad += problem.ineq_matrix.transpose() * &solution.ineq_duals;
    }
    grad += &solution.bound_duals;
    rep.stationarity = grad.amax();

    if !problem.eq_rhs.is_empty() {
        let r = &problem.eq_matrix * x - &problem.eq_rhs;
        rep.primal = rep.primal.max(r.amax());
    }
    if !problem.ineq_rhs.is_empty() {
        let slack = &problem.ineq_rhs - &problem.ineq_matrix * x;
        for (i, &s) in slack.iter().enumerate() {
            let z = solution.ineq_duals[i];
            rep.primal = rep.primal.max(-s);
            rep.dual = rep.dual.max(-z);
            rep.complementarity = rep.complementarity.max((z * s).abs());
        }
    }
    for i in 0..n {
        let (l, u, xi, d) = (problem.lower[i], problem.upper[i], x[i], solution.bound_duals[i]);
        rep.primal = rep.primal.max(l - xi).max(xi - u);
        if d > 0.0 {
            if u.is_finite() {
                rep.complementarity = rep.complementarity.max(d * (u - xi).abs());
            } else {
                rep.dual = rep.dual.max(d);
            }
        } else if d < 0.0 {
            if l.is_finite() {
                rep.complementarity = rep.complementarity.max(-d * (xi - l).abs());
            } else {
                rep.dual = rep.dual.max(-d);
            }
        }
    }
    rep
}

/// Maximum of the [`KktReport`] components.
pub fn kkt_residual(problem: &QpProblem, solution: &QpSolution) -> f64 {
    kkt_report(problem, solution).max()
}
