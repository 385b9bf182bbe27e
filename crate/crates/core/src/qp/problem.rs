use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerances and limits of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Absolute primal feasibility required of an optimal point.
    pub feasibility_tol: f64,
    /// Bound on the certified KKT residual of an optimal point.
    pub kkt_tol: f64,
    /// Cap on interior point iterations (phase one counted separately).
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            kkt_tol: 1e-6,
            max_iterations: 10_000,
        }
    }
}

/// A dense convex QP. Infinite entries in `lower`/`upper` mean "no bound".
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear_cost: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with `n = linear_cost.len()` free variables.
    pub fn new(hessian: DMatrix<f64>, linear_cost: DVector<f64>) -> Self {
        let n = linear_cost.len();
        Self {
            hessian,
            linear_cost,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear_cost.len()
    }

    /// `1/2 x'Qx + c'x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear_cost.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::Dimension(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        dim("hessian", self.hessian.shape(), (n, n))?;
        dim("eq_matrix", self.eq_matrix.shape(), (self.eq_rhs.len(), n))?;
        dim("ineq_matrix", self.ineq_matrix.shape(), (self.ineq_rhs.len(), n))?;
        dim("lower", (self.lower.len(), 1), (n, 1))?;
        dim("upper", (self.upper.len(), 1), (n, 1))?;

        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.hessian.as_slice())
            || !finite(self.linear_cost.as_slice())
            || !finite(self.eq_matrix.as_slice())
            || !finite(self.eq_rhs.as_slice())
            || !finite(self.ineq_matrix.as_slice())
            || !finite(self.ineq_rhs.as_slice())
        {
            return Err(Error::Domain("QP data must be finite".into()));
        }
        for i in 0..n {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::Domain(format!("invalid bounds [{l}, {u}] on variable {i}")));
            }
        }

        let scale = self.hessian.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::Domain(format!("hessian is not symmetric at ({i}, {j})")));
                }
            }
        }
        if n > 0 {
            let sym = (&self.hessian + self.hessian.transpose()) * 0.5;
            let min_eig = sym.symmetric_eigenvalues().min();
            if min_eig < -1e-9 * scale {
                return Err(Error::Domain(format!(
                    "hessian is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Identifies one constraint of a [`QpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
    Lower(usize),
    Upper(usize),
}

/// Evidence that a problem has no feasible point.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    /// Minimizer of the total constraint violation.
    pub least_infeasible_point: DVector<f64>,
    /// Constraint violated the most at that point.
    pub most_violated: ConstraintRef,
    pub max_violation: f64,
    /// Sum of violations at the least infeasible point.
    pub total_violation: f64,
    /// Farkas multipliers `(y, z)` with `z >= 0`, `A_eq'y + A_in'z + d = 0` for
    /// bound multipliers `d`, and a strictly negative dual objective.
    pub farkas_eq: DVector<f64>,
    pub farkas_ineq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    /// Nonnegative multipliers of `A_in x <= b_in`.
    pub ineq_duals: DVector<f64>,
    /// `upper multiplier - lower multiplier` per variable, so that
    /// `Qx + c + A_eq'y + A_in'z + bound_duals = 0` at optimality.
    pub bound_duals: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub infeasibility: Option<InfeasibilityCertificate>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}
