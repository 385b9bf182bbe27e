//! Interior point core, active-set polish and elastic phase one.

use nalgebra::{DMatrix, DVector};

use super::kkt::kkt_report;
use super::problem::{
    ConstraintRef, InfeasibilityCertificate, QpProblem, QpSolution, QpStatus, SolverSettings,
};

/// Stopping tolerance of the interior iterations; polishing takes it from there.
const IPM_TOL: f64 = 1e-10;
const REGULARIZATION: f64 = 1e-10;
const DEPENDENCE_TOL: f64 = 1e-9;
const DIVERGENCE: f64 = 1e13;
const STALL_WINDOW: usize = 30;

#[derive(Debug, Clone, Default)]
struct Row {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Row {
    fn single(i: usize, v: f64) -> Self {
        Self {
            idx: vec![i],
            val: vec![v],
        }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    fn axpy(&self, a: f64, y: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            y[i] += a * v;
        }
    }

    fn norm_inf(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    General(usize),
    Upper(usize),
    Lower(usize),
}

/// `min 1/2 x'Qx + c'x  s.t.  eq x = b,  ineq x <= h`, rows stored sparse.
#[derive(Debug, Clone)]
struct Core {
    q: DMatrix<f64>,
    c: Vec<f64>,
    eq: Vec<Row>,
    b: Vec<f64>,
    ineq: Vec<Row>,
    h: Vec<f64>,
}

impl Core {
    fn n(&self) -> usize {
        self.c.len()
    }

    fn q_times(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                let col = self.q.column(j);
                for i in 0..n {
                    out[i] += col[i] * xj;
                }
            }
        }
        out
    }

    fn dual_residual(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let mut r = self.q_times(x);
        for (ri, ci) in r.iter_mut().zip(&self.c) {
            *ri += ci;
        }
        for (row, &yi) in self.eq.iter().zip(y) {
            row.axpy(yi, &mut r);
        }
        for (row, &zi) in self.ineq.iter().zip(z) {
            row.axpy(zi, &mut r);
        }
        r
    }
}

/// The problem after eliminating variables fixed by `lower == upper`.
struct Reduced {
    core: Core,
    free: Vec<usize>,
    fixed: Vec<Option<f64>>,
    origin: Vec<Origin>,
}

impl Reduced {
    fn new(p: &QpProblem) -> Self {
        let n_full = p.num_vars();
        let fixed: Vec<Option<f64>> = (0..n_full)
            .map(|i| (p.lower[i] == p.upper[i]).then_some(p.lower[i]))
            .collect();
        let free: Vec<usize> = (0..n_full).filter(|&i| fixed[i].is_none()).collect();
        let mut pos = vec![usize::MAX; n_full];
        for (k, &i) in free.iter().enumerate() {
            pos[i] = k;
        }
        let x_fixed: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
        let n = free.len();

        let mut q = DMatrix::zeros(n, n);
        let mut c = vec![0.0; n];
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                q[(a, b)] = p.hessian[(i, j)];
            }
            let mut ci = p.linear_cost[i];
            for j in 0..n_full {
                if fixed[j].is_some() {
                    ci += p.hessian[(i, j)] * x_fixed[j];
                }
            }
            c[a] = ci;
        }

        let split = |m: &DMatrix<f64>, rhs: &DVector<f64>| -> (Vec<Row>, Vec<f64>) {
            let mut rows = Vec::with_capacity(m.nrows());
            let mut out = Vec::with_capacity(m.nrows());
            for r in 0..m.nrows() {
                let mut row = Row::default();
                let mut shift = 0.0;
                for j in 0..n_full {
                    let v = m[(r, j)];
                    if v == 0.0 {
                        continue;
                    }
                    match fixed[j] {
                        Some(xj) => shift += v * xj,
                        None => {
                            row.idx.push(pos[j]);
                            row.val.push(v);
                        }
                    }
                }
                rows.push(row);
                out.push(rhs[r] - shift);
            }
            (rows, out)
        };
        let (eq, b) = split(&p.eq_matrix, &p.eq_rhs);
        let (mut ineq, mut h) = split(&p.ineq_matrix, &p.ineq_rhs);
        let mut origin: Vec<Origin> = (0..ineq.len()).map(Origin::General).collect();
        for (k, &i) in free.iter().enumerate() {
            if p.upper[i].is_finite() {
                ineq.push(Row::single(k, 1.0));
                h.push(p.upper[i]);
                origin.push(Origin::Upper(i));
            }
            if p.lower[i].is_finite() {
                ineq.push(Row::single(k, -1.0));
                h.push(-p.lower[i]);
                origin.push(Origin::Lower(i));
            }
        }
        Self {
            core: Core { q, c, eq, b, ineq, h },
            free,
            fixed,
            origin,
        }
    }

    fn expand_x(&self, xr: &[f64]) -> DVector<f64> {
        let mut x = DVector::from_iterator(self.fixed.len(), self.fixed.iter().map(|f| f.unwrap_or(0.0)));
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = xr[k];
        }
        x
    }

    /// Map reduced primal-dual vectors back onto the original problem.
    fn to_solution(&self, p: &QpProblem, it: &Iterate, iterations: usize) -> QpSolution {
        let x = self.expand_x(&it.x);
        let eq_duals = DVector::from_column_slice(&it.y);
        let mut ineq_duals = DVector::zeros(p.ineq_rhs.len());
        let mut bound_duals = DVector::zeros(p.num_vars());
        for (k, o) in self.origin.iter().enumerate() {
            match *o {
                Origin::General(j) => ineq_duals[j] = it.z[k],
                Origin::Upper(i) => bound_duals[i] += it.z[k],
                Origin::Lower(i) => bound_duals[i] -= it.z[k],
            }
        }
        if self.fixed.iter().any(Option::is_some) {
            let mut g = &p.hessian * &x + &p.linear_cost;
            if !p.eq_rhs.is_empty() {
                g += p.eq_matrix.transpose() * &eq_duals;
            }
            if !p.ineq_rhs.is_empty() {
                g += p.ineq_matrix.transpose() * &ineq_duals;
            }
            for (i, f) in self.fixed.iter().enumerate() {
                if f.is_some() {
                    bound_duals[i] = -g[i];
                }
            }
        }
        let mut sol = QpSolution {
            objective: p.objective(&x),
            x,
            eq_duals,
            ineq_duals,
            bound_duals,
            status: QpStatus::IterationLimit,
            kkt_residual: f64::INFINITY,
            iterations,
            infeasibility: None,
        };
        sol.kkt_residual = kkt_report(p, &sol).max();
        sol
    }
}

#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

impl Iterate {
    fn is_finite(&self) -> bool {
        [&self.x, &self.y, &self.z, &self.s]
            .iter()
            .all(|v| v.iter().all(|a| a.is_finite()))
    }
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(rhs);
        let out = match self {
            Factor::Chol(c) => c.solve(&v),
            Factor::Lu(l) => l.solve(&v).unwrap_or_else(|| DVector::zeros(rhs.len())),
        };
        out.as_slice().to_vec()
    }
}

/// Regularized reduced Newton system `[Q + G'WG + dI, A'; A, -dI]`.
struct NewtonSystem<'a> {
    core: &'a Core,
    w: Vec<f64>,
    factor: Factor,
}

impl<'a> NewtonSystem<'a> {
    fn new(core: &'a Core, w: Vec<f64>) -> Option<Self> {
        let n = core.n();
        let p = core.eq.len();
        let mut m = core.q.clone();
        for (row, &wi) in core.ineq.iter().zip(&w) {
            for (a, &ia) in row.idx.iter().enumerate() {
                let va = wi * row.val[a];
                for (b, &ib) in row.idx.iter().enumerate() {
                    m[(ia, ib)] += va * row.val[b];
                }
            }
        }
        for i in 0..n {
            m[(i, i)] += REGULARIZATION;
        }
        let factor = if p == 0 {
            match m.clone().cholesky() {
                Some(c) => Factor::Chol(c),
                None => Factor::Lu(m.lu()),
            }
        } else {
            let mut k = DMatrix::zeros(n + p, n + p);
            k.view_mut((0, 0), (n, n)).copy_from(&m);
            for (r, row) in core.eq.iter().enumerate() {
                for (&j, &v) in row.idx.iter().zip(&row.val) {
                    k[(n + r, j)] = v;
                    k[(j, n + r)] = v;
                }
                k[(n + r, n + r)] = -REGULARIZATION;
            }
            Factor::Lu(k.lu())
        };
        Some(Self { core, w, factor })
    }

    /// Unregularized operator, used for iterative refinement.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.core.n();
        let (x, y) = v.split_at(n);
        let mut out = self.core.q_times(x);
        out.resize(n + y.len(), 0.0);
        for (row, &wi) in self.core.ineq.iter().zip(&self.w) {
            let gx = row.dot(x);
            row.axpy(wi * gx, &mut out[..n]);
        }
        for (r, row) in self.core.eq.iter().enumerate() {
            row.axpy(y[r], &mut out[..n]);
            out[n + r] = row.dot(x);
        }
        out
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut sol = self.factor.solve(rhs);
        for _ in 0..2 {
            let ax = self.apply(&sol);
            let res: Vec<f64> = rhs.iter().zip(&ax).map(|(r, a)| r - a).collect();
            let corr = self.factor.solve(&res);
            for (s, c) in sol.iter_mut().zip(corr) {
                *s += c;
            }
        }
        sol
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

struct IpmOutcome {
    best: Iterate,
    iterations: usize,
}

fn residual_norms(core: &Core, it: &Iterate) -> (f64, f64, f64) {
    let rd = norm_inf(&core.dual_residual(&it.x, &it.y, &it.z));
    let mut rp: f64 = 0.0;
    for (row, &bi) in core.eq.iter().zip(&core.b) {
        rp = rp.max((row.dot(&it.x) - bi).abs());
    }
    for ((row, &hi), &si) in core.ineq.iter().zip(&core.h).zip(&it.s) {
        rp = rp.max((row.dot(&it.x) + si - hi).abs());
    }
    let m = core.ineq.len();
    let mu = if m == 0 {
        0.0
    } else {
        it.s.iter().zip(&it.z).map(|(s, z)| s * z).sum::<f64>() / m as f64
    };
    (rp, rd, mu)
}

fn initial_point(core: &Core) -> Iterate {
    let n = core.n();
    let p = core.eq.len();
    let m = core.ineq.len();
    let sys = NewtonSystem::new(core, vec![1.0; m]).expect("factorization");
    let mut rhs = vec![0.0; n + p];
    for i in 0..n {
        rhs[i] = -core.c[i];
    }
    for (row, &hi) in core.ineq.iter().zip(&core.h) {
        row.axpy(hi, &mut rhs[..n]);
    }
    rhs[n..].copy_from_slice(&core.b);
    let sol = sys.solve(&rhs);
    let x = sol[..n].to_vec();
    let y = sol[n..].to_vec();

    // Shift the least-squares slacks and multipliers into the interior, then
    // balance them so neither side dominates the complementarity products.
    let st: Vec<f64> = core.ineq.iter().zip(&core.h).map(|(r, &h)| h - r.dot(&x)).collect();
    if m == 0 {
        return Iterate { x, y, z: Vec::new(), s: Vec::new() };
    }
    let zt: Vec<f64> = st.iter().map(|v| -v).collect();
    let lift = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let d = (-1.5 * lo).max(0.0);
        v.iter().map(|x| x + d).collect()
    };
    let (mut s, mut z) = (lift(&st), lift(&zt));
    let sz: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
    let (sum_s, sum_z): (f64, f64) = (s.iter().sum(), z.iter().sum());
    let (ds, dz) = if sz > 0.0 && sum_s > 0.0 && sum_z > 0.0 {
        (0.5 * sz / sum_z, 0.5 * sz / sum_s)
    } else {
        (0.0, 0.0)
    };
    // Keep a floor so a degenerate start never sits on the boundary.
    let floor = 1e-2 * (1.0 + norm_inf(&st));
    for v in s.iter_mut() {
        *v = (*v + ds).max(floor);
    }
    let floor = 1e-2 * (1.0 + norm_inf(&zt));
    for v in z.iter_mut() {
        *v = (*v + dz).max(floor);
    }
    Iterate { x, y, z, s }
}

fn interior_point(core: &Core, max_iterations: usize) -> IpmOutcome {
    let n = core.n();
    let p = core.eq.len();
    let m = core.ineq.len();
    let scale_p = 1.0 + norm_inf(&core.b).max(norm_inf(&core.h));
    let scale_d = 1.0 + norm_inf(&core.c);

    let mut it = initial_point(core);
    let mut best = it.clone();
    let mut best_merit = f64::INFINITY;
    let mut since_best = 0;
    let mut iterations = 0;

    loop {
        if !it.is_finite() {
            break;
        }
        let (rp, rd, mu) = residual_norms(core, &it);
        let merit = (rp / scale_p).max(rd / scale_d).max(mu);
        if merit < best_merit {
            if merit < 0.5 * best_merit {
                since_best = 0;
            }
            best_merit = merit;
            best = it.clone();
        }
        if rp <= IPM_TOL * scale_p && rd <= IPM_TOL * scale_d && mu <= IPM_TOL {
            return IpmOutcome {
                best: it,
                iterations,
            };
        }
        since_best += 1;
        if iterations >= max_iterations
            || since_best > STALL_WINDOW
            || norm_inf(&it.z) > DIVERGENCE
            || norm_inf(&it.x) > DIVERGENCE
        {
            break;
        }
        iterations += 1;

        let rdv = core.dual_residual(&it.x, &it.y, &it.z);
        let rpe: Vec<f64> = core.eq.iter().zip(&core.b).map(|(r, &b)| r.dot(&it.x) - b).collect();
        let rpi: Vec<f64> = core
            .ineq
            .iter()
            .zip(&core.h)
            .zip(&it.s)
            .map(|((r, &h), &s)| r.dot(&it.x) + s - h)
            .collect();
        let w: Vec<f64> = it.z.iter().zip(&it.s).map(|(z, s)| z / s).collect();
        let Some(sys) = NewtonSystem::new(core, w) else {
            break;
        };

        let direction = |rsz: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // dz = W G dx + (z ri - rsz) / s
            let corr: Vec<f64> = (0..m)
                .map(|i| (it.z[i] * rpi[i] - rsz[i]) / it.s[i])
                .collect();
            let mut rhs = vec![0.0; n + p];
            for i in 0..n {
                rhs[i] = -rdv[i];
            }
            for (row, &ci) in core.ineq.iter().zip(&corr) {
                row.axpy(-ci, &mut rhs[..n]);
            }
            for i in 0..p {
                rhs[n + i] = -rpe[i];
            }
            let sol = sys.solve(&rhs);
            let dx = sol[..n].to_vec();
            let dy = sol[n..].to_vec();
            let gdx: Vec<f64> = core.ineq.iter().map(|r| r.dot(&dx)).collect();
            let ds: Vec<f64> = (0..m).map(|i| -rpi[i] - gdx[i]).collect();
            let dz: Vec<f64> = (0..m).map(|i| sys.w[i] * gdx[i] + corr[i]).collect();
            (dx, dy, dz, ds)
        };

        let sz: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| s * z).collect();
        let (_, _, dz_a, ds_a) = direction(&sz);
        let alpha_a = max_step(&it.s, &ds_a).min(max_step(&it.z, &dz_a)).min(1.0);
        let sigma = if m == 0 {
            0.0
        } else {
            let mu_a = (0..m)
                .map(|i| (it.s[i] + alpha_a * ds_a[i]) * (it.z[i] + alpha_a * dz_a[i]))
                .sum::<f64>()
                / m as f64;
            (mu_a / mu.max(f64::MIN_POSITIVE)).clamp(0.0, 1.0).powi(3)
        };
        let rsz: Vec<f64> = (0..m)
            .map(|i| sz[i] + ds_a[i] * dz_a[i] - sigma * mu)
            .collect();
        let (dx, dy, dz, ds) = direction(&rsz);
        let alpha = (0.99 * max_step(&it.s, &ds).min(max_step(&it.z, &dz))).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            break;
        }
        for i in 0..n {
            it.x[i] += alpha * dx[i];
        }
        for i in 0..p {
            it.y[i] += alpha * dy[i];
        }
        for i in 0..m {
            it.z[i] = (it.z[i] + alpha * dz[i]).max(f64::MIN_POSITIVE);
            it.s[i] = (it.s[i] + alpha * ds[i]).max(f64::MIN_POSITIVE);
        }
    }
    IpmOutcome { best, iterations }
}

/// Minimizer of the objective with the working-set rows held as equalities.
/// Working single-variable rows pin their variable and are eliminated.
/// Returns `(x, y, z)` with `z` zero outside the working set.
fn solve_eqp(red: &Reduced, working: &[bool]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let core = &red.core;
    let n = core.n();
    let p = core.eq.len();
    let m = core.ineq.len();

    let mut pinned: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut general = Vec::new();
    for i in (0..m).filter(|&i| working[i]) {
        let row = &core.ineq[i];
        let is_bound = !matches!(red.origin[i], Origin::General(_));
        if is_bound && pinned[row.idx[0]].is_none() {
            pinned[row.idx[0]] = Some((i, core.h[i] / row.val[0]));
        } else {
            general.push(i);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&j| pinned[j].is_none()).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &j) in free.iter().enumerate() {
        pos[j] = k;
    }
    // Rows that are linearly dependent on earlier ones (over the free
    // variables) make the KKT matrix singular; leave them out with a zero
    // multiplier. Equalities go first so they are kept preferentially.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut independent = |row: &Row| -> bool {
        let mut v = vec![0.0; free.len()];
        for (&j, &val) in row.idx.iter().zip(&row.val) {
            if pinned[j].is_none() {
                v[pos[j]] = val;
            }
        }
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = b.iter().zip(&v).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= d * bi;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= DEPENDENCE_TOL * norm0 {
            return false;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
        true
    };
    let eq_rows: Vec<usize> = (0..p).filter(|&r| independent(&core.eq[r])).collect();
    let general: Vec<usize> = general.into_iter().filter(|&i| independent(&core.ineq[i])).collect();
    let p_used = eq_rows.len();
    let mut x_pin = vec![0.0; n];
    for j in 0..n {
        if let Some((_, v)) = pinned[j] {
            x_pin[j] = v;
        }
    }
    let nf = free.len();
    let dim = nf + p_used + general.len();

    let mut k0 = DMatrix::zeros(dim, dim);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            k0[(a, b)] = core.q[(i, j)];
        }
    }
    let mut rhs = vec![0.0; dim];
    let q_pin = core.q_times(&x_pin);
    for (a, &i) in free.iter().enumerate() {
        rhs[a] = -core.c[i] - q_pin[i];
    }
    let fill = |rowid: usize, row: &Row, rhs_val: f64, k0: &mut DMatrix<f64>, rhs: &mut [f64]| {
        let mut shift = 0.0;
        for (&j, &v) in row.idx.iter().zip(&row.val) {
            if pinned[j].is_some() {
                shift += v * x_pin[j];
            } else {
                k0[(rowid, pos[j])] = v;
                k0[(pos[j], rowid)] = v;
            }
        }
        rhs[rowid] = rhs_val - shift;
    };
    for (a, &r) in eq_rows.iter().enumerate() {
        fill(nf + a, &core.eq[r], core.b[r], &mut k0, &mut rhs);
    }
    for (a, &i) in general.iter().enumerate() {
        fill(nf + p_used + a, &core.ineq[i], core.h[i], &mut k0, &mut rhs);
    }

    let sol = if dim == 0 {
        DVector::zeros(0)
    } else {
        // Solve the symmetrically equilibrated system D K D (D^-1 v) = D r,
        // so the row residuals that the refinement sees are comparable.
        let d = equilibrate(&k0);
        let ks = DMatrix::from_fn(dim, dim, |i, j| d[i] * k0[(i, j)] * d[j]);
        let mut kd = ks.clone();
        for i in 0..dim {
            kd[(i, i)] += if i < nf { REGULARIZATION } else { -REGULARIZATION };
        }
        let lu = kd.lu();
        let rhs_s = DVector::from_fn(dim, |i, _| d[i] * rhs[i]);
        let mut v = lu.solve(&rhs_s)?;
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            let res = &rhs_s - &ks * &v;
            let rn = res.amax();
            if rn >= last || rn < 1e-16 {
                break;
            }
            last = rn;
            v += lu.solve(&res)?;
        }
        DVector::from_fn(dim, |i, _| d[i] * v[i])
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let mut x = x_pin;
    for (a, &j) in free.iter().enumerate() {
        x[j] = sol[a];
    }
    let mut y = vec![0.0; p];
    for (a, &r) in eq_rows.iter().enumerate() {
        y[r] = sol[nf + a];
    }
    let mut z = vec![0.0; m];
    for (a, &i) in general.iter().enumerate() {
        z[i] = sol[nf + p_used + a];
    }
    // multipliers of the pinning rows from stationarity
    let g = core.dual_residual(&x, &y, &z);
    for j in 0..n {
        if let Some((i, _)) = pinned[j] {
            z[i] = -g[j] / core.ineq[i].val[0];
        }
    }
    Some((x, y, z))
}

/// Ruiz scaling: diagonal `d` such that `diag(d) K diag(d)` has rows of
/// unit infinity norm (approximately). Powers of two keep it exact.
fn equilibrate(k: &DMatrix<f64>) -> Vec<f64> {
    let n = k.nrows();
    let mut d = vec![1.0; n];
    for _ in 0..10 {
        let mut done = true;
        let r: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| (d[i] * k[(i, j)] * d[j]).abs()).fold(0.0, f64::max))
            .collect();
        for i in 0..n {
            if r[i] > 0.0 {
                let f = (1.0 / r[i].sqrt()).log2().round().exp2();
                if f != 1.0 {
                    done = false;
                }
                d[i] *= f;
            }
        }
        if done {
            break;
        }
    }
    d
}

/// Turn an approximate interior solution into an exact vertex of the KKT
/// system: guess the active set from `z > s`, and if the guess is not
/// consistent, run primal active-set iterations from the interior point.
fn polish(red: &Reduced, start: &Iterate, feas_tol: f64) -> Option<Iterate> {
    let core = &red.core;
    let m = core.ineq.len();
    let n = core.n();
    let dual_tol = 1e-12 * (1.0 + norm_inf(&start.z));
    let row_tol = |i: usize| 1e-2 * feas_tol * (1.0 + core.ineq[i].norm_inf());
    let slack_of = |x: &[f64]| -> Vec<f64> { (0..m).map(|i| core.h[i] - core.ineq[i].dot(x)).collect() };
    let finish = |x: Vec<f64>, y: Vec<f64>, z: Vec<f64>| {
        let s = slack_of(&x).into_iter().map(|v| v.max(0.0)).collect();
        let z = z.into_iter().map(|v| v.max(0.0)).collect();
        Iterate { x, y, z, s }
    };

    let mut working: Vec<bool> = (0..m).map(|i| start.z[i] > start.s[i]).collect();
    let (x, y, z) = solve_eqp(red, &working)?;
    let slack = slack_of(&x);
    if (0..m).all(|i| slack[i] >= -row_tol(i) && (!working[i] || z[i] >= -dual_tol)) {
        return Some(finish(x, y, z));
    }

    // Primal active set. The interior point is feasible up to its residual, so
    // keep only working rows that are (nearly) tight there.
    let mut x = start.x.clone();
    let slack = slack_of(&x);
    for i in 0..m {
        working[i] = working[i] && slack[i] <= 1e-6 * (1.0 + core.ineq[i].norm_inf());
    }
    for _ in 0..4 * (n + m) + 50 {
        let (xs, y, z) = solve_eqp(red, &working)?;
        let step: Vec<f64> = xs.iter().zip(&x).map(|(a, b)| a - b).collect();
        let slack = slack_of(&x);
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in (0..m).filter(|&i| !working[i]) {
            let ap = core.ineq[i].dot(&step);
            if ap > 0.0 {
                let ratio = slack[i].max(0.0) / ap;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        match blocking {
            Some(i) => {
                for (xj, pj) in x.iter_mut().zip(&step) {
                    *xj += alpha * pj;
                }
                working[i] = true;
            }
            None => {
                x = xs;
                let worst = (0..m)
                    .filter(|&i| working[i] && z[i] < -dual_tol)
                    .min_by(|&a, &b| z[a].total_cmp(&z[b]));
                match worst {
                    Some(i) => working[i] = false,
                    None => return Some(finish(x, y, z)),
                }
            }
        }
    }
    None
}

/// Elastic program `min sum(t)` with every general row relaxed by `t >= 0`;
/// variable bounds stay hard.
fn phase_one(red: &Reduced, max_iterations: usize) -> (Iterate, usize) {
    let core = &red.core;
    let n = core.n();
    let p = core.eq.len();
    let general: Vec<usize> = (0..core.ineq.len())
        .filter(|&i| matches!(red.origin[i], Origin::General(_)))
        .collect();
    let ng = general.len();
    let nt = ng + 2 * p;
    let nv = n + nt;

    let mut c = vec![0.0; nv];
    for ci in c.iter_mut().skip(n) {
        *ci = 1.0;
    }
    let mut ineq = Vec::new();
    let mut h = Vec::new();
    for (k, &i) in general.iter().enumerate() {
        let mut row = core.ineq[i].clone();
        row.idx.push(n + k);
        row.val.push(-1.0);
        ineq.push(row);
        h.push(core.h[i]);
    }
    for (i, row) in core.ineq.iter().enumerate() {
        if !matches!(red.origin[i], Origin::General(_)) {
            ineq.push(row.clone());
            h.push(core.h[i]);
        }
    }
    for k in 0..nt {
        ineq.push(Row::single(n + k, -1.0));
        h.push(0.0);
    }
    let mut eq = Vec::new();
    for (r, row) in core.eq.iter().enumerate() {
        let mut row = row.clone();
        row.idx.push(n + ng + 2 * r);
        row.val.push(-1.0);
        row.idx.push(n + ng + 2 * r + 1);
        row.val.push(1.0);
        eq.push(row);
    }
    let lp = Core {
        q: DMatrix::zeros(nv, nv),
        c,
        eq,
        b: core.b.clone(),
        ineq,
        h,
    };
    let out = interior_point(&lp, max_iterations);
    let mut it = out.best;
    // keep only the original variables and the multipliers of the relaxed rows
    let z_general: Vec<f64> = it.z[..ng].to_vec();
    let mut z = vec![0.0; core.ineq.len()];
    for (k, &i) in general.iter().enumerate() {
        z[i] = z_general[k];
    }
    it.x.truncate(n);
    it.z = z;
    it.s = vec![0.0; core.ineq.len()];
    (it, out.iterations)
}

fn certificate(p: &QpProblem, red: &Reduced, it: &Iterate) -> InfeasibilityCertificate {
    let x = red.expand_x(&it.x);
    let mut most = ConstraintRef::Inequality(0);
    let mut max_violation = f64::NEG_INFINITY;
    let mut total = 0.0;
    let mut consider = |c: ConstraintRef, v: f64| {
        total += v.max(0.0);
        if v > max_violation {
            max_violation = v;
            most = c;
        }
    };
    if !p.eq_rhs.is_empty() {
        let r = &p.eq_matrix * &x - &p.eq_rhs;
        for (i, v) in r.iter().enumerate() {
            consider(ConstraintRef::Equality(i), v.abs());
        }
    }
    if !p.ineq_rhs.is_empty() {
        let r = &p.ineq_matrix * &x - &p.ineq_rhs;
        for (i, v) in r.iter().enumerate() {
            consider(ConstraintRef::Inequality(i), *v);
        }
    }
    for i in 0..p.num_vars() {
        consider(ConstraintRef::Lower(i), p.lower[i] - x[i]);
        consider(ConstraintRef::Upper(i), x[i] - p.upper[i]);
    }
    let mut farkas_ineq = DVector::zeros(p.ineq_rhs.len());
    for (k, o) in red.origin.iter().enumerate() {
        if let Origin::General(j) = *o {
            farkas_ineq[j] = it.z[k];
        }
    }
    InfeasibilityCertificate {
        least_infeasible_point: x,
        most_violated: most,
        max_violation: max_violation.max(0.0),
        total_violation: total,
        farkas_eq: DVector::from_column_slice(&it.y),
        farkas_ineq,
    }
}

pub(super) fn solve(p: &QpProblem, settings: &SolverSettings) -> QpSolution {
    let red = Reduced::new(p);
    let out = interior_point(&red.core, settings.max_iterations);
    let mut iterations = out.iterations;

    let mut candidates = Vec::new();
    let feas_tol = settings.feasibility_tol;
    if let Some(polished) = polish(&red, &out.best, feas_tol) {
        candidates.push(red.to_solution(p, &polished, iterations));
    }
    candidates.push(red.to_solution(p, &out.best, iterations));
    let certified = |s: &QpSolution| {
        let rep = kkt_report(p, s);
        rep.max() <= settings.kkt_tol && rep.primal <= feas_tol
    };
    if let Some(mut sol) = candidates
        .iter()
        .filter(|s| certified(s))
        .min_by(|a, b| a.kkt_residual.total_cmp(&b.kkt_residual))
        .cloned()
    {
        sol.status = QpStatus::Optimal;
        return sol;
    }

    let (it, ph_iters) = phase_one(&red, settings.max_iterations);
    iterations += ph_iters;
    let cert = certificate(p, &red, &it);
    if cert.max_violation > feas_tol {
        let mut sol = red.to_solution(p, &it, iterations);
        sol.status = QpStatus::Infeasible;
        sol.infeasibility = Some(cert);
        return sol;
    }
    let mut sol = candidates
        .into_iter()
        .min_by(|a, b| a.kkt_residual.total_cmp(&b.kkt_residual))
        .expect("at least one candidate");
    sol.iterations = iterations;
    sol.status = QpStatus::IterationLimit;
    sol
}
