//! Small dense convex QCQP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    c' x
//!     subject to  A x = b
//!                 1/2 x' P_i x + q_i' x + r_i <= 0     (P_i PSD or absent)
//! ```
//!
//! Equalities are eliminated through an SVD null-space parametrisation, a
//! phase-I problem finds a strictly feasible point, and a primal-dual
//! interior-point method (surrogate duality gap, backtracking on the residual
//! norm) drives the gap below the tolerance. Sizes here are tens of
//! variables and a few hundred constraints, so everything is dense.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Convex constraint `1/2 x'Px + q'x + r <= 0`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub quad: Option<DMatrix<f64>>,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl Constraint {
    /// `a' x <= b`
    pub fn linear(a: DVector<f64>, b: f64) -> Self {
        Constraint { quad: None, lin: a, constant: -b }
    }

    /// `||x[offset..offset+len] - center||^2 <= radius^2` inside an `n`-vector.
    pub fn ball(n: usize, offset: usize, center: &DVector<f64>, radius: f64) -> Self {
        let len = center.len();
        let mut quad = DMatrix::zeros(n, n);
        let mut lin = DVector::zeros(n);
        for i in 0..len {
            quad[(offset + i, offset + i)] = 2.0;
            lin[offset + i] = -2.0 * center[i];
        }
        Constraint { quad: Some(quad), lin, constant: center.norm_squared() - radius * radius }
    }

    #[inline]
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.lin.dot(x) + self.constant;
        if let Some(p) = &self.quad {
            v += 0.5 * x.dot(&(p * x));
        }
        v
    }

    #[inline]
    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.quad {
            Some(p) => p * x + &self.lin,
            None => self.lin.clone(),
        }
    }

    /// Restriction to `x = x0 + N z`.
    fn restrict(&self, x0: &DVector<f64>, basis: &DMatrix<f64>) -> Constraint {
        let constant = self.eval(x0);
        let g = self.grad(x0);
        let lin = basis.tr_mul(&g);
        let quad = self.quad.as_ref().map(|p| basis.tr_mul(&(p * basis)));
        Constraint { quad, lin, constant }
    }
}

/// A linear objective over linear equalities and convex quadratic inequalities.
#[derive(Debug, Clone)]
pub struct Program {
    pub num_vars: usize,
    pub objective: DVector<f64>,
    pub equalities: Vec<(DVector<f64>, f64)>,
    pub inequalities: Vec<Constraint>,
}

impl Program {
    /// `minimize c'x` with no constraints yet.
    pub fn minimize(objective: DVector<f64>) -> Self {
        Program { num_vars: objective.len(), objective, equalities: Vec::new(), inequalities: Vec::new() }
    }

    pub fn eq(&mut self, a: DVector<f64>, b: f64) {
        debug_assert_eq!(a.len(), self.num_vars);
        self.equalities.push((a, b));
    }

    pub fn le(&mut self, a: DVector<f64>, b: f64) {
        debug_assert_eq!(a.len(), self.num_vars);
        self.inequalities.push(Constraint::linear(a, b));
    }

    pub fn push(&mut self, c: Constraint) {
        self.inequalities.push(c);
    }

    /// Largest violation of any constraint at `x` (equalities in absolute value).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = self.equalities.iter().map(|(a, b)| (a.dot(x) - b).abs());
        let ineq = self.inequalities.iter().map(|c| c.eval(x).max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Target surrogate duality gap.
    pub gap_tol: f64,
    /// Dual residual tolerance.
    pub feas_tol: f64,
    /// Newton iterations allowed per phase.
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    /// Newton iterations over both phases.
    pub iterations: usize,
    pub gap: f64,
    pub objective: f64,
}

pub fn solve(program: &Program, settings: &SolverSettings) -> Solution {
    let n = program.num_vars;
    let failure = |x: DVector<f64>, status, iterations, gap| Solution {
        objective: program.objective.dot(&x),
        x,
        status,
        iterations,
        gap,
    };

    let (x0, basis) = match eliminate_equalities(n, &program.equalities) {
        Some(v) => v,
        None => return failure(DVector::zeros(n), SolveStatus::Infeasible, 0, f64::NAN),
    };
    let k = basis.ncols();
    let cons: Vec<Constraint> = program.inequalities.iter().map(|c| c.restrict(&x0, &basis)).collect();
    let cost = basis.tr_mul(&program.objective);

    if k == 0 {
        let z = DVector::zeros(0);
        let status = if cons.iter().all(|c| c.eval(&z) <= 0.0) { SolveStatus::Optimal } else { SolveStatus::Infeasible };
        return failure(x0, status, 0, 0.0);
    }
    if cons.is_empty() {
        let status = if cost.norm() <= settings.feas_tol { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
        return failure(x0, status, 0, 0.0);
    }

    // phase I: minimize s s.t. f_i(z) <= s, s >= -1
    let mut z = DVector::zeros(k);
    let mut iterations = 0;
    let worst = cons.iter().map(|c| c.eval(&z)).fold(f64::NEG_INFINITY, f64::max);
    if worst >= 0.0 {
        let mut aug: Vec<Constraint> = cons
            .iter()
            .map(|c| {
                let lin = c.lin.clone().insert_row(k, -1.0);
                let quad = c.quad.as_ref().map(|p| p.clone().insert_row(k, 0.0).insert_column(k, 0.0));
                Constraint { quad, lin, constant: c.constant }
            })
            .collect();
        let mut floor = DVector::zeros(k + 1);
        floor[k] = -1.0;
        aug.push(Constraint { quad: None, lin: floor, constant: -1.0 });
        let mut c1 = DVector::zeros(k + 1);
        c1[k] = 1.0;
        let mut y0 = DVector::zeros(k + 1);
        y0[k] = worst + 1.0;
        let strictly_feasible = |y: &DVector<f64>| {
            let zz = y.rows(0, k).into_owned();
            y[k] < -1e-7 && cons.iter().all(|c| c.eval(&zz) < 0.0)
        };
        let out = primal_dual(&c1, &aug, y0, settings, strictly_feasible);
        iterations += out.iterations;
        let zz = out.x.rows(0, k).into_owned();
        if !cons.iter().all(|c| c.eval(&zz) < 0.0) {
            let status = if out.converged { SolveStatus::Infeasible } else { SolveStatus::NumericalFailure };
            return failure(&x0 + &basis * zz, status, iterations, out.gap);
        }
        z = zz;
    }

    let out = primal_dual(&cost, &cons, z, settings, |_| false);
    iterations += out.iterations;
    let x = &x0 + &basis * &out.x;
    let status = if out.converged { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
    Solution { objective: program.objective.dot(&x), x, status, iterations, gap: out.gap }
}

/// Particular solution and null-space basis of `A x = b`; `None` if inconsistent.
fn eliminate_equalities(n: usize, eqs: &[(DVector<f64>, f64)]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    if eqs.is_empty() {
        return Some((DVector::zeros(n), DMatrix::identity(n, n)));
    }
    let m = eqs.len();
    let rows = m.max(n);
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for (i, (row, rhs)) in eqs.iter().enumerate() {
        a.set_row(i, &row.transpose());
        b[i] = *rhs;
    }
    let svd = a.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let u = svd.u.as_ref().expect("u requested");
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(1.0) * rows as f64;
    let mut x0 = DVector::zeros(n);
    let mut null = Vec::new();
    for (j, &sv) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(j).transpose();
        if sv > tol {
            x0 += v * (u.column(j).dot(&b) / sv);
        } else {
            null.push(v);
        }
    }
    let resid = (&a * &x0 - &b).amax();
    if resid > 1e-9 * (1.0 + b.amax()) {
        return None;
    }
    let basis = if null.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&null) };
    Some((x0, basis))
}

struct PdOutcome {
    x: DVector<f64>,
    iterations: usize,
    gap: f64,
    converged: bool,
}

const MU: f64 = 10.0;
const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;

fn primal_dual(
    c: &DVector<f64>,
    cons: &[Constraint],
    x0: DVector<f64>,
    settings: &SolverSettings,
    early_stop: impl Fn(&DVector<f64>) -> bool,
) -> PdOutcome {
    let m = cons.len();
    let n = x0.len();
    let mut x = x0;
    let mut f: Vec<f64> = cons.iter().map(|k| k.eval(&x)).collect();
    let mut lam: Vec<f64> = f.iter().map(|&v| (1.0 / -v).clamp(1e-8, 1e8)).collect();
    let mut gap = f64::INFINITY;

    let residual = |x: &DVector<f64>, lam: &[f64], f: &[f64], t: f64| -> f64 {
        let mut rd = c.clone();
        for (k, &l) in cons.iter().zip(lam) {
            rd.axpy(l, &k.grad(x), 1.0);
        }
        let rc: f64 = lam.iter().zip(f).map(|(&l, &fi)| (-l * fi - 1.0 / t).powi(2)).sum();
        (rd.norm_squared() + rc).sqrt()
    };

    for it in 0..settings.max_iter {
        if early_stop(&x) {
            return PdOutcome { x, iterations: it, gap, converged: true };
        }
        let grads: Vec<DVector<f64>> = cons.iter().map(|k| k.grad(&x)).collect();
        gap = -f.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>();
        let mut r_dual = c.clone();
        for (g, &l) in grads.iter().zip(&lam) {
            r_dual.axpy(l, g, 1.0);
        }
        if gap <= settings.gap_tol && r_dual.norm() <= settings.feas_tol {
            return PdOutcome { x, iterations: it, gap, converged: true };
        }
        let t = MU * m as f64 / gap;

        let mut hess = DMatrix::zeros(n, n);
        let mut rhs = -c.clone();
        for ((k, g), (&l, &fi)) in cons.iter().zip(&grads).zip(lam.iter().zip(&f)) {
            if let Some(p) = &k.quad {
                hess += p * l;
            }
            hess.ger(l / -fi, g, g, 1.0);
            rhs.axpy(-1.0 / (t * -fi), g, 1.0);
        }
        let Some(dx) = regularized_solve(hess, &rhs) else {
            return PdOutcome { x, iterations: it, gap, converged: false };
        };
        let dlam: Vec<f64> = grads
            .iter()
            .zip(lam.iter().zip(&f))
            .map(|(g, (&l, &fi))| (-l * fi - 1.0 / t - l * g.dot(&dx)) / fi)
            .collect();

        let mut step = lam
            .iter()
            .zip(&dlam)
            .filter(|(_, &d)| d < 0.0)
            .map(|(&l, &d)| -l / d)
            .fold(1.0_f64, f64::min);
        step *= 0.99;

        let r0 = residual(&x, &lam, &f, t);
        let mut accepted = false;
        while step > 1e-16 {
            let xn = &x + &dx * step;
            let fn_: Vec<f64> = cons.iter().map(|k| k.eval(&xn)).collect();
            if fn_.iter().all(|&v| v < 0.0) {
                let ln: Vec<f64> = lam.iter().zip(&dlam).map(|(l, d)| l + step * d).collect();
                if residual(&xn, &ln, &fn_, t) <= (1.0 - ALPHA * step) * r0 {
                    x = xn;
                    f = fn_;
                    lam = ln;
                    accepted = true;
                    break;
                }
            }
            step *= BETA;
        }
        if !accepted {
            // stalled; accept the current iterate if it is already accurate enough
            let ok = gap <= settings.gap_tol * 1e2 && r_dual.norm() <= settings.feas_tol * 1e2;
            return PdOutcome { x, iterations: it + 1, gap, converged: ok };
        }
    }
    let ok = early_stop(&x);
    PdOutcome { x, iterations: settings.max_iter, gap, converged: ok }
}

/// Solves `H d = rhs` for symmetric PSD `H`, adding diagonal jitter when
/// needed. Null directions of `H` carry no gradient here, so the jitter only
/// pins them to zero.
fn regularized_solve(hess: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..n {
            h[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(h) {
            let d = ch.solve(rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    None
}
