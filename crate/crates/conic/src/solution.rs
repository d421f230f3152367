//! Solver output and the dual certificate.
//!
//! Whatever produced the primal/dual pair, [`certify`] recomputes every
//! reported quantity from the original problem data, so two solvers can be
//! compared on equal terms. For a maximization with dual multipliers `lam`
//! (equalities) and `w >= 0` (inequalities), put
//!
//! ```text
//! Z = sum lam_i A_i + sum w_k A_k - C,    s = sum lam_i a_i + sum w_k a_k - c
//! ```
//!
//! Every feasible `(X, x)` then satisfies
//! `<C, X> + c'x <= b'lam + u'w - <Z, X> - s'x`, and the last two terms are
//! bounded by `trace(X) * max(0, -mineig(Z)) + sum_j x_j^max * max(0, -s_j)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ConicError, Result};
use crate::problem::{LinearFunctional, SdpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    /// Primal infeasible or unbounded.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_value: f64,
    /// `b'lam + u'w` for the returned multipliers.
    pub dual_value: f64,
    /// Slack added to `dual_value` to cover any dual infeasibility.
    pub rigor_margin: f64,
    /// `dual_value + rigor_margin`; an upper bound on the true optimum.
    pub certified_bound: f64,
    pub primal_psd_mineig: f64,
    pub eq_residual_inf: f64,
    pub dual_feasibility_residual: f64,
    pub psd_dim: usize,
    /// Primal PSD block, row-major.
    pub x_psd: Vec<f64>,
    pub x_lin: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
}

impl SdpSolution {
    pub fn x_psd_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.psd_dim, self.psd_dim, &self.x_psd)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Accumulates `coef * A` into the dense dual slack.
fn accumulate(f: &LinearFunctional, coef: f64, z: &mut DMatrix<f64>, s: &mut [f64]) {
    if coef == 0.0 {
        return;
    }
    for (i, j, v) in f.psd_entries() {
        z[(i, j)] += coef * v;
        if i != j {
            z[(j, i)] += coef * v;
        }
    }
    for (k, v) in f.lin_entries() {
        s[k] += coef * v;
    }
}

/// Rows that only involve scalars with non-negative coefficients and have a
/// zero right-hand side can take any extra non-negative multiplier for free.
/// Used to cover scalars a presolve fixed at zero.
fn is_free_forcing_row(f: &LinearFunctional, rhs: f64) -> bool {
    rhs == 0.0 && f.psd_entries().next().is_none() && f.lin_entries().all(|(_, v)| v >= 0.0)
}

/// Builds a full solution report from a primal point and dual multipliers.
pub fn certify(
    problem: &SdpProblem,
    x_psd: &DMatrix<f64>,
    x_lin: &[f64],
    dual_eq: &[f64],
    dual_ineq: &[f64],
    status: SolveStatus,
    iterations: usize,
) -> Result<SdpSolution> {
    let n = problem.psd_dim;
    if x_psd.shape() != (n, n)
        || x_lin.len() != problem.n_lin
        || dual_eq.len() != problem.eq_constraints.len()
        || dual_ineq.len() != problem.ineq_constraints.len()
    {
        return Err(ConicError::Malformed("solution dimensions do not match problem".into()));
    }
    let mut lam = dual_eq.to_vec();
    let mut w: Vec<f64> = dual_ineq.iter().map(|v| v.max(0.0)).collect();

    let mut z = -problem.objective.dense_psd(n);
    let mut s: Vec<f64> = problem.objective.dense_lin(problem.n_lin).iter().map(|v| -v).collect();
    for ((f, _), &l) in problem.eq_constraints.iter().zip(&lam) {
        accumulate(f, l, &mut z, &mut s);
    }
    for ((f, _), &wk) in problem.ineq_constraints.iter().zip(&w) {
        accumulate(f, wk, &mut z, &mut s);
    }

    let repair = |f: &LinearFunctional, mult: &mut f64, s: &mut [f64]| {
        let need = f
            .lin_entries()
            .filter(|&(_, v)| v > 0.0)
            .map(|(k, v)| (-s[k]).max(0.0) / v)
            .fold(0.0, f64::max);
        if need > 0.0 {
            *mult += need;
            for (k, v) in f.lin_entries() {
                s[k] += need * v;
            }
        }
    };
    for ((f, rhs), wk) in problem.ineq_constraints.iter().zip(w.iter_mut()) {
        if is_free_forcing_row(f, *rhs) {
            repair(f, wk, &mut s);
        }
    }
    for ((f, rhs), l) in problem.eq_constraints.iter().zip(lam.iter_mut()) {
        if is_free_forcing_row(f, *rhs) {
            repair(f, l, &mut s);
        }
    }

    let dual_value: f64 = problem
        .eq_constraints
        .iter()
        .zip(&lam)
        .map(|((_, b), l)| b * l)
        .sum::<f64>()
        + problem
            .ineq_constraints
            .iter()
            .zip(&w)
            .map(|((_, u), wk)| u * wk)
            .sum::<f64>();

    let z_min = min_eigenvalue(&z);
    let mut margin = 0.0;
    let mut dual_res = (-z_min).max(0.0);
    if z_min < 0.0 {
        margin += match problem.bounds.trace {
            Some(t) => t * (-z_min),
            None => f64::INFINITY,
        };
    }
    for (k, &sk) in s.iter().enumerate() {
        if sk < 0.0 {
            dual_res = dual_res.max(-sk);
            margin += match problem.bounds.lin_upper.get(k).copied().flatten() {
                Some(ub) => ub * (-sk),
                None => f64::INFINITY,
            };
        }
    }

    let primal_value = problem.objective.eval(x_psd, x_lin);
    let mut eq_res: f64 = 0.0;
    for (f, b) in &problem.eq_constraints {
        eq_res = eq_res.max((f.eval(x_psd, x_lin) - b).abs());
    }
    for (f, u) in &problem.ineq_constraints {
        eq_res = eq_res.max(f.eval(x_psd, x_lin) - u);
    }
    let primal_psd_mineig = x_lin.iter().copied().fold(min_eigenvalue(x_psd), f64::min);

    Ok(SdpSolution {
        status,
        iterations,
        primal_value,
        dual_value,
        rigor_margin: margin,
        certified_bound: dual_value + margin,
        primal_psd_mineig,
        eq_residual_inf: eq_res,
        dual_feasibility_residual: dual_res,
        psd_dim: n,
        x_psd: x_psd.transpose().as_slice().to_vec(),
        x_lin: x_lin.to_vec(),
        dual_eq: lam,
        dual_ineq: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_one_problem() -> SdpProblem {
        // maximize X11 s.t. X11 + X22 = 1.
        let mut p = SdpProblem::new(2, 0);
        p.objective.add_entry(0, 0, 1.0);
        let mut f = LinearFunctional::new();
        f.add_entry(0, 0, 1.0);
        f.add_entry(1, 1, 1.0);
        p.add_eq(f, 1.0);
        p.bounds.trace = Some(1.0);
        p
    }

    #[test]
    fn exact_pair_has_zero_margin() {
        let p = trace_one_problem();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let sol = certify(&p, &x, &[], &[1.0], &[], SolveStatus::Optimal, 0).unwrap();
        assert_eq!(sol.primal_value, 1.0);
        assert_eq!(sol.dual_value, 1.0);
        assert_eq!(sol.rigor_margin, 0.0);
    }

    #[test]
    fn infeasible_dual_gets_margin_from_trace_bound() {
        let p = trace_one_problem();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        // lam = 0.9 leaves Z = diag(-0.1, 0.9).
        let sol = certify(&p, &x, &[], &[0.9], &[], SolveStatus::Optimal, 0).unwrap();
        assert!((sol.dual_value - 0.9).abs() < 1e-15);
        assert!((sol.rigor_margin - 0.1).abs() < 1e-12);
        assert!((sol.certified_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_bound_gives_infinite_margin() {
        let mut p = trace_one_problem();
        p.bounds.trace = None;
        let x = DMatrix::zeros(2, 2);
        let sol = certify(&p, &x, &[], &[0.5], &[], SolveStatus::MaxIters, 0).unwrap();
        assert!(sol.certified_bound.is_infinite());
    }

    #[test]
    fn forcing_row_repairs_scalar_slack() {
        // maximize x0 + 2 x1 s.t. x0 <= 1, x1 <= 0 (x1 fixed at zero).
        let mut p = SdpProblem::new(1, 2);
        p.objective.add_lin(0, 1.0);
        p.objective.add_lin(1, 2.0);
        let mut f0 = LinearFunctional::new();
        f0.add_lin(0, 1.0);
        p.add_ineq(f0, 1.0);
        let mut f1 = LinearFunctional::new();
        f1.add_lin(1, 1.0);
        p.add_ineq(f1, 0.0);
        let x = DMatrix::zeros(1, 1);
        let sol = certify(&p, &x, &[1.0, 0.0], &[], &[1.0, 0.0], SolveStatus::Optimal, 0).unwrap();
        assert_eq!(sol.dual_ineq, vec![1.0, 2.0]);
        assert_eq!(sol.rigor_margin, 0.0);
        assert_eq!(sol.certified_bound, 1.0);
    }

    #[test]
    fn json_round_trip() {
        let p = trace_one_problem();
        let x = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.3]);
        let sol = certify(&p, &x, &[], &[1.0], &[], SolveStatus::Optimal, 3).unwrap();
        let back = SdpSolution::from_json(&sol.to_json().unwrap()).unwrap();
        assert_eq!(back, sol);
        assert_eq!(back.x_psd_matrix(), x);
    }
}
