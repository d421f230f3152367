//! Problem description: one real symmetric PSD block plus non-negative scalars.
//!
//! Every problem is a maximization
//!
//! ```text
//! maximize   <C, X> + c'x
//! subject to <A_i, X> + a_i'x  = b_i     (equalities)
//!            <A_k, X> + a_k'x <= u_k     (inequalities)
//!            X PSD, x >= 0
//! ```
//!
//! Coefficient matrices are symmetric and stored sparsely by their upper
//! triangle, so `<A, X>` counts every off-diagonal coefficient twice.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ConicError, Result};

/// Linear functional over `(X, x)`: `<C, X> + c'x` with symmetric `C`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearFunctional {
    psd: BTreeMap<(usize, usize), f64>,
    lin: BTreeMap<usize, f64>,
}

impl LinearFunctional {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` to the symmetric coefficient matrix at `(i, j)` and `(j, i)`.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let key = (i.min(j), i.max(j));
        *self.psd.entry(key).or_insert(0.0) += v;
    }

    /// Adds `v * X[i, j]` to the functional (for symmetric `X`).
    pub fn add_entry(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.add_sym(i, j, v);
        } else {
            self.add_sym(i, j, 0.5 * v);
        }
    }

    pub fn add_lin(&mut self, k: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        *self.lin.entry(k).or_insert(0.0) += v;
    }

    /// Upper-triangle coefficients `(i, j, C_ij)` with `i <= j`.
    pub fn psd_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.psd
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn lin_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.lin.iter().filter(|(_, v)| **v != 0.0).map(|(&k, &v)| (k, v))
    }

    pub fn is_zero(&self) -> bool {
        self.psd_entries().next().is_none() && self.lin_entries().next().is_none()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            psd: self.psd.iter().map(|(&k, &v)| (k, v * c)).collect(),
            lin: self.lin.iter().map(|(&k, &v)| (k, v * c)).collect(),
        }
    }

    pub fn eval(&self, x: &DMatrix<f64>, lin: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, j, v) in self.psd_entries() {
            if i == j {
                acc += v * x[(i, i)];
            } else {
                acc += v * (x[(i, j)] + x[(j, i)]);
            }
        }
        for (k, v) in self.lin_entries() {
            acc += v * lin[k];
        }
        acc
    }

    /// Frobenius norm of the coefficient matrix together with the scalar part.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for (i, j, v) in self.psd_entries() {
            acc += if i == j { v * v } else { 2.0 * v * v };
        }
        for (_, v) in self.lin_entries() {
            acc += v * v;
        }
        acc.sqrt()
    }

    pub fn dense_psd(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for (i, j, v) in self.psd_entries() {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    pub fn dense_lin(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (k, v) in self.lin_entries() {
            out[k] += v;
        }
        out
    }

    fn max_indices(&self) -> (Option<usize>, Option<usize>) {
        let psd = self.psd.keys().map(|&(_, j)| j).max();
        let lin = self.lin.keys().copied().max();
        (psd, lin)
    }

    fn all_finite(&self) -> bool {
        self.psd.values().all(|v| v.is_finite()) && self.lin.values().all(|v| v.is_finite())
    }
}

/// A priori bounds on the primal variables, used to turn an approximately
/// dual-feasible point into a rigorous upper bound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableBounds {
    /// Upper bound on `trace(X)` over the feasible set.
    pub trace: Option<f64>,
    /// Upper bound on each scalar variable (None = unknown).
    pub lin_upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub psd_dim: usize,
    pub n_lin: usize,
    /// Maximized.
    pub objective: LinearFunctional,
    pub eq_constraints: Vec<(LinearFunctional, f64)>,
    /// `(functional, upper bound)` pairs.
    pub ineq_constraints: Vec<(LinearFunctional, f64)>,
    pub bounds: VariableBounds,
}

impl SdpProblem {
    pub fn new(psd_dim: usize, n_lin: usize) -> Self {
        Self {
            psd_dim,
            n_lin,
            objective: LinearFunctional::new(),
            eq_constraints: Vec::new(),
            ineq_constraints: Vec::new(),
            bounds: VariableBounds {
                trace: None,
                lin_upper: vec![None; n_lin],
            },
        }
    }

    pub fn add_eq(&mut self, f: LinearFunctional, rhs: f64) {
        self.eq_constraints.push((f, rhs));
    }

    pub fn add_ineq(&mut self, f: LinearFunctional, upper: f64) {
        self.ineq_constraints.push((f, upper));
    }

    pub fn validate(&self) -> Result<()> {
        if self.psd_dim == 0 {
            return Err(ConicError::Malformed("psd_dim must be at least 1".into()));
        }
        if self.bounds.lin_upper.len() != self.n_lin {
            return Err(ConicError::Malformed(format!(
                "lin_upper has {} entries, expected {}",
                self.bounds.lin_upper.len(),
                self.n_lin
            )));
        }
        let functionals = std::iter::once((&self.objective, 0.0))
            .chain(self.eq_constraints.iter().map(|(f, b)| (f, *b)))
            .chain(self.ineq_constraints.iter().map(|(f, u)| (f, *u)));
        for (idx, (f, rhs)) in functionals.enumerate() {
            let (psd, lin) = f.max_indices();
            if psd.is_some_and(|j| j >= self.psd_dim) {
                return Err(ConicError::Malformed(format!(
                    "functional {idx} touches PSD index beyond dimension {}",
                    self.psd_dim
                )));
            }
            if lin.is_some_and(|k| k >= self.n_lin) {
                return Err(ConicError::Malformed(format!(
                    "functional {idx} touches scalar index beyond {}",
                    self.n_lin
                )));
            }
            if !f.all_finite() || !rhs.is_finite() {
                return Err(ConicError::Malformed(format!("functional {idx} has non-finite data")));
            }
        }
        Ok(())
    }

    /// Multiplies the objective by `c`.
    pub fn with_objective_scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        p.objective = p.objective.scaled(c);
        p
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProblemJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ProblemJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

pub const PROBLEM_SCHEMA: &str = "qlimit-sdp/1";

/// Dense JSON exchange form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemJson {
    pub schema: String,
    pub sense: String,
    pub psd_dim: usize,
    pub n_lin: usize,
    pub objective: FunctionalJson,
    pub eq_constraints: Vec<ConstraintJson>,
    pub ineq_constraints: Vec<ConstraintJson>,
    pub trace_bound: Option<f64>,
    pub lin_upper_bounds: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalJson {
    /// Full symmetric coefficient matrix, row-major rows.
    pub psd: Vec<Vec<f64>>,
    pub lin: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintJson {
    pub psd: Vec<Vec<f64>>,
    pub lin: Vec<f64>,
    pub rhs: f64,
}

impl FunctionalJson {
    fn from_functional(f: &LinearFunctional, n: usize, k: usize) -> Self {
        let m = f.dense_psd(n);
        Self {
            psd: (0..n).map(|i| m.row(i).iter().copied().collect()).collect(),
            lin: f.dense_lin(k),
        }
    }

    fn to_functional(&self, n: usize, k: usize) -> Result<LinearFunctional> {
        if self.psd.len() != n || self.psd.iter().any(|r| r.len() != n) || self.lin.len() != k {
            return Err(ConicError::Malformed("functional has wrong shape".into()));
        }
        let mut f = LinearFunctional::new();
        for i in 0..n {
            for j in i..n {
                let a = self.psd[i][j];
                let b = self.psd[j][i];
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(ConicError::Malformed(format!(
                        "coefficient matrix not symmetric at ({i},{j})"
                    )));
                }
                f.add_sym(i, j, a);
            }
        }
        for (idx, &v) in self.lin.iter().enumerate() {
            f.add_lin(idx, v);
        }
        Ok(f)
    }
}

impl From<&SdpProblem> for ProblemJson {
    fn from(p: &SdpProblem) -> Self {
        let (n, k) = (p.psd_dim, p.n_lin);
        let cons = |list: &[(LinearFunctional, f64)]| {
            list.iter()
                .map(|(f, rhs)| {
                    let fj = FunctionalJson::from_functional(f, n, k);
                    ConstraintJson {
                        psd: fj.psd,
                        lin: fj.lin,
                        rhs: *rhs,
                    }
                })
                .collect()
        };
        Self {
            schema: PROBLEM_SCHEMA.to_string(),
            sense: "maximize".to_string(),
            psd_dim: n,
            n_lin: k,
            objective: FunctionalJson::from_functional(&p.objective, n, k),
            eq_constraints: cons(&p.eq_constraints),
            ineq_constraints: cons(&p.ineq_constraints),
            trace_bound: p.bounds.trace,
            lin_upper_bounds: p.bounds.lin_upper.clone(),
        }
    }
}

impl TryFrom<ProblemJson> for SdpProblem {
    type Error = ConicError;

    fn try_from(raw: ProblemJson) -> Result<Self> {
        if raw.schema != PROBLEM_SCHEMA {
            return Err(ConicError::Malformed(format!("unknown schema {}", raw.schema)));
        }
        if raw.sense != "maximize" {
            return Err(ConicError::Malformed(format!("unsupported sense {}", raw.sense)));
        }
        let (n, k) = (raw.psd_dim, raw.n_lin);
        let cons = |list: &[ConstraintJson]| -> Result<Vec<(LinearFunctional, f64)>> {
            list.iter()
                .map(|c| {
                    let f = FunctionalJson {
                        psd: c.psd.clone(),
                        lin: c.lin.clone(),
                    }
                    .to_functional(n, k)?;
                    Ok((f, c.rhs))
                })
                .collect()
        };
        let p = SdpProblem {
            psd_dim: n,
            n_lin: k,
            objective: raw.objective.to_functional(n, k)?,
            eq_constraints: cons(&raw.eq_constraints)?,
            ineq_constraints: cons(&raw.ineq_constraints)?,
            bounds: VariableBounds {
                trace: raw.trace_bound,
                lin_upper: raw.lin_upper_bounds,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_coefficients_count_both_triangles() {
        let mut f = LinearFunctional::new();
        f.add_entry(0, 1, 3.0);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(f.eval(&x, &[]), 6.0);
        let mut g = LinearFunctional::new();
        g.add_sym(1, 0, 3.0);
        assert_eq!(g.eval(&x, &[]), 12.0);
    }

    #[test]
    fn validate_rejects_out_of_range_index() {
        let mut p = SdpProblem::new(2, 0);
        let mut f = LinearFunctional::new();
        f.add_entry(2, 2, 1.0);
        p.add_eq(f, 1.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_rejects_wrong_schema() {
        let p = SdpProblem::new(1, 1);
        let mut raw = ProblemJson::from(&p);
        raw.schema = "other".into();
        let s = serde_json::to_string(&raw).unwrap();
        assert!(SdpProblem::from_json(&s).is_err());
    }

    #[test]
    fn json_round_trip_preserves_problem() {
        let mut p = SdpProblem::new(3, 2);
        let mut obj = LinearFunctional::new();
        obj.add_entry(0, 2, 1.5);
        obj.add_lin(1, -2.0);
        p.objective = obj;
        let mut f = LinearFunctional::new();
        f.add_entry(1, 1, 1.0);
        f.add_lin(0, 0.25);
        p.add_eq(f.clone(), 1.0);
        p.add_ineq(f, 2.0);
        p.bounds.trace = Some(4.0);
        p.bounds.lin_upper = vec![Some(1.0), None];
        let back = SdpProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
