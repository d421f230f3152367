//! Primal-dual interior-point solver.
//!
//! HKM search direction with Mehrotra predictor-corrector steps from an
//! infeasible start. Before iterating, the problem is reduced:
//!
//! * scalars forced to zero by rows like `sum a_j x_j <= 0` (all `a_j >= 0`)
//!   are removed together with those rows;
//! * the PSD variable is split into the independent diagonal blocks implied
//!   by the sparsity of the data (exact: no functional couples two blocks,
//!   so off-block entries can be set to zero without loss);
//! * rows are equilibrated and the objective is normalized.
//!
//! Inequalities become equalities with non-negative slacks. The result is
//! mapped back and passed through [`certify`], so every reported number is
//! recomputed against the caller's problem.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::{LinearFunctional, SdpProblem};
use crate::solution::{certify, SdpSolution, SolveStatus};
use crate::ConicSolver;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative tolerance on primal infeasibility, dual infeasibility and gap.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InteriorPointSolver {
    pub config: SolverConfig,
}

impl InteriorPointSolver {
    pub fn new(config: SolverConfig) -> Self {
        Self { config }
    }
}

impl ConicSolver for InteriorPointSolver {
    fn name(&self) -> &str {
        "builtin-ipm"
    }

    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        solve(problem, self.config.tol, self.config.max_iters)
    }
}

/// Solves `problem` with the built-in interior-point method.
pub fn solve(problem: &SdpProblem, tol: f64, max_iters: usize) -> Result<SdpSolution> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(crate::ConicError::Malformed("tol must be positive".into()));
    }
    let reduced = Reduced::build(problem);
    let (status, iters, state) = if reduced.trivially_infeasible {
        (SolveStatus::Infeasible, 0, None)
    } else {
        let (st, it, s) = iterate(&reduced, tol, max_iters);
        (st, it, Some(s))
    };
    let (x_psd, x_lin, dual_eq, dual_ineq) = reduced.expand(problem, state.as_ref());
    certify(problem, &x_psd, &x_lin, &dual_eq, &dual_ineq, status, iters)
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Eq(usize),
    Ineq(usize),
}

/// One equality row of the reduced problem, already scaled.
#[derive(Debug, Clone)]
struct Row {
    source: Source,
    /// Per block, upper-triangle entries in block-local indices.
    psd: Vec<Vec<(usize, usize, f64)>>,
    lin: Vec<(usize, f64)>,
    rhs: f64,
    scale: f64,
}

#[derive(Debug, Clone)]
struct Reduced {
    /// Global PSD indices of each block.
    blocks: Vec<Vec<usize>>,
    /// Original scalar index of each kept scalar; slacks follow them.
    kept_lin: Vec<usize>,
    n_lin: usize,
    rows: Vec<Row>,
    c_psd: Vec<DMatrix<f64>>,
    c_lin: DVector<f64>,
    obj_scale: f64,
    trivially_infeasible: bool,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn forcing_vars(f: &LinearFunctional, rhs: f64, fixed: &[bool]) -> Option<Vec<usize>> {
    if rhs != 0.0 || f.psd_entries().next().is_some() {
        return None;
    }
    let live: Vec<(usize, f64)> = f.lin_entries().filter(|(k, _)| !fixed[*k]).collect();
    if live.is_empty() || live.iter().any(|(_, v)| *v < 0.0) {
        return None;
    }
    Some(live.into_iter().map(|(k, _)| k).collect())
}

impl Reduced {
    fn build(p: &SdpProblem) -> Self {
        let n = p.psd_dim;

        // Scalars forced to zero.
        let mut fixed = vec![false; p.n_lin];
        loop {
            let mut changed = false;
            for (f, rhs) in p.eq_constraints.iter().chain(&p.ineq_constraints) {
                if let Some(vars) = forcing_vars(f, *rhs, &fixed) {
                    for k in vars {
                        fixed[k] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Block structure of the PSD variable.
        let mut parent: Vec<usize> = (0..n).collect();
        let mut touched = vec![false; n];
        let all = std::iter::once(&p.objective)
            .chain(p.eq_constraints.iter().map(|(f, _)| f))
            .chain(p.ineq_constraints.iter().map(|(f, _)| f));
        for f in all {
            for (i, j, _) in f.psd_entries() {
                touched[i] = true;
                touched[j] = true;
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let mut block_of_root = vec![usize::MAX; n];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut local = vec![(usize::MAX, usize::MAX); n];
        for i in 0..n {
            if !touched[i] {
                continue;
            }
            let r = find(&mut parent, i);
            if block_of_root[r] == usize::MAX {
                block_of_root[r] = blocks.len();
                blocks.push(Vec::new());
            }
            let b = block_of_root[r];
            local[i] = (b, blocks[b].len());
            blocks[b].push(i);
        }

        let kept_lin: Vec<usize> = (0..p.n_lin).filter(|&k| !fixed[k]).collect();
        let mut lin_pos = vec![usize::MAX; p.n_lin];
        for (pos, &k) in kept_lin.iter().enumerate() {
            lin_pos[k] = pos;
        }

        let split = |f: &LinearFunctional| {
            let mut psd = vec![Vec::new(); blocks.len()];
            for (i, j, v) in f.psd_entries() {
                let (b, li) = local[i];
                let (_, lj) = local[j];
                psd[b].push((li.min(lj), li.max(lj), v));
            }
            let lin: Vec<(usize, f64)> = f
                .lin_entries()
                .filter(|(k, _)| !fixed[*k])
                .map(|(k, v)| (lin_pos[k], v))
                .collect();
            (psd, lin)
        };

        let mut rows = Vec::new();
        let mut trivially_infeasible = false;
        let mut n_slack = 0;
        let sources = p
            .eq_constraints
            .iter()
            .enumerate()
            .map(|(i, (f, b))| (Source::Eq(i), f, *b))
            .chain(
                p.ineq_constraints
                    .iter()
                    .enumerate()
                    .map(|(k, (f, u))| (Source::Ineq(k), f, *u)),
            );
        for (source, f, rhs) in sources {
            let (mut psd, mut lin) = split(f);
            let empty = psd.iter().all(|e| e.is_empty()) && lin.is_empty();
            if empty {
                match source {
                    Source::Eq(_) if rhs != 0.0 => trivially_infeasible = true,
                    Source::Ineq(_) if rhs < 0.0 => trivially_infeasible = true,
                    _ => {}
                }
                continue;
            }
            if let Source::Ineq(_) = source {
                lin.push((kept_lin.len() + n_slack, 1.0));
                n_slack += 1;
            }
            let mut norm2 = 0.0;
            for e in &psd {
                for &(i, j, v) in e {
                    norm2 += if i == j { v * v } else { 2.0 * v * v };
                }
            }
            norm2 += lin.iter().map(|(_, v)| v * v).sum::<f64>();
            let scale = norm2.sqrt();
            for e in psd.iter_mut() {
                for t in e.iter_mut() {
                    t.2 /= scale;
                }
            }
            for t in lin.iter_mut() {
                t.1 /= scale;
            }
            rows.push(Row {
                source,
                psd,
                lin,
                rhs: rhs / scale,
                scale,
            });
        }

        let n_lin = kept_lin.len() + n_slack;
        let (obj_psd, obj_lin) = split(&p.objective);
        let mut c_psd: Vec<DMatrix<f64>> = blocks.iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        for (b, entries) in obj_psd.into_iter().enumerate() {
            for (i, j, v) in entries {
                // Internally minimized.
                c_psd[b][(i, j)] -= v;
                if i != j {
                    c_psd[b][(j, i)] -= v;
                }
            }
        }
        let mut c_lin = DVector::<f64>::zeros(n_lin);
        for (k, v) in obj_lin {
            c_lin[k] -= v;
        }
        let norm = (c_psd.iter().map(|c| c.norm_squared()).sum::<f64>() + c_lin.norm_squared()).sqrt();
        let obj_scale = if norm > 0.0 { norm } else { 1.0 };
        for c in c_psd.iter_mut() {
            *c /= obj_scale;
        }
        c_lin /= obj_scale;

        Self {
            blocks,
            kept_lin,
            n_lin,
            rows,
            c_psd,
            c_lin,
            obj_scale,
            trivially_infeasible,
        }
    }

    /// Maps an internal iterate back to the caller's variables and max-form
    /// multipliers.
    fn expand(&self, p: &SdpProblem, state: Option<&State>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut x_psd = DMatrix::zeros(p.psd_dim, p.psd_dim);
        let mut x_lin = vec![0.0; p.n_lin];
        let mut dual_eq = vec![0.0; p.eq_constraints.len()];
        let mut dual_ineq = vec![0.0; p.ineq_constraints.len()];
        let Some(st) = state else {
            return (x_psd, x_lin, dual_eq, dual_ineq);
        };
        for (b, idx) in self.blocks.iter().enumerate() {
            for (li, &gi) in idx.iter().enumerate() {
                for (lj, &gj) in idx.iter().enumerate() {
                    x_psd[(gi, gj)] = st.x[b][(li, lj)];
                }
            }
        }
        for (pos, &k) in self.kept_lin.iter().enumerate() {
            x_lin[k] = st.xl[pos];
        }
        for (row, y) in self.rows.iter().zip(st.y.iter()) {
            let lam = -y * self.obj_scale / row.scale;
            match row.source {
                Source::Eq(i) => dual_eq[i] = lam,
                Source::Ineq(k) => dual_ineq[k] = lam,
            }
        }
        (x_psd, x_lin, dual_eq, dual_ineq)
    }

    fn apply_a(&self, x: &[DMatrix<f64>], xl: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                let mut acc = 0.0;
                for (b, entries) in row.psd.iter().enumerate() {
                    for &(i, j, v) in entries {
                        acc += if i == j {
                            v * x[b][(i, i)]
                        } else {
                            v * (x[b][(i, j)] + x[b][(j, i)])
                        };
                    }
                }
                for &(k, v) in &row.lin {
                    acc += v * xl[k];
                }
                acc
            }),
        )
    }

    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let mut z: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        let mut zl = DVector::zeros(self.n_lin);
        for (row, &yi) in self.rows.iter().zip(y.iter()) {
            for (b, entries) in row.psd.iter().enumerate() {
                for &(i, j, v) in entries {
                    z[b][(i, j)] += yi * v;
                    if i != j {
                        z[b][(j, i)] += yi * v;
                    }
                }
            }
            for &(k, v) in &row.lin {
                zl[k] += yi * v;
            }
        }
        (z, zl)
    }

    fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.rhs))
    }
}

#[derive(Debug, Clone)]
struct State {
    x: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
    zl: DVector<f64>,
}

struct Direction {
    x: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
    zl: DVector<f64>,
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest step `t` with `x + t dx` PSD (infinite if `dx` is PSD).
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    if x.nrows() == 0 {
        return Some(f64::INFINITY);
    }
    let l = x.clone().cholesky()?.l();
    let t = l.solve_lower_triangular(dx)?;
    let w = l.solve_lower_triangular(&t.transpose())?;
    let lmin = sym(&w).symmetric_eigenvalues().min();
    Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

fn max_step_lin(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn step_lengths(st: &State, d: &Direction) -> Option<(f64, f64)> {
    let mut ap = max_step_lin(&st.xl, &d.xl);
    let mut ad = max_step_lin(&st.zl, &d.zl);
    for b in 0..st.x.len() {
        ap = ap.min(max_step_psd(&st.x[b], &d.x[b])?);
        ad = ad.min(max_step_psd(&st.z[b], &d.z[b])?);
    }
    Some((ap, ad))
}

const WEAK_DUALITY_SLACK: f64 = 1e-3;

fn iterate(r: &Reduced, tol: f64, max_iters: usize) -> (SolveStatus, usize, State) {
    let m = r.rows.len();
    let nb = r.blocks.len();
    let n_total = r.blocks.iter().map(|b| b.len()).sum::<usize>() + r.n_lin;
    let b = r.rhs();
    let b_norm = b.norm();
    let c_norm = (r.c_psd.iter().map(|c| c.norm_squared()).sum::<f64>() + r.c_lin.norm_squared()).sqrt();

    // Rows are unit-norm, so the usual starting-point heuristics simplify.
    let b_max = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let start = |dim: usize| -> (f64, f64) {
        let d = dim.max(1) as f64;
        let xi = 10f64.max(d.sqrt()).max(d * (1.0 + b_max) / 2.0);
        let eta = 10f64.max(d.sqrt()).max(1.0 + c_norm);
        (xi, eta)
    };
    let mut st = State {
        x: r.blocks
            .iter()
            .map(|blk| DMatrix::identity(blk.len(), blk.len()) * start(blk.len()).0)
            .collect(),
        xl: DVector::from_element(r.n_lin, start(r.n_lin).0),
        y: DVector::zeros(m),
        z: r.blocks
            .iter()
            .map(|blk| DMatrix::identity(blk.len(), blk.len()) * start(blk.len()).1)
            .collect(),
        zl: DVector::from_element(r.n_lin, start(r.n_lin).1),
    };
    if n_total == 0 {
        return (SolveStatus::Optimal, 0, st);
    }

    let mut best: Option<(f64, State)> = None;
    let mut stalls = 0;
    let mut iters = 0;
    for it in 0..max_iters {
        iters = it;
        let ax = r.apply_a(&st.x, &st.xl);
        let rp = &b - ax;
        let (aty, atyl) = r.apply_at(&st.y);
        let rd: Vec<DMatrix<f64>> = (0..nb).map(|k| &r.c_psd[k] - &aty[k] - &st.z[k]).collect();
        let rdl = &r.c_lin - atyl - &st.zl;
        let pobj = inner(&r.c_psd, &st.x) + r.c_lin.dot(&st.xl);
        let dobj = b.dot(&st.y);
        let mu = (inner(&st.x, &st.z) + st.xl.dot(&st.zl)) / n_total as f64;
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = (rd.iter().map(|d| d.norm_squared()).sum::<f64>() + rdl.norm_squared()).sqrt() / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        log::trace!("ipm it={it} pobj={pobj:.9e} dobj={dobj:.9e} pinf={pinf:.2e} dinf={dinf:.2e} gap={gap:.2e}");

        let merit = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
            best = Some((merit, st.clone()));
        }
        // Also insist, in the caller's units, that the dual bound is not
        // materially below the primal value, so reported values respect
        // weak duality.
        let lag = (dobj - pobj) * r.obj_scale;
        let lag_ok = lag <= WEAK_DUALITY_SLACK * tol * (1.0 + pobj.abs() * r.obj_scale);
        if pinf <= tol && dinf <= tol && gap <= tol && lag_ok {
            return (SolveStatus::Optimal, it, st);
        }
        let x_big = st.x.iter().map(|x| x.trace()).sum::<f64>() + st.xl.sum();
        if st.y.amax() > 1e12 || x_big > 1e12 {
            return (SolveStatus::Infeasible, it, st);
        }

        let Some(zinv) =
            st.z.iter()
                .map(|z| z.clone().cholesky().map(|c| c.inverse()))
                .collect::<Option<Vec<_>>>()
        else {
            break;
        };
        let dl = st.xl.component_div(&st.zl);

        // Schur complement M_ij = tr(A_i X A_j Z^-1) + sum_k B_ik d_k B_jk.
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for k in 0..nb {
            let n = r.blocks[k].len();
            let xk = &st.x[k];
            let zk = &zinv[k];
            for (j, row_j) in r.rows.iter().enumerate() {
                let entries = &row_j.psd[k];
                if entries.is_empty() {
                    continue;
                }
                // T = X A_j Z^-1, built column by column of X A_j.
                let mut xa = DMatrix::<f64>::zeros(n, n);
                let mut cols = Vec::new();
                for &(p, q, v) in entries {
                    for i in 0..n {
                        xa[(i, q)] += xk[(i, p)] * v;
                    }
                    cols.push(q);
                    if p != q {
                        for i in 0..n {
                            xa[(i, p)] += xk[(i, q)] * v;
                        }
                        cols.push(p);
                    }
                }
                cols.sort_unstable();
                cols.dedup();
                let mut t = DMatrix::<f64>::zeros(n, n);
                for &c in &cols {
                    let col = xa.column(c);
                    t.ger(1.0, &col, &zk.row(c).transpose(), 1.0);
                }
                for (i, row_i) in r.rows.iter().enumerate().skip(j) {
                    let mut acc = 0.0;
                    for &(p, q, v) in &row_i.psd[k] {
                        acc += if p == q {
                            v * t[(p, p)]
                        } else {
                            v * (t[(p, q)] + t[(q, p)])
                        };
                    }
                    if acc != 0.0 {
                        schur[(i, j)] += acc;
                    }
                }
            }
        }
        for j in 0..m {
            for i in j..m {
                let mut acc = 0.0;
                let (li, lj) = (&r.rows[i].lin, &r.rows[j].lin);
                for &(ki, vi) in li {
                    for &(kj, vj) in lj {
                        if ki == kj {
                            acc += vi * vj * dl[ki];
                        }
                    }
                }
                schur[(i, j)] += acc;
                schur[(j, i)] = schur[(i, j)];
            }
        }
        let diag_max = schur.diagonal().amax().max(1e-300);
        let chol = match schur.clone().cholesky() {
            Some(c) => c,
            None => {
                let mut reg = schur.clone();
                for i in 0..m {
                    reg[(i, i)] += 1e-12 * diag_max;
                }
                match reg.cholesky() {
                    Some(c) => c,
                    None => break,
                }
            }
        };

        let direction = |sigma_mu: f64, corr: Option<&Direction>| -> Direction {
            let h: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut hk = &zinv[k] * sigma_mu - &st.x[k] - &st.x[k] * &rd[k] * &zinv[k];
                    if let Some(c) = corr {
                        hk -= &c.x[k] * &c.z[k] * &zinv[k];
                    }
                    hk
                })
                .collect();
            let mut hl = DVector::from_iterator(
                r.n_lin,
                (0..r.n_lin).map(|i| sigma_mu / st.zl[i] - st.xl[i] - dl[i] * rdl[i]),
            );
            if let Some(c) = corr {
                for i in 0..r.n_lin {
                    hl[i] -= c.xl[i] * c.zl[i] / st.zl[i];
                }
            }
            let rhs = &rp - r.apply_a(&h, &hl);
            let dy = chol.solve(&rhs);
            let (atdy, atdyl) = r.apply_at(&dy);
            let dz: Vec<DMatrix<f64>> = (0..nb).map(|k| &rd[k] - &atdy[k]).collect();
            let dzl = &rdl - &atdyl;
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| sym(&(&h[k] + &st.x[k] * &atdy[k] * &zinv[k])))
                .collect();
            let dxl = hl + dl.component_mul(&atdyl);
            Direction {
                x: dx,
                xl: dxl,
                y: dy,
                z: dz,
                zl: dzl,
            }
        };

        let pred = direction(0.0, None);
        let Some((ap, ad)) = step_lengths(&st, &pred) else {
            break;
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut xz = 0.0;
        for k in 0..nb {
            let xn = &st.x[k] + &pred.x[k] * ap;
            let zn = &st.z[k] + &pred.z[k] * ad;
            xz += xn.dot(&zn);
        }
        xz += (&st.xl + &pred.xl * ap).dot(&(&st.zl + &pred.zl * ad));
        let mu_aff = xz.max(0.0) / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let corr = direction(sigma * mu, Some(&pred));
        let Some((ap, ad)) = step_lengths(&st, &corr) else {
            break;
        };
        let gamma = 0.9 + 0.09 * ap.min(ad).min(1.0);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls > 5 {
                break;
            }
        } else {
            stalls = 0;
        }
        for k in 0..nb {
            st.x[k] += &corr.x[k] * ap;
            st.z[k] += &corr.z[k] * ad;
        }
        st.xl += &corr.xl * ap;
        st.y += &corr.y * ad;
        st.zl += &corr.zl * ad;
        // Keep the iterates symmetric against round-off drift.
        for k in 0..nb {
            st.x[k] = sym(&st.x[k]);
            st.z[k] = sym(&st.z[k]);
        }
    }
    match best {
        Some((_, s)) => (SolveStatus::MaxIters, iters, s),
        None => (SolveStatus::MaxIters, iters, st),
    }
}
