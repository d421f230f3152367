//! Phase-error bound under energy-limited Trojan-horse light, key rates, and
//! the photon-budget calculators.
//!
//! Eve's side information after announcing `z` for settings `(x, y)` is a
//! vector `e^z_xy`. Its Gram matrix `G` (48 x 48, ordered outcome-major, then
//! `x`, then `y`) is PSD, has the observed statistics on the diagonal and,
//! summed over `z`, must reproduce the source overlaps dressed with the
//! phases the Trojan light picks up:
//!
//! ```text
//! sum_z <e^z_x'y'|e^z_xy> = sum_nm P_nm i^(n(x-x') + m(y-y')) Lambda_x'y',xy
//! ```
//!
//! The phase error rate is linear in `G`, so its worst case is an SDP.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use qlimit_conic::{ConicSolver, HermitianEmbedding, LinearFunctional, SdpProblem, SdpSolution, SolveStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::limiter::{insertion_loss_db, limiting_threshold, photon_flux, watts_to_dbm, LimiterConfig};
use crate::mdi::{
    bit_error, coherent_overlap, honest_statistics, i_pow, mod4_weights, node_amplitudes, p_pass, ChannelParams,
    Outcome, PhotonDistribution, SignalOverlaps, StatTable, PAIRS, SETTINGS,
};
use crate::search::{argmax_first, golden_max, is_unimodal};

/// Dimension of the Gram matrix.
pub const GRAM_DIM: usize = 3 * PAIRS;
/// Number of Trojan photon-number probabilities.
pub const N_PHOTON_VARS: usize = 16;
/// The SDP objective omits this constant term of the phase error rate.
pub const PHASE_ERROR_OFFSET: f64 = 0.5;

/// Points in the coarse intensity scan that precedes golden-section search.
pub const MU_PRESCAN_POINTS: usize = 16;
/// Golden-section stopping width in `ln(mu)`.
pub const MU_LOG_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrojanConstraint {
    pub nu_a: f64,
    pub nu_b: f64,
}

impl TrojanConstraint {
    pub fn new(nu_a: f64, nu_b: f64) -> Result<Self> {
        let tc = Self { nu_a, nu_b };
        tc.validate()?;
        Ok(tc)
    }

    pub fn symmetric(nu: f64) -> Result<Self> {
        Self::new(nu, nu)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_a >= 0.0 && self.nu_b >= 0.0) || !self.nu_a.is_finite() || !self.nu_b.is_finite() {
            return Err(CoreError::Domain(
                "Trojan intensities must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GramIndex {
    pub outcome: Outcome,
    pub x: usize,
    pub y: usize,
}

impl GramIndex {
    pub fn new(outcome: Outcome, x: usize, y: usize) -> Self {
        debug_assert!(x < SETTINGS && y < SETTINGS);
        Self { outcome, x, y }
    }

    pub fn flat(&self) -> usize {
        self.outcome.index() * PAIRS + self.x * SETTINGS + self.y
    }

    pub fn from_flat(k: usize) -> Option<Self> {
        if k >= GRAM_DIM {
            return None;
        }
        let outcome = Outcome::ALL[k / PAIRS];
        let r = k % PAIRS;
        Some(Self::new(outcome, r / SETTINGS, r % SETTINGS))
    }
}

fn g(z: Outcome, x: usize, y: usize) -> usize {
    GramIndex::new(z, x, y).flat()
}

/// Index of `P_nm` among the scalar variables.
pub fn photon_var(n: usize, m: usize) -> usize {
    n * 4 + m
}

/// The assembled SDP together with the data needed to read it back.
#[derive(Debug, Clone)]
pub struct ThaProblem {
    pub sdp: SdpProblem,
    pub embedding: HermitianEmbedding,
    pub p_pass: f64,
    pub e_bit: f64,
}

impl ThaProblem {
    /// Phase error rate implied by a Gram matrix.
    pub fn phase_error_of(&self, gram: &DMatrix<Complex64>) -> f64 {
        PHASE_ERROR_OFFSET + phase_error_numerator(gram) / (4.0 * self.p_pass)
    }

    /// Real solver variable for a Gram matrix and photon distribution.
    pub fn embed_point(&self, gram: &DMatrix<Complex64>, dist: &PhotonDistribution) -> (DMatrix<f64>, Vec<f64>) {
        let x = self.embedding.embed(gram);
        let lin = (0..N_PHOTON_VARS).map(|k| dist.p[k / 4][k % 4]).collect();
        (x, lin)
    }

    /// Largest violation of any constraint (equalities in absolute value,
    /// inequalities by excess) at the given point.
    pub fn max_violation(&self, x: &DMatrix<f64>, lin: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (f, b) in &self.sdp.eq_constraints {
            v = v.max((f.eval(x, lin) - b).abs());
        }
        for (f, u) in &self.sdp.ineq_constraints {
            v = v.max(f.eval(x, lin) - u);
        }
        v
    }
}

fn phase_error_numerator(gram: &DMatrix<Complex64>) -> f64 {
    use Outcome::{L, R};
    (gram[(g(L, 0, 0), g(L, 2, 2))] - gram[(g(R, 0, 0), g(R, 2, 2))] - gram[(g(L, 0, 2), g(L, 2, 0))]
        + gram[(g(R, 0, 2), g(R, 2, 0))])
        .re
}

fn add_phase_error_numerator(emb: &HermitianEmbedding, f: &mut LinearFunctional, scale: f64) {
    use Outcome::{L, R};
    emb.add_re(f, g(L, 0, 0), g(L, 2, 2), scale);
    emb.add_re(f, g(R, 0, 0), g(R, 2, 2), -scale);
    emb.add_re(f, g(L, 0, 2), g(L, 2, 0), -scale);
    emb.add_re(f, g(R, 0, 2), g(R, 2, 0), scale);
}

pub fn build_sdp(stats: &StatTable, overlaps: &SignalOverlaps, tc: &TrojanConstraint) -> Result<ThaProblem> {
    tc.validate()?;
    let pp = p_pass(stats);
    if !(pp > 0.0) {
        return Err(CoreError::UndefinedStatistic(
            "zero pass probability; phase error undefined".into(),
        ));
    }
    let e_bit = bit_error(stats)?;
    let emb = HermitianEmbedding::new(GRAM_DIM);
    let mut sdp = SdpProblem::new(emb.real_dim(), N_PHOTON_VARS);

    let mut obj = LinearFunctional::new();
    add_phase_error_numerator(&emb, &mut obj, 1.0 / (4.0 * pp));
    sdp.objective = obj.clone();

    for z in Outcome::ALL {
        for x in 0..SETTINGS {
            for y in 0..SETTINGS {
                let k = g(z, x, y);
                let mut f = LinearFunctional::new();
                emb.add_re(&mut f, k, k, 1.0);
                sdp.add_eq(f, stats.get(z, x, y));
            }
        }
    }

    for i in 0..PAIRS {
        let (xp, yp) = (i / SETTINGS, i % SETTINGS);
        for j in (i + 1)..PAIRS {
            let (x, y) = (j / SETTINGS, j % SETTINGS);
            let (dx, dy) = (x as i64 - xp as i64, y as i64 - yp as i64);
            let lam = overlaps.lambda[(i, j)];
            let mut re = LinearFunctional::new();
            let mut im = LinearFunctional::new();
            for z in Outcome::ALL {
                let (a, b) = (z.index() * PAIRS + i, z.index() * PAIRS + j);
                emb.add_re(&mut re, a, b, 1.0);
                emb.add_im(&mut im, a, b, 1.0);
            }
            for n in 0..4 {
                for m in 0..4 {
                    let c = i_pow(n as i64 * dx + m as i64 * dy) * lam;
                    re.add_lin(photon_var(n, m), -c.re);
                    im.add_lin(photon_var(n, m), -c.im);
                }
            }
            sdp.add_eq(re, 0.0);
            sdp.add_eq(im, 0.0);
        }
    }

    let mut norm = LinearFunctional::new();
    for k in 0..N_PHOTON_VARS {
        norm.add_lin(k, 1.0);
    }
    sdp.add_eq(norm, 1.0);

    let mut energy_a = LinearFunctional::new();
    let mut energy_b = LinearFunctional::new();
    for n in 0..4 {
        for m in 0..4 {
            energy_a.add_lin(photon_var(n, m), n as f64);
            energy_b.add_lin(photon_var(n, m), m as f64);
        }
    }
    sdp.add_ineq(energy_a, tc.nu_a);
    sdp.add_ineq(energy_b, tc.nu_b);
    // e_ph <= 1/2.
    sdp.add_ineq(obj, 0.0);

    // trace(G) = sum of all statistics; the real embedding doubles it.
    let total: f64 = stats.raw().iter().flatten().sum();
    sdp.bounds.trace = Some(2.0 * total);
    sdp.bounds.lin_upper = vec![Some(1.0); N_PHOTON_VARS];
    sdp.validate()?;

    Ok(ThaProblem {
        sdp,
        embedding: emb,
        p_pass: pp,
        e_bit,
    })
}

/// Gram matrix of Eve's vectors when she does nothing but hold the
/// environment modes of the lossy channel. Vacuum Trojan light only.
pub fn honest_gram(params: &ChannelParams) -> Result<DMatrix<Complex64>> {
    params.validate()?;
    let eta = params.arm_transmittance();
    let v = params.visibility();
    let orth = (1.0 - v * v).max(0.0).sqrt();
    let leak = (1.0 - eta).max(0.0).sqrt();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // Per setting: two modes at each detector (matched and orthogonal to the
    // interfering mode) and the two environment modes.
    let modes: Vec<[Complex64; 6]> = (0..PAIRS)
        .map(|k| {
            let (x, y) = (k / SETTINGS, k % SETTINGS);
            let (a, b) = node_amplitudes(params, x, y);
            let ea = params.mu_a.sqrt() * i_pow(x as i64) * leak;
            let eb = params.mu_b.sqrt() * i_pow(y as i64) * leak;
            [(a + v * b) * s, orth * b * s, (a - v * b) * s, -orth * b * s, ea, eb]
        })
        .collect();
    let multi = |p: &[Complex64], q: &[Complex64]| -> Complex64 {
        p.iter().zip(q).map(|(&u, &w)| coherent_overlap(u, w)).product()
    };
    let vac = |p: &[Complex64], q: &[Complex64]| -> f64 {
        p.iter()
            .zip(q)
            .map(|(u, w)| (-0.5 * (u.norm_sqr() + w.norm_sqr())).exp())
            .product()
    };
    let keep = 1.0 - params.dark_count;
    let mut gram = DMatrix::zeros(GRAM_DIM, GRAM_DIM);
    for i in 0..PAIRS {
        for j in 0..PAIRS {
            let (p, q) = (&modes[i], &modes[j]);
            let (o_l, o_r, o_e) = (
                multi(&p[0..2], &q[0..2]),
                multi(&p[2..4], &q[2..4]),
                multi(&p[4..6], &q[4..6]),
            );
            let n_l = keep * vac(&p[0..2], &q[0..2]);
            let n_r = keep * vac(&p[2..4], &q[2..4]);
            let c_l = o_l - n_l;
            let c_r = o_r - n_r;
            let gl = c_l * n_r * o_e;
            let gr = n_l * c_r * o_e;
            gram[(i, j)] = gl;
            gram[(PAIRS + i, PAIRS + j)] = gr;
            gram[(2 * PAIRS + i, 2 * PAIRS + j)] = o_l * o_r * o_e - gl - gr;
        }
    }
    Ok(gram)
}

/// Squared scale of each photon-number class: `4 p_k`, or 1 for classes
/// that vanish in double precision so the factor below stays invertible.
fn class_scales(mu: f64) -> [f64; 4] {
    let w = mod4_weights(mu);
    let wmax = w.iter().copied().fold(0.0, f64::max);
    w.map(|v| if v > 1e-300 * wmax { 4.0 * v } else { 1.0 })
}

/// Factor `U` with `U U^H = Lambda`: `U = (F_A D_A) ⊗ (F_B D_B)` with the
/// 4-point DFT `F[x, k] = i^(-xk) / 2` and `D` the square roots of the
/// class scales.
pub fn overlap_factor(mu_a: f64, mu_b: f64) -> DMatrix<Complex64> {
    let one = |mu: f64| -> DMatrix<Complex64> {
        let sc = class_scales(mu);
        DMatrix::from_fn(SETTINGS, SETTINGS, |x, k| {
            i_pow(-((x * k) as i64)) * (0.5 * sc[k].sqrt())
        })
    };
    one(mu_a).kronecker(&one(mu_b))
}

/// The same SDP as [`build_sdp`] after the change of variables
/// `G_z = U G'_z U^H` with `U` from [`overlap_factor`].
///
/// `Lambda` has eigenvalues spanning many orders of magnitude (products of
/// photon-number class weights), so every feasible `G` is nearly singular
/// and interior-point iterates stall. In the new coordinates the overlap
/// constraint is diagonal, `sum_z G'_z = M'(P)` with `M'(vacuum) = I`, and
/// the feasible set is well rounded. The rows are
///
/// * `Re G_z[ii] = P(z|i)` for `z` in `{L, R}` (32 rows; the `∅` rows follow
///   from these and the overlap rows),
/// * the 256 real entries of `sum_z G'_z - M'(P) = 0`,
/// * `sum P = 1`,
///
/// which span the same space as the original rows. The trace bound used by
/// the certificate comes from the photon-number constraints.
pub fn build_whitened_sdp(stats: &StatTable, overlaps: &SignalOverlaps, tc: &TrojanConstraint) -> Result<ThaProblem> {
    tc.validate()?;
    let pp = p_pass(stats);
    if !(pp > 0.0) {
        return Err(CoreError::UndefinedStatistic(
            "zero pass probability; phase error undefined".into(),
        ));
    }
    let e_bit = bit_error(stats)?;
    let u = overlap_factor(overlaps.mu_a, overlaps.mu_b);
    let (wa, wb) = (mod4_weights(overlaps.mu_a), mod4_weights(overlaps.mu_b));
    let (sa, sb) = (class_scales(overlaps.mu_a), class_scales(overlaps.mu_b));
    let emb = HermitianEmbedding::new(GRAM_DIM);
    let mut sdp = SdpProblem::new(emb.real_dim(), N_PHOTON_VARS);

    // coeff * Re G_z[i, j] in terms of G'_z.
    let add_re_g = |f: &mut LinearFunctional, z: usize, i: usize, j: usize, coeff: f64| {
        for a in 0..PAIRS {
            for b in 0..PAIRS {
                let c = u[(i, a)] * u[(j, b)].conj() * coeff;
                let (ga, gb) = (z * PAIRS + a, z * PAIRS + b);
                if c.re != 0.0 {
                    emb.add_re(f, ga, gb, c.re);
                }
                if c.im != 0.0 {
                    emb.add_im(f, ga, gb, -c.im);
                }
            }
        }
    };

    let mut obj = LinearFunctional::new();
    {
        use Outcome::{L, R};
        let scale = 1.0 / (4.0 * pp);
        for (z, i, j, sign) in [
            (L, (0, 0), (2, 2), 1.0),
            (R, (0, 0), (2, 2), -1.0),
            (L, (0, 2), (2, 0), -1.0),
            (R, (0, 2), (2, 0), 1.0),
        ] {
            let (pi, pj) = (i.0 * SETTINGS + i.1, j.0 * SETTINGS + j.1);
            add_re_g(&mut obj, z.index(), pi, pj, sign * scale);
        }
    }
    sdp.objective = obj.clone();

    for z in [Outcome::L, Outcome::R] {
        for x in 0..SETTINGS {
            for y in 0..SETTINGS {
                let i = x * SETTINGS + y;
                let mut f = LinearFunctional::new();
                add_re_g(&mut f, z.index(), i, i, 1.0);
                sdp.add_eq(f, stats.get(z, x, y));
            }
        }
    }

    // Diagonal of M' for the photon numbers (n, m) at class index a = (k, l).
    let m_diag = |n: usize, m: usize, a: usize| -> f64 {
        let (k, l) = (a / SETTINGS, a % SETTINGS);
        16.0 * wa[(k + 4 - n) % 4] * wb[(l + 4 - m) % 4] / (sa[k] * sb[l])
    };
    for a in 0..PAIRS {
        for b in a..PAIRS {
            let mut re = LinearFunctional::new();
            for z in 0..3 {
                emb.add_re(&mut re, z * PAIRS + a, z * PAIRS + b, 1.0);
            }
            if a == b {
                for n in 0..4 {
                    for m in 0..4 {
                        re.add_lin(photon_var(n, m), -m_diag(n, m, a));
                    }
                }
                sdp.add_eq(re, 0.0);
                continue;
            }
            sdp.add_eq(re, 0.0);
            let mut im = LinearFunctional::new();
            for z in 0..3 {
                emb.add_im(&mut im, z * PAIRS + a, z * PAIRS + b, 1.0);
            }
            sdp.add_eq(im, 0.0);
        }
    }

    let mut norm = LinearFunctional::new();
    for k in 0..N_PHOTON_VARS {
        norm.add_lin(k, 1.0);
    }
    sdp.add_eq(norm, 1.0);

    let mut energy_a = LinearFunctional::new();
    let mut energy_b = LinearFunctional::new();
    for n in 0..4 {
        for m in 0..4 {
            energy_a.add_lin(photon_var(n, m), n as f64);
            energy_b.add_lin(photon_var(n, m), m as f64);
        }
    }
    sdp.add_ineq(energy_a, tc.nu_a);
    sdp.add_ineq(energy_b, tc.nu_b);
    sdp.add_ineq(obj, 0.0);

    // trace(G') = sum_nm P_nm tau_nm. With sum P = 1 and P_nm capped by the
    // photon-number constraints, it is at most tau_00 plus the capped
    // excess of the other terms.
    let tau = |n: usize, m: usize| (0..PAIRS).map(|a| m_diag(n, m, a)).sum::<f64>();
    let t00 = tau(0, 0);
    let mut trace = t00;
    for n in 0..4 {
        for m in 0..4 {
            if n == 0 && m == 0 {
                continue;
            }
            let mut cap: f64 = 1.0;
            if n > 0 {
                cap = cap.min(tc.nu_a / n as f64);
            }
            if m > 0 {
                cap = cap.min(tc.nu_b / m as f64);
            }
            trace += (tau(n, m) - t00).max(0.0) * cap;
        }
    }
    // Round-off allowance on the bound itself.
    sdp.bounds.trace = Some(2.0 * trace * (1.0 + 1e-12));
    sdp.bounds.lin_upper = vec![Some(1.0); N_PHOTON_VARS];
    sdp.validate()?;

    Ok(ThaProblem {
        sdp,
        embedding: emb,
        p_pass: pp,
        e_bit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseErrorBound {
    /// In `[0, 1/2]`.
    pub e_ph_upper: f64,
    /// True when the solver's certified bound exceeded 1/2 and was capped.
    pub clamped: bool,
    pub iterations: usize,
    pub rigor_margin: f64,
    /// Certified bound minus primal value, in phase-error units.
    pub gap: f64,
}

/// Certified upper bound on the phase error rate, solved in the whitened
/// coordinates of [`build_whitened_sdp`].
pub fn phase_error_bound(
    stats: &StatTable,
    overlaps: &SignalOverlaps,
    tc: &TrojanConstraint,
    solver: &dyn ConicSolver,
) -> Result<PhaseErrorBound> {
    let prob = build_whitened_sdp(stats, overlaps, tc)?;
    let sol = solver.solve(&prob.sdp)?;
    bound_from_solution(&sol)
}

pub fn bound_from_solution(sol: &SdpSolution) -> Result<PhaseErrorBound> {
    if sol.status != SolveStatus::Optimal || !sol.certified_bound.is_finite() {
        return Err(CoreError::SolverFailure {
            status: sol.status,
            dual_residual: sol.dual_feasibility_residual,
        });
    }
    let raw = PHASE_ERROR_OFFSET + sol.certified_bound;
    let clamped = raw > PHASE_ERROR_OFFSET;
    if clamped {
        log::debug!("phase error bound {raw} capped at 1/2");
    }
    Ok(PhaseErrorBound {
        e_ph_upper: raw.clamp(0.0, PHASE_ERROR_OFFSET),
        clamped,
        iterations: sol.iterations,
        rigor_margin: sol.rigor_margin,
        gap: sol.certified_bound - sol.primal_value,
    })
}

/// Binary entropy in bits.
pub fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

pub fn key_rate(p_pass: f64, e_bit: f64, e_ph_upper: f64) -> f64 {
    (p_pass * (1.0 - h2(e_ph_upper) - h2(e_bit))).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRatePoint {
    pub distance_km: f64,
    pub nu: f64,
    #[serde(rename = "mu")]
    pub mu_opt: f64,
    pub p_pass: f64,
    pub e_bit: f64,
    #[serde(rename = "e_ph")]
    pub e_ph_upper: f64,
    pub rate: f64,
    pub iterations: usize,
    pub rigor_margin: f64,
}

pub const KEY_RATE_CSV_HEADER: &str = "distance_km,nu,mu,p_pass,e_bit,e_ph,rate";

impl KeyRatePoint {
    /// One CSV record in `KEY_RATE_CSV_HEADER` order.
    pub fn csv_record(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.distance_km, self.nu, self.mu_opt, self.p_pass, self.e_bit, self.e_ph_upper, self.rate
        )
    }
}

/// Rate for one intensity, distance and Trojan bound.
pub fn evaluate_point(params: &ChannelParams, tc: &TrojanConstraint, solver: &dyn ConicSolver) -> Result<KeyRatePoint> {
    let stats = honest_statistics(params)?;
    let overlaps = crate::mdi::signal_overlaps(params.mu_a, params.mu_b)?;
    let bound = phase_error_bound(&stats, &overlaps, tc, solver)?;
    let pp = p_pass(&stats);
    let e_bit = bit_error(&stats)?;
    Ok(KeyRatePoint {
        distance_km: params.distance_km,
        nu: tc.nu_a.max(tc.nu_b),
        mu_opt: params.mu_a,
        p_pass: pp,
        e_bit,
        e_ph_upper: bound.e_ph_upper,
        rate: key_rate(pp, e_bit, bound.e_ph_upper),
        iterations: bound.iterations,
        rigor_margin: bound.rigor_margin,
    })
}

fn better(a: &KeyRatePoint, b: &KeyRatePoint) -> bool {
    a.rate > b.rate || (a.rate == b.rate && a.mu_opt < b.mu_opt)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi / lo).ln();
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo * (span * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Best rate over `mu = mu_a = mu_b` in `mu_range`.
///
/// A 16-point log-spaced scan locates the peak. If the scan looks unimodal
/// the bracket around its best point is refined by golden-section search in
/// `ln(mu)`; otherwise the scan's best point is returned.
pub fn optimize_intensity(
    template: &ChannelParams,
    tc: &TrojanConstraint,
    mu_range: (f64, f64),
    solver: &dyn ConicSolver,
) -> Result<KeyRatePoint> {
    let (lo, hi) = mu_range;
    if !(lo > 0.0 && hi >= lo && hi <= 1.0) {
        return Err(CoreError::Domain(format!(
            "intensity range ({lo}, {hi}) must lie in (0, 1]"
        )));
    }
    let at = |mu: f64| evaluate_point(&template.with_mu(mu), tc, solver);
    if lo == hi {
        return at(lo);
    }
    let grid = log_grid(lo, hi, MU_PRESCAN_POINTS);
    // A candidate whose bound is not certified is dropped from the search;
    // it never contributes a rate. Only if every candidate fails is the
    // optimization itself a failure.
    let scan: Vec<Result<KeyRatePoint>> = grid.iter().map(|&mu| at(mu)).collect();
    if scan.iter().all(|p| p.is_err()) {
        return scan.into_iter().next().expect("non-empty grid");
    }
    for (mu, p) in grid.iter().zip(&scan) {
        if let Err(e) = p {
            log::debug!("intensity {mu:e} skipped: {e}");
        }
    }
    let rates: Vec<f64> = scan
        .iter()
        .map(|p| p.as_ref().map_or(f64::NEG_INFINITY, |p| p.rate))
        .collect();
    let k = argmax_first(&rates).unwrap_or(0);
    if rates[k] <= 0.0 {
        return Ok(scan
            .iter()
            .find_map(|p| p.as_ref().ok())
            .expect("some candidate solved")
            .clone());
    }
    let solved: Vec<f64> = rates.iter().copied().filter(|r| r.is_finite()).collect();
    let mut best = scan[k].as_ref().expect("finite rate implies a solved point").clone();
    if is_unimodal(&solved) {
        let a = grid[k.saturating_sub(1)].ln();
        let b = grid[(k + 1).min(grid.len() - 1)].ln();
        let mut seen: Option<KeyRatePoint> = None;
        golden_max(
            |lm: f64| -> Result<f64> {
                let Ok(p) = at(lm.exp()) else {
                    return Ok(f64::NEG_INFINITY);
                };
                let r = p.rate;
                if seen.as_ref().is_none_or(|s| better(&p, s)) {
                    seen = Some(p);
                }
                Ok(r)
            },
            a,
            b,
            MU_LOG_TOL,
        )?;
        if let Some(p) = seen {
            if better(&p, &best) {
                best = p;
            }
        }
    } else {
        log::debug!("rate scan over intensity is not unimodal; using the scan maximum");
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distance_km: f64,
    pub nu: f64,
    pub result: std::result::Result<KeyRatePoint, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mu_range: (f64, f64),
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mu_range: (1e-3, 1.0),
            workers: 1,
        }
    }
}

/// Key rate over every `(nu, distance)` pair, ordered by `nu` as given and
/// then by distance as given.
///
/// After each point's own intensity optimization, the optimal intensities
/// found for every `nu` at a distance are re-evaluated under every other
/// `nu`. At a fixed intensity, phase-error bounds are made non-decreasing in
/// `nu` by taking the running maximum, which keeps each a valid bound
/// because the feasible sets are nested. Each point then keeps its best
/// candidate, so rates are non-increasing in `nu` by construction.
pub fn keyrate_sweep(
    distances: &[f64],
    nus: &[f64],
    template: &ChannelParams,
    cfg: &SweepConfig,
    solver: &dyn ConicSolver,
) -> Result<Vec<SweepPoint>> {
    for &nu in nus {
        TrojanConstraint::symmetric(nu)?;
    }
    for &d in distances {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(CoreError::Domain(format!(
                "distance {d} must be finite and non-negative"
            )));
        }
    }
    let run = || sweep_inner(distances, nus, template, cfg, solver);
    if cfg.workers == 0 {
        return Ok(run());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CoreError::Numerical(format!("thread pool: {e}")))?;
    Ok(pool.install(run))
}

fn sweep_inner(
    distances: &[f64],
    nus: &[f64],
    template: &ChannelParams,
    cfg: &SweepConfig,
    solver: &dyn ConicSolver,
) -> Vec<SweepPoint> {
    let tasks: Vec<(usize, usize)> = (0..nus.len())
        .flat_map(|a| (0..distances.len()).map(move |b| (a, b)))
        .collect();
    let own: Vec<std::result::Result<KeyRatePoint, String>> = tasks
        .par_iter()
        .map(|&(a, b)| {
            let tc = TrojanConstraint::symmetric(nus[a]).map_err(|e| e.to_string())?;
            optimize_intensity(&template.with_distance(distances[b]), &tc, cfg.mu_range, solver)
                .map_err(|e| e.to_string())
        })
        .collect();

    // Ascending nu, stable for equal values.
    let mut order: Vec<usize> = (0..nus.len()).collect();
    order.sort_by(|&p, &q| nus[p].total_cmp(&nus[q]));

    let per_distance: Vec<Vec<std::result::Result<KeyRatePoint, String>>> = (0..distances.len())
        .into_par_iter()
        .map(|b| {
            let mut mus: Vec<f64> = (0..nus.len())
                .filter_map(|a| own[a * distances.len() + b].as_ref().ok().map(|p| p.mu_opt))
                .collect();
            mus.sort_by(f64::total_cmp);
            mus.dedup();
            // Candidates are only compared after flooring, so a point's own
            // optimum competes on the same footing as the others.
            let mut best: Vec<Option<KeyRatePoint>> = vec![None; nus.len()];
            for &mu in &mus {
                let params = template.with_distance(distances[b]).with_mu(mu);
                let evals: Vec<Option<KeyRatePoint>> = order
                    .par_iter()
                    .map(|&a| {
                        let tc = TrojanConstraint::symmetric(nus[a]).ok()?;
                        evaluate_point(&params, &tc, solver).ok()
                    })
                    .collect();
                let mut floor = 0.0f64;
                for (slot, &a) in order.iter().enumerate() {
                    let Some(mut p) = evals[slot].clone() else {
                        // An unsolved point only supports the trivial bound.
                        floor = PHASE_ERROR_OFFSET;
                        continue;
                    };
                    floor = floor.max(p.e_ph_upper);
                    p.e_ph_upper = floor;
                    p.rate = key_rate(p.p_pass, p.e_bit, floor);
                    if best[a].as_ref().is_none_or(|cur| better(&p, cur)) {
                        best[a] = Some(p);
                    }
                }
            }
            (0..nus.len())
                .map(|a| match (&own[a * distances.len() + b], best[a].take()) {
                    (Err(e), _) => Err(e.clone()),
                    (Ok(_), Some(p)) => Ok(p),
                    (Ok(p), None) => Ok(p.clone()),
                })
                .collect()
        })
        .collect();

    tasks
        .iter()
        .map(|&(a, b)| SweepPoint {
            distance_km: distances[b],
            nu: nus[a],
            result: per_distance[b][a].clone(),
        })
        .collect()
}

/// Header plus one record per successful point; failed points are written
/// as comments.
pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::new();
    out.push_str(KEY_RATE_CSV_HEADER);
    out.push('\n');
    for p in points {
        match &p.result {
            Ok(k) => {
                out.push_str(&k.csv_record());
                out.push('\n');
            }
            Err(e) => {
                let _ = writeln!(out, "# failed distance_km={} nu={:e}: {e}", p.distance_km, p.nu);
            }
        }
    }
    out
}

/// Attenuation in dB that brings `p_limit` down to `nu_target` photons per
/// pulse after passing the attenuator twice. Negative when no attenuation
/// is needed.
pub fn attenuation_budget(p_limit: f64, clock: f64, wavelength: f64, nu_target: f64) -> Result<f64> {
    for (v, what) in [
        (p_limit, "power"),
        (clock, "clock rate"),
        (wavelength, "wavelength"),
        (nu_target, "target"),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CoreError::Domain(format!("{what} must be positive and finite")));
        }
    }
    let n = photon_flux(p_limit, wavelength)? / clock;
    Ok(10.0 / 2.0 * (n / nu_target).log10())
}

/// Mean photon number per pulse after a single pass through `atten_db`.
pub fn source_intensity(p_laser: f64, clock: f64, wavelength: f64, atten_db: f64) -> Result<f64> {
    for (v, what) in [(p_laser, "power"), (clock, "clock rate"), (wavelength, "wavelength")] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CoreError::Domain(format!("{what} must be positive and finite")));
        }
    }
    if !atten_db.is_finite() {
        return Err(CoreError::Domain("attenuation must be finite".into()));
    }
    Ok(photon_flux(p_laser, wavelength)? / clock * 10f64.powf(-atten_db / 10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindingReport {
    pub threshold_w: f64,
    pub threshold_dbm: f64,
    pub insertion_loss_db: f64,
    pub blinding_power_w: f64,
    pub protected: bool,
}

/// Whether the limiter keeps the output below the power needed to blind the
/// detectors.
pub fn blinding_check(cfg: &LimiterConfig, blinding_power: f64) -> Result<BlindingReport> {
    if !(blinding_power > 0.0) || !blinding_power.is_finite() {
        return Err(CoreError::Domain("blinding power must be positive and finite".into()));
    }
    let th = limiting_threshold(cfg, cfg.material.damage_power)?;
    Ok(BlindingReport {
        threshold_w: th.p_out_max,
        threshold_dbm: watts_to_dbm(th.p_out_max),
        insertion_loss_db: insertion_loss_db(cfg)?,
        blinding_power_w: blinding_power,
        protected: th.p_out_max < blinding_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdi::signal_overlaps;

    #[test]
    fn gram_index_round_trip() {
        for k in 0..GRAM_DIM {
            assert_eq!(GramIndex::from_flat(k).unwrap().flat(), k);
        }
        assert!(GramIndex::from_flat(GRAM_DIM).is_none());
        assert_eq!(GramIndex::new(Outcome::R, 2, 2).flat(), 26);
    }

    #[test]
    fn census() {
        let p = ChannelParams::set_b(0.0183, 0.0);
        let stats = honest_statistics(&p).unwrap();
        let o = signal_overlaps(p.mu_a, p.mu_b).unwrap();
        let t = build_sdp(&stats, &o, &TrojanConstraint::symmetric(0.0).unwrap()).unwrap();
        assert_eq!(t.sdp.psd_dim, 96);
        assert_eq!(t.sdp.n_lin, 16);
        assert_eq!(t.sdp.eq_constraints.len(), 48 + 240 + 1);
        assert_eq!(t.sdp.ineq_constraints.len(), 3);
    }

    #[test]
    fn honest_gram_is_feasible() {
        for d in [0.0, 50.0, 100.0] {
            let p = ChannelParams::set_b(0.0183, d);
            let stats = honest_statistics(&p).unwrap();
            let o = signal_overlaps(p.mu_a, p.mu_b).unwrap();
            let t = build_sdp(&stats, &o, &TrojanConstraint::symmetric(0.0).unwrap()).unwrap();
            let gram = honest_gram(&p).unwrap();
            let (x, lin) = t.embed_point(&gram, &PhotonDistribution::vacuum());
            assert!(t.max_violation(&x, &lin) < 1e-9);
            let h = (&gram + gram.adjoint()) * Complex64::new(0.5, 0.0);
            let herm_err = (&gram - &h).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(herm_err < 1e-15);
            for z in 0..3 {
                let block = gram.view((z * PAIRS, z * PAIRS), (PAIRS, PAIRS)).into_owned();
                let eig = HermitianEmbedding::new(PAIRS)
                    .embed(&block)
                    .symmetric_eigenvalues()
                    .min();
                assert!(eig > -1e-12, "block {z} min eigenvalue {eig}");
            }
        }
    }

    #[test]
    fn overlap_factor_reproduces_overlaps() {
        for (ma, mb) in [(0.0183, 0.0183), (0.2, 0.05), (1e-4, 1.0)] {
            let u = overlap_factor(ma, mb);
            let o = signal_overlaps(ma, mb).unwrap();
            let err = (&u * u.adjoint() - &o.lambda)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-14, "{err}");
        }
    }

    #[test]
    fn whitened_problem_accepts_mapped_honest_gram() {
        // Mapping G through U^-1 amplifies its round-off by about
        // 1 / (16 p_3^2), so these intensities keep that factor small.
        for (mu, d, nu) in [(0.3, 0.0, 0.0), (0.2, 50.0, 1e-6), (0.4, 100.0, 0.0)] {
            let p = ChannelParams::set_b(mu, d);
            let stats = honest_statistics(&p).unwrap();
            let o = signal_overlaps(p.mu_a, p.mu_b).unwrap();
            let tc = TrojanConstraint::symmetric(nu).unwrap();
            let w = build_whitened_sdp(&stats, &o, &tc).unwrap();
            assert_eq!(w.sdp.eq_constraints.len(), 32 + 256 + 1);
            let gram = honest_gram(&p).unwrap();
            let uinv = overlap_factor(p.mu_a, p.mu_b).try_inverse().unwrap();
            let mut gw = DMatrix::<Complex64>::zeros(GRAM_DIM, GRAM_DIM);
            for z in 0..3 {
                let blk = gram.view((z * PAIRS, z * PAIRS), (PAIRS, PAIRS)).into_owned();
                gw.view_mut((z * PAIRS, z * PAIRS), (PAIRS, PAIRS))
                    .copy_from(&(&uinv * blk * uinv.adjoint()));
            }
            let (x, lin) = w.embed_point(&gw, &PhotonDistribution::vacuum());
            let viol = w.max_violation(&x, &lin);
            assert!(viol < 1e-9, "violation {viol}");
            let via_obj = PHASE_ERROR_OFFSET + w.sdp.objective.eval(&x, &lin);
            assert!((via_obj - w.phase_error_of(&gram)).abs() < 1e-9);
            let trace: f64 = (0..GRAM_DIM).map(|k| gw[(k, k)].re).sum();
            assert!(2.0 * trace <= w.sdp.bounds.trace.unwrap());
        }
    }

    #[test]
    fn objective_is_real_part() {
        let p = ChannelParams::set_b(0.05, 10.0);
        let stats = honest_statistics(&p).unwrap();
        let o = signal_overlaps(p.mu_a, p.mu_b).unwrap();
        let t = build_sdp(&stats, &o, &TrojanConstraint::symmetric(1e-6).unwrap()).unwrap();
        let gram = honest_gram(&p).unwrap();
        let (x, lin) = t.embed_point(&gram, &PhotonDistribution::vacuum());
        let via_sdp = PHASE_ERROR_OFFSET + t.sdp.objective.eval(&x, &lin);
        assert!((via_sdp - t.phase_error_of(&gram)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_stats_rejected() {
        let p = ChannelParams::set_b(0.0, 0.0);
        let mut q = p;
        q.dark_count = 0.0;
        let stats = honest_statistics(&q).unwrap();
        let o = signal_overlaps(0.0, 0.0).unwrap();
        assert!(matches!(
            build_sdp(&stats, &o, &TrojanConstraint::symmetric(0.0).unwrap()),
            Err(CoreError::UndefinedStatistic(_))
        ));
    }

    #[test]
    fn entropy_and_rate() {
        assert_eq!(h2(0.0), 0.0);
        assert_eq!(h2(1.0), 0.0);
        assert_eq!(h2(0.5), 1.0);
        assert_eq!(key_rate(0.3, 0.0, 0.0), 0.3);
        assert_eq!(key_rate(0.3, 0.01, 0.5), 0.0);
        // Independent entropy arithmetic with natural logs.
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / std::f64::consts::LN_2;
        let r = key_rate(0.1, 0.02, 0.05);
        assert!((r - 0.1 * (1.0 - h(0.05) - h(0.02))).abs() < 1e-15);
        assert!((r - 0.0572).abs() < 1e-4);
    }

    #[test]
    fn budget_and_source() {
        let a = attenuation_budget(1e-3, 1e9, 1260e-9, 1e-7).unwrap();
        assert!((a - 69.0).abs() < 0.1, "{a}");
        let n = photon_flux(1e-3, 1260e-9).unwrap() / 1e9;
        assert!(attenuation_budget(1e-3, 1e9, 1260e-9, n).unwrap().abs() < 1e-12);
        let a2 = attenuation_budget(1e-3, 1e9, 1260e-9, 2e-7).unwrap();
        assert!((a - a2 - 5.0 * 2f64.log10()).abs() < 1e-12);
        let mu = source_intensity(23e-6, 1e9, 1260e-9, 69.0).unwrap();
        assert!((mu - 0.0183).abs() < 2e-4, "{mu}");
        let base = source_intensity(23e-6, 1e9, 1260e-9, 0.0).unwrap();
        assert!((base - photon_flux(23e-6, 1260e-9).unwrap() / 1e9).abs() < 1e-9);
        let dbl = source_intensity(46e-6, 1e9, 1260e-9, 69.0).unwrap();
        assert!((dbl / mu - 2.0).abs() < 1e-12);
        assert!(attenuation_budget(0.0, 1e9, 1260e-9, 1e-7).is_err());
    }

    #[test]
    fn double_pass_meets_target() {
        for (p, nu) in [(1e-3, 1e-7), (2.5e-3, 3e-9), (4e-4, 1e-5)] {
            let a = attenuation_budget(p, 1e9, 1260e-9, nu).unwrap();
            let n = photon_flux(p, 1260e-9).unwrap() / 1e9;
            let after = n * 10f64.powf(-2.0 * a / 10.0);
            assert!(after <= nu * (1.0 + 1e-12));
        }
    }

    #[test]
    fn blinding_rules() {
        let cfg = LimiterConfig::acrylic(0.0508, 380e-6);
        let r = blinding_check(&cfg, 10e-3).unwrap();
        assert!(r.threshold_dbm <= 6.03 && r.protected);
        assert!(r.insertion_loss_db > 0.0);
        assert!(blinding_check(&cfg, f64::INFINITY).is_err());
        assert!(blinding_check(&cfg, 0.0).is_err());
    }
}
