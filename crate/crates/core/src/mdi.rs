//! Honest-device model of phase-encoded MDI-QKD.
//!
//! Alice and Bob send weak coherent pulses `sqrt(mu) i^x` and `sqrt(mu) i^y`
//! to an untrusted node. The node interferes them on a balanced splitter and
//! reads two threshold detectors `L` and `R`. Misalignment reduces the
//! interference visibility to `1 - 2 e_ali`. A round where exactly one
//! detector clicks is announced as that detector. Otherwise it is `∅`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

/// Number of phase settings per party.
pub const SETTINGS: usize = 4;
/// Number of `(x, y)` setting pairs.
pub const PAIRS: usize = SETTINGS * SETTINGS;
/// Settings used for key generation.
pub const KEY_SETTINGS: [usize; 2] = [0, 2];

/// `i^k` for any integer `k`, exact.
pub fn i_pow(k: i64) -> Complex64 {
    match k.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `<g|d>` for coherent states.
pub fn coherent_overlap(g: Complex64, d: Complex64) -> Complex64 {
    (g.conj() * d - 0.5 * (g.norm_sqr() + d.norm_sqr())).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub mu_a: f64,
    pub mu_b: f64,
    /// Alice to Bob, km. The node sits in the middle.
    pub distance_km: f64,
    pub fiber_loss_db_per_km: f64,
    pub det_efficiency: f64,
    /// Per gate.
    pub dark_count: f64,
    pub misalignment: f64,
}

impl ChannelParams {
    fn preset(mu: f64, distance_km: f64, det_efficiency: f64, dark_count: f64) -> Self {
        Self {
            mu_a: mu,
            mu_b: mu,
            distance_km,
            fiber_loss_db_per_km: 0.2,
            det_efficiency,
            dark_count,
            misalignment: 0.02,
        }
    }

    /// Low-efficiency detectors: 10 %, dark counts 1e-5.
    pub fn set_a(mu: f64, distance_km: f64) -> Self {
        Self::preset(mu, distance_km, 0.10, 1e-5)
    }

    /// High-efficiency detectors: 85 %, dark counts 1e-7.
    pub fn set_b(mu: f64, distance_km: f64) -> Self {
        Self::preset(mu, distance_km, 0.85, 1e-7)
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu_a = mu;
        self.mu_b = mu;
        self
    }

    pub fn with_distance(mut self, distance_km: f64) -> Self {
        self.distance_km = distance_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(CoreError::Domain(format!("{what} must lie in [0, 1], got {v}")))
            }
        };
        prob(self.det_efficiency, "detector efficiency")?;
        prob(self.dark_count, "dark count probability")?;
        prob(self.misalignment, "misalignment")?;
        for (v, what) in [
            (self.mu_a, "mu_a"),
            (self.mu_b, "mu_b"),
            (self.distance_km, "distance"),
            (self.fiber_loss_db_per_km, "fiber loss"),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CoreError::Domain(format!(
                    "{what} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Source-to-detector transmittance of one arm, detector included.
    pub fn arm_transmittance(&self) -> f64 {
        self.det_efficiency * 10f64.powf(-self.fiber_loss_db_per_km * (self.distance_km / 2.0) / 10.0)
    }

    pub fn visibility(&self) -> f64 {
        1.0 - 2.0 * self.misalignment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    L,
    R,
    Empty,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::L, Outcome::R, Outcome::Empty];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Outcome::L => "L",
            Outcome::R => "R",
            Outcome::Empty => "empty",
        }
    }
}

/// Index of the setting pair `(x, y)` in `0..16`.
pub fn pair_index(x: usize, y: usize) -> usize {
    x * SETTINGS + y
}

/// Observed statistics `P(z | x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatTable {
    p: [[f64; PAIRS]; 3],
}

impl StatTable {
    /// Checks that entries lie in `[0, 1]` and each `(x, y)` column sums to
    /// one within `1e-12`.
    pub fn new(p: [[f64; PAIRS]; 3]) -> Result<Self> {
        for (z, row) in p.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoreError::Domain(format!("P(z={z}|setting {k}) = {v} outside [0, 1]")));
                }
            }
        }
        for k in 0..PAIRS {
            let s = p[0][k] + p[1][k] + p[2][k];
            if (s - 1.0).abs() > 1e-12 {
                return Err(CoreError::Domain(format!(
                    "outcomes for setting {}{} sum to {s}",
                    k / SETTINGS,
                    k % SETTINGS
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn get(&self, z: Outcome, x: usize, y: usize) -> f64 {
        self.p[z.index()][pair_index(x, y)]
    }

    pub fn raw(&self) -> &[[f64; PAIRS]; 3] {
        &self.p
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CoreError::Domain(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CoreError::Domain(e.to_string()))
    }
}

impl Serialize for StatTable {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut out: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
        for z in Outcome::ALL {
            let row = out.entry(z.key()).or_default();
            for x in 0..SETTINGS {
                for y in 0..SETTINGS {
                    row.insert(format!("{x}{y}"), self.get(z, x, y));
                }
            }
        }
        out.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for StatTable {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::deserialize(de)?;
        let mut p = [[f64::NAN; PAIRS]; 3];
        for z in Outcome::ALL {
            let row = raw
                .get(z.key())
                .ok_or_else(|| D::Error::custom(format!("missing outcome {}", z.key())))?;
            if row.len() != PAIRS {
                return Err(D::Error::custom(format!("outcome {} needs {PAIRS} settings", z.key())));
            }
            for x in 0..SETTINGS {
                for y in 0..SETTINGS {
                    let key = format!("{x}{y}");
                    let v = row
                        .get(&key)
                        .ok_or_else(|| D::Error::custom(format!("missing setting {key}")))?;
                    p[z.index()][pair_index(x, y)] = *v;
                }
            }
        }
        if raw.len() != 3 {
            return Err(D::Error::custom("unexpected outcome key"));
        }
        StatTable::new(p).map_err(D::Error::custom)
    }
}

/// Node-side amplitudes for one setting pair.
pub(crate) fn node_amplitudes(params: &ChannelParams, x: usize, y: usize) -> (Complex64, Complex64) {
    let eta = params.arm_transmittance();
    let a = (params.mu_a * eta).sqrt() * i_pow(x as i64);
    let b = (params.mu_b * eta).sqrt() * i_pow(y as i64);
    (a, b)
}

pub fn honest_statistics(params: &ChannelParams) -> Result<StatTable> {
    params.validate()?;
    let v = params.visibility();
    let mut p = [[0.0; PAIRS]; 3];
    for x in 0..SETTINGS {
        for y in 0..SETTINGS {
            let (a, b) = node_amplitudes(params, x, y);
            let mean = 0.5 * (a.norm_sqr() + b.norm_sqr());
            let cross = v * (a.conj() * b).re;
            let i_l = (mean + cross).max(0.0);
            let i_r = (mean - cross).max(0.0);
            let q_l = -(1.0 - params.dark_count) * (-i_l).exp() + 1.0;
            let q_r = -(1.0 - params.dark_count) * (-i_r).exp() + 1.0;
            let k = pair_index(x, y);
            p[0][k] = q_l * (1.0 - q_r);
            p[1][k] = q_r * (1.0 - q_l);
            p[2][k] = 1.0 - p[0][k] - p[1][k];
        }
    }
    StatTable::new(p)
}

/// Probability of a conclusive announcement when both parties pick key
/// settings.
pub fn p_pass(stats: &StatTable) -> f64 {
    let mut s = 0.0;
    for x in KEY_SETTINGS {
        for y in KEY_SETTINGS {
            s += stats.get(Outcome::L, x, y) + stats.get(Outcome::R, x, y);
        }
    }
    s / 4.0
}

/// Bit error rate after Bob flips his bit on `R`.
pub fn bit_error(stats: &StatTable) -> Result<f64> {
    let pp = p_pass(stats);
    if !(pp > 0.0) {
        return Err(CoreError::UndefinedStatistic(
            "bit error rate with zero pass probability".into(),
        ));
    }
    let wrong = stats.get(Outcome::L, 0, 2)
        + stats.get(Outcome::L, 2, 0)
        + stats.get(Outcome::R, 0, 0)
        + stats.get(Outcome::R, 2, 2);
    Ok(wrong / (4.0 * pp))
}

/// Inner products of the characterized source states, indexed by setting
/// pair. Entry `(i, j)` is `<psi_i|psi_j>` with `i = (x', y')` as the bra.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalOverlaps {
    pub mu_a: f64,
    pub mu_b: f64,
    pub lambda: DMatrix<Complex64>,
}

impl SignalOverlaps {
    pub fn get(&self, xp: usize, yp: usize, x: usize, y: usize) -> Complex64 {
        self.lambda[(pair_index(xp, yp), pair_index(x, y))]
    }
}

pub fn signal_overlaps(mu_a: f64, mu_b: f64) -> Result<SignalOverlaps> {
    if !(mu_a >= 0.0 && mu_b >= 0.0) || !mu_a.is_finite() || !mu_b.is_finite() {
        return Err(CoreError::Domain(
            "mean photon numbers must be finite and non-negative".into(),
        ));
    }
    let (sa, sb) = (mu_a.sqrt(), mu_b.sqrt());
    let lambda = DMatrix::from_fn(PAIRS, PAIRS, |i, j| {
        let (xp, yp) = (i / SETTINGS, i % SETTINGS);
        let (x, y) = (j / SETTINGS, j % SETTINGS);
        if i == j {
            return Complex64::new(1.0, 0.0);
        }
        coherent_overlap(sa * i_pow(xp as i64), sa * i_pow(x as i64))
            * coherent_overlap(sb * i_pow(yp as i64), sb * i_pow(y as i64))
    });
    Ok(SignalOverlaps { mu_a, mu_b, lambda })
}

/// Photon-number distribution `P_nm` of the Trojan light leaving Alice
/// (`n`) and Bob (`m`), truncated at three photons each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    pub p: [[f64; 4]; 4],
}

impl PhotonDistribution {
    pub fn new(p: [[f64; 4]; 4]) -> Result<Self> {
        if p.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(CoreError::Domain(
                "photon-number probabilities must be non-negative".into(),
            ));
        }
        Ok(Self { p })
    }

    pub fn vacuum() -> Self {
        let mut p = [[0.0; 4]; 4];
        p[0][0] = 1.0;
        Self { p }
    }

    pub fn uniform() -> Self {
        Self {
            p: [[1.0 / 16.0; 4]; 4],
        }
    }

    pub fn total(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    pub fn mean_n(&self) -> f64 {
        (0..4).map(|n| n as f64 * self.p[n].iter().sum::<f64>()).sum()
    }

    pub fn mean_m(&self) -> f64 {
        (0..4)
            .map(|m| m as f64 * (0..4).map(|n| self.p[n][m]).sum::<f64>())
            .sum()
    }
}

/// Poisson weight of each photon-number class mod 4: `p_k = sum over
/// n = k (mod 4) of e^-mu mu^n / n!`. The coherent states `|i^x sqrt(mu)>`
/// have overlaps `sum_k p_k i^((x - x') k)`.
pub fn mod4_weights(mu: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    let mut term = (-mu).exp();
    for n in 0..400usize {
        w[n % 4] += term;
        term *= mu / (n + 1) as f64;
        if term == 0.0 || (n > 8 && term < 1e-300) {
            break;
        }
    }
    w
}

/// `sum_nm P_nm i^(n dx + m dy)`.
pub fn trojan_phase_sum(dist: &PhotonDistribution, dx: i64, dy: i64) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for n in 0..4i64 {
        for m in 0..4i64 {
            s += dist.p[n as usize][m as usize] * i_pow(n * dx + m * dy);
        }
    }
    s
}
