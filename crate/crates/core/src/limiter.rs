//! Steady-state model of the thermo-optical defocusing limiter.
//!
//! A Gaussian beam of 1/e intensity radius `a` heats an absorbing prism; with
//! a negative thermo-optic coefficient the heated core defocuses the beam,
//! and a diaphragm behind the prism clips the spread-out light. The
//! steady-state intensity at depth `z` is
//!
//! ```text
//! I(r, z) = I(r, 0) exp[-alpha z + toc P e^{-r^2/a^2} (z - (1 - e^{-alpha z})/alpha) / (pi k n a^2)]
//! ```
//!
//! with `I(r, 0) = P e^{-r^2/a^2} / (pi a^2)`. Output power is the integral of
//! `I(r, L)` over the diaphragm, whose width is taken as its diameter.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::quadrature::integrate;
use crate::search::{argmax_first, golden_max};

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative accuracy of the radial integral.
pub const OUTPUT_POWER_REL_TOL: f64 = 1e-8;
/// Lower end of the threshold scan.
pub const THRESHOLD_SCAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProperties {
    /// Natural absorption coefficient, 1/m.
    pub absorption_coeff: f64,
    /// dn/dT at the reference wavelength, 1/K. Negative for a defocusing
    /// medium; zero is accepted and switches the thermal lens off.
    pub toc: f64,
    pub refractive_index: f64,
    /// W/(m K).
    pub thermal_conductivity: f64,
    /// Input power at which the prism is damaged, W.
    pub damage_power: f64,
    /// m.
    pub reference_wavelength: f64,
}

impl MaterialProperties {
    /// Cast acrylic (PMMA) measured near 1550 nm.
    pub fn acrylic() -> Self {
        Self {
            absorption_coeff: 25.95,
            toc: -1.3e-4,
            refractive_index: 1.47,
            thermal_conductivity: 0.19,
            damage_power: 0.4,
            reference_wavelength: 1550e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.absorption_coeff > 0.0, "absorption_coeff must be positive"),
            (self.thermal_conductivity > 0.0, "thermal_conductivity must be positive"),
            (self.toc <= 0.0, "toc must not be positive"),
            (self.refractive_index > 1.0, "refractive_index must exceed 1"),
            (self.damage_power > 0.0, "damage_power must be positive"),
            (self.reference_wavelength > 0.0, "reference_wavelength must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(CoreError::Domain(msg.into()));
            }
        }
        let all = [
            self.absorption_coeff,
            self.toc,
            self.refractive_index,
            self.thermal_conductivity,
            self.damage_power,
            self.reference_wavelength,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Domain("material parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamProfile {
    /// Radius where intensity drops to 1/e of its axial value, m.
    pub radius_1e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimiterConfig {
    pub material: MaterialProperties,
    pub beam: BeamProfile,
    /// m.
    pub prism_length: f64,
    /// Aperture diameter, m.
    pub diaphragm_width: f64,
}

impl LimiterConfig {
    /// Acrylic prism with a 0.14 mm beam; geometry supplied by the caller.
    pub fn acrylic(prism_length: f64, diaphragm_width: f64) -> Self {
        Self {
            material: MaterialProperties::acrylic(),
            beam: BeamProfile { radius_1e: 0.14e-3 },
            prism_length,
            diaphragm_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        if !(self.beam.radius_1e > 0.0 && self.beam.radius_1e.is_finite()) {
            return Err(CoreError::Domain("beam radius must be positive".into()));
        }
        if !(self.prism_length > 0.0 && self.prism_length.is_finite()) {
            return Err(CoreError::Domain("prism_length must be positive".into()));
        }
        if !(self.diaphragm_width > 0.0) {
            return Err(CoreError::Domain("diaphragm_width must be positive".into()));
        }
        Ok(())
    }

    /// Fraction of a Gaussian beam's power inside the aperture.
    pub fn aperture_fraction(&self) -> f64 {
        let x = (0.5 * self.diaphragm_width / self.beam.radius_1e).powi(2);
        -(-x).exp_m1()
    }

    /// Low-power transmittance `e^{-alpha L} (1 - e^{-(w/2)^2/a^2})`.
    pub fn linear_transmittance(&self) -> f64 {
        (-self.material.absorption_coeff * self.prism_length).exp() * self.aperture_fraction()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Largest output power found, W.
    pub p_out_max: f64,
    /// Input power producing it, W.
    pub p_in_at_max: f64,
    /// False if the output kept growing up to the scan ceiling.
    pub saturated: bool,
}

/// `(n^2 - 1)(n^2 + 2) / (6n)`, the index factor that sets how the
/// thermo-optic coefficient follows dispersion.
pub fn toc_dispersion_factor(n: f64) -> Result<f64> {
    if !(n >= 1.0) || !n.is_finite() {
        return Err(CoreError::Domain(format!("refractive index {n} must be at least 1")));
    }
    let n2 = n * n;
    Ok((n2 - 1.0) * (n2 + 2.0) / (6.0 * n))
}

/// Thermo-optic coefficient at a wavelength where the index is `n`, given
/// its value `toc_ref` where the index is `n_ref`.
pub fn scaled_toc(toc_ref: f64, n: f64, n_ref: f64) -> Result<f64> {
    Ok(toc_ref * toc_dispersion_factor(n)? / toc_dispersion_factor(n_ref)?)
}

/// Thermal-lens path factor `z - (1 - e^{-alpha z}) / alpha`.
fn path_factor(alpha: f64, z: f64) -> f64 {
    z + (-alpha * z).exp_m1() / alpha
}

/// Steady-state intensity in W/m^2.
pub fn intensity(r: f64, z: f64, cfg: &LimiterConfig, p_in: f64) -> Result<f64> {
    cfg.validate()?;
    if !(r >= 0.0) || !(z >= 0.0) || z > cfg.prism_length {
        return Err(CoreError::Domain(format!(
            "position (r={r}, z={z}) outside 0 <= z <= {}",
            cfg.prism_length
        )));
    }
    if !(p_in >= 0.0) {
        return Err(CoreError::Domain("input power must be non-negative".into()));
    }
    Ok(intensity_unchecked(r, z, cfg, p_in))
}

fn intensity_unchecked(r: f64, z: f64, cfg: &LimiterConfig, p_in: f64) -> f64 {
    let m = &cfg.material;
    let a2 = cfg.beam.radius_1e * cfg.beam.radius_1e;
    let profile = (-r * r / a2).exp();
    let lens = m.toc * p_in * profile * path_factor(m.absorption_coeff, z)
        / (PI * m.thermal_conductivity * m.refractive_index * a2);
    p_in * profile / (PI * a2) * (-m.absorption_coeff * z + lens).exp()
}

/// Power collected behind the diaphragm, W.
pub fn output_power(cfg: &LimiterConfig, p_in: f64) -> Result<f64> {
    cfg.validate()?;
    if !(p_in >= 0.0) || !p_in.is_finite() {
        return Err(CoreError::Domain("input power must be finite and non-negative".into()));
    }
    if p_in == 0.0 {
        return Ok(0.0);
    }
    // Beyond 40 a the Gaussian factor underflows to exactly zero.
    let r_max = (0.5 * cfg.diaphragm_width).min(40.0 * cfg.beam.radius_1e);
    let l = cfg.prism_length;
    let q = integrate(
        |r| 2.0 * PI * r * intensity_unchecked(r, l, cfg, p_in),
        0.0,
        r_max,
        OUTPUT_POWER_REL_TOL,
        0.0,
    )?;
    Ok(q.value)
}

/// Maximum of `output_power` over `p_in` in `(0, p_in_max]`.
///
/// Scans log-spaced input powers from 1 uW (or below the ceiling if that is
/// smaller), then refines the best bracket by golden-section search in
/// `log p_in`.
pub fn limiting_threshold(cfg: &LimiterConfig, p_in_max: f64) -> Result<ThresholdResult> {
    cfg.validate()?;
    if !(p_in_max > 0.0) || !p_in_max.is_finite() {
        return Err(CoreError::Domain("scan ceiling must be positive and finite".into()));
    }
    const POINTS: usize = 61;
    let lo = THRESHOLD_SCAN_FLOOR.min(p_in_max * 1e-3);
    let span = (p_in_max / lo).ln();
    let grid: Vec<f64> = (0..POINTS)
        .map(|i| {
            if i + 1 == POINTS {
                p_in_max
            } else {
                lo * (span * i as f64 / (POINTS - 1) as f64).exp()
            }
        })
        .collect();
    let values = grid.iter().map(|&p| output_power(cfg, p)).collect::<Result<Vec<_>>>()?;
    let k = argmax_first(&values).unwrap_or(0);
    if k + 1 == POINTS {
        return Ok(ThresholdResult {
            p_out_max: values[k],
            p_in_at_max: p_in_max,
            saturated: false,
        });
    }
    let (a, b) = (grid[k.saturating_sub(1)].ln(), grid[k + 1].ln());
    // A bracket 1e-5 wide in log p pins p_out far below 1e-4 relative.
    let (x, v) = golden_max(|lp: f64| output_power(cfg, lp.exp()), a, b, 1e-5)?;
    let (p_in_at_max, p_out_max) = if v > values[k] {
        (x.exp(), v)
    } else {
        (grid[k], values[k])
    };
    Ok(ThresholdResult {
        p_out_max,
        p_in_at_max,
        saturated: true,
    })
}

/// Positive low-power loss in dB.
pub fn insertion_loss_db(cfg: &LimiterConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(-10.0 * cfg.linear_transmittance().log10())
}

/// Photons per second carried by `power` watts at `wavelength` metres.
pub fn photon_flux(power: f64, wavelength: f64) -> Result<f64> {
    if !(power >= 0.0) || !(wavelength > 0.0) {
        return Err(CoreError::Domain("power must be >= 0 and wavelength > 0".into()));
    }
    Ok(power * wavelength / (PLANCK * SPEED_OF_LIGHT))
}

pub fn photon_energy(wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return Err(CoreError::Domain("wavelength must be positive".into()));
    }
    Ok(PLANCK * SPEED_OF_LIGHT / wavelength)
}

/// True while `p_in` stays strictly below the damage power. A false result
/// means the model no longer describes the device.
pub fn damage_check(p_in: f64, cfg: &LimiterConfig) -> bool {
    p_in < cfg.material.damage_power
}

pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * (p / 1e-3).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2(l: f64, w: f64) -> LimiterConfig {
        LimiterConfig::acrylic(l, w)
    }

    /// Closed form of the aperture integral: substituting v = e^{-r^2/a^2}
    /// turns it into an elementary exponential integral.
    fn output_power_closed(cfg: &LimiterConfig, p: f64) -> f64 {
        let m = &cfg.material;
        let a2 = cfg.beam.radius_1e.powi(2);
        let c = -m.toc * path_factor(m.absorption_coeff, cfg.prism_length)
            / (PI * m.thermal_conductivity * m.refractive_index * a2);
        let s0 = (-(0.5 * cfg.diaphragm_width).powi(2) / a2).exp();
        (-m.absorption_coeff * cfg.prism_length).exp() / c * ((-c * p * s0).exp() - (-c * p).exp())
    }

    #[test]
    fn dispersion_factor_values() {
        assert!((toc_dispersion_factor(1.47).unwrap() - 0.5477).abs() < 1e-4);
        assert_eq!(toc_dispersion_factor(1.0).unwrap(), 0.0);
        assert!(toc_dispersion_factor(0.9).is_err());
        assert_eq!(scaled_toc(-1.3e-4, 1.5, 1.5).unwrap(), -1.3e-4);
        assert!(scaled_toc(-1.3e-4, 1.49, 1.47).unwrap() < -1.3e-4);
    }

    #[test]
    fn surface_intensity_is_gaussian() {
        let cfg = fig2(0.1016, 750e-6);
        let a = cfg.beam.radius_1e;
        let i = intensity(a, 0.0, &cfg, 0.2).unwrap();
        assert!((i - 0.2 * (-1.0f64).exp() / (PI * a * a)).abs() < 1e-9 * i);
    }

    #[test]
    fn low_power_axis_is_pure_absorption() {
        let cfg = fig2(0.1016, 750e-6);
        let ratio = intensity(0.0, 0.1016, &cfg, 1e-6).unwrap() / intensity(0.0, 0.0, &cfg, 1e-6).unwrap();
        let want = (-2.6365f64).exp();
        assert!((ratio / want - 1.0).abs() < 1e-3);
    }

    #[test]
    fn defocusing_lowers_axial_transmittance() {
        let cfg = fig2(0.1016, 750e-6);
        let low = intensity(0.0, cfg.prism_length, &cfg, 1e-9).unwrap() / 1e-9;
        let high = intensity(0.0, cfg.prism_length, &cfg, 0.1).unwrap() / 0.1;
        assert!(high < low);
    }

    #[test]
    fn intensity_rejects_bad_positions() {
        let cfg = fig2(0.05, 750e-6);
        assert!(intensity(-1e-6, 0.0, &cfg, 1.0).is_err());
        assert!(intensity(0.0, 0.06, &cfg, 1.0).is_err());
    }

    #[test]
    fn output_power_matches_closed_form() {
        for &(l, w, p) in &[(0.0508, 750e-6, 1e-3), (0.1016, 380e-6, 0.05), (0.0254, 25e-6, 0.3)] {
            let cfg = fig2(l, w);
            let q = output_power(&cfg, p).unwrap();
            let c = output_power_closed(&cfg, p);
            assert!((q / c - 1.0).abs() < 1e-7, "L={l} w={w} p={p}: {q} vs {c}");
        }
        assert_eq!(output_power(&fig2(0.05, 1e-4), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fig2_insertion_losses() {
        let t = fig2(0.0508, 750e-6).linear_transmittance();
        let want = (-1.31826f64).exp() * (1.0 - (-7.1747f64).exp());
        assert!((t / want - 1.0).abs() < 1e-4);
        assert!((insertion_loss_db(&fig2(0.0508, 750e-6)).unwrap() - 5.73).abs() < 0.01);
        assert!((insertion_loss_db(&fig2(0.1016, 750e-6)).unwrap() - 11.45).abs() < 0.01);
    }

    #[test]
    fn wide_aperture_and_short_prism_limits() {
        let cfg = fig2(0.0508, 1.0);
        let pure = 10.0 * (cfg.material.absorption_coeff * cfg.prism_length).exp().log10();
        assert!((insertion_loss_db(&cfg).unwrap() - pure).abs() < 1e-12);
        let thin = fig2(1e-12, 1.0);
        assert!(insertion_loss_db(&thin).unwrap().abs() < 1e-9);
    }

    #[test]
    fn threshold_matches_analytic_maximum() {
        // d/dP of the closed form vanishes at cP = ln(1/s0)/(1 - s0).
        let cfg = fig2(0.0508, 380e-6);
        let res = limiting_threshold(&cfg, cfg.material.damage_power).unwrap();
        let m = &cfg.material;
        let a2 = cfg.beam.radius_1e.powi(2);
        let c = -m.toc * path_factor(m.absorption_coeff, cfg.prism_length)
            / (PI * m.thermal_conductivity * m.refractive_index * a2);
        let x = (0.5 * cfg.diaphragm_width).powi(2) / a2;
        let s0 = (-x).exp();
        let p_star = x / (1.0 - s0) / c;
        let best = output_power_closed(&cfg, p_star);
        assert!(res.saturated);
        assert!((res.p_out_max / best - 1.0).abs() < 1e-4);
        assert!((res.p_in_at_max / p_star - 1.0).abs() < 1e-2);
        assert!(res.p_out_max <= res.p_in_at_max);
    }

    #[test]
    fn no_thermal_lens_means_linear_output() {
        let mut cfg = fig2(0.0508, 380e-6);
        cfg.material.toc = 0.0;
        let t = cfg.linear_transmittance();
        for p in [1e-3, 0.1, 0.3] {
            assert!((output_power(&cfg, p).unwrap() / (p * t) - 1.0).abs() < 1e-8);
        }
        let res = limiting_threshold(&cfg, 0.4).unwrap();
        assert!(!res.saturated);
        assert_eq!(res.p_in_at_max, 0.4);
    }

    #[test]
    fn positive_toc_is_rejected() {
        let mut cfg = fig2(0.0508, 380e-6);
        cfg.material.toc = 1e-4;
        assert!(output_power(&cfg, 1e-3).is_err());
    }

    #[test]
    fn tiny_ceiling_is_unsaturated() {
        let cfg = fig2(0.0508, 750e-6);
        let res = limiting_threshold(&cfg, 1e-5).unwrap();
        assert!(!res.saturated);
        assert_eq!(res.p_in_at_max, 1e-5);
    }

    #[test]
    fn photon_energy_at_1260() {
        let e = photon_energy(1260e-9).unwrap();
        assert!((e / 1.58e-19 - 1.0).abs() < 5e-3);
        let flux = photon_flux(1e-3, 1260e-9).unwrap();
        assert!((flux / 6.33e15 - 1.0).abs() < 5e-3);
        assert_eq!(photon_flux(0.0, 1260e-9).unwrap(), 0.0);
    }

    #[test]
    fn damage_boundary_is_unsafe() {
        let cfg = fig2(0.05, 750e-6);
        assert!(damage_check(0.1, &cfg));
        assert!(!damage_check(0.4, &cfg));
        assert!(!damage_check(1.0, &cfg));
    }

    #[test]
    fn dbm_conversions() {
        assert!((watts_to_dbm(dbm_to_watts(6.03)) - 6.03).abs() < 1e-12);
        assert!((dbm_to_watts(6.03) - 4.01e-3).abs() < 1e-5);
    }
}
