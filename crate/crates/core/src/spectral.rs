//! Wavelength-dependent absorption tables, filter stacks and the worst-case
//! wavelength search.
//!
//! Tables are CSV with header `wavelength_nm,loss_db_per_cm[,refractive_index]`
//! and `#` comment lines. Lookups interpolate linearly and never extrapolate.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::limiter::{limiting_threshold, photon_flux, scaled_toc, LimiterConfig};
use crate::search::argmax_first;

/// `ln(10) / 10 * 100`: dB/cm to natural 1/m.
pub const DB_PER_CM_TO_PER_M: f64 = 100.0 * std::f64::consts::LN_10 / 10.0;

pub const ACRYLIC_CSV: &str = include_str!("../data/acrylic.csv");
pub const SILICON_CSV: &str = include_str!("../data/silicon.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    /// m.
    pub wavelength: f64,
    pub loss_db_per_cm: f64,
    pub refractive_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpectrum {
    pub name: String,
    samples: Vec<SpectralSample>,
}

impl MaterialSpectrum {
    /// Builds a spectrum from samples already in memory, enforcing the same
    /// rules as the CSV loader.
    pub fn new(name: impl Into<String>, samples: Vec<SpectralSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(CoreError::Domain("a spectrum needs at least two samples".into()));
        }
        let has_n = samples[0].refractive_index.is_some();
        for (i, s) in samples.iter().enumerate() {
            if !(s.wavelength > 0.0) || !s.wavelength.is_finite() {
                return Err(CoreError::Domain(format!("sample {i}: wavelength must be positive")));
            }
            if !(s.loss_db_per_cm >= 0.0) || !s.loss_db_per_cm.is_finite() {
                return Err(CoreError::Domain(format!("sample {i}: loss must be non-negative")));
            }
            if s.refractive_index.is_some() != has_n {
                return Err(CoreError::Domain("refractive index given for some samples only".into()));
            }
            if let Some(n) = s.refractive_index {
                if !(n >= 1.0) {
                    return Err(CoreError::Domain(format!("sample {i}: refractive index below 1")));
                }
            }
            if i > 0 && s.wavelength <= samples[i - 1].wavelength {
                return Err(CoreError::Domain(format!("sample {i}: wavelengths not increasing")));
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
        })
    }

    pub fn samples(&self) -> &[SpectralSample] {
        &self.samples
    }

    /// `(min, max)` wavelength in metres.
    pub fn range(&self) -> (f64, f64) {
        (
            self.samples[0].wavelength,
            self.samples[self.samples.len() - 1].wavelength,
        )
    }

    pub fn has_refractive_index(&self) -> bool {
        self.samples[0].refractive_index.is_some()
    }

    fn bracket(&self, wavelength: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.range();
        let slack = 1e-12 * hi;
        if !(wavelength >= lo - slack && wavelength <= hi + slack) {
            return Err(CoreError::OutOfRange {
                wavelength_nm: wavelength * 1e9,
                min_nm: lo * 1e9,
                max_nm: hi * 1e9,
            });
        }
        let k = self.samples.partition_point(|s| s.wavelength <= wavelength);
        let k = k.clamp(1, self.samples.len() - 1);
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        let t = (wavelength - a.wavelength) / (b.wavelength - a.wavelength);
        // Snap queries within round-off of a tabulated wavelength onto it.
        let t = if t < 1e-9 {
            0.0
        } else if t > 1.0 - 1e-9 {
            1.0
        } else {
            t
        };
        Ok((k, t))
    }

    /// Interpolated loss in dB/cm.
    pub fn loss_db_per_cm(&self, wavelength: f64) -> Result<f64> {
        let (k, t) = self.bracket(wavelength)?;
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        if t == 0.0 {
            return Ok(a.loss_db_per_cm);
        }
        if t == 1.0 {
            return Ok(b.loss_db_per_cm);
        }
        Ok(a.loss_db_per_cm + t * (b.loss_db_per_cm - a.loss_db_per_cm))
    }

    /// Interpolated refractive index, if the table has that column.
    pub fn refractive_index(&self, wavelength: f64) -> Result<Option<f64>> {
        let (k, t) = self.bracket(wavelength)?;
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        Ok(match (a.refractive_index, b.refractive_index) {
            (Some(na), _) if t == 0.0 => Some(na),
            (_, Some(nb)) if t == 1.0 => Some(nb),
            (Some(na), Some(nb)) => Some(na + t * (nb - na)),
            _ => None,
        })
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a spectrum table. Errors name the offending line.
pub fn load_spectrum<R: Read>(name: &str, source: R) -> Result<MaterialSpectrum> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let header = rdr.headers().map_err(|e| parse_err(0, e.to_string()))?.clone();
    let header_line = rdr.position().line().saturating_sub(1).max(1);
    let cols: Vec<&str> = header.iter().collect();
    let has_n = match cols.as_slice() {
        ["wavelength_nm", "loss_db_per_cm"] => false,
        ["wavelength_nm", "loss_db_per_cm", "refractive_index"] => true,
        _ => {
            return Err(parse_err(
                header_line,
                format!(
                    "expected header wavelength_nm,loss_db_per_cm[,refractive_index], got {}",
                    cols.join(",")
                ),
            ))
        }
    };
    let mut samples: Vec<SpectralSample> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("{what} '{}' is not a number", &rec[i])))
        };
        let wl_nm = num(0, "wavelength")?;
        let loss = num(1, "loss")?;
        let n = if has_n { Some(num(2, "refractive index")?) } else { None };
        if !(wl_nm > 0.0) {
            return Err(parse_err(line, "wavelength must be positive"));
        }
        if loss < 0.0 {
            return Err(parse_err(line, format!("negative loss {loss}")));
        }
        if n.is_some_and(|n| n < 1.0) {
            return Err(parse_err(line, "refractive index below 1"));
        }
        let wavelength = wl_nm * 1e-9;
        if let Some(prev) = samples.last() {
            if wavelength <= prev.wavelength {
                return Err(parse_err(line, "wavelengths must be strictly increasing"));
            }
        }
        samples.push(SpectralSample {
            wavelength,
            loss_db_per_cm: loss,
            refractive_index: n,
        });
    }
    if samples.len() < 2 {
        let line = rdr.position().line();
        return Err(parse_err(line, "a spectrum needs at least two rows"));
    }
    MaterialSpectrum::new(name, samples)
}

pub fn load_spectrum_file(path: &Path) -> Result<MaterialSpectrum> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("spectrum")
        .to_string();
    let file = std::fs::File::open(path)?;
    load_spectrum(&name, file)
}

pub fn builtin_acrylic() -> MaterialSpectrum {
    load_spectrum("acrylic", ACRYLIC_CSV.as_bytes()).expect("bundled acrylic table is valid")
}

pub fn builtin_silicon() -> MaterialSpectrum {
    load_spectrum("silicon", SILICON_CSV.as_bytes()).expect("bundled silicon table is valid")
}

/// Natural absorption coefficient in 1/m.
pub fn absorption_at(spectrum: &MaterialSpectrum, wavelength: f64) -> Result<f64> {
    Ok(spectrum.loss_db_per_cm(wavelength)? * DB_PER_CM_TO_PER_M)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterElement {
    pub spectrum: MaterialSpectrum,
    /// m.
    pub thickness: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStack {
    pub elements: Vec<FilterElement>,
}

impl FilterStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, spectrum: MaterialSpectrum, thickness: f64) -> Result<Self> {
        if !(thickness > 0.0) || !thickness.is_finite() {
            return Err(CoreError::Domain("filter thickness must be positive".into()));
        }
        self.elements.push(FilterElement { spectrum, thickness });
        Ok(self)
    }
}

pub fn stack_transmittance(stack: &FilterStack, wavelength: f64) -> Result<f64> {
    let mut od = 0.0;
    for e in &stack.elements {
        od += absorption_at(&e.spectrum, wavelength)? * e.thickness;
    }
    Ok((-od).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthPoint {
    /// m.
    pub wavelength: f64,
    pub absorption_coeff: f64,
    pub toc: f64,
    /// Limiter threshold before the filter stack, W.
    pub threshold: f64,
    pub p_in_at_max: f64,
    pub stack_transmittance: f64,
    /// Photons per second after the stack.
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub wavelength: f64,
    pub flux: f64,
    pub points: Vec<WavelengthPoint>,
}

/// Grid `lo, lo + step, ...` up to `hi` (inclusive within round-off).
pub fn wavelength_grid(band: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = band;
    if !(lo > 0.0) || !(hi >= lo) || !(step > 0.0) {
        return Err(CoreError::Domain("band must satisfy 0 < lo <= hi and step > 0".into()));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + step * k as f64).collect())
}

/// Limiter threshold, filter transmission and photon flux at one wavelength.
pub fn evaluate_wavelength(
    cfg: &LimiterConfig,
    acrylic: &MaterialSpectrum,
    stack: &FilterStack,
    wavelength: f64,
) -> Result<WavelengthPoint> {
    let mut c = *cfg;
    c.material.absorption_coeff = absorption_at(acrylic, wavelength)?;
    if let Some(n) = acrylic.refractive_index(wavelength)? {
        let n_ref = acrylic
            .refractive_index(cfg.material.reference_wavelength)?
            .ok_or_else(|| CoreError::Domain("reference wavelength lacks an index".into()))?;
        c.material.toc = scaled_toc(cfg.material.toc, n, n_ref)?;
    }
    let th = limiting_threshold(&c, c.material.damage_power)?;
    let t = stack_transmittance(stack, wavelength)?;
    let flux = photon_flux(th.p_out_max * t, wavelength)?;
    Ok(WavelengthPoint {
        wavelength,
        absorption_coeff: c.material.absorption_coeff,
        toc: c.material.toc,
        threshold: th.p_out_max,
        p_in_at_max: th.p_in_at_max,
        stack_transmittance: t,
        flux,
    })
}

/// Wavelength on the grid with the largest photon flux behind the limiter
/// and filters. Ties go to the shorter wavelength. Grid points are evaluated
/// in parallel on the current rayon pool; the result does not depend on the
/// number of threads.
pub fn worst_case_wavelength(
    cfg: &LimiterConfig,
    acrylic: &MaterialSpectrum,
    stack: &FilterStack,
    band: (f64, f64),
    step: f64,
) -> Result<WorstCase> {
    cfg.validate()?;
    let grid = wavelength_grid(band, step)?;
    let points = grid
        .par_iter()
        .map(|&wl| evaluate_wavelength(cfg, acrylic, stack, wl))
        .collect::<Result<Vec<_>>>()?;
    let fluxes: Vec<f64> = points.iter().map(|p| p.flux).collect();
    let k = argmax_first(&fluxes).ok_or_else(|| CoreError::Domain("empty wavelength grid".into()))?;
    Ok(WorstCase {
        wavelength: points[k].wavelength,
        flux: points[k].flux,
        points,
    })
}
