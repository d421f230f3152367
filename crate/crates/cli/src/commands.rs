use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qlimit_conic::{CommandSolver, ConicSolver, InteriorPointSolver, SolverConfig};
use qlimit_core::limiter::{
    insertion_loss_db, limiting_threshold, photon_energy, photon_flux, watts_to_dbm, BeamProfile, LimiterConfig,
    MaterialProperties,
};
use qlimit_core::mdi::{bit_error, p_pass, signal_overlaps, ChannelParams, StatTable};
use qlimit_core::spectral::{
    builtin_acrylic, builtin_silicon, load_spectrum_file, worst_case_wavelength, FilterStack, MaterialSpectrum,
};
use qlimit_core::tha::{
    attenuation_budget, blinding_check, key_rate, keyrate_sweep, phase_error_bound, source_intensity, KeyRatePoint,
    SweepConfig, TrojanConstraint,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::report::{flatten_params, num, Report};
use crate::{
    BlindingArgs, BudgetArgs, BulkArgs, CliError, KeyrateArgs, MaterialArgs, ParamSet, SolverChoice, ThresholdArgs,
    WorstcaseArgs,
};

pub const DATA_DIR_ENV: &str = "QLIMIT_DATA_DIR";

pub struct Outcome {
    pub report: Report,
    /// Set when a grid was requested and no point of it succeeded.
    pub all_failed: bool,
}

impl From<Report> for Outcome {
    fn from(report: Report) -> Self {
        Self {
            report,
            all_failed: false,
        }
    }
}

fn params_of<T: Serialize>(args: &T) -> BTreeMap<String, Value> {
    flatten_params(serde_json::to_value(args).expect("arguments serialize"))
}

fn pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn limiter(
    bulk: Option<&BulkArgs>,
    m: &MaterialArgs,
    length_mm: f64,
    width_um: f64,
) -> Result<LimiterConfig, CliError> {
    let base = MaterialProperties::acrylic();
    let cfg = LimiterConfig {
        material: MaterialProperties {
            absorption_coeff: bulk.map_or(base.absorption_coeff, |b| b.alpha_per_m),
            toc: m.toc,
            refractive_index: bulk.map_or(base.refractive_index, |b| b.index),
            thermal_conductivity: m.conductivity,
            damage_power: m.damage_w,
            reference_wavelength: base.reference_wavelength,
        },
        beam: BeamProfile {
            radius_1e: m.beam_radius_mm * 1e-3,
        },
        prism_length: length_mm * 1e-3,
        diaphragm_width: width_um * 1e-6,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Nanometres with float noise from the metre grid removed.
fn nm(wavelength: f64) -> f64 {
    (wavelength * 1e15).round() / 1e6
}

fn pair(list: &[f64], what: &str) -> Result<(f64, f64), CliError> {
    match list {
        [a, b] => Ok((*a, *b)),
        _ => Err(CliError::Usage(format!("{what} needs exactly two values"))),
    }
}

pub fn threshold(a: &ThresholdArgs, workers: usize) -> Result<Outcome, CliError> {
    let mut grid = Vec::new();
    for &l in &a.lengths_mm.0 {
        for &w in &a.widths_um.0 {
            grid.push((l, w, limiter(Some(&a.bulk), &a.material, l, w)?));
        }
    }
    let results = pool(workers, || {
        grid.par_iter()
            .map(|(_, _, cfg)| {
                Ok((
                    limiting_threshold(cfg, cfg.material.damage_power)?,
                    insertion_loss_db(cfg)?,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })??;
    let mut r = Report::new(
        "threshold",
        params_of(a),
        vec![
            "length_mm",
            "width_um",
            "threshold_w",
            "threshold_dbm",
            "p_in_at_max_w",
            "saturated",
            "insertion_loss_db",
            "transmission_db",
        ],
    );
    for ((l, w, _), (th, loss)) in grid.iter().zip(results) {
        r.rows.push(vec![
            num(*l),
            num(*w),
            num(th.p_out_max),
            num(watts_to_dbm(th.p_out_max)),
            num(th.p_in_at_max),
            Value::Bool(th.saturated),
            num(loss),
            num(-loss),
        ]);
    }
    Ok(r.into())
}

/// Explicit file, else `$QLIMIT_DATA_DIR/<file>` if present, else the
/// built-in table.
fn spectrum(
    explicit: Option<&Path>,
    file: &str,
    builtin: fn() -> MaterialSpectrum,
) -> Result<(MaterialSpectrum, String), CliError> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(|d| PathBuf::from(d).join(file))
            .filter(|p| p.exists()),
    };
    match path {
        Some(p) => {
            let s = load_spectrum_file(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Ok((s, p.display().to_string()))
        }
        None => Ok((builtin(), "builtin".into())),
    }
}

fn filter_stack(a: &WorstcaseArgs, silicon: MaterialSpectrum) -> Result<FilterStack, CliError> {
    let mut stack = FilterStack::new();
    if a.silicon_mm > 0.0 {
        stack = stack.with(silicon, a.silicon_mm * 1e-3)?;
    } else if a.silicon_mm < 0.0 {
        return Err(CliError::Usage("--silicon-mm must not be negative".into()));
    }
    for item in a
        .filters
        .as_deref()
        .unwrap_or("")
        .split(',')
        .filter(|s| !s.trim().is_empty())
    {
        let (file, mm) = item
            .trim()
            .rsplit_once(':')
            .ok_or_else(|| CliError::Usage(format!("filter '{item}' is not FILE:MM")))?;
        let mm: f64 = mm
            .parse()
            .map_err(|e| CliError::Usage(format!("filter '{item}': {e}")))?;
        let s = load_spectrum_file(Path::new(file)).map_err(|e| CliError::Usage(format!("{file}: {e}")))?;
        stack = stack.with(s, mm * 1e-3)?;
    }
    Ok(stack)
}

pub fn worstcase(a: &WorstcaseArgs, workers: usize) -> Result<Outcome, CliError> {
    let (lo, hi) = pair(&a.band_nm.0, "--band-nm")?;
    let cfg = limiter(None, &a.material, a.length_mm, a.width_um)?;
    let (acrylic, acrylic_src) = spectrum(a.acrylic.as_deref(), "acrylic.csv", builtin_acrylic)?;
    let (silicon, silicon_src) = spectrum(a.silicon.as_deref(), "silicon.csv", builtin_silicon)?;
    let stack = filter_stack(a, silicon)?;
    let wc = pool(workers, || {
        worst_case_wavelength(&cfg, &acrylic, &stack, (lo * 1e-9, hi * 1e-9), a.step_nm * 1e-9)
    })??;

    let mut params = params_of(a);
    params.insert("acrylic".into(), Value::from(acrylic_src));
    params.insert(
        "silicon".into(),
        Value::from(if a.silicon_mm > 0.0 { silicon_src } else { "none".into() }),
    );
    let mut r = Report::new(
        "worstcase",
        params,
        vec![
            "wavelength_nm",
            "absorption_per_m",
            "toc",
            "threshold_w",
            "threshold_dbm",
            "p_in_at_max_w",
            "stack_transmittance",
            "output_w",
            "flux_per_s",
        ],
    );
    for p in &wc.points {
        r.rows.push(vec![
            num(nm(p.wavelength)),
            num(p.absorption_coeff),
            num(p.toc),
            num(p.threshold),
            num(watts_to_dbm(p.threshold)),
            num(p.p_in_at_max),
            num(p.stack_transmittance),
            num(p.threshold * p.stack_transmittance),
            num(p.flux),
        ]);
    }
    let best = wc
        .points
        .iter()
        .find(|p| p.wavelength == wc.wavelength)
        .expect("argmax is a grid point");
    r.summary.insert("worst_case_nm".into(), num(nm(wc.wavelength)));
    r.summary.insert("flux_per_s".into(), num(wc.flux));
    r.summary
        .insert("output_w".into(), num(best.threshold * best.stack_transmittance));
    r.summary
        .insert("photon_energy_j".into(), num(photon_energy(wc.wavelength)?));
    Ok(r.into())
}

fn solver(a: &KeyrateArgs) -> Result<Box<dyn ConicSolver>, CliError> {
    match a.solver {
        SolverChoice::Builtin => {
            if a.tol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || a.max_iters == 0 {
                return Err(CliError::Usage(
                    "--tol must be positive and --max-iters at least 1".into(),
                ));
            }
            Ok(Box::new(InteriorPointSolver::new(SolverConfig {
                tol: a.tol,
                max_iters: a.max_iters,
            })))
        }
        SolverChoice::Cvxpy => CommandSolver::detect_cvxpy()
            .map(|s| Box::new(s) as Box<dyn ConicSolver>)
            .ok_or_else(|| CliError::Usage("python3 with cvxpy and clarabel was not found".into())),
    }
}

const KEYRATE_COLUMNS: [&str; 8] = [
    "distance_km",
    "nu",
    "mu",
    "p_pass",
    "e_bit",
    "e_ph",
    "rate",
    "diagnostics",
];

fn keyrate_row(distance: Value, nu: f64, res: &Result<KeyRatePoint, String>) -> Vec<Value> {
    match res {
        Ok(p) => vec![
            distance,
            num(nu),
            num(p.mu_opt),
            num(p.p_pass),
            num(p.e_bit),
            num(p.e_ph_upper),
            num(p.rate),
            Value::from(format!("ok iterations={} margin={:e}", p.iterations, p.rigor_margin)),
        ],
        Err(e) => {
            let mut row = vec![distance, num(nu)];
            row.extend(std::iter::repeat_n(Value::Null, 5));
            row.push(Value::from(format!("failed: {e}")));
            row
        }
    }
}

pub fn keyrate(a: &KeyrateArgs, workers: usize) -> Result<Outcome, CliError> {
    let mu_range = pair(&a.mu_range.0, "--mu-range")?;
    let solver = solver(a)?;
    let mut template = match a.set {
        ParamSet::A => ChannelParams::set_a(mu_range.1, 0.0),
        ParamSet::B => ChannelParams::set_b(mu_range.1, 0.0),
    };
    if let Some(eta) = a.eta {
        template.det_efficiency = eta;
    }
    if let Some(pdc) = a.dark_count {
        template.dark_count = pdc;
    }
    template.misalignment = a.misalignment;
    template.fiber_loss_db_per_km = a.fiber_loss_db_per_km;
    template.validate()?;

    let mut params = params_of(a);
    params.insert("channel.det_efficiency".into(), num(template.det_efficiency));
    params.insert("channel.dark_count".into(), num(template.dark_count));
    let mut r = Report::new("keyrate", params, KEYRATE_COLUMNS.to_vec());

    let results: Vec<(Value, f64, Result<KeyRatePoint, String>)> = match &a.stats {
        Some(path) => {
            let mu = a.mu.ok_or_else(|| CliError::Usage("--stats requires --mu".into()))?;
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let stats = StatTable::from_json(&text)?;
            let overlaps = signal_overlaps(mu, mu)?;
            let (pp, e_bit) = (p_pass(&stats), bit_error(&stats)?);
            let mut out = Vec::new();
            for &nu in &a.nus.0 {
                let tc = TrojanConstraint::symmetric(nu)?;
                let res = phase_error_bound(&stats, &overlaps, &tc, solver.as_ref())
                    .map(|b| KeyRatePoint {
                        distance_km: f64::NAN,
                        nu,
                        mu_opt: mu,
                        p_pass: pp,
                        e_bit,
                        e_ph_upper: b.e_ph_upper,
                        rate: key_rate(pp, e_bit, b.e_ph_upper),
                        iterations: b.iterations,
                        rigor_margin: b.rigor_margin,
                    })
                    .map_err(|e| e.to_string());
                out.push((Value::Null, nu, res));
            }
            out
        }
        None => {
            let cfg = SweepConfig { mu_range, workers };
            keyrate_sweep(&a.distances_km.0, &a.nus.0, &template, &cfg, solver.as_ref())?
                .into_iter()
                .map(|p| (num(p.distance_km), p.nu, p.result))
                .collect()
        }
    };
    let all_failed = !results.is_empty() && results.iter().all(|(_, _, res)| res.is_err());
    for (d, nu, res) in &results {
        r.rows.push(keyrate_row(d.clone(), *nu, res));
    }
    Ok(Outcome { report: r, all_failed })
}

pub fn budget(a: &BudgetArgs) -> Result<Outcome, CliError> {
    let p_limit = a.p_limit_mw * 1e-3;
    let wavelength = a.wavelength_nm * 1e-9;
    let atten = attenuation_budget(p_limit, a.clock_hz, wavelength, a.nu)?;
    let n_limit = photon_flux(p_limit, wavelength)? / a.clock_hz;
    let mut r = Report::new(
        "budget",
        params_of(a),
        vec![
            "attenuation_db",
            "photons_per_pulse_at_limit",
            "nu_after_double_pass",
            "attenuation_used_db",
            "mu",
        ],
    );
    let used = a.atten_db.unwrap_or(atten);
    let mu = match a.laser_uw {
        Some(uw) => num(source_intensity(uw * 1e-6, a.clock_hz, wavelength, used)?),
        None => Value::Null,
    };
    r.rows.push(vec![
        num(atten),
        num(n_limit),
        num(n_limit * 10f64.powf(-2.0 * atten / 10.0)),
        num(used),
        mu,
    ]);
    r.single = true;
    Ok(r.into())
}

pub fn blinding(a: &BlindingArgs) -> Result<Outcome, CliError> {
    let cfg = limiter(Some(&a.bulk), &a.material, a.length_mm, a.width_um)?;
    let rep = blinding_check(&cfg, a.blinding_mw * 1e-3)?;
    let mut r = Report::new(
        "blinding",
        params_of(a),
        vec![
            "threshold_w",
            "threshold_dbm",
            "insertion_loss_db",
            "transmission_db",
            "blinding_power_w",
            "blinding_power_dbm",
            "protected",
        ],
    );
    r.rows.push(vec![
        num(rep.threshold_w),
        num(rep.threshold_dbm),
        num(rep.insertion_loss_db),
        num(-rep.insertion_loss_db),
        num(rep.blinding_power_w),
        num(watts_to_dbm(rep.blinding_power_w)),
        Value::Bool(rep.protected),
    ]);
    r.single = true;
    Ok(r.into())
}
