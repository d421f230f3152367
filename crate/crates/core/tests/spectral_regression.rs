use qlimit_core::limiter::{photon_energy, watts_to_dbm, LimiterConfig};
use qlimit_core::spectral::*;

const BAND: (f64, f64) = (300e-9, 2100e-9);
const STEP: f64 = 5e-9;

// 10 cm prism behind a 750 um diaphragm.
fn cfg() -> LimiterConfig {
    LimiterConfig::acrylic(0.1, 750e-6)
}

fn threshold_dbm(nm: f64) -> f64 {
    let p = evaluate_wavelength(&cfg(), &builtin_acrylic(), &FilterStack::new(), nm * 1e-9).unwrap();
    watts_to_dbm(p.threshold)
}

fn silicon_1mm() -> FilterStack {
    FilterStack::new().with(builtin_silicon(), 1e-3).unwrap()
}

#[test]
fn acrylic_table_hits_published_losses() {
    let a = builtin_acrylic();
    for (nm, db) in [(800.0, 0.15), (1310.0, 0.82), (1550.0, 1.29)] {
        let got = a.loss_db_per_cm(nm * 1e-9).unwrap();
        assert!((got - db).abs() < 1e-9, "{nm} nm: {got}");
    }
    let (lo, hi) = a.range();
    assert!(
        (lo * 1e9 - 300.0).abs() < 1e-6 && (hi * 1e9 - 2100.0).abs() < 1e-6,
        "{lo} {hi}"
    );
}

#[test]
fn loss_minimum_sits_near_800_nm() {
    let a = builtin_acrylic();
    let grid = wavelength_grid(BAND, STEP).unwrap();
    let (wl, _) = grid
        .iter()
        .map(|&w| (w, a.loss_db_per_cm(w).unwrap()))
        .fold((0.0, f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best });
    assert!((wl * 1e9 - 800.0).abs() <= 25.0, "minimum at {} nm", wl * 1e9);
}

#[test]
fn short_wavelength_thresholds_exceed_telecom_bands() {
    let visible = threshold_dbm(800.0);
    let o_band = threshold_dbm(1310.0);
    let c_band = threshold_dbm(1550.0);
    // Roughly 11 dB above the O band and more than 17 dB above the C band.
    assert!(
        (9.0..=13.0).contains(&(visible - o_band)),
        "gap to 1310: {}",
        visible - o_band
    );
    assert!(visible - c_band > 17.0, "gap to 1550: {}", visible - c_band);
    // Pessimistic system bound of about 8 dBm.
    assert!((visible - 8.0).abs() < 1.0, "{visible} dBm");
}

#[test]
fn worst_case_without_filter_is_below_1100_nm() {
    let wc = worst_case_wavelength(&cfg(), &builtin_acrylic(), &FilterStack::new(), BAND, STEP).unwrap();
    assert!(wc.wavelength < 1100e-9, "{} nm", wc.wavelength * 1e9);
}

#[test]
fn silicon_moves_worst_case_to_1260_nm() {
    let wc = worst_case_wavelength(&cfg(), &builtin_acrylic(), &silicon_1mm(), BAND, STEP).unwrap();
    let nm = wc.wavelength * 1e9;
    assert!((1100.0..=1650.0).contains(&nm), "{nm} nm");
    assert!((nm - 1260.0).abs() <= 10.0, "{nm} nm");
    let e = photon_energy(wc.wavelength).unwrap();
    assert!((e / 1.58e-19 - 1.0).abs() < 5e-3, "{e}");
}

#[test]
fn silicon_only_removes_flux() {
    let bare = worst_case_wavelength(&cfg(), &builtin_acrylic(), &FilterStack::new(), BAND, 20e-9).unwrap();
    let si = worst_case_wavelength(&cfg(), &builtin_acrylic(), &silicon_1mm(), BAND, 20e-9).unwrap();
    for (b, s) in bare.points.iter().zip(&si.points) {
        assert_eq!(b.wavelength, s.wavelength);
        assert_eq!(b.threshold, s.threshold);
        assert!(s.flux <= b.flux);
    }
}

#[test]
fn worst_case_is_independent_of_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| worst_case_wavelength(&cfg(), &builtin_acrylic(), &silicon_1mm(), BAND, 10e-9).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn band_outside_table_fails_closed() {
    let err = worst_case_wavelength(&cfg(), &builtin_acrylic(), &FilterStack::new(), (250e-9, 900e-9), STEP);
    assert!(err.is_err());
}
