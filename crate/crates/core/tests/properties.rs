use proptest::prelude::*;
use qlimit_conic::{InteriorPointSolver, SolverConfig};
use qlimit_core::limiter::{limiting_threshold, output_power, LimiterConfig};
use qlimit_core::mdi::*;
use qlimit_core::spectral::*;
use qlimit_core::tha::*;

fn channel() -> impl Strategy<Value = ChannelParams> {
    (
        1e-3f64..1.0,
        1e-3f64..1.0,
        0.0f64..200.0,
        0.05f64..1.0,
        0.0f64..1e-4,
        0.0f64..0.2,
    )
        .prop_map(|(mu_a, mu_b, d, eta, pdc, eali)| ChannelParams {
            mu_a,
            mu_b,
            distance_km: d,
            fiber_loss_db_per_km: 0.2,
            det_efficiency: eta,
            dark_count: pdc,
            misalignment: eali,
        })
}

fn table(wavelengths: Vec<f64>, losses: Vec<f64>) -> MaterialSpectrum {
    let samples = wavelengths
        .iter()
        .zip(&losses)
        .map(|(&w, &l)| SpectralSample {
            wavelength: w,
            loss_db_per_cm: l,
            refractive_index: None,
        })
        .collect();
    MaterialSpectrum::new("t", samples).unwrap()
}

fn spectrum() -> impl Strategy<Value = MaterialSpectrum> {
    (2usize..12)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(1.0f64..50.0, n),
                prop::collection::vec(0.0f64..5.0, n),
            )
        })
        .prop_map(|(steps, losses)| {
            let mut w = 400e-9;
            let wls = steps
                .iter()
                .map(|s| {
                    w += s * 1e-9;
                    w
                })
                .collect();
            table(wls, losses)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outcome_probabilities_sum_to_one(p in channel()) {
        let s = honest_statistics(&p).unwrap();
        for x in 0..SETTINGS {
            for y in 0..SETTINGS {
                let total: f64 = Outcome::ALL.iter().map(|&z| s.get(z, x, y)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                for z in Outcome::ALL {
                    prop_assert!(s.get(z, x, y) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn statistics_depend_on_phase_difference_only(p in channel(), x in 0usize..4, y in 0usize..4, k in 1usize..4) {
        let s = honest_statistics(&p).unwrap();
        for z in Outcome::ALL {
            let a = s.get(z, x, y);
            let b = s.get(z, (x + k) % 4, (y + k) % 4);
            prop_assert!((a - b).abs() < 1e-14, "{z:?}: {a} vs {b}");
        }
        // A half-turn on one side swaps the two detectors.
        let l = s.get(Outcome::L, x, y);
        let r = s.get(Outcome::R, x, (y + 2) % 4);
        prop_assert!((l - r).abs() < 1e-14);
    }

    #[test]
    fn pass_and_error_rates_are_probabilities(p in channel()) {
        let s = honest_statistics(&p).unwrap();
        let pp = p_pass(&s);
        prop_assert!(pp > 0.0 && pp <= 1.0);
        let e = bit_error(&s).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn signal_gram_matrix_is_psd(mu_a in 1e-4f64..2.0, mu_b in 1e-4f64..2.0) {
        let o = signal_overlaps(mu_a, mu_b).unwrap();
        let eig = o.lambda.clone().symmetric_eigenvalues();
        prop_assert!(eig.min() > -1e-12, "{}", eig.min());
        for k in 0..PAIRS {
            prop_assert!((o.lambda[(k, k)].re - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mod4_weights_form_a_distribution(mu in 0.0f64..20.0) {
        let w = mod4_weights(mu);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_stays_between_neighbours(s in spectrum(), t in 0.0f64..1.0) {
        let samples = s.samples();
        let k = ((samples.len() - 1) as f64 * t).floor().min((samples.len() - 2) as f64) as usize;
        let (a, b) = (&samples[k], &samples[k + 1]);
        let w = a.wavelength + t.fract() * (b.wavelength - a.wavelength);
        let v = s.loss_db_per_cm(w).unwrap();
        let (lo, hi) = (a.loss_db_per_cm.min(b.loss_db_per_cm), a.loss_db_per_cm.max(b.loss_db_per_cm));
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn queries_outside_table_fail(s in spectrum(), off in 1e-9f64..1e-6) {
        let (lo, hi) = s.range();
        prop_assert!(s.loss_db_per_cm(lo - off).is_err());
        prop_assert!(s.loss_db_per_cm(hi + off).is_err());
    }

    #[test]
    fn stack_transmittance_multiplies(t1 in 1e-5f64..1e-2, t2 in 1e-5f64..1e-2, nm in 500.0f64..1900.0) {
        let wl = nm * 1e-9;
        let one = |t| stack_transmittance(&FilterStack::new().with(builtin_silicon(), t).unwrap(), wl).unwrap();
        let two = FilterStack::new()
            .with(builtin_silicon(), t1)
            .unwrap()
            .with(builtin_acrylic(), t2)
            .unwrap();
        let acr = stack_transmittance(&FilterStack::new().with(builtin_acrylic(), t2).unwrap(), wl).unwrap();
        let both = stack_transmittance(&two, wl).unwrap();
        prop_assert!((both - one(t1) * acr).abs() <= 1e-12 * both.max(1e-300));
        prop_assert!(both <= one(t1) + 1e-15);
    }

    #[test]
    fn key_rate_falls_with_phase_error(pp in 1e-6f64..1.0, eb in 0.0f64..0.2, e1 in 0.0f64..0.5, e2 in 0.0f64..0.5) {
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        prop_assert!(key_rate(pp, eb, hi) <= key_rate(pp, eb, lo));
        prop_assert!(key_rate(pp, eb, lo) >= 0.0);
        prop_assert!(key_rate(pp, eb, lo) <= pp);
    }

    #[test]
    fn binary_entropy_is_symmetric_and_bounded(p in 0.0f64..=1.0) {
        let h = h2(p);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - h2(1.0 - p)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_never_beats_linear_regime(len in 0.01f64..0.2, w in 100e-6f64..2e-3, p in 1e-4f64..0.4) {
        let cfg = LimiterConfig::acrylic(len, w);
        let out = output_power(&cfg, p).unwrap();
        prop_assert!(out <= p * cfg.linear_transmittance() * (1.0 + 1e-8));
        let th = limiting_threshold(&cfg, 0.4).unwrap();
        prop_assert!(th.p_out_max >= out * (1.0 - 1e-4));
    }

    #[test]
    fn adding_a_filter_never_raises_flux(nm in 1100.0f64..1900.0, t in 1e-5f64..2e-3) {
        let cfg = LimiterConfig::acrylic(0.1, 750e-6);
        let a = builtin_acrylic();
        let base = FilterStack::new().with(builtin_silicon(), 1e-3).unwrap();
        let more = base.clone().with(builtin_acrylic(), t).unwrap();
        let f0 = evaluate_wavelength(&cfg, &a, &base, nm * 1e-9).unwrap().flux;
        let f1 = evaluate_wavelength(&cfg, &a, &more, nm * 1e-9).unwrap().flux;
        prop_assert!(f1 <= f0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    // Larger Trojan budgets only enlarge the feasible set.
    #[test]
    fn phase_error_bound_grows_with_trojan_intensity(mu in 0.01f64..0.2, d in 0.0f64..100.0, e1 in 8.0f64..12.0, e2 in 5.0f64..8.0) {
        let solver = InteriorPointSolver::new(SolverConfig::default());
        let p = ChannelParams::set_b(mu, d);
        let stats = honest_statistics(&p).unwrap();
        let o = signal_overlaps(mu, mu).unwrap();
        let bound = |nu: f64| {
            phase_error_bound(&stats, &o, &TrojanConstraint::symmetric(nu).unwrap(), &solver).unwrap().e_ph_upper
        };
        let (small, large) = (10f64.powf(-e1), 10f64.powf(-e2));
        let (b0, b1, b2) = (bound(0.0), bound(small), bound(large));
        prop_assert!(b0 <= b1 + 1e-6 && b1 <= b2 + 1e-6, "{b0} {b1} {b2}");
    }
}
