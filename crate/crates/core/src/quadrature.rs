//! Adaptive Gauss-Kronrod (7/15) quadrature on a finite interval.

use crate::error::{CoreError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for the odd Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Integrates `f` over `[a, b]` until the estimated error is below
/// `max(rel_tol * |I|, abs_tol)`. Bisects the interval with the largest error.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<Quadrature> {
    const MAX_INTERVALS: usize = 2000;
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = kronrod(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(CoreError::Numerical("integrand is not finite".into()));
        }
        if err <= (rel_tol * total.abs()).max(abs_tol) {
            return Ok(Quadrature {
                value: total,
                error: err,
                evaluations,
            });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(CoreError::Numerical(format!(
                "quadrature did not converge on [{a:e}, {b:e}]: estimate {total:e}, error {err:e} after {evaluations} evaluations"
            )));
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&f, lo, mid);
        let (v2, e2) = kronrod(&f, mid, hi);
        evaluations += 30;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-12, 0.0).unwrap();
        // 64/6 - 1/6 - (8 + 1)
        assert!((q.value - (63.0 / 6.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn gaussian_tail_matches_erf_free_closed_form() {
        // int_0^R 2 pi r e^{-r^2} dr = pi (1 - e^{-R^2})
        let q = integrate(
            |r| 2.0 * std::f64::consts::PI * r * (-r * r).exp(),
            0.0,
            3.0,
            1e-10,
            0.0,
        )
        .unwrap();
        let exact = std::f64::consts::PI * (1.0 - (-9.0f64).exp());
        assert!((q.value / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sharp_peak_is_resolved() {
        let q = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-9, 0.0).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((q.value / exact - 1.0).abs() < 1e-8);
    }
}
