//! One-dimensional maximization helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Stops when the bracket is narrower than `x_tol`. Returns `(x, f(x))` of
/// the best point evaluated; equal values keep the smaller `x`.
pub fn golden_max<F, E>(mut f: F, lo: f64, hi: f64, x_tol: f64) -> Result<(f64, f64), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fd > fc { (d, fd) } else { (c, fc) };
    while b - a > x_tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc > best.1 || (fc == best.1 && c < best.0) {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if *v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// True if `values` rise (weakly) to a single peak and then fall (weakly).
pub fn is_unimodal(values: &[f64]) -> bool {
    let Some(peak) = argmax_first(values) else {
        return true;
    };
    values[..=peak].windows(2).all(|w| w[0] <= w[1]) && values[peak..].windows(2).all(|w| w[0] >= w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_peak() {
        let (x, v) = golden_max::<_, ()>(|x| Ok(-(x - 0.3) * (x - 0.3)), -1.0, 2.0, 1e-9).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
        assert!(v <= 0.0);
    }

    #[test]
    fn monotone_function_goes_to_edge() {
        let (x, _) = golden_max::<_, ()>(Ok, 0.0, 1.0, 1e-9).unwrap();
        assert!(x > 1.0 - 1e-8);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn unimodality() {
        assert!(is_unimodal(&[0.0, 1.0, 2.0, 2.0, 1.0]));
        assert!(!is_unimodal(&[0.0, 2.0, 1.0, 3.0]));
        assert!(is_unimodal(&[0.0, 0.0, 0.0]));
    }
}
