//! Real embedding of a Hermitian PSD variable.
//!
//! A `d x d` Hermitian `H = A + iB` maps to the `2d x 2d` real symmetric
//! block `[[A, -B], [B, A]]`, which is PSD iff `H` is. The solver works on an
//! unstructured real PSD `X = [[X11, X12], [X21, X22]]` and reads back
//!
//! ```text
//! H = (X11 + X22)/2 + i (X21 - X12)/2
//! ```
//!
//! which is PSD whenever `X` is, so no structural equalities are needed.
//! Functionals of `H` translate into functionals of `X` through this map.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::problem::LinearFunctional;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianEmbedding {
    dim: usize,
    /// Position of the embedded block inside the solver's PSD variable.
    offset: usize,
}

impl HermitianEmbedding {
    pub fn new(dim: usize) -> Self {
        Self { dim, offset: 0 }
    }

    pub fn at_offset(dim: usize, offset: usize) -> Self {
        Self { dim, offset }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn real_dim(&self) -> usize {
        2 * self.dim
    }

    fn re(&self, i: usize) -> usize {
        self.offset + i
    }

    fn im(&self, i: usize) -> usize {
        self.offset + self.dim + i
    }

    pub fn embed(&self, h: &DMatrix<Complex64>) -> DMatrix<f64> {
        let d = self.dim;
        let mut x = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                let z = h[(i, j)];
                x[(i, j)] = z.re;
                x[(i + d, j + d)] = z.re;
                x[(i + d, j)] = z.im;
                x[(i, j + d)] = -z.im;
            }
        }
        x
    }

    /// Reads the Hermitian matrix back out of a (possibly larger) real PSD
    /// variable.
    pub fn extract(&self, x: &DMatrix<f64>) -> DMatrix<Complex64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            let re = 0.5 * (x[(self.re(i), self.re(j))] + x[(self.im(i), self.im(j))]);
            let im = 0.5 * (x[(self.im(i), self.re(j))] - x[(self.re(i), self.im(j))]);
            Complex64::new(re, im)
        })
    }

    /// Adds `coeff * Re H[i, j]` to `f`.
    pub fn add_re(&self, f: &mut LinearFunctional, i: usize, j: usize, coeff: f64) {
        f.add_entry(self.re(i), self.re(j), 0.5 * coeff);
        f.add_entry(self.im(i), self.im(j), 0.5 * coeff);
    }

    /// Adds `coeff * Im H[i, j]` to `f`. Vanishes identically for `i == j`.
    pub fn add_im(&self, f: &mut LinearFunctional, i: usize, j: usize, coeff: f64) {
        if i == j {
            return;
        }
        f.add_entry(self.im(i), self.re(j), 0.5 * coeff);
        f.add_entry(self.re(i), self.im(j), -0.5 * coeff);
    }

    /// Adds `Re( sum_ij conj(W[i,j]) H[i,j] )` to `f`, i.e. the real inner
    /// product `Re tr(W^H H)`.
    pub fn add_inner(&self, f: &mut LinearFunctional, w: &DMatrix<Complex64>) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                let c = w[(i, j)];
                if c.re != 0.0 {
                    self.add_re(f, i, j, c.re);
                }
                if c.im != 0.0 {
                    self.add_im(f, i, j, c.im);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn random_hermitian(d: usize, seed: u64) -> DMatrix<Complex64> {
        // Small LCG keeps the test free of RNG crates.
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(d, d, |_, _| Complex64::new(next(), next()));
        &a * a.adjoint()
    }

    #[test]
    fn dim_one_has_no_imaginary_part() {
        let e = HermitianEmbedding::new(1);
        let x = e.embed(&DMatrix::from_element(1, 1, Complex64::new(2.0, 0.0)));
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        let mut f = LinearFunctional::new();
        e.add_im(&mut f, 0, 0, 1.0);
        assert!(f.is_zero());
    }

    #[test]
    fn identity_embeds_to_identity() {
        let e = HermitianEmbedding::new(3);
        let id = DMatrix::<Complex64>::identity(3, 3);
        assert_eq!(e.embed(&id), DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn embedding_doubles_eigenvalues() {
        // H = U diag(lams) U^H with U unitary from a complex QR, so the
        // spectrum is known without calling any Hermitian eigensolver.
        let d = 4;
        let lams = [0.0, 0.3, 1.7, 4.2];
        let q = random_hermitian(d, 7).qr().q();
        let h = &q
            * DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |i, _| Complex64::new(lams[i], 0.0)))
            * q.adjoint();
        let x = HermitianEmbedding::new(d).embed(&h);
        let mut real_eigs: Vec<f64> = SymmetricEigen::new(x).eigenvalues.iter().copied().collect();
        real_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, lam) in lams.iter().enumerate() {
            assert!((real_eigs[2 * k] - lam).abs() < 1e-10);
            assert!((real_eigs[2 * k + 1] - lam).abs() < 1e-10);
        }
    }

    #[test]
    fn extract_inverts_embed() {
        let h = random_hermitian(5, 11);
        let e = HermitianEmbedding::at_offset(5, 0);
        let back = e.extract(&e.embed(&h));
        assert!((back - h).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn functional_rules_match_entries() {
        let h = random_hermitian(3, 3);
        let e = HermitianEmbedding::new(3);
        let x = e.embed(&h);
        let mut f = LinearFunctional::new();
        e.add_re(&mut f, 0, 2, 1.0);
        assert!((f.eval(&x, &[]) - h[(0, 2)].re).abs() < 1e-14);
        let mut g = LinearFunctional::new();
        e.add_im(&mut g, 2, 1, 1.0);
        assert!((g.eval(&x, &[]) - h[(2, 1)].im).abs() < 1e-14);
    }
}
