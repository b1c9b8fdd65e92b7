//! Banded LU factorization with partial pivoting.
//!
//! Matrices assembled on the structured grid have half bandwidth roughly equal
//! to one grid line, so a band solver factors them in O(n·b²) time and reuses
//! the factorization for every right-hand side. Storage follows the usual band
//! layout: entry (i, j) lives in band row `kl + ku + i - j`, with `kl` extra
//! super-diagonal rows to absorb pivoting fill-in.

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Factors a sparse matrix, inferring the bandwidths from its pattern.
    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "banded LU needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let mut kl = 0usize;
        let mut ku = 0usize;
        for r in 0..n {
            let (cols, _) = a.row(r);
            for &c in cols {
                if r >= c {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                ab[c * ldab + (kl + ku + r - c)] += v;
            }
        }
        Self::factor(n, kl, ku, ab)
    }

    fn factor(n: usize, kl: usize, ku: usize, mut ab: Vec<f64>) -> Result<Self> {
        let ldab = 2 * kl + ku + 1;
        let idx = |i: usize, j: usize| -> usize { j * ldab + (kl + ku + i - j) };
        let mut ipiv = vec![0usize; n];

        for j in 0..n {
            let i_max = (j + kl).min(n - 1);
            // Partial pivot within the band column.
            let mut p = j;
            let mut best = ab[idx(j, j)].abs();
            for i in (j + 1)..=i_max {
                let v = ab[idx(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            ipiv[j] = p;
            if best == 0.0 {
                return Err(Error::Factorization(format!(
                    "zero pivot in banded LU at column {j}"
                )));
            }
            let c_max = (j + kl + ku).min(n - 1);
            if p != j {
                for c in j..=c_max {
                    ab.swap(idx(j, c), idx(p, c));
                }
            }
            let d = ab[idx(j, j)];
            for i in (j + 1)..=i_max {
                let m = ab[idx(i, j)] / d;
                ab[idx(i, j)] = m;
                if m != 0.0 {
                    for c in (j + 1)..=c_max {
                        ab[idx(i, c)] -= m * ab[idx(j, c)];
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "rhs length");
        let idx = |i: usize, j: usize| -> usize { j * self.ldab + (self.kl + self.ku + i - j) };
        // Forward substitution, replaying row interchanges.
        for j in 0..self.n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                let i_max = (j + self.kl).min(self.n - 1);
                for i in (j + 1)..=i_max {
                    b[i] -= self.ab[idx(i, j)] * bj;
                }
            }
        }
        // Back substitution on the widened upper band.
        for i in (0..self.n).rev() {
            let c_max = (i + self.kl + self.ku).min(self.n - 1);
            let mut acc = b[i];
            for c in (i + 1)..=c_max {
                acc -= self.ab[idx(i, c)] * b[c];
            }
            b[i] = acc / self.ab[idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let in_band = j + kl >= i && i + ku >= j;
                if in_band {
                    let mut v: f64 = rng.gen_range(-1.0..1.0);
                    if i == j {
                        // Keep it comfortably nonsingular.
                        v += 4.0;
                    }
                    triplets.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &triplets).unwrap()
    }

    #[test]
    fn matches_dense_lu_on_random_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(n, kl, ku) in &[(1usize, 0usize, 0usize), (5, 1, 2), (40, 3, 3), (60, 7, 2)] {
            let a = random_banded(n, kl, ku, &mut rng);
            let lu = BandedLu::from_csr(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
            let x = lu.solve(&b);
            let dense = a.to_dense();
            let x_ref = dense
                .clone()
                .lu()
                .solve(&DVector::from_column_slice(&b))
                .unwrap();
            let diff = DVector::from_column_slice(&x) - x_ref;
            assert!(diff.amax() < 1e-10, "n={n} kl={kl} ku={ku}: {}", diff.amax());
        }
    }

    #[test]
    fn pivoting_handles_small_diagonal() {
        // Leading entry is tiny; without pivoting this loses all accuracy.
        let a = CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1e-18), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
        )
        .unwrap();
        let lu = BandedLu::from_csr(&a).unwrap();
        let x = lu.solve(&[1.0, 2.0]);
        // Exact solution ~ [1, 1].
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_singular() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        assert!(BandedLu::from_csr(&a).is_err());
    }

    #[test]
    fn rejects_rectangular() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(
            BandedLu::from_csr(&a),
            Err(crate::error::Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dense_fallback_shapes() {
        // Full bandwidth equals a dense solve.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_banded(8, 7, 7, &mut rng);
        let lu = BandedLu::from_csr(&a).unwrap();
        let x = lu.solve(&[1.0; 8]);
        let r = a.to_dense() * DVector::from_column_slice(&x) - DMatrix::from_element(8, 1, 1.0);
        assert!(r.amax() < 1e-12);
    }
}
