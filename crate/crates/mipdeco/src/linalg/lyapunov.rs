//! Dense solver for stable Lyapunov equations  A X + X Aᵀ + W = 0.
//!
//! Symmetric A is handled through its eigendecomposition; the general case
//! uses the real Schur form followed by a block back-substitution over the
//! quasi-triangular factor (1x1 and 2x2 diagonal blocks, the latter solved as
//! Kronecker systems of size ≤ 4). Both paths verify the residual before
//! returning.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Solves A X + X Aᵀ + W = 0 for stable A (all eigenvalues in the open left
/// half-plane) and symmetric W. `residual_tol` bounds ‖AX + XAᵀ + W‖_F
/// relative to ‖W‖_F.
pub fn solve_stable_lyapunov(
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    residual_tol: f64,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov operands {}x{} / {}x{}",
            a.nrows(),
            a.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }

    let x = if symmetry_defect(a) <= 1e-12 * a.amax().max(1.0) {
        solve_symmetric(a, w)?
    } else {
        solve_schur(a, w)?
    };

    let w_norm = w.norm().max(f64::MIN_POSITIVE);
    let residual = (a * &x + &x * a.transpose() + w).norm();
    if residual > residual_tol * w_norm {
        return Err(Error::Lyapunov(format!(
            "residual {:.3e} exceeds {:.3e} (relative, n = {n})",
            residual / w_norm,
            residual_tol
        )));
    }
    Ok(x)
}

fn symmetry_defect(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            d = d.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    d
}

fn solve_symmetric(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = nalgebra_lapack::SymmetricEigen::try_new(a.clone())
        .ok_or_else(|| Error::Lyapunov("symmetric eigendecomposition failed".into()))?;
    let d = &eig.eigenvalues;
    if d.iter().any(|&l| l >= 0.0) {
        return Err(Error::Lyapunov(format!(
            "matrix is not stable (max eigenvalue {:.3e})",
            d.max()
        )));
    }
    let v = &eig.eigenvectors;
    let mut wt = v.transpose() * w * v;
    for i in 0..d.len() {
        for j in 0..d.len() {
            wt[(i, j)] = -wt[(i, j)] / (d[i] + d[j]);
        }
    }
    Ok(v * wt * v.transpose())
}

/// Real Schur form A = Q T Qᵀ with T upper quasi-triangular, via LAPACK dgees.
fn real_schur(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let ni = n as i32;
    let mut t = a.clone();
    let mut q = DMatrix::zeros(n, n);
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut sdim = 0i32;
    let mut bwork = vec![0i32; n.max(1)];
    let mut info = 0i32;

    // Workspace query, then the actual factorization.
    let mut work = vec![0.0f64; 1];
    unsafe {
        lapack::dgees(
            b'V',
            b'N',
            None,
            ni,
            t.as_mut_slice(),
            ni,
            &mut sdim,
            &mut wr,
            &mut wi,
            q.as_mut_slice(),
            ni,
            &mut work,
            -1,
            &mut bwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lyapunov(format!(
            "Schur workspace query failed (info = {info})"
        )));
    }
    let lwork = work[0] as i32;
    work.resize(lwork.max(1) as usize, 0.0);
    unsafe {
        lapack::dgees(
            b'V',
            b'N',
            None,
            ni,
            t.as_mut_slice(),
            ni,
            &mut sdim,
            &mut wr,
            &mut wi,
            q.as_mut_slice(),
            ni,
            &mut work,
            lwork,
            &mut bwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lyapunov(format!(
            "real Schur decomposition did not converge (info = {info})"
        )));
    }
    Ok((q, t))
}

fn solve_schur(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, t) = real_schur(a)?;
    let blocks = diag_blocks(&t);
    for &(s, len) in &blocks {
        let re = if len == 1 {
            t[(s, s)]
        } else {
            0.5 * (t[(s, s)] + t[(s + 1, s + 1)])
        };
        if re >= 0.0 {
            return Err(Error::Lyapunov(format!(
                "matrix is not stable (eigenvalue real part {re:.3e})"
            )));
        }
    }
    let c = -(q.transpose() * w * &q);
    let y = solve_quasi_triangular(&t, &c, &blocks)?;
    let x = &q * y * q.transpose();
    // The exact solution is symmetric; discard rounding asymmetry.
    Ok(0.5 * (&x + x.transpose()))
}

/// Splits the quasi-triangular Schur factor into 1x1 / 2x2 diagonal blocks.
fn diag_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        let coupled = i + 1 < n
            && t[(i + 1, i)].abs()
                > f64::EPSILON * (t[(i, i)].abs() + t[(i + 1, i + 1)].abs()).max(f64::MIN_POSITIVE);
        if coupled {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves T Y + Y Tᵀ = C with T upper quasi-triangular.
fn solve_quasi_triangular(
    t: &DMatrix<f64>,
    c: &DMatrix<f64>,
    blocks: &[(usize, usize)],
) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let tt = t.transpose();
    let mut y = DMatrix::zeros(n, n);

    for &(js, jn) in blocks.iter().rev() {
        // Right-hand side for this block column: C[:,J] - Y[:,K>J] T[J,K>J]ᵀ.
        let mut g = c.columns(js, jn).into_owned();
        let tail = js + jn;
        if tail < n {
            g.gemm(
                -1.0,
                &y.view((0, tail), (n, n - tail)),
                &tt.view((tail, js), (n - tail, jn)),
                1.0,
            );
        }
        for &(is, inn) in blocks.iter().rev() {
            let mut h = g.view((is, 0), (inn, jn)).into_owned();
            let row_tail = is + inn;
            if row_tail < n {
                h.gemm(
                    -1.0,
                    &t.view((is, row_tail), (inn, n - row_tail)),
                    &y.view((row_tail, js), (n - row_tail, jn)),
                    1.0,
                );
            }
            // Small Sylvester block: T_II X + X T_JJᵀ = H, vectorized column-major.
            let m = inn * jn;
            let mut kron = DMatrix::zeros(m, m);
            for j in 0..jn {
                for i in 0..inn {
                    let row = j * inn + i;
                    for i2 in 0..inn {
                        kron[(row, j * inn + i2)] += t[(is + i, is + i2)];
                    }
                    for j2 in 0..jn {
                        kron[(row, j2 * inn + i)] += t[(js + j, js + j2)];
                    }
                }
            }
            let rhs = DVector::from_column_slice(h.as_slice());
            let sol = kron.lu().solve(&rhs).ok_or_else(|| {
                Error::Lyapunov("singular diagonal block pair in back-substitution".into())
            })?;
            for j in 0..jn {
                for i in 0..inn {
                    y[(is + i, js + j)] = sol[j * inn + i];
                }
            }
        }
    }
    Ok(y)
}
