//! Matrix-free linear algebra for the interior-point Newton systems.
//!
//! The Newton saddle system is never assembled: [`NewtonOperator`] applies it
//! block by block through a [`SpaceTimeOps`] backend, and
//! [`SaddlePreconditioner`] applies the inverse of a block-triangular
//! approximation at the cost of one forward and one adjoint space-time solve
//! per call. [`gmres`] is a restarted, right-preconditioned GMRES that reports
//! the unpreconditioned relative residual.

use crate::error::{Error, Result};
use crate::spacetime::{Knapsack, SpaceTimeOps};
use nalgebra::DMatrix;

/// A real linear map acting on contiguous slices.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// out = A x. `x` and `out` must both have length [`dim`](Self::dim).
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// Dense matrix viewed as a [`LinearOperator`]. Verification helper for small
/// problems.
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let x = nalgebra::DVectorView::from_slice(x, x.len());
        let mut y = nalgebra::DVectorViewMut::from_slice(out, self.0.nrows());
        self.0.mul_to(&x, &mut y);
    }
}

/// Assembles the dense matrix of an operator column by column. Intended for
/// small verification problems only — cost is `dim` operator applications.
pub fn materialize(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut unit = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        unit[j] = 1.0;
        op.apply(&unit, &mut col);
        unit[j] = 0.0;
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    out
}

/// Block sizes and offsets of the packed Newton unknown [y | u | z | p | q]:
/// states, controls, knapsack slacks, adjoints, knapsack multipliers.
#[derive(Clone, Copy, Debug)]
pub struct KktLayout {
    pub ny: usize,
    pub nu: usize,
    pub nt: usize,
}

impl KktLayout {
    pub fn from_ops(ops: &dyn SpaceTimeOps) -> Self {
        KktLayout {
            ny: ops.state_dim(),
            nu: ops.control_dim(),
            nt: ops.n_time(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.ny + self.nu + 2 * self.nt
    }

    pub fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (y, rest) = x.split_at(self.ny);
        let (u, rest) = rest.split_at(self.nu);
        let (z, rest) = rest.split_at(self.nt);
        let (p, q) = rest.split_at(self.ny);
        (y, u, z, p, q)
    }

    #[allow(clippy::type_complexity)]
    pub fn split_mut<'a>(
        &self,
        x: &'a mut [f64],
    ) -> (
        &'a mut [f64],
        &'a mut [f64],
        &'a mut [f64],
        &'a mut [f64],
        &'a mut [f64],
    ) {
        let (y, rest) = x.split_at_mut(self.ny);
        let (u, rest) = rest.split_at_mut(self.nu);
        let (z, rest) = rest.split_at_mut(self.nt);
        let (p, q) = rest.split_at_mut(self.ny);
        (y, u, z, p, q)
    }
}

/// The Newton saddle matrix of one interior-point step, applied matrix-free:
///
/// ```text
/// ⎡ M̃    0     0    K̃ᵀ   0  ⎤ ⎡Δy⎤
/// ⎢ 0    D_u   0   −Φ̃ᵀ   Eᵀ ⎥ ⎢Δu⎥
/// ⎢ 0    0    Θ_z   0    I  ⎥ ⎢Δz⎥
/// ⎢ K̃   −Φ̃    0     0    0  ⎥ ⎢Δp⎥
/// ⎣ 0    E     I    0    0  ⎦ ⎣Δq⎦
/// ```
///
/// where E sums each control block (the knapsack rows), D_u is the regularized
/// control diagonal and Θ_z the slack barrier diagonal.
pub struct NewtonOperator<'a> {
    ops: &'a dyn SpaceTimeOps,
    knapsack: &'a Knapsack,
    layout: KktLayout,
    d_u: Vec<f64>,
    theta_z: Vec<f64>,
}

impl<'a> NewtonOperator<'a> {
    pub fn new(
        ops: &'a dyn SpaceTimeOps,
        knapsack: &'a Knapsack,
        d_u: Vec<f64>,
        theta_z: Vec<f64>,
    ) -> Result<Self> {
        let layout = KktLayout::from_ops(ops);
        if knapsack.n_time != ops.n_time() || knapsack.n_sources != ops.control_block() {
            return Err(Error::DimensionMismatch(format!(
                "knapsack {}x{} does not match operator blocks {}x{}",
                knapsack.n_time,
                knapsack.n_sources,
                ops.n_time(),
                ops.control_block()
            )));
        }
        if d_u.len() != layout.nu || theta_z.len() != layout.nt {
            return Err(Error::DimensionMismatch(format!(
                "Newton diagonals ({}, {}) do not match layout ({}, {})",
                d_u.len(),
                theta_z.len(),
                layout.nu,
                layout.nt
            )));
        }
        Ok(NewtonOperator {
            ops,
            knapsack,
            layout,
            d_u,
            theta_z,
        })
    }

    pub fn layout(&self) -> KktLayout {
        self.layout
    }
}

impl LinearOperator for NewtonOperator<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let (y, u, z, p, q) = lay.split(x);
        let (oy, ou, oz, op, oq) = lay.split_mut(out);
        let mut tmp_y = vec![0.0; lay.ny];
        let mut tmp_u = vec![0.0; lay.nu];

        // oy = M̃ y + K̃ᵀ p
        self.ops.apply_obs_weight(y, oy);
        self.ops.apply_state_op_transpose(p, &mut tmp_y);
        for (o, t) in oy.iter_mut().zip(&tmp_y) {
            *o += t;
        }

        // ou = D_u u − Φ̃ᵀ p + Eᵀ q
        self.ops.apply_control_op_transpose(p, ou);
        self.knapsack.apply_transpose(q, &mut tmp_u);
        for i in 0..lay.nu {
            ou[i] = self.d_u[i] * u[i] - ou[i] + tmp_u[i];
        }

        // oz = Θ_z z + q
        for i in 0..lay.nt {
            oz[i] = self.theta_z[i] * z[i] + q[i];
        }

        // op = K̃ y − Φ̃ u
        self.ops.apply_state_op(y, op);
        self.ops.apply_control_op(u, &mut tmp_y);
        for (o, t) in op.iter_mut().zip(&tmp_y) {
            *o -= t;
        }

        // oq = E u + z
        self.knapsack.apply(u, oq);
        for (o, zi) in oq.iter_mut().zip(z) {
            *o += zi;
        }
    }
}

/// Inverse of a block-triangular approximation of the Newton matrix. The
/// approximation keeps the constraint blocks exact, drops the couplings that
/// would make the inverse expensive, and replaces the knapsack Schur
/// complement by its exact diagonal:
///
/// ```text
/// ⎡ M̃    0     0   −K̃ᵀ   0  ⎤
/// ⎢ 0    D_u   0    0    0  ⎥
/// ⎢ 0    0    Θ_z   0    0  ⎥
/// ⎢ K̃    0     0    0    0  ⎥
/// ⎣ 0   −E     0    0    Σ  ⎦ ,   Σ = Θ_z⁻¹ + E D_u⁻¹ Eᵀ.
/// ```
///
/// Each application costs exactly one forward and one adjoint space-time
/// solve; everything else is diagonal.
pub struct SaddlePreconditioner<'a> {
    ops: &'a dyn SpaceTimeOps,
    knapsack: &'a Knapsack,
    layout: KktLayout,
    d_u: Vec<f64>,
    theta_z: Vec<f64>,
    schur_diag: Vec<f64>,
}

impl<'a> SaddlePreconditioner<'a> {
    pub fn new(
        ops: &'a dyn SpaceTimeOps,
        knapsack: &'a Knapsack,
        d_u: Vec<f64>,
        theta_z: Vec<f64>,
    ) -> Result<Self> {
        let layout = KktLayout::from_ops(ops);
        if d_u.len() != layout.nu || theta_z.len() != layout.nt {
            return Err(Error::DimensionMismatch(format!(
                "preconditioner diagonals ({}, {}) do not match layout ({}, {})",
                d_u.len(),
                theta_z.len(),
                layout.nu,
                layout.nt
            )));
        }
        if d_u.iter().any(|&d| d <= 0.0) || theta_z.iter().any(|&t| t <= 0.0) {
            return Err(Error::InvalidArgument(
                "preconditioner diagonals must be strictly positive".into(),
            ));
        }
        let l = knapsack.n_sources;
        let schur_diag = (0..layout.nt)
            .map(|i| {
                let row: f64 = d_u[i * l..(i + 1) * l].iter().map(|&d| 1.0 / d).sum();
                1.0 / theta_z[i] + row
            })
            .collect();
        Ok(SaddlePreconditioner {
            ops,
            knapsack,
            layout,
            d_u,
            theta_z,
            schur_diag,
        })
    }

    /// Dense matrix of the *approximation itself* (not its inverse), assembled
    /// from caller-provided dense constraint blocks. Verification helper: the
    /// product of [`apply`](LinearOperator::apply) with this matrix should be
    /// the identity.
    pub fn materialize_target(
        &self,
        dense_state_op: &DMatrix<f64>,
        dense_obs_weight: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let lay = self.layout;
        let n = lay.dim();
        let (oy, ou, oz, op, oq) = (0, lay.ny, lay.ny + lay.nu, lay.ny + lay.nu + lay.nt, n - lay.nt);
        let l = self.knapsack.n_sources;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..lay.ny {
            for j in 0..lay.ny {
                m[(oy + i, oy + j)] = dense_obs_weight[(i, j)];
                m[(oy + i, op + j)] = -dense_state_op[(j, i)];
                m[(op + i, oy + j)] = dense_state_op[(i, j)];
            }
        }
        for i in 0..lay.nu {
            m[(ou + i, ou + i)] = self.d_u[i];
        }
        for i in 0..lay.nt {
            m[(oz + i, oz + i)] = self.theta_z[i];
            m[(oq + i, oq + i)] = self.schur_diag[i];
            for j in 0..l {
                m[(oq + i, ou + i * l + j)] = -1.0;
            }
        }
        m
    }
}

impl LinearOperator for SaddlePreconditioner<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn apply(&self, w: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let (w1, w2, w3, w4, w5) = lay.split(w);
        let (oy, ou, oz, op, oq) = lay.split_mut(out);

        // Row 4: K̃ Δy = w4.
        self.ops.solve_state_op(w4, oy);

        // Row 2: D_u Δu = w2.
        for i in 0..lay.nu {
            ou[i] = w2[i] / self.d_u[i];
        }

        // Row 3: Θ_z Δz = w3.
        for i in 0..lay.nt {
            oz[i] = w3[i] / self.theta_z[i];
        }

        // Row 1: M̃ Δy − K̃ᵀ Δp = w1.
        let mut rhs = vec![0.0; lay.ny];
        self.ops.apply_obs_weight(oy, &mut rhs);
        for (r, w) in rhs.iter_mut().zip(w1) {
            *r -= w;
        }
        self.ops.solve_state_op_transpose(&rhs, op);

        // Row 5: −E Δu + Σ Δq = w5.
        self.knapsack.apply(ou, oq);
        for i in 0..lay.nt {
            oq[i] = (w5[i] + oq[i]) / self.schur_diag[i];
        }
    }
}

/// Options for [`gmres`].
#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    /// Stop when ‖b − Ax‖ ≤ tol·‖b‖ (unpreconditioned residual).
    pub tol: f64,
    /// Krylov space dimension per restart cycle.
    pub restart: usize,
    /// Total iteration cap across all cycles.
    pub max_iterations: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-8,
            restart: 50,
            max_iterations: 500,
        }
    }
}

/// Convergence report of one [`gmres`] call.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub converged: bool,
    /// Operator applications performed (excluding the initial residual).
    pub iterations: usize,
    /// Final unpreconditioned relative residual.
    pub relative_residual: f64,
    /// Relative residual estimate after every iteration.
    pub history: Vec<f64>,
}

/// Restarted GMRES with optional right preconditioning.
///
/// Solves A·x = b starting from the incoming content of `x`. With a
/// preconditioner P the iteration runs on A·P⁻¹ but both the convergence test
/// and `history` track the residual of the original system, so iteration
/// counts stay comparable across preconditioners. Modified Gram–Schmidt with
/// Givens rotations; the true residual is re-evaluated at every restart and
/// before accepting convergence.
pub fn gmres(
    op: &dyn LinearOperator,
    rhs: &[f64],
    x: &mut [f64],
    preconditioner: Option<&dyn LinearOperator>,
    options: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = op.dim();
    if rhs.len() != n || x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "gmres operands: operator {n}, rhs {}, x {}",
            rhs.len(),
            x.len()
        )));
    }
    if options.restart == 0 || options.max_iterations == 0 || !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(
            "gmres needs restart ≥ 1, max_iterations ≥ 1 and tol > 0".into(),
        ));
    }
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(GmresOutcome {
            converged: true,
            iterations: 0,
            relative_residual: 0.0,
            history: Vec::new(),
        });
    }

    let m = options.restart.min(n);
    let mut history = Vec::new();
    let mut iterations = 0usize;

    let mut residual = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let compute_residual = |x: &[f64], r: &mut [f64], tmp: &mut [f64]| {
        op.apply(x, tmp);
        for i in 0..n {
            r[i] = rhs[i] - tmp[i];
        }
    };
    compute_residual(x, &mut residual, &mut scratch);
    let mut r_norm = norm(&residual);
    if r_norm <= options.tol * b_norm {
        return Ok(GmresOutcome {
            converged: true,
            iterations: 0,
            relative_residual: r_norm / b_norm,
            history,
        });
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut precond_vec = vec![0.0; n];

    // x += P⁻¹ (V y) for the y solved from the triangular least-squares system.
    let update_solution = |x: &mut [f64],
                           basis: &[Vec<f64>],
                           hess: &[Vec<f64>],
                           g: &[f64],
                           cols: usize,
                           tmp: &mut [f64],
                           pv: &mut [f64]| {
        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut s = g[i];
            for (j, yj) in y.iter().enumerate().take(cols).skip(i + 1) {
                s -= hess[j][i] * yj;
            }
            y[i] = s / hess[i][i];
        }
        tmp.fill(0.0);
        for (j, yj) in y.iter().enumerate() {
            for (t, v) in tmp.iter_mut().zip(&basis[j]) {
                *t += yj * v;
            }
        }
        match preconditioner {
            Some(pre) => {
                pre.apply(tmp, pv);
                for (xi, pi) in x.iter_mut().zip(pv.iter()) {
                    *xi += pi;
                }
            }
            None => {
                for (xi, ti) in x.iter_mut().zip(tmp.iter()) {
                    *xi += ti;
                }
            }
        }
    };

    while iterations < options.max_iterations {
        basis.clear();
        hess.clear();
        g.fill(0.0);
        g[0] = r_norm;
        basis.push(residual.iter().map(|v| v / r_norm).collect());

        let mut cols = 0;
        let mut breakdown = false;
        while cols < m && iterations < options.max_iterations {
            let j = cols;
            let vj = &basis[j];
            let mut w = vec![0.0; n];
            match preconditioner {
                Some(pre) => {
                    pre.apply(vj, &mut precond_vec);
                    op.apply(&precond_vec, &mut w);
                }
                None => op.apply(vj, &mut w),
            }
            iterations += 1;

            let mut col = vec![0.0; j + 2];
            for (i, vi) in basis.iter().enumerate() {
                let h = dot(&w, vi);
                col[i] = h;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= h * vk;
                }
            }
            let h_next = norm(&w);
            col[j + 1] = h_next;

            // Previous rotations, then a new one to zero the subdiagonal.
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            if denom == 0.0 {
                return Err(Error::Krylov("GMRES encountered a zero column".into()));
            }
            cs[j] = col[j] / denom;
            sn[j] = col[j + 1] / denom;
            col[j] = denom;
            col[j + 1] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            hess.push(col);
            cols += 1;

            let estimate = g[j + 1].abs() / b_norm;
            history.push(estimate);

            if h_next <= f64::EPSILON * b_norm {
                breakdown = true;
                break;
            }
            if estimate <= options.tol {
                break;
            }
            basis.push(w.iter().map(|v| v / h_next).collect());
        }

        update_solution(x, &basis, &hess, &g, cols, &mut scratch, &mut precond_vec);
        compute_residual(x, &mut residual, &mut scratch);
        r_norm = norm(&residual);
        if r_norm <= options.tol * b_norm || breakdown {
            return Ok(GmresOutcome {
                converged: r_norm <= options.tol * b_norm,
                iterations,
                relative_residual: r_norm / b_norm,
                history,
            });
        }
    }

    Ok(GmresOutcome {
        converged: false,
        iterations,
        relative_residual: r_norm / b_norm,
        history,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
