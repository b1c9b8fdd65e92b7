//! Balanced truncation of the semidiscrete dynamics M ẏ + K y = MΦ u,
//! observed through the vertex selector C.
//!
//! The controllability and observability Gramians solve the generalized
//! Lyapunov equations
//!     A P Mᵀ + M P Aᵀ + B Bᵀ = 0,   Aᵀ Q M + M Q A + Cᵀ C = 0,
//! with A = −K and B = MΦ. Each is reduced to a standard Lyapunov equation
//! by the congruence M = LLᵀ, solved densely, and returned as a low-rank
//! factor. The Hankel singular values are the singular values of F_oᵀ M F_c;
//! the square-root method turns the leading r of them into projection
//! matrices T₁ (full → reduced) and T₂ (reduced → full) with T₁MT₂ ≈ I_r.
//!
//! Truncation refuses to split a tie: if the requested order lands inside a
//! block of (numerically) equal singular values, the order shrinks below the
//! block, and an order of zero is an error.

use crate::error::{Error, Result};
use crate::linalg::solve_stable_lyapunov;
use crate::mesh::FemSystem;
use crate::spacetime::{SpaceTimeOps, TimeGrid};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Relative singular-value cutoff when compressing a Gramian into a factor.
const FACTOR_RANK_TOL: f64 = 1e-12;
/// Hankel values below this (relative to σ₁) count as numerically zero.
const SIGMA_RANK_TOL: f64 = 1e-14;
/// Neighboring Hankel values closer than this (relative to σ₁) are tied.
const SIGMA_TIE_TOL: f64 = 1e-10;
/// Always-on relative Frobenius bound on the generalized Lyapunov residual.
const GRAMIAN_RESIDUAL_TOL: f64 = 1e-8;

/// Solves A X Mᵀ + M X Aᵀ + B Bᵀ = 0 for a stable pencil (A, M) with M
/// symmetric positive definite, returning a factor F with X ≈ F Fᵀ.
///
/// The generalized residual is always verified against `BBᵀ` in the
/// Frobenius norm; a violation is reported as an error rather than a result.
pub fn solve_generalized_lyapunov(
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov operands: a {}x{}, m {}x{}, b {}x{}",
            a.nrows(),
            a.ncols(),
            m.nrows(),
            m.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("mass matrix is not positive definite".into()))?;
    let l = chol.l();

    // Congruence to a standard Lyapunov equation: Â X̂ + X̂ Âᵀ + B̂B̂ᵀ = 0
    // with Â = L⁻¹AL⁻ᵀ, B̂ = L⁻¹B and X = L⁻ᵀ X̂ L⁻¹.
    let la = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    let a_hat = l
        .solve_lower_triangular(&la.transpose())
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?
        .transpose();
    let b_hat = l
        .solve_lower_triangular(b)
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    let w = &b_hat * b_hat.transpose();
    let x_hat = solve_stable_lyapunov(&a_hat, &w, GRAMIAN_RESIDUAL_TOL)?;

    // Compress into a factor, dropping the numerically-zero eigenspace. The
    // rank cut applies to the factor's singular values √λ, so eigenvalues
    // survive down to (tol·√λ_max)².
    let eig = nalgebra_lapack::SymmetricEigen::try_new(x_hat)
        .ok_or_else(|| Error::Lyapunov("symmetric eigendecomposition failed".into()))?;
    let lam_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    if !(lam_max > 0.0) {
        return Err(Error::Lyapunov("gramian is numerically zero".into()));
    }
    let lam_cut = FACTOR_RANK_TOL * FACTOR_RANK_TOL * lam_max;
    let mut kept: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > lam_cut)
        .collect();
    kept.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut factor_hat = DMatrix::zeros(n, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        factor_hat
            .column_mut(col)
            .copy_from(&(eig.eigenvectors.column(i) * scale));
    }
    let factor = l
        .tr_solve_lower_triangular(&factor_hat)
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;

    let x = &factor * factor.transpose();
    let rhs = b * b.transpose();
    let residual = a * &x * m.transpose() + m * &x * a.transpose() + &rhs;
    let rel = residual.norm() / rhs.norm();
    if !(rel <= GRAMIAN_RESIDUAL_TOL) {
        return Err(Error::Lyapunov(format!(
            "generalized Lyapunov residual {rel:.3e} exceeds {GRAMIAN_RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(factor)
}

/// Low-rank factors of the two system Gramians: P ≈ F_c F_cᵀ, Q ≈ F_o F_oᵀ.
pub struct GramianFactors {
    pub controllability: DMatrix<f64>,
    pub observability: DMatrix<f64>,
}

pub fn gramian_factors(fem: &FemSystem) -> Result<GramianFactors> {
    let m = fem.mass.to_dense();
    let a = -fem.stiffness.to_dense();
    let b = fem.mass.mul_dense(&fem.phi);
    let c = fem.obs_matrix_dense();
    let controllability = solve_generalized_lyapunov(&a, &m, &b)?;
    let observability = solve_generalized_lyapunov(&a.transpose(), &m, &c.transpose())?;
    Ok(GramianFactors {
        controllability,
        observability,
    })
}

/// Hankel data of a system: the singular values of F_oᵀ M F_c together with
/// the singular vectors needed to form balancing transformations.
pub struct BalancedTruncation {
    /// Hankel singular values, sorted descending, numerically-zero tail removed.
    pub sigma: Vec<f64>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    f_c: DMatrix<f64>,
    f_o: DMatrix<f64>,
}

impl BalancedTruncation {
    pub fn from_factors(factors: GramianFactors, m: &DMatrix<f64>) -> Result<Self> {
        let f_c = factors.controllability;
        let f_o = factors.observability;
        let core = f_o.transpose() * m * &f_c;
        let svd = nalgebra_lapack::SVD::new(core)
            .ok_or_else(|| Error::Reduction("singular value decomposition failed".into()))?;
        let u_all = svd.u;
        let v_t = svd.vt;
        let vals = svd.singular_values;

        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
        let smax = vals[order[0]];
        if !(smax > 0.0) {
            return Err(Error::Reduction("system has no Hankel content".into()));
        }
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&i| vals[i] > SIGMA_RANK_TOL * smax)
            .collect();

        let mut sigma = Vec::with_capacity(kept.len());
        let mut u = DMatrix::zeros(u_all.nrows(), kept.len());
        let mut v = DMatrix::zeros(v_t.ncols(), kept.len());
        for (col, &i) in kept.iter().enumerate() {
            sigma.push(vals[i]);
            u.column_mut(col).copy_from(&u_all.column(i));
            v.column_mut(col).copy_from(&v_t.row(i).transpose());
        }
        Ok(BalancedTruncation {
            sigma,
            u,
            v,
            f_c,
            f_o,
        })
    }

    pub fn from_fem(fem: &FemSystem) -> Result<Self> {
        Self::from_factors(gramian_factors(fem)?, &fem.mass.to_dense())
    }

    /// Number of nonzero Hankel singular values (the largest usable order).
    pub fn max_order(&self) -> usize {
        self.sigma.len()
    }

    /// Σ(r) = σ_{r+1} + σ_{r+2} + … : the truncation-tail sum.
    pub fn sigma_tail(&self, r: usize) -> f64 {
        self.sigma.iter().skip(r).sum()
    }

    /// Smallest order whose tail sum drops to `tol` or below.
    pub fn order_for_tail(&self, tol: f64) -> usize {
        let mut tail = self.sigma_tail(0);
        for r in 0..self.sigma.len() {
            if tail <= tol {
                return r;
            }
            tail -= self.sigma[r];
        }
        self.sigma.len()
    }

    /// Balancing transformations for order `r`: returns (effective order,
    /// T₁ ∈ R^{r×N}, T₂ ∈ R^{N×r}). The effective order shrinks below any tie
    /// block of equal singular values that `r` would split.
    ///
    /// T₁ = Σ₁^{−1/2}U₁ᵀF_oᵀ tests against the leading observability
    /// directions; T₂ = F_cV₁Σ₁^{−1/2} lifts from the leading controllability
    /// directions, so reconstructed states live in the reachable subspace.
    /// This pairing is what makes the output error obey the 2‖u‖Σ(r) bound.
    pub fn transforms(&self, requested: usize) -> Result<(usize, DMatrix<f64>, DMatrix<f64>)> {
        if requested == 0 {
            return Err(Error::InvalidArgument(
                "reduced order must be positive".into(),
            ));
        }
        let n_tilde = self.sigma.len();
        let mut r = requested.min(n_tilde);
        let sig1 = self.sigma[0];
        while r > 0 && r < n_tilde && self.sigma[r - 1] - self.sigma[r] <= SIGMA_TIE_TOL * sig1 {
            r -= 1;
        }
        if r == 0 {
            return Err(Error::Reduction(format!(
                "order {requested} splits the leading block of equal Hankel values; \
                 no usable smaller order exists"
            )));
        }

        let mut t1 = (&self.f_o * self.u.columns(0, r)).transpose();
        for i in 0..r {
            t1.row_mut(i).scale_mut(self.sigma[i].sqrt().recip());
        }
        let mut t2 = &self.f_c * self.v.columns(0, r);
        for i in 0..r {
            t2.column_mut(i).scale_mut(self.sigma[i].sqrt().recip());
        }
        Ok((r, t1, t2))
    }
}

/// Projected system data: everything needed to run the reduced dynamics and
/// lift its states back to the grid.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    /// Effective reduced order r (after any tie shrink).
    pub order: usize,
    pub time: TimeGrid,
    /// Full Hankel spectrum of the source system, for error bounds.
    pub sigma: Vec<f64>,
    /// T₁MT₂ — the identity up to rounding; kept explicit rather than assumed.
    pub m_red: DMatrix<f64>,
    pub k_red: DMatrix<f64>,
    /// T₁MΦ.
    pub phi_red: DMatrix<f64>,
    /// CT₂.
    pub c_red: DMatrix<f64>,
    /// T₂ — maps reduced states back to grid unknowns.
    pub lift: DMatrix<f64>,
}

impl ReducedModel {
    pub fn build(
        fem: &FemSystem,
        bt: &BalancedTruncation,
        order: usize,
        time: TimeGrid,
    ) -> Result<ReducedModel> {
        let (r, t1, t2) = bt.transforms(order)?;
        let m_red = &t1 * fem.mass.mul_dense(&t2);
        let k_red = &t1 * fem.stiffness.mul_dense(&t2);
        let phi_red = &t1 * fem.mass.mul_dense(&fem.phi);
        let c_red = fem.obs_matrix_dense() * &t2;
        Ok(ReducedModel {
            order: r,
            time,
            sigma: bt.sigma.clone(),
            m_red,
            k_red,
            phi_red,
            c_red,
            lift: t2,
        })
    }

    /// Tail sum Σ(order) of the retained spectrum.
    pub fn sigma_tail(&self) -> f64 {
        self.sigma.iter().skip(self.order).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = ReducedMeta {
            order: self.order,
            horizon: self.time.horizon,
            n_time: self.time.n_time,
            n_full: self.lift.nrows(),
            n_sources: self.phi_red.ncols(),
            n_obs: self.c_red.nrows(),
            sigma: self.sigma.clone(),
        };
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Persistence(format!("encoding metadata: {e}")))?;
        std::fs::write(dir.join("meta.json"), text)?;
        write_dense_csv(&dir.join("m_red.csv"), &self.m_red)?;
        write_dense_csv(&dir.join("k_red.csv"), &self.k_red)?;
        write_dense_csv(&dir.join("phi_red.csv"), &self.phi_red)?;
        write_dense_csv(&dir.join("c_red.csv"), &self.c_red)?;
        write_dense_csv(&dir.join("lift.csv"), &self.lift)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ReducedModel> {
        let text = std::fs::read_to_string(dir.join("meta.json"))?;
        let meta: ReducedMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Persistence(format!("decoding metadata: {e}")))?;
        if meta.sigma.len() < meta.order {
            return Err(Error::Persistence(format!(
                "metadata lists {} singular values for order {}",
                meta.sigma.len(),
                meta.order
            )));
        }
        let r = meta.order;
        let time = TimeGrid::new(meta.horizon, meta.n_time)?;
        Ok(ReducedModel {
            order: r,
            time,
            sigma: meta.sigma,
            m_red: read_dense_csv(&dir.join("m_red.csv"), r, r)?,
            k_red: read_dense_csv(&dir.join("k_red.csv"), r, r)?,
            phi_red: read_dense_csv(&dir.join("phi_red.csv"), r, meta.n_sources)?,
            c_red: read_dense_csv(&dir.join("c_red.csv"), meta.n_obs, r)?,
            lift: read_dense_csv(&dir.join("lift.csv"), meta.n_full, r)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ReducedMeta {
    order: usize,
    horizon: f64,
    n_time: usize,
    n_full: usize,
    n_sources: usize,
    n_obs: usize,
    sigma: Vec<f64>,
}

fn write_dense_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            // 17 significant digits round-trip an f64 exactly.
            out.push_str(&format!("{:.17e}", m[(i, j)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_dense_csv(path: &Path, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(nrows * ncols);
    for (lineno, line) in text.lines().enumerate() {
        for field in line.split(',') {
            values.push(field.trim().parse::<f64>().map_err(|e| {
                Error::Persistence(format!("{}:{}: bad number: {e}", path.display(), lineno + 1))
            })?);
        }
    }
    if values.len() != nrows * ncols {
        return Err(Error::Persistence(format!(
            "{}: expected {}x{} entries, found {}",
            path.display(),
            nrows,
            ncols,
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// Reduced-order all-at-once system; the counterpart of the full operator,
/// usable anywhere a `SpaceTimeOps` is expected.
pub struct ReducedSpaceTime {
    pub model: ReducedModel,
    fem: Arc<FemSystem>,
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    k1_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k1t_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// C_redᵀ M_obs C_red.
    w_red: DMatrix<f64>,
    solves: AtomicUsize,
}

impl ReducedSpaceTime {
    pub fn new(fem: Arc<FemSystem>, model: ReducedModel) -> Result<Self> {
        if model.lift.nrows() != fem.n_dofs
            || model.phi_red.ncols() != fem.n_sources()
            || model.c_red.nrows() != fem.n_obs()
        {
            return Err(Error::DimensionMismatch(format!(
                "reduced model (lift {}x{}, phi {}x{}, c {}x{}) does not fit a system \
                 with {} unknowns, {} sources, {} observed vertices",
                model.lift.nrows(),
                model.lift.ncols(),
                model.phi_red.nrows(),
                model.phi_red.ncols(),
                model.c_red.nrows(),
                model.c_red.ncols(),
                fem.n_dofs,
                fem.n_sources(),
                fem.n_obs()
            )));
        }
        let half_dt = 0.5 * model.time.dt();
        let k1 = &model.m_red + &model.k_red * half_dt;
        let k2 = &model.m_red - &model.k_red * half_dt;
        let k1_lu = k1.clone().lu();
        let k1t_lu = k1.transpose().lu();
        let w_red = model.c_red.transpose() * fem.obs_mass.mul_dense(&model.c_red);
        Ok(ReducedSpaceTime {
            model,
            fem,
            k1,
            k2,
            k1_lu,
            k1t_lu,
            w_red,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn order(&self) -> usize {
        self.model.order
    }
}

impl SpaceTimeOps for ReducedSpaceTime {
    fn n_time(&self) -> usize {
        self.model.time.n_time
    }

    fn state_block(&self) -> usize {
        self.model.order
    }

    fn control_block(&self) -> usize {
        self.model.phi_red.ncols()
    }

    fn full_state_block(&self) -> usize {
        self.fem.n_dofs
    }

    fn apply_state_op(&self, y: &[f64], out: &mut [f64]) {
        let r = self.model.order;
        for i in 0..self.n_time() {
            let yi = DVector::from_column_slice(&y[i * r..(i + 1) * r]);
            let mut v = &self.k1 * yi;
            if i > 0 {
                v -= &self.k2 * DVector::from_column_slice(&y[(i - 1) * r..i * r]);
            }
            out[i * r..(i + 1) * r].copy_from_slice(v.as_slice());
        }
    }

    fn apply_state_op_transpose(&self, w: &[f64], out: &mut [f64]) {
        let r = self.model.order;
        let nt = self.n_time();
        for i in 0..nt {
            let wi = DVector::from_column_slice(&w[i * r..(i + 1) * r]);
            let mut v = self.k1.transpose() * wi;
            if i + 1 < nt {
                v -= self.k2.transpose()
                    * DVector::from_column_slice(&w[(i + 1) * r..(i + 2) * r]);
            }
            out[i * r..(i + 1) * r].copy_from_slice(v.as_slice());
        }
    }

    fn solve_state_op(&self, rhs: &[f64], out: &mut [f64]) {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let r = self.model.order;
        for i in 0..self.n_time() {
            let mut b = DVector::from_column_slice(&rhs[i * r..(i + 1) * r]);
            if i > 0 {
                b += &self.k2 * DVector::from_column_slice(&out[(i - 1) * r..i * r]);
            }
            let x = self.k1_lu.solve(&b).expect("factorized state operator");
            out[i * r..(i + 1) * r].copy_from_slice(x.as_slice());
        }
    }

    fn solve_state_op_transpose(&self, rhs: &[f64], out: &mut [f64]) {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let r = self.model.order;
        let nt = self.n_time();
        for i in (0..nt).rev() {
            let mut b = DVector::from_column_slice(&rhs[i * r..(i + 1) * r]);
            if i + 1 < nt {
                b += self.k2.transpose()
                    * DVector::from_column_slice(&out[(i + 1) * r..(i + 2) * r]);
            }
            let x = self.k1t_lu.solve(&b).expect("factorized state operator");
            out[i * r..(i + 1) * r].copy_from_slice(x.as_slice());
        }
    }

    fn apply_control_op(&self, u: &[f64], out: &mut [f64]) {
        let r = self.model.order;
        let l = self.control_block();
        let half_dt = 0.5 * self.model.time.dt();
        for i in 0..self.n_time() {
            let mut ui = DVector::from_column_slice(&u[i * l..(i + 1) * l]);
            if i > 0 {
                ui += DVector::from_column_slice(&u[(i - 1) * l..i * l]);
            }
            let v = &self.model.phi_red * ui * half_dt;
            out[i * r..(i + 1) * r].copy_from_slice(v.as_slice());
        }
    }

    fn apply_control_op_transpose(&self, w: &[f64], out: &mut [f64]) {
        let r = self.model.order;
        let l = self.control_block();
        let nt = self.n_time();
        let half_dt = 0.5 * self.model.time.dt();
        for i in 0..nt {
            let mut wi = DVector::from_column_slice(&w[i * r..(i + 1) * r]);
            if i + 1 < nt {
                wi += DVector::from_column_slice(&w[(i + 1) * r..(i + 2) * r]);
            }
            let v = self.model.phi_red.transpose() * wi * half_dt;
            out[i * l..(i + 1) * l].copy_from_slice(v.as_slice());
        }
    }

    fn apply_obs_weight(&self, y: &[f64], out: &mut [f64]) {
        let r = self.model.order;
        for i in 0..self.n_time() {
            let yi = DVector::from_column_slice(&y[i * r..(i + 1) * r]);
            let v = &self.w_red * yi;
            out[i * r..(i + 1) * r].copy_from_slice(v.as_slice());
        }
    }

    fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let r = self.model.order;
        let n = self.fem.n_dofs;
        let mut full = vec![0.0; self.n_time() * n];
        for i in 0..self.n_time() {
            let yi = DVector::from_column_slice(&y[i * r..(i + 1) * r]);
            let lifted = &self.model.lift * yi;
            full[i * n..(i + 1) * n].copy_from_slice(lifted.as_slice());
        }
        full
    }

    fn step_forward(&self, y_prev: &[f64], u_prev: &[f64], u_cur: &[f64], out: &mut [f64]) {
        let half_dt = 0.5 * self.model.time.dt();
        let mut load = DVector::from_column_slice(u_prev);
        load += DVector::from_column_slice(u_cur);
        let mut b = &self.k2 * DVector::from_column_slice(y_prev);
        b += &self.model.phi_red * load * half_dt;
        let x = self.k1_lu.solve(&b).expect("factorized state operator");
        out.copy_from_slice(x.as_slice());
    }

    fn block_tracking_cost(&self, y_block: &[f64], y_d_full: &[f64], i: usize) -> f64 {
        let n = self.fem.n_dofs;
        let lifted = &self.model.lift * DVector::from_column_slice(y_block);
        let target = &y_d_full[i * n..(i + 1) * n];
        let diff: Vec<f64> = lifted.iter().zip(target).map(|(a, b)| a - b).collect();
        0.5 * self.fem.obs_seminorm_sq(&diff)
    }

    fn tracking_gradient(&self, y_d_full: &[f64]) -> Vec<f64> {
        let r = self.model.order;
        let n = self.fem.n_dofs;
        let p = self.fem.n_obs();
        let mut out = vec![0.0; self.n_time() * r];
        let mut gathered = vec![0.0; p];
        let mut weighted = vec![0.0; p];
        for i in 0..self.n_time() {
            let block = &y_d_full[i * n..(i + 1) * n];
            for (row, &dof) in self.fem.obs_dofs.iter().enumerate() {
                gathered[row] = block[dof];
            }
            self.fem.obs_mass.matvec(&gathered, &mut weighted);
            let g = self.model.c_red.transpose() * DVector::from_column_slice(&weighted);
            out[i * r..(i + 1) * r].copy_from_slice(g.as_slice());
        }
        out
    }

    fn tracking_objective(&self, y: &[f64], y_d_full: &[f64]) -> f64 {
        let full = self.reconstruct(y);
        let n = self.fem.n_dofs;
        let mut diff = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..self.n_time() {
            for j in 0..n {
                diff[j] = full[i * n + j] - y_d_full[i * n + j];
            }
            acc += self.fem.obs_seminorm_sq(&diff);
        }
        0.5 * acc
    }

    fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    fn reset_solve_count(&self) {
        self.solves.store(0, Ordering::Relaxed);
    }
}

/// Trapezoid-in-time L² norm of a blocked trajectory whose t = 0 block is
/// zero: ‖v‖² = δt(‖v_1‖² + … + ‖v_{n−1}‖² + ½‖v_n‖²), Euclidean in space.
pub fn trajectory_l2_norm(time: &TimeGrid, block: usize, v: &[f64]) -> f64 {
    let nt = time.n_time;
    debug_assert_eq!(v.len(), nt * block);
    let dt = time.dt();
    let mut acc = 0.0;
    for i in 0..nt {
        let weight = if i + 1 == nt { 0.5 * dt } else { dt };
        let sq: f64 = v[i * block..(i + 1) * block].iter().map(|x| x * x).sum();
        acc += weight * sq;
    }
    acc.sqrt()
}

/// ‖C(y_a − y_b)‖ in the trapezoidal time norm for two grid trajectories.
pub fn observed_l2_gap(fem: &FemSystem, time: &TimeGrid, y_a: &[f64], y_b: &[f64]) -> f64 {
    let n = fem.n_dofs;
    let p = fem.n_obs();
    let nt = time.n_time;
    let mut stacked = vec![0.0; nt * p];
    for i in 0..nt {
        for (row, &dof) in fem.obs_dofs.iter().enumerate() {
            stacked[i * p + row] = y_a[i * n + dof] - y_b[i * n + dof];
        }
    }
    trajectory_l2_norm(time, p, &stacked)
}

/// A-priori output error bound of balanced truncation: twice the control
/// energy times the truncated tail sum.
pub fn truncation_error_bound(time: &TimeGrid, control_block: usize, u: &[f64], tail: f64) -> f64 {
    2.0 * trajectory_l2_norm(time, control_block, u) * tail
}
