//! All-at-once operators for the Crank–Nicolson time discretization.
//!
//! With mass matrix M, transport operator K and step δt, each time step reads
//!     (M + δt/2·K) y_{i} = (M − δt/2·K) y_{i−1} + δt/2·MΦ (u_{i−1} + u_i),
//! starting from y_0 = 0 (and, by convention, u_0 = 0, which the stacked
//! operator encodes implicitly). Stacking the n_t unknown states produces a
//! block lower-bidiagonal system; the solvers here apply and invert it block
//! by block without ever forming the space-time matrix.
//!
//! Vector layout is block-major, time outside and space inside: block i of a
//! state vector is `y[i·N .. (i+1)·N]`, and likewise for controls with block
//! size l.

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::mesh::FemSystem;
use nalgebra::DMatrix;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Equidistant time grid.
///
/// `n_time` counts the unknown state blocks y_1, …, y_{n_time}; the state at
/// t = 0 is pinned to zero and not stored. The step size follows the
/// benchmark convention δt = horizon / (n_time − 1), so the i-th stored block
/// sits at time i·δt and the last one lands one step past the horizon. Time
/// quadratures below treat the block times literally.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_time: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_time: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        if n_time < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 time points, got {n_time}"
            )));
        }
        Ok(TimeGrid { horizon, n_time })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.n_time - 1) as f64
    }
}

/// Interface shared by the full-order and reduced-order space-time systems.
///
/// State vectors live in the implementation's own coordinates (grid nodes for
/// the full system, balanced coordinates for a reduced one); `reconstruct`
/// lifts them back to grid nodes.
pub trait SpaceTimeOps: Send + Sync {
    fn n_time(&self) -> usize;
    /// Per-block state dimension in this system's coordinates.
    fn state_block(&self) -> usize;
    /// Per-block control dimension.
    fn control_block(&self) -> usize;
    /// Per-block state dimension after reconstruction (grid unknowns).
    fn full_state_block(&self) -> usize;

    fn state_dim(&self) -> usize {
        self.n_time() * self.state_block()
    }
    fn control_dim(&self) -> usize {
        self.n_time() * self.control_block()
    }

    /// out = K̃ y (block bidiagonal application).
    fn apply_state_op(&self, y: &[f64], out: &mut [f64]);
    fn apply_state_op_transpose(&self, w: &[f64], out: &mut [f64]);
    /// out = K̃⁻¹ rhs by block forward substitution. Counted.
    fn solve_state_op(&self, rhs: &[f64], out: &mut [f64]);
    /// out = K̃⁻ᵀ rhs by block backward substitution. Counted.
    fn solve_state_op_transpose(&self, rhs: &[f64], out: &mut [f64]);
    /// out = Φ̃ u (control-to-state injection).
    fn apply_control_op(&self, u: &[f64], out: &mut [f64]);
    fn apply_control_op_transpose(&self, w: &[f64], out: &mut [f64]);
    /// out = M̃ y: block-diagonal observation weighting in this system's
    /// coordinates.
    fn apply_obs_weight(&self, y: &[f64], out: &mut [f64]);
    /// Lifts a state vector to grid coordinates (identity for the full system).
    fn reconstruct(&self, y: &[f64]) -> Vec<f64>;
    /// Advances one time block of the forward map: solves
    /// K1 y = K2 y_prev + (δt/2)·MΦ·(u_prev + u_cur). All slices are single
    /// blocks. Not counted as a block-triangular solve.
    fn step_forward(&self, y_prev: &[f64], u_prev: &[f64], u_cur: &[f64], out: &mut [f64]);
    /// ½‖C(ŷ − y_d,i)‖²_{M_obs} of a single state block (in this system's
    /// coordinates) against block `i` of the grid target.
    fn block_tracking_cost(&self, y_block: &[f64], y_d_full: &[f64], i: usize) -> f64;
    /// M̃ y_d expressed in this system's coordinates (`y_d` is given on the grid).
    fn tracking_gradient(&self, y_d_full: &[f64]) -> Vec<f64>;
    /// ½ Σᵢ ‖C(y_i − y_d,i)‖²_{M_obs} with `y` reconstructed onto the grid
    /// first, so full and reduced systems report comparable values.
    fn tracking_objective(&self, y: &[f64], y_d_full: &[f64]) -> f64;

    /// Number of block-triangular solves performed so far.
    fn solve_count(&self) -> usize;
    fn reset_solve_count(&self);

    /// y = K̃⁻¹ Φ̃ u: the discrete control-to-state map.
    fn forward_map(&self, u: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.state_dim()];
        self.apply_control_op(u, &mut rhs);
        let mut y = vec![0.0; self.state_dim()];
        self.solve_state_op(&rhs, &mut y);
        y
    }
}

/// Full-order all-at-once system built from an assembled FEM problem.
pub struct SpaceTimeOperator {
    pub fem: Arc<FemSystem>,
    pub time: TimeGrid,
    /// M + δt/2·K
    k1: CsrMatrix,
    /// M − δt/2·K
    k2: CsrMatrix,
    k1_lu: BandedLu,
    k1t_lu: BandedLu,
    /// M·Φ, dense N×l.
    m_phi: DMatrix<f64>,
    solves: AtomicUsize,
}

impl SpaceTimeOperator {
    pub fn new(fem: Arc<FemSystem>, time: TimeGrid) -> Result<Self> {
        let half_dt = 0.5 * time.dt();
        let k1 = CsrMatrix::linear_combination(1.0, &fem.mass, half_dt, &fem.stiffness)?;
        let k2 = CsrMatrix::linear_combination(1.0, &fem.mass, -half_dt, &fem.stiffness)?;
        let k1_lu = BandedLu::from_csr(&k1)?;
        let k1t_lu = BandedLu::from_csr(&k1.transpose())?;
        let m_phi = fem.mass.mul_dense(&fem.phi);
        Ok(SpaceTimeOperator {
            fem,
            time,
            k1,
            k2,
            k1_lu,
            k1t_lu,
            m_phi,
            solves: AtomicUsize::new(0),
        })
    }

    fn n(&self) -> usize {
        self.fem.n_dofs
    }

    fn l(&self) -> usize {
        self.fem.n_sources()
    }

    /// out_block += scale · MΦ · u_block
    fn m_phi_acc(&self, u_block: &[f64], scale: f64, out_block: &mut [f64]) {
        for j in 0..self.l() {
            let c = scale * u_block[j];
            if c != 0.0 {
                let col = self.m_phi.column(j);
                for i in 0..self.n() {
                    out_block[i] += c * col[i];
                }
            }
        }
    }

    /// out_block += scale · (MΦ)ᵀ · w_block
    fn m_phi_t_acc(&self, w_block: &[f64], scale: f64, out_block: &mut [f64]) {
        for j in 0..self.l() {
            let col = self.m_phi.column(j);
            let mut acc = 0.0;
            for i in 0..self.n() {
                acc += col[i] * w_block[i];
            }
            out_block[j] += scale * acc;
        }
    }

    /// Dense K̃ for small-scale verification.
    pub fn dense_state_op(&self) -> DMatrix<f64> {
        let (n, nt) = (self.n(), self.time.n_time);
        let k1d = self.k1.to_dense();
        let k2d = self.k2.to_dense();
        let mut out = DMatrix::zeros(n * nt, n * nt);
        for i in 0..nt {
            out.view_mut((i * n, i * n), (n, n)).copy_from(&k1d);
            if i > 0 {
                out.view_mut((i * n, (i - 1) * n), (n, n)).copy_from(&(-&k2d));
            }
        }
        out
    }

    /// Dense Φ̃ for small-scale verification.
    pub fn dense_control_op(&self) -> DMatrix<f64> {
        let (n, l, nt) = (self.n(), self.l(), self.time.n_time);
        let block = &self.m_phi * (0.5 * self.time.dt());
        let mut out = DMatrix::zeros(n * nt, l * nt);
        for i in 0..nt {
            out.view_mut((i * n, i * l), (n, l)).copy_from(&block);
            if i > 0 {
                out.view_mut((i * n, (i - 1) * l), (n, l)).copy_from(&block);
            }
        }
        out
    }

    /// Dense M̃ for small-scale verification.
    pub fn dense_obs_weight(&self) -> DMatrix<f64> {
        let (n, nt) = (self.n(), self.time.n_time);
        let c = self.fem.obs_matrix_dense();
        let block = c.transpose() * self.fem.obs_mass.to_dense() * &c;
        let mut out = DMatrix::zeros(n * nt, n * nt);
        for i in 0..nt {
            out.view_mut((i * n, i * n), (n, n)).copy_from(&block);
        }
        out
    }
}

impl SpaceTimeOps for SpaceTimeOperator {
    fn n_time(&self) -> usize {
        self.time.n_time
    }

    fn state_block(&self) -> usize {
        self.n()
    }

    fn control_block(&self) -> usize {
        self.l()
    }

    fn full_state_block(&self) -> usize {
        self.n()
    }

    fn apply_state_op(&self, y: &[f64], out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(y.len(), self.state_dim());
        debug_assert_eq!(out.len(), self.state_dim());
        for i in 0..self.n_time() {
            let block = &mut out[i * n..(i + 1) * n];
            self.k1.matvec(&y[i * n..(i + 1) * n], block);
            if i > 0 {
                let prev = &y[(i - 1) * n..i * n];
                let mut tmp = vec![0.0; n];
                self.k2.matvec(prev, &mut tmp);
                for (o, t) in block.iter_mut().zip(&tmp) {
                    *o -= t;
                }
            }
        }
    }

    fn apply_state_op_transpose(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n();
        let nt = self.n_time();
        let k1t = |x: &[f64], y: &mut [f64]| self.k1.matvec_transpose(x, y);
        let mut tmp = vec![0.0; n];
        for i in 0..nt {
            let block = &mut out[i * n..(i + 1) * n];
            k1t(&w[i * n..(i + 1) * n], block);
            if i + 1 < nt {
                self.k2.matvec_transpose(&w[(i + 1) * n..(i + 2) * n], &mut tmp);
                for (o, t) in block.iter_mut().zip(&tmp) {
                    *o -= t;
                }
            }
        }
    }

    fn solve_state_op(&self, rhs: &[f64], out: &mut [f64]) {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let n = self.n();
        let mut carry = vec![0.0; n];
        for i in 0..self.n_time() {
            let mut b = rhs[i * n..(i + 1) * n].to_vec();
            if i > 0 {
                self.k2.matvec(&out[(i - 1) * n..i * n], &mut carry);
                for (bv, c) in b.iter_mut().zip(&carry) {
                    *bv += c;
                }
            }
            self.k1_lu.solve_in_place(&mut b);
            out[i * n..(i + 1) * n].copy_from_slice(&b);
        }
    }

    fn solve_state_op_transpose(&self, rhs: &[f64], out: &mut [f64]) {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let n = self.n();
        let nt = self.n_time();
        let mut carry = vec![0.0; n];
        for i in (0..nt).rev() {
            let mut b = rhs[i * n..(i + 1) * n].to_vec();
            if i + 1 < nt {
                self.k2.matvec_transpose(&out[(i + 1) * n..(i + 2) * n], &mut carry);
                for (bv, c) in b.iter_mut().zip(&carry) {
                    *bv += c;
                }
            }
            self.k1t_lu.solve_in_place(&mut b);
            out[i * n..(i + 1) * n].copy_from_slice(&b);
        }
    }

    fn apply_control_op(&self, u: &[f64], out: &mut [f64]) {
        let (n, l) = (self.n(), self.l());
        let half_dt = 0.5 * self.time.dt();
        out.fill(0.0);
        for i in 0..self.n_time() {
            let block = &mut out[i * n..(i + 1) * n];
            self.m_phi_acc(&u[i * l..(i + 1) * l], half_dt, block);
            if i > 0 {
                self.m_phi_acc(&u[(i - 1) * l..i * l], half_dt, block);
            }
        }
    }

    fn apply_control_op_transpose(&self, w: &[f64], out: &mut [f64]) {
        let (n, l) = (self.n(), self.l());
        let nt = self.n_time();
        let half_dt = 0.5 * self.time.dt();
        out.fill(0.0);
        for i in 0..nt {
            let block = &mut out[i * l..(i + 1) * l];
            self.m_phi_t_acc(&w[i * n..(i + 1) * n], half_dt, block);
            if i + 1 < nt {
                self.m_phi_t_acc(&w[(i + 1) * n..(i + 2) * n], half_dt, block);
            }
        }
    }

    fn apply_obs_weight(&self, y: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..self.n_time() {
            self.fem
                .apply_obs_weight(&y[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
    }

    fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }

    fn step_forward(&self, y_prev: &[f64], u_prev: &[f64], u_cur: &[f64], out: &mut [f64]) {
        let half_dt = 0.5 * self.time.dt();
        let mut b = vec![0.0; self.n()];
        self.k2.matvec(y_prev, &mut b);
        self.m_phi_acc(u_prev, half_dt, &mut b);
        self.m_phi_acc(u_cur, half_dt, &mut b);
        self.k1_lu.solve_in_place(&mut b);
        out.copy_from_slice(&b);
    }

    fn block_tracking_cost(&self, y_block: &[f64], y_d_full: &[f64], i: usize) -> f64 {
        let n = self.n();
        let target = &y_d_full[i * n..(i + 1) * n];
        let diff: Vec<f64> = y_block.iter().zip(target).map(|(a, b)| a - b).collect();
        0.5 * self.fem.obs_seminorm_sq(&diff)
    }

    fn tracking_gradient(&self, y_d_full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.apply_obs_weight(y_d_full, &mut out);
        out
    }

    fn tracking_objective(&self, y: &[f64], y_d_full: &[f64]) -> f64 {
        let n = self.fem.n_dofs;
        let mut diff = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..self.n_time() {
            for j in 0..n {
                diff[j] = y[i * n + j] - y_d_full[i * n + j];
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

/// Per-time-block cardinality budget: at most `budget` units of control mass
/// per block, encoded as sum(u_i) + z_i = budget with slack z_i ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Knapsack {
    pub n_time: usize,
    pub n_sources: usize,
    pub budget: usize,
}

impl Knapsack {
    /// out_i = Σ_j u_{i,j} (row sums per time block).
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n_time * self.n_sources);
        debug_assert_eq!(out.len(), self.n_time);
        for i in 0..self.n_time {
            out[i] = u[i * self.n_sources..(i + 1) * self.n_sources]
                .iter()
                .sum();
        }
    }

    /// out = column-broadcast of q over the blocks.
    pub fn apply_transpose(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.n_time);
        for i in 0..self.n_time {
            out[i * self.n_sources..(i + 1) * self.n_sources].fill(q[i]);
        }
    }

    pub fn rhs(&self) -> Vec<f64> {
        vec![self.budget as f64; self.n_time]
    }

    /// Relaxed feasibility: every block sum stays within budget + tol.
    pub fn check(&self, u: &[f64], tol: f64) -> bool {
        let mut sums = vec![0.0; self.n_time];
        self.apply(u, &mut sums);
        sums.iter().all(|&s| s <= self.budget as f64 + tol)
    }

    /// Cardinality feasibility: per block, at most `budget` entries above ½.
    pub fn check_active_counts(&self, u: &[f64]) -> bool {
        (0..self.n_time).all(|i| {
            u[i * self.n_sources..(i + 1) * self.n_sources]
                .iter()
                .filter(|&&v| v > 0.5)
                .count()
                <= self.budget
        })
    }
}

/// A fully specified optimization instance: dynamics, budget, target, penalty.
pub struct PenaltyProblem {
    pub ops: Arc<SpaceTimeOperator>,
    pub knapsack: Knapsack,
    /// Desired state trajectory on the grid, block-major.
    pub y_d: Vec<f64>,
    /// Penalty weight 1/ε on Σ u(1−u); `f64::INFINITY` disables the penalty,
    /// which turns the objective into the plain relaxation.
    pub epsilon: f64,
}

impl PenaltyProblem {
    pub fn new(
        ops: Arc<SpaceTimeOperator>,
        budget: usize,
        y_d: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if y_d.len() != ops.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "desired state has {} entries, expected {}",
                y_d.len(),
                ops.state_dim()
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty parameter must be positive, got {epsilon}"
            )));
        }
        let knapsack = Knapsack {
            n_time: ops.n_time(),
            n_sources: ops.control_block(),
            budget,
        };
        Ok(PenaltyProblem {
            ops,
            knapsack,
            y_d,
            epsilon,
        })
    }

    /// ½‖C(y − y_d)‖²_{M_obs} summed over blocks.
    pub fn tracking_value(&self, y_full: &[f64]) -> f64 {
        let n = self.ops.full_state_block();
        let mut total = 0.0;
        let mut diff = vec![0.0; n];
        for i in 0..self.ops.n_time() {
            for k in 0..n {
                diff[k] = y_full[i * n + k] - self.y_d[i * n + k];
            }
            total += self.ops.fem.obs_seminorm_sq(&diff);
        }
        0.5 * total
    }

    /// Tracking term plus the concave binarity penalty (1/ε)·Σ u(1−u).
    pub fn objective_with_eps(&self, y_full: &[f64], u: &[f64], epsilon: f64) -> f64 {
        let penalty: f64 = if epsilon.is_finite() {
            u.iter().map(|&v| v * (1.0 - v)).sum::<f64>() / epsilon
        } else {
            0.0
        };
        self.tracking_value(y_full) + penalty
    }

    pub fn objective(&self, y_full: &[f64], u: &[f64]) -> f64 {
        self.objective_with_eps(y_full, u, self.epsilon)
    }
}

/// Convenience wrapper matching the mathematical notation y = f(u).
pub fn forward_map(ops: &dyn SpaceTimeOps, u: &[f64]) -> Vec<f64> {
    ops.forward_map(u)
}
