//! Inexact interior-point subsolver for the penalized relaxation.
//!
//! Minimizes  ½‖C(y − y_d)‖²_{M̃} + (1/ε)·Σ u(1−u)  subject to the all-at-once
//! dynamics K̃y = Φ̃u, the per-block knapsack Eu + z = S with slack z ≥ 0, and
//! box bounds 0 ≤ u ≤ 1. A log-barrier handles the inequalities; the barrier
//! parameter follows a fixed geometric schedule with a single Newton step per
//! value, and each Newton system is solved inexactly by preconditioned GMRES
//! with a μ-dependent tolerance. The concave penalty makes the Hessian block
//! −(2/ε)I + Θ_u indefinite for small ε, so that diagonal is clamped from
//! below before it enters the Newton matrix and the preconditioner.

use crate::error::{Error, Result};
use crate::krylov::{gmres, GmresOptions, KktLayout, NewtonOperator, SaddlePreconditioner};
use crate::spacetime::{Knapsack, SpaceTimeOps};

/// Tuning knobs of the subsolver. [`Default`] is the full-order profile;
/// [`IpmSettings::reduced`] tightens GMRES for reduced systems, whose solves
/// are cheap enough that inexactness buys nothing.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpmSettings {
    /// Convergence threshold on the largest of the three KKT residual norms.
    pub kkt_tol: f64,
    /// Initial barrier parameter.
    pub mu0: f64,
    /// Geometric decrease factor of the barrier schedule.
    pub mu_factor: f64,
    /// Stop (with a warning flag) once μ falls below this.
    pub mu_floor: f64,
    /// Lower clamp for the regularized control diagonal D_u.
    pub gamma: f64,
    /// Fraction-to-the-boundary coefficient.
    pub tau: f64,
    /// GMRES tolerance is max(min(eta_cap, μ), eta_floor).
    pub eta_cap: f64,
    pub eta_floor: f64,
    pub gmres_restart: usize,
    pub gmres_cap: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            kkt_tol: 1e-6,
            mu0: 1.0,
            mu_factor: 0.1,
            mu_floor: 1e-15,
            gamma: 1e-6,
            tau: 0.995,
            eta_cap: 1e-4,
            eta_floor: 1e-10,
            gmres_restart: 50,
            gmres_cap: 500,
        }
    }
}

impl IpmSettings {
    pub fn reduced() -> Self {
        IpmSettings {
            eta_cap: 1e-10,
            ..IpmSettings::default()
        }
    }

    /// These settings with the GMRES tolerance cap tightened to the reduced
    /// profile. Loose Newton solves are a worthwhile trade only on the full
    /// system; on a reduced one they can leave the KKT residual hovering just
    /// above the tolerance while the barrier parameter shrinks into GMRES
    /// stall territory.
    pub fn for_reduced_backend(&self) -> Self {
        IpmSettings {
            eta_cap: self.eta_cap.min(1e-10),
            ..*self
        }
    }
}

/// Barrier parameter of step `k`: μ0 · factor^k. The product is evaluated in
/// a fixed left-to-right order so the schedule is a bit-reproducible function
/// of the step index alone.
pub fn mu_schedule(settings: &IpmSettings, k: i32) -> f64 {
    let mut mu = settings.mu0;
    for _ in 0..k {
        mu *= settings.mu_factor;
    }
    mu
}

/// GMRES tolerance for barrier parameter μ.
pub fn eta_for_mu(settings: &IpmSettings, mu: f64) -> f64 {
    settings.eta_cap.min(mu).max(settings.eta_floor)
}

/// One primal-dual point: primal blocks [y | u | z], equality multipliers
/// [p | q], and the bound multipliers for u ≥ 0, u ≤ 1 and z ≥ 0.
#[derive(Clone, Debug)]
pub struct IpmIterate {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub lam_u0: Vec<f64>,
    pub lam_u1: Vec<f64>,
    pub lam_z0: Vec<f64>,
}

/// Norms of the three KKT residual groups.
#[derive(Clone, Copy, Debug)]
pub struct KktResiduals {
    /// Equality constraints: dynamics and knapsack rows.
    pub primal: f64,
    /// Stationarity of the Lagrangian in (y, u, z), multipliers explicit.
    pub dual: f64,
    /// Perturbed complementarity against the current μ.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

/// Convergence report of one [`ipm_solve`] run.
#[derive(Clone, Debug)]
pub struct IpmReport {
    pub converged: bool,
    /// The barrier schedule hit `mu_floor` before the KKT tolerance.
    pub mu_floored: bool,
    pub newton_steps: usize,
    /// GMRES iterations summed over all Newton steps.
    pub gmres_iterations: usize,
    /// Barrier parameter of the last Newton step taken.
    pub final_mu: f64,
    pub residuals: KktResiduals,
    /// Tracking objective plus penalty at the final iterate.
    pub objective: f64,
}

/// Builds a strictly interior starting point from a control guess: `u` is
/// clipped into [0.01, 0.99], slacks are set from the knapsack violation (at
/// least 0.1), the state solves the dynamics, equality multipliers start at
/// zero and bound multipliers at μ0 over their primal partner.
pub fn interiorize(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    u_init: &[f64],
    mu0: f64,
) -> Result<IpmIterate> {
    if u_init.len() != ops.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial control has length {}, operator expects {}",
            u_init.len(),
            ops.control_dim()
        )));
    }
    let u: Vec<f64> = u_init.iter().map(|&v| v.clamp(0.01, 0.99)).collect();
    let mut z = vec![0.0; knapsack.n_time];
    knapsack.apply(&u, &mut z);
    for zi in z.iter_mut() {
        *zi = (knapsack.budget as f64 - *zi).max(0.1);
    }
    let y = ops.forward_map(&u);
    let lam_u0 = u.iter().map(|&v| mu0 / v).collect();
    let lam_u1 = u.iter().map(|&v| mu0 / (1.0 - v)).collect();
    let lam_z0 = z.iter().map(|&v| mu0 / v).collect();
    Ok(IpmIterate {
        y,
        p: vec![0.0; ops.state_dim()],
        q: vec![0.0; knapsack.n_time],
        u,
        z,
        lam_u0,
        lam_u1,
        lam_z0,
    })
}

/// Derivative of the concave penalty (1/ε)·Σ u(1−u); zero when ε = ∞.
fn penalty_gradient(u: f64, epsilon: f64) -> f64 {
    if epsilon.is_finite() {
        (1.0 - 2.0 * u) / epsilon
    } else {
        0.0
    }
}

/// Value of the concave penalty; zero when ε = ∞.
pub fn penalty_value(u: &[f64], epsilon: f64) -> f64 {
    if epsilon.is_finite() {
        u.iter().map(|&v| v * (1.0 - v)).sum::<f64>() / epsilon
    } else {
        0.0
    }
}

/// KKT residual norms of an iterate for barrier parameter μ. `y_d_full` is
/// the tracking target on the grid.
pub fn kkt_residuals(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    it: &IpmIterate,
    y_d_full: &[f64],
    epsilon: f64,
    mu: f64,
) -> KktResiduals {
    let g_d = ops.tracking_gradient(y_d_full);
    kkt_residuals_with_gradient(ops, knapsack, it, &g_d, epsilon, mu)
}

fn kkt_residuals_with_gradient(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    it: &IpmIterate,
    g_d: &[f64],
    epsilon: f64,
    mu: f64,
) -> KktResiduals {
    let ny = ops.state_dim();
    let nu = ops.control_dim();
    let nt = knapsack.n_time;
    let mut tmp = vec![0.0; ny];
    let mut acc;

    // Primal: K̃y − Φ̃u and Eu + z − S.
    let mut primal = vec![0.0; ny];
    ops.apply_state_op(&it.y, &mut primal);
    ops.apply_control_op(&it.u, &mut tmp);
    for (r, t) in primal.iter_mut().zip(&tmp) {
        *r -= t;
    }
    acc = primal.iter().map(|v| v * v).sum::<f64>();
    let mut sums = vec![0.0; nt];
    knapsack.apply(&it.u, &mut sums);
    for i in 0..nt {
        let r = sums[i] + it.z[i] - knapsack.budget as f64;
        acc += r * r;
    }
    let primal_norm = acc.sqrt();

    // Dual: stationarity in y, u and z with the multipliers kept explicit.
    let mut dual_y = vec![0.0; ny];
    ops.apply_obs_weight(&it.y, &mut dual_y);
    ops.apply_state_op_transpose(&it.p, &mut tmp);
    for i in 0..ny {
        dual_y[i] += tmp[i] - g_d[i];
    }
    acc = dual_y.iter().map(|v| v * v).sum::<f64>();
    let mut phi_p = vec![0.0; nu];
    ops.apply_control_op_transpose(&it.p, &mut phi_p);
    let mut etq = vec![0.0; nu];
    knapsack.apply_transpose(&it.q, &mut etq);
    for i in 0..nu {
        let r = penalty_gradient(it.u[i], epsilon) - phi_p[i] + etq[i] - it.lam_u0[i]
            + it.lam_u1[i];
        acc += r * r;
    }
    for i in 0..nt {
        let r = it.q[i] - it.lam_z0[i];
        acc += r * r;
    }
    let dual_norm = acc.sqrt();

    // Complementarity, perturbed by the current μ.
    acc = 0.0;
    for i in 0..nu {
        let r0 = it.u[i] * it.lam_u0[i] - mu;
        let r1 = (1.0 - it.u[i]) * it.lam_u1[i] - mu;
        acc += r0 * r0 + r1 * r1;
    }
    for i in 0..nt {
        let r = it.z[i] * it.lam_z0[i] - mu;
        acc += r * r;
    }

    KktResiduals {
        primal: primal_norm,
        dual: dual_norm,
        complementarity: acc.sqrt(),
    }
}

/// Regularized Newton diagonals: D_u = max(−2/ε + Θ_u, γ) and Θ_z.
fn newton_diagonals(it: &IpmIterate, epsilon: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let curvature = if epsilon.is_finite() {
        -2.0 / epsilon
    } else {
        0.0
    };
    let d_u = it
        .u
        .iter()
        .zip(it.lam_u0.iter().zip(&it.lam_u1))
        .map(|(&u, (&l0, &l1))| (curvature + l0 / u + l1 / (1.0 - u)).max(gamma))
        .collect();
    let theta_z = it
        .z
        .iter()
        .zip(&it.lam_z0)
        .map(|(&z, &l)| l / z)
        .collect();
    (d_u, theta_z)
}

/// Right-hand side of the Newton system at an iterate, packed as
/// [r_y | r_u | r_z | r_p | r_q]. The bound multipliers are already condensed
/// into the barrier terms μ/u, μ/(1−u) and μ/z.
pub fn newton_rhs(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    it: &IpmIterate,
    y_d_full: &[f64],
    epsilon: f64,
    mu: f64,
) -> Vec<f64> {
    let g_d = ops.tracking_gradient(y_d_full);
    newton_rhs_with_gradient(ops, knapsack, it, &g_d, epsilon, mu)
}

fn newton_rhs_with_gradient(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    it: &IpmIterate,
    g_d: &[f64],
    epsilon: f64,
    mu: f64,
) -> Vec<f64> {
    let lay = KktLayout::from_ops(ops);
    let mut rhs = vec![0.0; lay.dim()];
    let mut tmp = vec![0.0; lay.ny];
    {
        let (r_y, r_u, r_z, r_p, r_q) = lay.split_mut(&mut rhs);

        // r_y = −(M̃y − g_d + K̃ᵀp)
        ops.apply_obs_weight(&it.y, r_y);
        ops.apply_state_op_transpose(&it.p, &mut tmp);
        for i in 0..lay.ny {
            r_y[i] = -(r_y[i] - g_d[i] + tmp[i]);
        }

        // r_u = −(∂J/∂u − Φ̃ᵀp + Eᵀq − μ/u + μ/(1−u))
        let mut etq = vec![0.0; lay.nu];
        ops.apply_control_op_transpose(&it.p, r_u);
        knapsack.apply_transpose(&it.q, &mut etq);
        for i in 0..lay.nu {
            let barrier = -mu / it.u[i] + mu / (1.0 - it.u[i]);
            r_u[i] = -(penalty_gradient(it.u[i], epsilon) - r_u[i] + etq[i] + barrier);
        }

        // r_z = −(q − μ/z)
        for i in 0..lay.nt {
            r_z[i] = -(it.q[i] - mu / it.z[i]);
        }

        // r_p = −(K̃y − Φ̃u)
        ops.apply_state_op(&it.y, r_p);
        ops.apply_control_op(&it.u, &mut tmp);
        for i in 0..lay.ny {
            r_p[i] = -(r_p[i] - tmp[i]);
        }

        // r_q = −(Eu + z − S)
        knapsack.apply(&it.u, r_q);
        for i in 0..lay.nt {
            r_q[i] = -(r_q[i] + it.z[i] - knapsack.budget as f64);
        }
    }
    rhs
}

/// Largest step α ≤ 1 with value + α·delta ≥ (1−τ)·value for every entry,
/// i.e. the fraction-to-the-boundary rule for a positivity constraint.
fn boundary_step(values: &[f64], deltas: &[f64], tau: f64, alpha: f64) -> f64 {
    let mut a = alpha;
    for (&v, &d) in values.iter().zip(deltas) {
        if d < 0.0 {
            a = a.min(-tau * v / d);
        }
    }
    a
}

/// Solves the penalized relaxation from `u_init`. Returns the final iterate
/// and a convergence report; fails only on malformed inputs or when GMRES
/// hits its iteration cap three times in a row.
pub fn ipm_solve(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    y_d_full: &[f64],
    epsilon: f64,
    u_init: &[f64],
    settings: &IpmSettings,
) -> Result<(IpmIterate, IpmReport)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty parameter must be positive, got {epsilon}"
        )));
    }
    if y_d_full.len() != ops.n_time() * ops.full_state_block() {
        return Err(Error::DimensionMismatch(format!(
            "tracking target has length {}, expected {}",
            y_d_full.len(),
            ops.n_time() * ops.full_state_block()
        )));
    }
    let g_d = ops.tracking_gradient(y_d_full);
    let mut it = interiorize(ops, knapsack, u_init, settings.mu0)?;
    let lay = KktLayout::from_ops(ops);

    let mut report = IpmReport {
        converged: false,
        mu_floored: false,
        newton_steps: 0,
        gmres_iterations: 0,
        final_mu: f64::NAN,
        residuals: kkt_residuals_with_gradient(ops, knapsack, &it, &g_d, epsilon, settings.mu0),
        objective: f64::NAN,
    };

    let mut consecutive_cap_hits = 0usize;
    for k in 0.. {
        let mu = mu_schedule(settings, k);
        if mu < settings.mu_floor {
            report.mu_floored = true;
            break;
        }

        let (d_u, theta_z) = newton_diagonals(&it, epsilon, settings.gamma);
        let newton = NewtonOperator::new(ops, knapsack, d_u.clone(), theta_z.clone())?;
        let precond = SaddlePreconditioner::new(ops, knapsack, d_u, theta_z)?;
        let rhs = newton_rhs_with_gradient(ops, knapsack, &it, &g_d, epsilon, mu);
        let mut delta = vec![0.0; lay.dim()];
        let outcome = gmres(
            &newton,
            &rhs,
            &mut delta,
            Some(&precond),
            &GmresOptions {
                tol: eta_for_mu(settings, mu),
                restart: settings.gmres_restart,
                max_iterations: settings.gmres_cap,
            },
        )?;
        report.gmres_iterations += outcome.iterations;
        if outcome.converged {
            consecutive_cap_hits = 0;
        } else {
            consecutive_cap_hits += 1;
            if consecutive_cap_hits >= 3 {
                return Err(Error::Krylov(format!(
                    "GMRES hit its {}-iteration cap three Newton steps in a row \
                     (last relative residual {:.3e})",
                    settings.gmres_cap, outcome.relative_residual
                )));
            }
        }

        // Multiplier steps recovered from the condensed rows.
        let (dy, du, dz, dp, dq) = lay.split(&delta);
        let dl_u0: Vec<f64> = (0..lay.nu)
            .map(|i| -it.lam_u0[i] - (it.lam_u0[i] * du[i] - mu) / it.u[i])
            .collect();
        let dl_u1: Vec<f64> = (0..lay.nu)
            .map(|i| -it.lam_u1[i] + (it.lam_u1[i] * du[i] + mu) / (1.0 - it.u[i]))
            .collect();
        let dl_z0: Vec<f64> = (0..lay.nt)
            .map(|i| -it.lam_z0[i] - (it.lam_z0[i] * dz[i] - mu) / it.z[i])
            .collect();

        // Fraction to the boundary: one step length for the primal group
        // (u against both bounds, z against zero), one for the multipliers.
        let mut alpha_p = boundary_step(&it.u, du, settings.tau, 1.0);
        let one_minus_u: Vec<f64> = it.u.iter().map(|&v| 1.0 - v).collect();
        let neg_du: Vec<f64> = du.iter().map(|&v| -v).collect();
        alpha_p = boundary_step(&one_minus_u, &neg_du, settings.tau, alpha_p);
        alpha_p = boundary_step(&it.z, dz, settings.tau, alpha_p);
        let mut alpha_d = boundary_step(&it.lam_u0, &dl_u0, settings.tau, 1.0);
        alpha_d = boundary_step(&it.lam_u1, &dl_u1, settings.tau, alpha_d);
        alpha_d = boundary_step(&it.lam_z0, &dl_z0, settings.tau, alpha_d);

        for (v, d) in it.y.iter_mut().zip(dy) {
            *v += alpha_p * d;
        }
        for (v, d) in it.u.iter_mut().zip(du) {
            *v += alpha_p * d;
        }
        for (v, d) in it.z.iter_mut().zip(dz) {
            *v += alpha_p * d;
        }
        for (v, d) in it.p.iter_mut().zip(dp) {
            *v += alpha_d * d;
        }
        for (v, d) in it.q.iter_mut().zip(dq) {
            *v += alpha_d * d;
        }
        for (v, d) in it.lam_u0.iter_mut().zip(&dl_u0) {
            *v += alpha_d * d;
        }
        for (v, d) in it.lam_u1.iter_mut().zip(&dl_u1) {
            *v += alpha_d * d;
        }
        for (v, d) in it.lam_z0.iter_mut().zip(&dl_z0) {
            *v += alpha_d * d;
        }

        debug_assert!(
            it.u.iter().all(|&v| v > 0.0 && v < 1.0)
                && it.z.iter().all(|&v| v > 0.0)
                && it.lam_u0.iter().all(|&v| v > 0.0)
                && it.lam_u1.iter().all(|&v| v > 0.0)
                && it.lam_z0.iter().all(|&v| v > 0.0),
            "fraction-to-the-boundary must keep the iterate strictly interior"
        );

        report.newton_steps += 1;
        report.final_mu = mu;
        report.residuals = kkt_residuals_with_gradient(ops, knapsack, &it, &g_d, epsilon, mu);
        if report.residuals.max() <= settings.kkt_tol {
            report.converged = true;
            break;
        }
    }

    report.objective = ops.tracking_objective(&it.y, y_d_full) + penalty_value(&it.u, epsilon);
    Ok((it, report))
}
