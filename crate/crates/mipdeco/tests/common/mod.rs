//! Shared helpers for the integration tests: an independent dense quadratic
//! oracle for the penalized relaxation, plus seeded control sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mipdeco::spacetime::{Knapsack, SpaceTimeOps};

/// Dense condensed form of the penalized relaxation: with y(u) the state the
/// dynamics assign to u, the objective reduces to
///
///   J(u) = ½ uᵀH u − bᵀu + c + ρ·Σ u(1−u),    ρ = 1/ε,
///
/// where H = YᵀM̃Y, b = YᵀM̃ y_d, c = ½ y_dᵀM̃ y_d and Y maps controls to
/// states column by column. Everything is built through the public operator
/// interface, independently of the interior-point path.
pub struct DenseQp {
    h: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    rho: f64,
    knapsack: Knapsack,
}

#[allow(dead_code)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub objective: f64,
    /// Final prox-gradient residual ‖x − proj(x − ∇J(x)/L)‖·L.
    pub residual: f64,
    pub iterations: usize,
}

impl DenseQp {
    pub fn build(
        ops: &dyn SpaceTimeOps,
        knapsack: &Knapsack,
        y_d: &[f64],
        epsilon: f64,
    ) -> DenseQp {
        let nu = ops.control_dim();
        let ny = ops.state_dim();
        let mut y_cols = DMatrix::zeros(ny, nu);
        let mut w_cols = DMatrix::zeros(ny, nu);
        let mut unit = vec![0.0; nu];
        let mut rhs = vec![0.0; ny];
        let mut col = vec![0.0; ny];
        let mut weighted = vec![0.0; ny];
        for j in 0..nu {
            unit[j] = 1.0;
            ops.apply_control_op(&unit, &mut rhs);
            ops.solve_state_op(&rhs, &mut col);
            ops.apply_obs_weight(&col, &mut weighted);
            unit[j] = 0.0;
            y_cols.column_mut(j).copy_from_slice(&col);
            w_cols.column_mut(j).copy_from_slice(&weighted);
        }
        let h_raw = y_cols.transpose() * &w_cols;
        let h = 0.5 * (&h_raw + h_raw.transpose());

        let mut wyd = vec![0.0; ny];
        ops.apply_obs_weight(y_d, &mut wyd);
        let b = y_cols.transpose() * DVector::from_column_slice(&wyd);
        let c = 0.5 * y_d.iter().zip(&wyd).map(|(a, w)| a * w).sum::<f64>();

        DenseQp {
            h,
            b,
            c,
            rho: if epsilon.is_finite() { 1.0 / epsilon } else { 0.0 },
            knapsack: *knapsack,
        }
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let x = DVector::from_column_slice(u);
        let quad = 0.5 * x.dot(&(&self.h * &x)) - self.b.dot(&x) + self.c;
        let penalty: f64 = u.iter().map(|&v| v * (1.0 - v)).sum();
        quad + self.rho * penalty
    }

    fn gradient(&self, u: &[f64], out: &mut DVector<f64>) {
        let x = DVector::from_column_slice(u);
        *out = &self.h * &x - &self.b;
        for (g, &v) in out.iter_mut().zip(u) {
            *g += self.rho * (1.0 - 2.0 * v);
        }
    }

    /// Upper bound on the Hessian spectral radius: power iteration on H plus
    /// the penalty curvature.
    fn lipschitz(&self) -> f64 {
        let n = self.h.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = &self.h * &v;
            lambda = w.norm();
            if lambda == 0.0 {
                break;
            }
            v = w / lambda;
        }
        lambda + 2.0 * self.rho
    }

    /// Accelerated projected gradient descent with adaptive restart, run to a
    /// prox-gradient residual of `tol` (relative to the Lipschitz scale).
    pub fn solve(&self, tol: f64, max_iterations: usize) -> QpSolution {
        let n = self.h.nrows();
        let lip = self.lipschitz().max(1e-30);
        let step = 1.0 / lip;

        let mut x = project_knapsack_box(&vec![0.5; n], &self.knapsack);
        let mut momentum = x.clone();
        let mut t: f64 = 1.0;
        let mut grad = DVector::zeros(n);
        let mut best = self.objective(&x);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;

        for k in 0..max_iterations {
            iterations = k + 1;
            self.gradient(&momentum, &mut grad);
            let trial: Vec<f64> = momentum
                .iter()
                .zip(grad.iter())
                .map(|(&v, &g)| v - step * g)
                .collect();
            let x_new = project_knapsack_box(&trial, &self.knapsack);

            let value = self.objective(&x_new);
            if value > best {
                // Restart the momentum sequence whenever it overshoots.
                momentum = x.clone();
                t = 1.0;
                self.gradient(&momentum, &mut grad);
                let trial: Vec<f64> = momentum
                    .iter()
                    .zip(grad.iter())
                    .map(|(&v, &g)| v - step * g)
                    .collect();
                let x_plain = project_knapsack_box(&trial, &self.knapsack);
                let moved: f64 = x_plain
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                residual = moved * lip;
                x = x_plain;
                best = self.objective(&x);
            } else {
                let moved: f64 = x_new
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                momentum = x_new
                    .iter()
                    .zip(&x)
                    .map(|(nv, ov)| nv + beta * (nv - ov))
                    .collect();
                residual = moved * lip;
                x = x_new;
                best = value;
                t = t_next;
            }

            // Converged when a full prox step no longer moves the iterate.
            if residual <= tol * (1.0 + best.abs()) {
                break;
            }
        }

        QpSolution {
            objective: best,
            u: x,
            residual,
            iterations,
        }
    }
}

/// Euclidean projection onto { u : 0 ≤ u ≤ 1, Σ_block u ≤ budget } applied
/// per time block: clip(v − τ, 0, 1) with the smallest shift τ ≥ 0 meeting
/// the budget, found by bisection.
pub fn project_knapsack_box(v: &[f64], knapsack: &Knapsack) -> Vec<f64> {
    let l = knapsack.n_sources;
    let budget = knapsack.budget as f64;
    let mut out = vec![0.0; v.len()];
    for (block, out_block) in v.chunks(l).zip(out.chunks_mut(l)) {
        let clipped_sum = |tau: f64| -> f64 {
            block.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).sum()
        };
        let mut tau = 0.0;
        if clipped_sum(0.0) > budget {
            let mut lo = 0.0;
            let mut hi = block.iter().cloned().fold(0.0, f64::max);
            for _ in 0..200 {
                tau = 0.5 * (lo + hi);
                if clipped_sum(tau) > budget {
                    lo = tau;
                } else {
                    hi = tau;
                }
            }
            tau = hi;
        }
        for (o, &x) in out_block.iter_mut().zip(block) {
            *o = (x - tau).clamp(0.0, 1.0);
        }
    }
    out
}

/// A seeded control trajectory with entries uniform in [0, 1].
pub fn random_control(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()
}
