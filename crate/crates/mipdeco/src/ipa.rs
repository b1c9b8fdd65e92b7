//! Outer integer layer on top of the interior-point relaxation solver:
//! budget-aware rounding, random flip perturbations, a perturbation-restarted
//! improvement loop that tightens the binarity penalty until the iterate is
//! integer, and an exhaustive enumeration oracle for small instances.
//!
//! All randomness flows through a seedable [`ChaCha8Rng`]. The improvement
//! loop derives one independent stream per outer iteration (stream id = outer
//! iteration index on a generator seeded with [`IpaSettings::rng_seed`]), so
//! traces are reproducible and do not depend on how many draws earlier
//! iterations consumed.

use std::cell::Cell;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{ipm_solve, penalty_value, IpmSettings};
use crate::mesh::SourceLayout;
use crate::spacetime::{Knapsack, SpaceTimeOps};

/// Slack added to the adjacency radius so sources that sit exactly one grid
/// spacing apart are not dropped to floating-point noise.
const ADJACENCY_TOL: f64 = 1e-12;

/// Hard cap on outer improvement iterations. The loop normally terminates on
/// its own (a full perturbation cycle without improvement); the cap only
/// guards against pathological non-termination and is recorded in the trace
/// when hit.
const OUTER_ITERATION_CAP: usize = 10_000;

/// Relative margin a local solve must beat the reference objective by to
/// count as an improvement once the iterate is integral-feasible. The
/// subsolver reports objectives only to finite accuracy, so differences below
/// this are noise; chasing them burns perturbation cycles and makes
/// numerically equivalent backends (full-order vs. reduced at full rank)
/// wander off along different iterate paths. While the iterate is still
/// fractional the margin must stay at zero: consecutive penalty parameters
/// have minimizers so close together that the genuine improvement driving the
/// schedule forward can be arbitrarily small, and rejecting it would freeze
/// the penalty loop at the very first parameter.
const IMPROVEMENT_MARGIN: f64 = 1e-9;

/// How flips are distributed over the time blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbStrategy {
    /// Up to `theta` flips in every time block.
    PerTimestep,
    /// `theta` flips total, drawn from the active entries of all blocks.
    Global,
}

/// Tuning knobs of the outer improvement loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpaSettings {
    /// Initial penalty parameter ε⁰; the relaxation at this value seeds the loop.
    pub epsilon0: f64,
    /// Multiplicative penalty decrease, ε ← σε.
    pub sigma: f64,
    /// Integrality tolerance: an iterate counts as feasible when its control
    /// is within this distance (in max norm) of its rounding.
    pub eps_feas: f64,
    /// Perturbation cycle cap: failed local solves per outer iteration before
    /// the loop gives up on improving the current iterate.
    pub p_max: usize,
    /// Flip budget of the perturbation strategy.
    pub theta: usize,
    pub strategy: PerturbStrategy,
    pub rng_seed: u64,
}

impl Default for IpaSettings {
    fn default() -> Self {
        IpaSettings {
            epsilon0: 1e6,
            sigma: 0.5,
            eps_feas: 0.1,
            p_max: 50,
            theta: 1,
            strategy: PerturbStrategy::PerTimestep,
            rng_seed: 0,
        }
    }
}

impl IpaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon0 > 0.0) || !self.epsilon0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "initial penalty parameter must be positive and finite, got {}",
                self.epsilon0
            )));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty decrease factor must lie in (0, 1), got {}",
                self.sigma
            )));
        }
        if self.p_max == 0 {
            return Err(Error::InvalidArgument(
                "perturbation cycle cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// For every source, the indices of the other sources whose centers are
/// within a given max-norm radius.
#[derive(Clone, Debug)]
pub struct AdjacencyMap {
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyMap {
    /// Builds the map from source centers. Two distinct sources are adjacent
    /// when ‖c_i − c_j‖_∞ ≤ radius (up to a fixed tolerance), which makes the
    /// relation symmetric and irreflexive by construction.
    pub fn from_centers(centers: &[[f64; 2]], radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "adjacency radius must be positive and finite, got {radius}"
            )));
        }
        let mut neighbors = vec![Vec::new(); centers.len()];
        for (i, ci) in centers.iter().enumerate() {
            for (j, cj) in centers.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dist = (ci[0] - cj[0]).abs().max((ci[1] - cj[1]).abs());
                if dist <= radius + ADJACENCY_TOL {
                    neighbors[i].push(j);
                }
            }
        }
        Ok(AdjacencyMap { neighbors })
    }

    pub fn from_layout(layout: &SourceLayout, radius: f64) -> Result<Self> {
        Self::from_centers(&layout.centers, radius)
    }

    /// Number of sources the map was built over.
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }
}

/// A control paired with its exact state in the backend's own coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IpaPoint {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

/// Why the improvement loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// A full perturbation cycle produced no improvement: the iterate is
    /// returned (rounded) as the final answer.
    Stationary,
    /// Defensive outer-iteration cap reached.
    IterationCap,
}

/// One outer iteration of the improvement loop.
#[derive(Clone, Debug, Serialize)]
pub struct IpaRecord {
    pub iteration: usize,
    /// Penalty parameter ε the iteration ran with (before any decrease).
    pub epsilon: f64,
    /// Penalized objective of the accepted iterate.
    pub objective: f64,
    /// Plain tracking objective of the rounded iterate.
    pub rounded_objective: f64,
    /// Whether the accepted control was within `eps_feas` of its rounding.
    pub feasible: bool,
    /// Local solver invocations during this iteration.
    pub subsolver_calls: usize,
    /// Perturbations generated during this iteration.
    pub perturbations: usize,
    /// Local solver invocations that aborted and were restarted from a
    /// perturbed point.
    pub solver_failures: usize,
}

/// Full run record of [`tipa`]: one row per outer iteration plus the
/// termination reason.
#[derive(Clone, Debug, Serialize)]
pub struct IpaTrace {
    pub records: Vec<IpaRecord>,
    pub termination: Termination,
}

impl IpaTrace {
    pub fn outer_iterations(&self) -> usize {
        self.records.len()
    }

    pub fn total_subsolver_calls(&self) -> usize {
        self.records.iter().map(|r| r.subsolver_calls).sum()
    }

    pub fn total_perturbations(&self) -> usize {
        self.records.iter().map(|r| r.perturbations).sum()
    }

    /// One CSV row per outer iteration, mirroring the record fields.
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "iteration,epsilon,objective,rounded_objective,feasible,subsolver_calls,perturbations,solver_failures"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{},{},{},{}",
                r.iteration,
                r.epsilon,
                r.objective,
                r.rounded_objective,
                r.feasible,
                r.subsolver_calls,
                r.perturbations,
                r.solver_failures
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Persistence(format!("trace serialization failed: {e}")))
    }
}

/// Per time block, keeps the `budget` largest components (ties broken toward
/// the lower index), rounds them to the nearest integer and zeroes the rest.
/// The result is binary and satisfies the knapsack constraint by
/// construction.
pub fn smart_round(u: &[f64], knapsack: &Knapsack) -> Vec<f64> {
    let l = knapsack.n_sources;
    debug_assert_eq!(u.len(), knapsack.n_time * l);
    let mut out = vec![0.0; u.len()];
    let mut order: Vec<usize> = (0..l).collect();
    for b in 0..knapsack.n_time {
        let block = &u[b * l..(b + 1) * l];
        for (k, o) in order.iter_mut().enumerate() {
            *o = k;
        }
        order.sort_by(|&a, &c| block[c].total_cmp(&block[a]).then(a.cmp(&c)));
        for &idx in order.iter().take(knapsack.budget.min(l)) {
            out[b * l + idx] = block[idx].round();
        }
    }
    out
}

/// Pairs a binary control with its exact state under the given backend.
pub fn lift_rounded(ops: &dyn SpaceTimeOps, u_bin: &[f64]) -> IpaPoint {
    debug_assert!(u_bin.iter().all(|&v| v == 0.0 || v == 1.0));
    IpaPoint {
        y: ops.forward_map(u_bin),
        u: u_bin.to_vec(),
    }
}

/// Result of one perturbation call: the new control, how many flips were
/// performed, and how many were skipped because the drawn source had no
/// adjacent sources to hand its activity to.
#[derive(Clone, Debug)]
pub struct PerturbOutcome {
    pub u: Vec<f64>,
    pub flips: usize,
    pub skipped: usize,
}

/// One flip: deactivate the drawn entry (uniform value in [0, ½)) and
/// activate an adjacent source in the same block (uniform value in (½, 1]).
/// The drawn index leaves the candidate set whether or not the flip went
/// through, so a source without neighbors cannot be drawn twice.
fn flip(u: &mut [f64], active: &mut Vec<usize>, adj: &AdjacencyMap, rng: &mut ChaCha8Rng) -> bool {
    let l = adj.len();
    let pick = rng.gen_range(0..active.len());
    let global = active.swap_remove(pick);
    let src = global % l;
    let block = global / l;
    let candidates = adj.neighbors(src);
    if candidates.is_empty() {
        return false;
    }
    let adj_src = candidates[rng.gen_range(0..candidates.len())];
    u[global] = rng.gen_range(0.0..0.5);
    u[block * l + adj_src] = 1.0 - rng.gen_range(0.0..0.5);
    true
}

/// Applies up to `theta` flips in every time block, drawing from the entries
/// of that block that exceed ½. Active mass can only move to adjacent
/// sources within the same block, so per-block active counts never increase.
pub fn perturb_per_timestep(
    u: &[f64],
    theta: usize,
    adj: &AdjacencyMap,
    rng: &mut ChaCha8Rng,
) -> PerturbOutcome {
    let l = adj.len();
    debug_assert_eq!(u.len() % l, 0);
    let n_time = u.len() / l;
    let mut out = u.to_vec();
    let mut flips = 0;
    let mut skipped = 0;
    for b in 0..n_time {
        let mut active: Vec<usize> = (0..l)
            .filter(|&j| u[b * l + j] > 0.5)
            .map(|j| b * l + j)
            .collect();
        let budget = active.len().min(theta);
        for _ in 0..budget {
            if flip(&mut out, &mut active, adj, rng) {
                flips += 1;
            } else {
                skipped += 1;
            }
        }
    }
    PerturbOutcome {
        u: out,
        flips,
        skipped,
    }
}

/// Applies `theta` flips total, drawing from the active entries of the whole
/// control. Each flip changes at most two coordinates, so the output differs
/// from the input in at most 2·theta positions.
pub fn perturb_global(
    u: &[f64],
    theta: usize,
    adj: &AdjacencyMap,
    rng: &mut ChaCha8Rng,
) -> PerturbOutcome {
    let l = adj.len();
    debug_assert_eq!(u.len() % l, 0);
    let mut out = u.to_vec();
    let mut active: Vec<usize> = (0..u.len()).filter(|&g| u[g] > 0.5).collect();
    let budget = active.len().min(theta);
    let mut flips = 0;
    let mut skipped = 0;
    for _ in 0..budget {
        if flip(&mut out, &mut active, adj, rng) {
            flips += 1;
        } else {
            skipped += 1;
        }
    }
    PerturbOutcome {
        u: out,
        flips,
        skipped,
    }
}

/// A penalized placement problem seen through one backend (full-order or
/// reduced), bundling everything the outer loop evaluates: the operator
/// stack, the budget, the tracking target on the grid, and the source
/// adjacency used by the perturbation strategies.
pub struct IpaProblem<'a> {
    pub ops: &'a dyn SpaceTimeOps,
    pub knapsack: &'a Knapsack,
    /// Desired trajectory in grid coordinates, block-major.
    pub y_d: &'a [f64],
    pub adjacency: &'a AdjacencyMap,
}

impl<'a> IpaProblem<'a> {
    pub fn new(
        ops: &'a dyn SpaceTimeOps,
        knapsack: &'a Knapsack,
        y_d: &'a [f64],
        adjacency: &'a AdjacencyMap,
    ) -> Result<Self> {
        if knapsack.n_time != ops.n_time() || knapsack.n_sources != ops.control_block() {
            return Err(Error::DimensionMismatch(format!(
                "budget rows are {}x{}, operator has {} blocks of {} sources",
                knapsack.n_time,
                knapsack.n_sources,
                ops.n_time(),
                ops.control_block()
            )));
        }
        if y_d.len() != ops.n_time() * ops.full_state_block() {
            return Err(Error::DimensionMismatch(format!(
                "tracking target has length {}, expected {}",
                y_d.len(),
                ops.n_time() * ops.full_state_block()
            )));
        }
        if adjacency.len() != ops.control_block() {
            return Err(Error::DimensionMismatch(format!(
                "adjacency map covers {} sources, operator has {}",
                adjacency.len(),
                ops.control_block()
            )));
        }
        Ok(IpaProblem {
            ops,
            knapsack,
            y_d,
            adjacency,
        })
    }

    /// Penalized objective J(x; ε) = tracking + (1/ε)·Σ u(1−u).
    pub fn objective(&self, x: &IpaPoint, epsilon: f64) -> f64 {
        self.ops.tracking_objective(&x.y, self.y_d) + penalty_value(&x.u, epsilon)
    }

    /// Plain tracking objective (the penalty-free value).
    pub fn tracking(&self, x: &IpaPoint) -> f64 {
        self.ops.tracking_objective(&x.y, self.y_d)
    }

    /// Rounds the control of `x` and pairs it with its exact state.
    pub fn round(&self, x: &IpaPoint) -> IpaPoint {
        lift_rounded(self.ops, &smart_round(&x.u, self.knapsack))
    }

    /// Max-norm distance between a control and its rounding; the iterate
    /// counts as integer-feasible when this is small.
    pub fn infeasibility(&self, u: &[f64]) -> f64 {
        let rounded = smart_round(u, self.knapsack);
        u.iter()
            .zip(&rounded)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean distance between two points over states and controls.
    /// States are compared on the grid so the full-order and reduced
    /// backends apply the same acceptance geometry.
    pub fn distance(&self, a: &IpaPoint, b: &IpaPoint) -> f64 {
        let ya = self.ops.reconstruct(&a.y);
        let yb = self.ops.reconstruct(&b.y);
        let mut acc = 0.0;
        for (p, q) in ya.iter().zip(&yb) {
            acc += (p - q) * (p - q);
        }
        for (p, q) in a.u.iter().zip(&b.u) {
            acc += (p - q) * (p - q);
        }
        acc.sqrt()
    }

    /// Perturbs the control of `x` with the configured strategy and pairs
    /// the result with its forward-map state.
    pub fn perturbed(
        &self,
        x: &IpaPoint,
        settings: &IpaSettings,
        rng: &mut ChaCha8Rng,
    ) -> (IpaPoint, PerturbOutcome) {
        let outcome = match settings.strategy {
            PerturbStrategy::PerTimestep => {
                perturb_per_timestep(&x.u, settings.theta, self.adjacency, rng)
            }
            PerturbStrategy::Global => perturb_global(&x.u, settings.theta, self.adjacency, rng),
        };
        let point = IpaPoint {
            y: self.ops.forward_map(&outcome.u),
            u: outcome.u.clone(),
        };
        (point, outcome)
    }
}

/// What one improvement attempt produced.
#[derive(Clone, Debug)]
pub struct ReductionOutcome {
    /// The improved point, or a clone of the input when no attempt improved.
    pub point: IpaPoint,
    pub improved: bool,
    pub subsolver_calls: usize,
    pub perturbations: usize,
}

/// Tries to improve on `x` at fixed penalty ε: run the local solver from the
/// current initial guess (starting at `x` itself), accept the first result
/// with a strictly smaller penalized objective (beyond a small roundoff
/// margin), otherwise perturb the failed solution and retry, up to `p_max`
/// attempts. Returns `x` unchanged when every attempt fails; the caller
/// detects that through `improved`.
///
/// Local solver aborts surface as interior-point errors carrying the attempt
/// index.
pub fn reduction_via_perturbation<S, P>(
    problem: &IpaProblem,
    x: &IpaPoint,
    p_max: usize,
    epsilon: f64,
    margin: f64,
    mut local_solver: S,
    mut perturb: P,
    rng: &mut ChaCha8Rng,
) -> Result<ReductionOutcome>
where
    S: FnMut(&IpaPoint, f64) -> Result<IpaPoint>,
    P: FnMut(&IpaPoint, &mut ChaCha8Rng) -> IpaPoint,
{
    let reference = problem.objective(x, epsilon);
    let mut init = x.clone();
    let mut calls = 0;
    let mut perturbations = 0;
    for attempt in 1..=p_max {
        let x_loc = local_solver(&init, epsilon).map_err(|e| {
            Error::InteriorPoint(format!(
                "local solve attempt {attempt} of {p_max} at penalty parameter \
                 {epsilon:.3e}: {e}"
            ))
        })?;
        calls += 1;
        if problem.objective(&x_loc, epsilon) < reference - margin {
            return Ok(ReductionOutcome {
                point: x_loc,
                improved: true,
                subsolver_calls: calls,
                perturbations,
            });
        }
        init = perturb(&x_loc, rng);
        perturbations += 1;
    }
    Ok(ReductionOutcome {
        point: x.clone(),
        improved: false,
        subsolver_calls: calls,
        perturbations,
    })
}

/// Outer improvement loop. Starts from the relaxation solution at ε⁰
/// (interior-point solve from the flat one-half control), then alternates
/// improvement attempts with a penalty update: ε shrinks by σ whenever the
/// accepted iterate is still fractional but its objective is already within
/// ε·‖x − [x]‖₂ of its rounding. The loop stops when a full perturbation
/// cycle brings no improvement and returns the rounded iterate, whose
/// control is binary and satisfies the knapsack constraint.
///
/// Whether this runs the full-order or the reduced variant is decided by the
/// backend inside `problem`; both share this code path. Interior-point
/// failures during improvement attempts are not fatal: they are counted in
/// the trace and the loop restarts from a perturbed point.
pub fn tipa(
    problem: &IpaProblem,
    settings: &IpaSettings,
    ipm: &IpmSettings,
) -> Result<(IpaPoint, IpaTrace)> {
    settings.validate()?;
    let ops = problem.ops;

    // Seed with the plain relaxation (no integrality penalty). Starting from
    // the exact minimizer of the ε⁰ problem instead would leave the first
    // perturbation cycle nothing to improve on — at large ε⁰ that problem is
    // effectively convex, every restart falls back into the same point, and
    // the loop would stop before the penalty schedule ever engaged.
    let u_half = vec![0.5; ops.control_dim()];
    let (start, _) = ipm_solve(
        ops,
        problem.knapsack,
        problem.y_d,
        f64::INFINITY,
        &u_half,
        ipm,
    )?;
    let mut x = IpaPoint {
        y: start.y,
        u: start.u,
    };
    let mut epsilon = settings.epsilon0;
    let mut records = Vec::new();

    for n in 0..OUTER_ITERATION_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
        rng.set_stream(n as u64);
        let failures = Cell::new(0usize);

        let solver = |init: &IpaPoint, eps: f64| -> Result<IpaPoint> {
            match ipm_solve(ops, problem.knapsack, problem.y_d, eps, &init.u, ipm) {
                Ok((it, _)) => Ok(IpaPoint { y: it.y, u: it.u }),
                // A failed local solve is not fatal to the outer loop: keep
                // the initial guess (never an improvement) so the cycle
                // perturbs it and retries.
                Err(_) => {
                    failures.set(failures.get() + 1);
                    Ok(init.clone())
                }
            }
        };
        let perturb =
            |p: &IpaPoint, r: &mut ChaCha8Rng| -> IpaPoint { problem.perturbed(p, settings, r).0 };

        // While the incumbent is fractional, the penalty schedule advances on
        // improvements that shrink with the parameter step, so any fixed
        // margin would eventually stall it; noise-filtering only makes sense
        // once the iterate has settled on an integer pattern.
        let margin = if problem.infeasibility(&x.u) <= settings.eps_feas {
            IMPROVEMENT_MARGIN * (1.0 + problem.objective(&x, epsilon).abs())
        } else {
            0.0
        };
        let outcome = reduction_via_perturbation(
            problem,
            &x,
            settings.p_max,
            epsilon,
            margin,
            solver,
            perturb,
            &mut rng,
        )?;
        let accepted = outcome.point;
        let rounded = problem.round(&accepted);
        let objective = problem.objective(&accepted, epsilon);
        let rounded_objective = problem.tracking(&rounded);
        let feasible = problem.infeasibility(&accepted.u) <= settings.eps_feas;
        records.push(IpaRecord {
            iteration: n,
            epsilon,
            objective,
            rounded_objective,
            feasible,
            subsolver_calls: outcome.subsolver_calls,
            perturbations: outcome.perturbations,
            solver_failures: failures.get(),
        });

        if !outcome.improved {
            return Ok((
                rounded,
                IpaTrace {
                    records,
                    termination: Termination::Stationary,
                },
            ));
        }
        let rounded_penalized = problem.objective(&rounded, epsilon);
        if !feasible
            && objective - rounded_penalized <= epsilon * problem.distance(&accepted, &rounded)
        {
            epsilon *= settings.sigma;
        }
        x = accepted;
    }

    let rounded = problem.round(&x);
    Ok((
        rounded,
        IpaTrace {
            records,
            termination: Termination::IterationCap,
        },
    ))
}

/// Number of admissible per-block activity patterns: subsets of at most
/// `budget` sources out of `n_sources`, including the empty one.
pub fn patterns_per_block(n_sources: usize, budget: usize) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 0..=budget.min(n_sources) {
        if k > 0 {
            binom *= (n_sources - k + 1) as f64 / k as f64;
        }
        total += binom;
    }
    total
}

/// Size of the search space of [`brute_force_solve`]: admissible patterns
/// raised to the number of time blocks.
pub fn enumeration_size(n_sources: usize, budget: usize, n_time: usize) -> f64 {
    patterns_per_block(n_sources, budget).powi(n_time as i32)
}

/// All admissible activity patterns as bit masks in ascending order.
fn pattern_masks(n_sources: usize, budget: usize) -> Vec<u64> {
    fn extend(masks: &mut Vec<u64>, base: u64, next: usize, n: usize, left: usize) {
        masks.push(base);
        if left == 0 {
            return;
        }
        for j in next..n {
            extend(masks, base | (1 << j), j + 1, n, left - 1);
        }
    }
    let mut masks = Vec::new();
    extend(&mut masks, 0, 0, n_sources, budget.min(n_sources));
    masks.sort_unstable();
    masks
}

/// Exhaustive global optimum over all binary knapsack-feasible controls.
/// Works in whatever coordinates the backend uses, so it yields the exact
/// optimum of the full-order or the reduced problem. Returns the optimal
/// control and its tracking objective; among ties the first control in
/// block-major, mask-ascending enumeration order wins.
///
/// The search walks a prefix tree over time blocks (one block solve per
/// node, shared across all candidates with the same prefix) and prunes
/// branches whose partial cost already matches the incumbent, which is exact
/// because block costs are nonnegative.
pub fn brute_force_solve(
    ops: &dyn SpaceTimeOps,
    knapsack: &Knapsack,
    y_d_full: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let l = ops.control_block();
    let nt = ops.n_time();
    if knapsack.n_time != nt || knapsack.n_sources != l {
        return Err(Error::DimensionMismatch(format!(
            "budget rows are {}x{}, operator has {} blocks of {} sources",
            knapsack.n_time, knapsack.n_sources, nt, l
        )));
    }
    if y_d_full.len() != nt * ops.full_state_block() {
        return Err(Error::DimensionMismatch(format!(
            "tracking target has length {}, expected {}",
            y_d_full.len(),
            nt * ops.full_state_block()
        )));
    }
    let size = enumeration_size(l, knapsack.budget, nt);
    if !(size <= 1e6) {
        return Err(Error::InstanceTooLarge(format!(
            "{:.0} admissible patterns per block over {} blocks give {:.3e} \
             candidate controls, enumeration cap is 1e6",
            patterns_per_block(l, knapsack.budget),
            nt,
            size
        )));
    }

    let patterns: Vec<Vec<f64>> = pattern_masks(l, knapsack.budget)
        .into_iter()
        .map(|mask| (0..l).map(|j| ((mask >> j) & 1) as f64).collect())
        .collect();

    struct Search<'a> {
        ops: &'a dyn SpaceTimeOps,
        y_d: &'a [f64],
        patterns: &'a [Vec<f64>],
        n_time: usize,
        best: f64,
        best_path: Vec<usize>,
        path: Vec<usize>,
    }

    impl Search<'_> {
        fn descend(&mut self, depth: usize, y_prev: &[f64], u_prev: &[f64], partial: f64) {
            if depth == self.n_time {
                // Strict improvement keeps the first optimum found.
                if partial < self.best {
                    self.best = partial;
                    self.best_path = self.path.clone();
                }
                return;
            }
            let mut y_next = vec![0.0; y_prev.len()];
            for (pi, u_cur) in self.patterns.iter().enumerate() {
                self.ops.step_forward(y_prev, u_prev, u_cur, &mut y_next);
                let cost = partial + self.ops.block_tracking_cost(&y_next, self.y_d, depth);
                if cost < self.best {
                    self.path.push(pi);
                    let y_here = y_next.clone();
                    self.descend(depth + 1, &y_here, u_cur, cost);
                    self.path.pop();
                }
            }
        }
    }

    let mut search = Search {
        ops,
        y_d: y_d_full,
        patterns: &patterns,
        n_time: nt,
        best: f64::INFINITY,
        best_path: Vec::new(),
        path: Vec::with_capacity(nt),
    };
    let y0 = vec![0.0; ops.state_block()];
    let u0 = vec![0.0; l];
    search.descend(0, &y0, &u0, 0.0);

    let mut u_opt = vec![0.0; nt * l];
    for (b, &pi) in search.best_path.iter().enumerate() {
        u_opt[b * l..(b + 1) * l].copy_from_slice(&patterns[pi]);
    }
    Ok((u_opt, search.best))
}
