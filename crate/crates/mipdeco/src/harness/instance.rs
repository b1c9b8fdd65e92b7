//! Seeded synthetic instances.
//!
//! A target trajectory is manufactured by running the forward map on a set of
//! freshly sampled generator sources — same height and width parameters as
//! the candidate sources, centers drawn uniformly from [0.1, 0.9]² — held
//! active over the whole horizon. The generator centers almost surely miss
//! every candidate position, so the target is generically not exactly
//! trackable and the optimal objective stays positive.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipa::AdjacencyMap;
use crate::mesh::{assemble, FemKind, FemSystem, ObsBox, SourceLayout, StructuredMesh};
use crate::spacetime::{Knapsack, PenaltyProblem, SpaceTimeOperator, SpaceTimeOps, TimeGrid};

/// Named problem scales. `Desk` keeps every workflow interactive on one core;
/// `Paper` is the full benchmark scale and takes hours end to end, so the CLI
/// only enables it behind an explicit flag and prints a runtime warning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// h = 1/8, 3 time blocks, 2×2 sources. Small enough for exhaustive search.
    Tiny,
    /// h = 1/16, 10 time blocks, 3×3 sources.
    Desk,
    /// h = 1/64, 40 time blocks, 5×5 sources.
    Paper,
}

impl Profile {
    /// (mesh step, time blocks, source grid side).
    pub fn dimensions(self) -> (f64, usize, usize) {
        match self {
            Profile::Tiny => (1.0 / 8.0, 3, 2),
            Profile::Desk => (1.0 / 16.0, 10, 3),
            Profile::Paper => (1.0 / 64.0, 40, 5),
        }
    }
}

/// Everything needed to rebuild one instance from scratch.
///
/// The candidate layout is an m×m grid (`grid` = m) with spacing 1/(m+1):
/// Gaussian bumps for the heat problem, flat squares on the uniform m×m
/// decomposition for convection-diffusion. κ = 100 in both cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: FemKind,
    /// Mesh step of the structured grid.
    pub h: f64,
    /// Number of unknown time blocks.
    pub n_time: usize,
    /// Side length of the candidate source grid (l = grid²).
    pub grid: usize,
    /// Per-block knapsack budget; also the number of generator sources.
    pub budget: usize,
    /// Seed of the generator-center stream.
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec::from_profile(Profile::Desk, FemKind::Poisson, 2, 0)
    }
}

/// Gaussian height shared by every benchmark layout.
pub const SOURCE_KAPPA: f64 = 100.0;
/// Overlap fraction fixing the Gaussian width from the grid spacing.
pub const SOURCE_OVERLAP: f64 = 0.05;

impl InstanceSpec {
    pub fn from_profile(profile: Profile, kind: FemKind, budget: usize, seed: u64) -> Self {
        let (h, n_time, grid) = profile.dimensions();
        InstanceSpec {
            kind,
            h,
            n_time,
            grid,
            budget,
            seed,
        }
    }

    /// Applies the scale of `profile`, keeping kind, budget and seed.
    pub fn with_profile(mut self, profile: Profile) -> Self {
        let (h, n_time, grid) = profile.dimensions();
        self.h = h;
        self.n_time = n_time;
        self.grid = grid;
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    /// Number of candidate sources l.
    pub fn n_sources(&self) -> usize {
        self.grid * self.grid
    }

    /// The candidate layout this spec describes.
    pub fn layout(&self) -> Result<SourceLayout> {
        if self.grid == 0 {
            return Err(Error::InvalidArgument("source grid side must be ≥ 1".into()));
        }
        let spacing = 1.0 / (self.grid + 1) as f64;
        match self.kind {
            FemKind::Poisson => {
                SourceLayout::gaussian_grid(self.grid, spacing, SOURCE_KAPPA, SOURCE_OVERLAP)
            }
            FemKind::ConvectionDiffusion => SourceLayout::square_grid(self.grid, SOURCE_KAPPA),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget > self.n_sources() {
            return Err(Error::InvalidArgument(format!(
                "budget {} exceeds the {} candidate sources",
                self.budget,
                self.n_sources()
            )));
        }
        Ok(())
    }
}

/// One generated instance: assembled discretization, budget, adjacency and
/// the synthetic target trajectory.
#[derive(Clone)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub fem: Arc<FemSystem>,
    pub ops: Arc<SpaceTimeOperator>,
    pub knapsack: Knapsack,
    pub adjacency: AdjacencyMap,
    /// Centers of the generator sources, inside [0.1, 0.9]².
    pub generator_centers: Vec<[f64; 2]>,
    /// Target trajectory on the grid, block-major.
    pub y_d: Vec<f64>,
}

impl Instance {
    /// Bundles the instance into an optimization problem at penalty ε.
    pub fn penalty_problem(&self, epsilon: f64) -> Result<PenaltyProblem> {
        PenaltyProblem::new(
            self.ops.clone(),
            self.knapsack.budget,
            self.y_d.clone(),
            epsilon,
        )
    }
}

/// Builds the instance described by `spec`. Identical specs produce
/// byte-identical targets.
pub fn generate_instance(spec: &InstanceSpec) -> Result<Instance> {
    let mut set = generate_set(spec, &[spec.seed])?;
    Ok(set.pop().expect("one seed in, one instance out"))
}

/// Builds one instance per seed, sharing the assembled discretization across
/// the whole set (the seeds only influence the generator centers).
pub fn generate_set(base: &InstanceSpec, seeds: &[u64]) -> Result<Vec<Instance>> {
    base.validate()?;
    let mesh = StructuredMesh::new(base.h)?;
    let layout = base.layout()?;
    let adjacency = AdjacencyMap::from_layout(&layout, layout.adjacency_radius)?;
    let fem = Arc::new(assemble(base.kind, &mesh, &layout, &ObsBox::default())?);
    let time = TimeGrid::new(1.0, base.n_time)?;
    let ops = Arc::new(SpaceTimeOperator::new(fem.clone(), time)?);
    let knapsack = Knapsack {
        n_time: base.n_time,
        n_sources: layout.len(),
        budget: base.budget,
    };

    seeds
        .iter()
        .map(|&seed| {
            let spec = InstanceSpec {
                seed,
                ..base.clone()
            };
            let generator_centers = draw_generator_centers(seed, base.budget);
            let y_d = generator_target(&fem, &ops, &generator_centers)?;
            Ok(Instance {
                spec,
                fem: fem.clone(),
                ops: ops.clone(),
                knapsack,
                adjacency: adjacency.clone(),
                generator_centers,
                y_d,
            })
        })
        .collect()
}

/// `count` centers drawn uniformly from [0.1, 0.9]², x before y.
fn draw_generator_centers(seed: u64, count: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = rng.gen_range(0.1..0.9);
            let y = rng.gen_range(0.1..0.9);
            [x, y]
        })
        .collect()
}

/// Forward map of the generator sources held at one over the whole horizon:
/// with u ≡ 1 and u₀ = 0 the trapezoidal control term contributes
/// (δt/2)·M·s to the first block and δt·M·s to every later one, where s sums
/// the generator source columns. No generators means a zero target.
fn generator_target(
    fem: &FemSystem,
    ops: &SpaceTimeOperator,
    centers: &[[f64; 2]],
) -> Result<Vec<f64>> {
    let state_dim = ops.state_dim();
    if centers.is_empty() {
        return Ok(vec![0.0; state_dim]);
    }
    let n = ops.full_state_block();
    let values = fem.gaussian_node_values(centers, fem.layout.kappa, fem.layout.omega);
    let mut s = vec![0.0; n];
    for j in 0..values.ncols() {
        for i in 0..n {
            s[i] += values[(i, j)];
        }
    }
    let mut ms = vec![0.0; n];
    fem.mass.matvec(&s, &mut ms);

    let half_dt = 0.5 * ops.time.dt();
    let mut rhs = vec![0.0; state_dim];
    for block in 0..ops.n_time() {
        let scale = if block == 0 { half_dt } else { 2.0 * half_dt };
        for i in 0..n {
            rhs[block * n + i] = scale * ms[i];
        }
    }
    let mut y_d = vec![0.0; state_dim];
    ops.solve_state_op(&rhs, &mut y_d);
    Ok(y_d)
}
