//! Batch studies and comparison metrics.
//!
//! Three experiment families:
//! - [`sigma_decay`]: Hankel-tail sums Σ(r) of the benchmark reduction setup,
//! - [`order_table`]: the reduced order needed per mesh step,
//! - [`run_compare`]: seeded heuristic shoot-outs between solver variants,
//!   scored by minimum counts, average relative gaps and subsolver calls.
//!
//! Comparison batches fan out over the rayon thread pool; records are merged
//! back in task order, so repeated runs of the same configuration produce
//! identical files.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipa::{tipa, IpaProblem, IpaSettings, PerturbStrategy, Termination};
use crate::ipm::IpmSettings;
use crate::mesh::{assemble, FemKind, FemSystem, ObsBox, StructuredMesh};
use crate::reduction::{BalancedTruncation, ReducedModel, ReducedSpaceTime};
use crate::spacetime::{forward_map, Knapsack, SpaceTimeOps, TimeGrid};

use super::instance::{Instance, InstanceSpec, Profile};

/// Assembles the 5×5-source reduction benchmark at the given mesh step.
pub fn reduction_benchmark_fem(kind: FemKind, h: f64) -> Result<FemSystem> {
    let mesh = StructuredMesh::new(h)?;
    let layout = InstanceSpec::from_profile(Profile::Paper, kind, 0, 0)
        .with_h(h)
        .layout()?;
    assemble(kind, &mesh, &layout, &ObsBox::default())
}

/// Hankel-tail decay of one benchmark system: rows (r, Σ(r)).
#[derive(Clone, Debug, Serialize)]
pub struct SigmaDecay {
    pub kind: FemKind,
    pub h: f64,
    pub n_state: usize,
    pub rows: Vec<(usize, f64)>,
}

impl SigmaDecay {
    /// Columns: `r,sigma_tail`.
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "r,sigma_tail")?;
        for &(r, tail) in &self.rows {
            writeln!(w, "{r},{tail:.17e}")?;
        }
        Ok(())
    }
}

/// Tail sums Σ(0), Σ(1), … of the benchmark reduction setup down to (and
/// including) the first zero tail.
pub fn sigma_decay(kind: FemKind, h: f64) -> Result<SigmaDecay> {
    let fem = reduction_benchmark_fem(kind, h)?;
    let bt = BalancedTruncation::from_fem(&fem)?;
    let rows = (0..=bt.max_order())
        .map(|r| (r, bt.sigma_tail(r)))
        .collect();
    Ok(SigmaDecay {
        kind,
        h,
        n_state: fem.n_dofs,
        rows,
    })
}

/// One cell of the order-vs-mesh table.
#[derive(Clone, Debug, Serialize)]
pub struct OrderTableRow {
    pub kind: FemKind,
    pub h: f64,
    /// Full state dimension at this mesh step.
    pub n_state: usize,
    /// Smallest order whose tail sum drops to the tolerance.
    pub order: usize,
    pub seconds: f64,
}

/// Columns: `kind,h,n_state,order,seconds`.
pub fn write_order_table_csv(rows: &[OrderTableRow], w: &mut dyn Write) -> Result<()> {
    writeln!(w, "kind,h,n_state,order,seconds")?;
    for row in rows {
        writeln!(
            w,
            "{},{:.17e},{},{},{:.3}",
            kind_name(row.kind),
            row.h,
            row.n_state,
            row.order,
            row.seconds
        )?;
    }
    Ok(())
}

fn kind_name(kind: FemKind) -> &'static str {
    match kind {
        FemKind::Poisson => "poisson",
        FemKind::ConvectionDiffusion => "convection_diffusion",
    }
}

/// Reduced order required per (kind, mesh step) to push the tail sum to
/// `tol`, one balanced truncation per cell.
pub fn order_table(kinds: &[FemKind], h_list: &[f64], tol: f64) -> Result<Vec<OrderTableRow>> {
    let mut rows = Vec::with_capacity(kinds.len() * h_list.len());
    for &kind in kinds {
        for &h in h_list {
            let start = Instant::now();
            let fem = reduction_benchmark_fem(kind, h)?;
            let bt = BalancedTruncation::from_fem(&fem)?;
            rows.push(OrderTableRow {
                kind,
                h,
                n_state: fem.n_dofs,
                order: bt.order_for_tail(tol),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Which space-time system a variant runs the subsolver on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Grid unknowns.
    Full,
    /// Balanced-truncation coordinates.
    Reduced,
}

/// How a variant picks its flip budget θ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRule {
    /// A fixed count.
    Fixed(usize),
    /// ⌈percent% of n_time·budget⌉ — a share of the maximal active set.
    ActiveShare(u32),
}

impl ThetaRule {
    pub fn resolve(self, knapsack: &Knapsack) -> usize {
        match self {
            ThetaRule::Fixed(theta) => theta.max(1),
            ThetaRule::ActiveShare(percent) => {
                let pool = (knapsack.n_time * knapsack.budget) as f64;
                ((pool * percent as f64 / 100.0).ceil() as usize).max(1)
            }
        }
    }
}

/// One algorithm configuration entering a comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub backend: Backend,
    pub strategy: PerturbStrategy,
    pub theta: ThetaRule,
}

impl VariantSpec {
    pub fn full(name: &str) -> Self {
        VariantSpec {
            name: name.to_string(),
            backend: Backend::Full,
            strategy: PerturbStrategy::PerTimestep,
            theta: ThetaRule::Fixed(1),
        }
    }

    pub fn reduced(name: &str) -> Self {
        VariantSpec {
            backend: Backend::Reduced,
            ..VariantSpec::full(name)
        }
    }
}

/// The four standard perturbation variants: per-block single flips and global
/// budgets of 5%, 10% and 20% of the maximal active set.
pub fn standard_variants(backend: Backend) -> Vec<VariantSpec> {
    let make = |name: &str, strategy, theta| VariantSpec {
        name: name.to_string(),
        backend,
        strategy,
        theta,
    };
    vec![
        make("v1_per_block", PerturbStrategy::PerTimestep, ThetaRule::Fixed(1)),
        make("v2_global_5", PerturbStrategy::Global, ThetaRule::ActiveShare(5)),
        make("v3_global_10", PerturbStrategy::Global, ThetaRule::ActiveShare(10)),
        make("v4_global_20", PerturbStrategy::Global, ThetaRule::ActiveShare(20)),
    ]
}

/// Outcome of one (instance, variant) run. Failures are recorded, not fatal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub instance: usize,
    pub seed: u64,
    pub variant: String,
    /// Tracking objective of the returned control, evaluated on the full
    /// system for every backend so values are comparable.
    pub objective: Option<f64>,
    pub wall_seconds: f64,
    pub subsolver_calls: usize,
    pub outer_iterations: usize,
    pub termination: Option<Termination>,
    pub error: Option<String>,
}

/// Aggregated scores of one variant across a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantMetrics {
    pub variant: String,
    pub runs: usize,
    pub failures: usize,
    /// Instances on which the variant attained the per-instance minimum
    /// (within 1e-9 relative); ties award every holder.
    pub min_count: usize,
    /// Mean over the strictly positive relative gaps to the per-instance
    /// minimum; `None` when every successful run was a minimum holder.
    pub rel_err_av: Option<f64>,
    pub av_subsolver_calls: f64,
    pub av_wall_seconds: f64,
}

/// Records plus their aggregation; `reduced_order` is set when any variant
/// ran on the reduced backend.
#[derive(Clone, Debug, Serialize)]
pub struct CompareOutcome {
    pub records: Vec<RunRecord>,
    pub metrics: Vec<VariantMetrics>,
    pub reduced_order: Option<usize>,
}

/// Relative tie tolerance of the minimum count.
pub const MIN_TIE_REL_TOL: f64 = 1e-9;

/// Runs every variant on every instance and aggregates the scores.
///
/// All instances must share one discretization (see
/// [`super::instance::generate_set`]); a reduced model is built once from it
/// when some variant asks for the reduced backend, at the order where the
/// Hankel tail drops to `sigma_tol`. The improvement loop of instance k is
/// seeded with `ipa.rng_seed + k` so batch entries explore independently.
pub fn run_compare(
    instances: &[Instance],
    variants: &[VariantSpec],
    ipa: &IpaSettings,
    ipm: &IpmSettings,
    sigma_tol: f64,
) -> Result<CompareOutcome> {
    if instances.is_empty() || variants.is_empty() {
        return Err(Error::InvalidArgument(
            "comparison needs at least one instance and one variant".into(),
        ));
    }
    for inst in &instances[1..] {
        if !Arc::ptr_eq(&inst.ops, &instances[0].ops) {
            return Err(Error::InvalidArgument(
                "comparison instances must share one discretization".into(),
            ));
        }
    }

    let needs_reduced = variants.iter().any(|v| v.backend == Backend::Reduced);
    let mut reduced_order = None;
    let reduced: Option<Arc<ReducedSpaceTime>> = if needs_reduced {
        let fem = &instances[0].fem;
        let time = TimeGrid::new(1.0, instances[0].spec.n_time)?;
        let bt = BalancedTruncation::from_fem(fem)?;
        let order = bt.order_for_tail(sigma_tol);
        let model = ReducedModel::build(fem, &bt, order, time)?;
        reduced_order = Some(model.order);
        Some(Arc::new(ReducedSpaceTime::new(fem.clone(), model)?))
    } else {
        None
    };

    let tasks: Vec<(usize, usize)> = (0..instances.len())
        .flat_map(|i| (0..variants.len()).map(move |v| (i, v)))
        .collect();

    let records: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(i, v)| {
            run_one(
                i,
                &instances[i],
                &variants[v],
                reduced.as_deref(),
                ipa,
                ipm,
            )
        })
        .collect();

    let metrics = compute_metrics(&records, variants);
    Ok(CompareOutcome {
        records,
        metrics,
        reduced_order,
    })
}

fn run_one(
    index: usize,
    inst: &Instance,
    variant: &VariantSpec,
    reduced: Option<&ReducedSpaceTime>,
    ipa: &IpaSettings,
    ipm: &IpmSettings,
) -> RunRecord {
    let ops: &dyn SpaceTimeOps = match variant.backend {
        Backend::Full => &*inst.ops,
        Backend::Reduced => reduced.expect("reduced backend requested but no model built"),
    };
    let ipm = match variant.backend {
        Backend::Full => *ipm,
        Backend::Reduced => ipm.for_reduced_backend(),
    };
    let mut settings = ipa.clone();
    settings.strategy = variant.strategy;
    settings.theta = variant.theta.resolve(&inst.knapsack);
    settings.rng_seed = ipa.rng_seed.wrapping_add(index as u64);

    let start = Instant::now();
    let outcome = IpaProblem::new(ops, &inst.knapsack, &inst.y_d, &inst.adjacency)
        .and_then(|problem| tipa(&problem, &settings, &ipm));
    let wall_seconds = start.elapsed().as_secs_f64();

    match outcome {
        Ok((point, trace)) => {
            let y = forward_map(&*inst.ops, &point.u);
            let objective = inst.ops.tracking_objective(&y, &inst.y_d);
            RunRecord {
                instance: index,
                seed: inst.spec.seed,
                variant: variant.name.clone(),
                objective: Some(objective),
                wall_seconds,
                subsolver_calls: trace.total_subsolver_calls(),
                outer_iterations: trace.outer_iterations(),
                termination: Some(trace.termination),
                error: None,
            }
        }
        Err(e) => RunRecord {
            instance: index,
            seed: inst.spec.seed,
            variant: variant.name.clone(),
            objective: None,
            wall_seconds,
            subsolver_calls: 0,
            outer_iterations: 0,
            termination: None,
            error: Some(e.to_string()),
        },
    }
}

/// Aggregates raw records into per-variant scores. Instances where a variant
/// failed do not enter its averages; the per-instance minimum is taken over
/// the successful runs only.
pub fn compute_metrics(records: &[RunRecord], variants: &[VariantSpec]) -> Vec<VariantMetrics> {
    let n_instances = records
        .iter()
        .map(|r| r.instance + 1)
        .max()
        .unwrap_or(0);
    let mut best = vec![f64::INFINITY; n_instances];
    for r in records {
        if let Some(obj) = r.objective {
            best[r.instance] = best[r.instance].min(obj);
        }
    }

    variants
        .iter()
        .map(|v| {
            let mine: Vec<&RunRecord> =
                records.iter().filter(|r| r.variant == v.name).collect();
            let successes: Vec<&RunRecord> = mine
                .iter()
                .copied()
                .filter(|r| r.objective.is_some())
                .collect();
            let mut min_count = 0;
            let mut gaps = Vec::new();
            for r in &successes {
                let obj = r.objective.expect("filtered on objective");
                let min = best[r.instance];
                if min.is_finite() && obj <= min + MIN_TIE_REL_TOL * min.abs() {
                    min_count += 1;
                } else if min > 0.0 {
                    gaps.push((obj - min) / min);
                }
            }
            let avg = |f: fn(&RunRecord) -> f64| {
                if successes.is_empty() {
                    0.0
                } else {
                    successes.iter().map(|r| f(r)).sum::<f64>() / successes.len() as f64
                }
            };
            VariantMetrics {
                variant: v.name.clone(),
                runs: mine.len(),
                failures: mine.len() - successes.len(),
                min_count,
                rel_err_av: if gaps.is_empty() {
                    None
                } else {
                    Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
                },
                av_subsolver_calls: avg(|r| r.subsolver_calls as f64),
                av_wall_seconds: avg(|r| r.wall_seconds),
            }
        })
        .collect()
}

impl CompareOutcome {
    /// Box-plot-ready raw dump, one row per run. Columns:
    /// `instance,seed,variant,status,objective,wall_seconds,subsolver_calls,outer_iterations,termination,error`.
    /// Failed runs carry an empty objective and the error text (commas and
    /// newlines replaced by `;`). Floats are written with 17 significant
    /// digits so re-reading the dump reproduces the aggregation exactly.
    pub fn write_runs_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "instance,seed,variant,status,objective,wall_seconds,subsolver_calls,\
             outer_iterations,termination,error"
        )?;
        for r in &self.records {
            let status = if r.objective.is_some() { "ok" } else { "failed" };
            let objective = r
                .objective
                .map(|o| format!("{o:.17e}"))
                .unwrap_or_default();
            let termination = match r.termination {
                Some(Termination::Stationary) => "stationary",
                Some(Termination::IterationCap) => "iteration_cap",
                None => "",
            };
            let error = r
                .error
                .as_deref()
                .unwrap_or("")
                .replace(['\n', ','], ";");
            writeln!(
                w,
                "{},{},{},{},{},{:.17e},{},{},{},{}",
                r.instance,
                r.seed,
                r.variant,
                status,
                objective,
                r.wall_seconds,
                r.subsolver_calls,
                r.outer_iterations,
                termination,
                error
            )?;
        }
        Ok(())
    }

    /// Aggregated scores, one row per variant. Columns:
    /// `variant,runs,failures,min_count,rel_err_av,av_subsolvercalls,av_wall_seconds`;
    /// `rel_err_av` is empty when no successful run had a positive gap.
    pub fn write_metrics_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(
            w,
            "variant,runs,failures,min_count,rel_err_av,av_subsolvercalls,av_wall_seconds"
        )?;
        for m in &self.metrics {
            let rel = m
                .rel_err_av
                .map(|g| format!("{g:.17e}"))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{:.6}",
                m.variant, m.runs, m.failures, m.min_count, rel, m.av_subsolver_calls,
                m.av_wall_seconds
            )?;
        }
        Ok(())
    }

    /// Recomputes the aggregation from the raw records and confirms it
    /// matches the reported one.
    pub fn self_check(&self, variants: &[VariantSpec]) -> Result<()> {
        let recomputed = compute_metrics(&self.records, variants);
        if recomputed == self.metrics {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "metrics do not match their own records — the dump is inconsistent".into(),
            ))
        }
    }
}

/// Parses a runs CSV written by [`CompareOutcome::write_runs_csv`] back into
/// records, so consumers can verify reported metrics against the raw dump.
pub fn read_runs_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("runs CSV is empty".into()))?;
    let expected = "instance,seed,variant,status,objective,wall_seconds,subsolver_calls,\
                    outer_iterations,termination,error";
    if header != expected {
        return Err(Error::Config(format!("unexpected runs CSV header: {header}")));
    }
    let field_err = |line: usize, what: &str| {
        Error::Config(format!("runs CSV line {line}: bad {what}"))
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let line_no = i + 2;
            let cols: Vec<&str> = line.splitn(10, ',').collect();
            if cols.len() != 10 {
                return Err(Error::Config(format!(
                    "runs CSV line {line_no}: expected 10 columns, got {}",
                    cols.len()
                )));
            }
            let objective = if cols[4].is_empty() {
                None
            } else {
                Some(cols[4].parse().map_err(|_| field_err(line_no, "objective"))?)
            };
            let termination = match cols[8] {
                "stationary" => Some(Termination::Stationary),
                "iteration_cap" => Some(Termination::IterationCap),
                "" => None,
                other => {
                    return Err(Error::Config(format!(
                        "runs CSV line {line_no}: unknown termination `{other}`"
                    )))
                }
            };
            Ok(RunRecord {
                instance: cols[0].parse().map_err(|_| field_err(line_no, "instance"))?,
                seed: cols[1].parse().map_err(|_| field_err(line_no, "seed"))?,
                variant: cols[2].to_string(),
                objective,
                wall_seconds: cols[5]
                    .parse()
                    .map_err(|_| field_err(line_no, "wall_seconds"))?,
                subsolver_calls: cols[6]
                    .parse()
                    .map_err(|_| field_err(line_no, "subsolver_calls"))?,
                outer_iterations: cols[7]
                    .parse()
                    .map_err(|_| field_err(line_no, "outer_iterations"))?,
                termination,
                error: if cols[9].is_empty() {
                    None
                } else {
                    Some(cols[9].to_string())
                },
            })
        })
        .collect()
}
