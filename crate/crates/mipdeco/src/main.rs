//! Command-line front end.
//!
//! Every subcommand reads one TOML configuration (all keys optional), applies
//! the command-line overrides, writes its artifacts into the output directory
//! and drops a `manifest.json` from which the run can be reproduced. Errors
//! print as `error[category]: message` on stderr and map to stable exit
//! codes: 2 configuration/argument, 3 instance, 4 numerics, 5 i/o.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use mipdeco::harness::{
    generate_instance, generate_set, order_table, run_compare, sigma_decay, standard_variants,
    write_order_table_csv, Backend, Instance, Profile, RunConfig, RunManifest, ThetaRule,
    VariantSpec,
};
use mipdeco::ipa::{brute_force_solve, enumeration_size, tipa, IpaProblem, Termination};
use mipdeco::ipm::ipm_solve;
use mipdeco::mesh::FemKind;
use mipdeco::reduction::{BalancedTruncation, ReducedModel, ReducedSpaceTime};
use mipdeco::spacetime::{forward_map, SpaceTimeOps, TimeGrid};
use mipdeco::{Error, Result};

/// Space-time source placement: relaxations, rounding heuristics and
/// reduced-order models for parabolic control problems on the unit square.
#[derive(Parser)]
#[command(name = "mipdeco", version, about)]
struct Cli {
    /// TOML configuration file; missing keys fall back to defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides MIPDECO_OUTPUT_DIR and the config file).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Instance seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Apply a named problem scale on top of the configuration.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Suppress progress notes on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the spatial system and dump its matrices.
    Assemble,
    /// Build a reduced-order model and persist it as a bundle.
    Reduce {
        /// Fixed reduced order (default: smallest order meeting --tol).
        #[arg(long)]
        order: Option<usize>,
        /// Hankel-tail tolerance (default: experiment.sigma_tol).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Solve the continuous relaxation with the interior-point subsolver.
    Relax,
    /// Run the rounding-and-perturbation improvement heuristic.
    Solve {
        #[arg(long, value_enum, default_value_t = SolveVariant::Full)]
        variant: SolveVariant,
    },
    /// Exhaustively enumerate binary controls (small instances only).
    Oracle,
    /// Batch studies writing CSV tables.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCmd,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolveVariant {
    /// Subsolver on the grid unknowns.
    Full,
    /// Subsolver on balanced-truncation coordinates.
    Mor,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Hankel-tail decay Σ(r) of the benchmark reduction setup.
    Sigma,
    /// Reduced order vs. mesh step for both problem kinds.
    Table2,
    /// Full-order vs. reduced-order heuristic on seeded instances.
    Compare,
    /// The four perturbation variants on seeded instances.
    Variants {
        #[arg(long, value_enum, default_value_t = SolveVariant::Mor)]
        backend: SolveVariant,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(match e.category() {
                "config" | "argument" => 2u8,
                "instance" => 3,
                "numerics" => 4,
                _ => 5,
            })
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    dir: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("[mipdeco] {msg}");
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(profile) = cli.profile {
        cfg.instance = cfg.instance.with_profile(profile);
        if profile == Profile::Paper {
            cfg.ipa.p_max = cfg.ipa.p_max.max(1000);
            eprintln!(
                "warning: paper-scale profile (h=1/64, 40 blocks, 25 sources); \
                 solves and experiments at this scale run for hours"
            );
        }
    }
    if let Some(seed) = cli.seed {
        cfg.instance.seed = seed;
    }
    let dir = cli
        .output
        .or_else(|| std::env::var_os("MIPDECO_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone());
    cfg.output.dir = dir.clone();
    std::fs::create_dir_all(&dir)?;

    let ctx = Ctx {
        cfg,
        dir,
        quiet: cli.quiet,
    };
    let started = Instant::now();
    let (command, seeds, outputs) = match cli.command {
        Command::Assemble => ("assemble".to_string(), vec![], cmd_assemble(&ctx)?),
        Command::Reduce { order, tol } => (
            "reduce".to_string(),
            vec![],
            cmd_reduce(&ctx, order, tol)?,
        ),
        Command::Relax => (
            "relax".to_string(),
            vec![ctx.cfg.instance.seed],
            cmd_relax(&ctx)?,
        ),
        Command::Solve { variant } => (
            format!("solve --variant {}", variant_name(variant)),
            vec![ctx.cfg.instance.seed],
            cmd_solve(&ctx, variant)?,
        ),
        Command::Oracle => (
            "oracle".to_string(),
            vec![ctx.cfg.instance.seed],
            cmd_oracle(&ctx)?,
        ),
        Command::Experiment { which } => match which {
            ExperimentCmd::Sigma => ("experiment sigma".to_string(), vec![], cmd_sigma(&ctx)?),
            ExperimentCmd::Table2 => {
                ("experiment table2".to_string(), vec![], cmd_table2(&ctx)?)
            }
            ExperimentCmd::Compare => {
                let seeds = batch_seeds(&ctx.cfg);
                let mut variants = vec![
                    VariantSpec::full("tipa"),
                    VariantSpec::reduced("mor_tipa"),
                ];
                for v in &mut variants {
                    v.strategy = ctx.cfg.ipa.strategy;
                    v.theta = ThetaRule::Fixed(ctx.cfg.ipa.theta);
                }
                let outputs = cmd_batch(&ctx, &seeds, &variants)?;
                ("experiment compare".to_string(), seeds, outputs)
            }
            ExperimentCmd::Variants { backend } => {
                let seeds = batch_seeds(&ctx.cfg);
                let variants = standard_variants(match backend {
                    SolveVariant::Full => Backend::Full,
                    SolveVariant::Mor => Backend::Reduced,
                });
                let outputs = cmd_batch(&ctx, &seeds, &variants)?;
                (
                    format!("experiment variants --backend {}", variant_name(backend)),
                    seeds,
                    outputs,
                )
            }
        },
    };

    let mut manifest = RunManifest::new(
        &command,
        ctx.cfg.clone(),
        seeds,
        started.elapsed().as_secs_f64(),
    );
    manifest.outputs = outputs;
    let path = manifest.write(&ctx.dir)?;
    ctx.note(&format!("manifest written to {}", path.display()));
    Ok(())
}

fn variant_name(v: SolveVariant) -> &'static str {
    match v {
        SolveVariant::Full => "full",
        SolveVariant::Mor => "mor",
    }
}

fn batch_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.experiment.instances as u64)
        .map(|k| cfg.experiment.base_seed + k)
        .collect()
}

/// Writes one control trajectory: columns `t,source_0,…`; one row per block.
fn write_control_csv(w: &mut dyn Write, time: &TimeGrid, u: &[f64], l: usize) -> Result<()> {
    write!(w, "t")?;
    for j in 0..l {
        write!(w, ",source_{j}")?;
    }
    writeln!(w)?;
    let dt = time.dt();
    for (i, block) in u.chunks(l).enumerate() {
        write!(w, "{:.17e}", (i + 1) as f64 * dt)?;
        for v in block {
            write!(w, ",{v:.17e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn cmd_assemble(ctx: &Ctx) -> Result<Vec<String>> {
    let spec = &ctx.cfg.instance;
    let inst = generate_instance(spec)?;
    let fem = &inst.fem;
    ctx.note(&format!(
        "assembled {:?} system: {} unknowns, {} sources",
        spec.kind,
        fem.n_dofs,
        fem.n_sources()
    ));

    fem.mass.write_matrix_market(&mut ctx.create("mass.mtx")?)?;
    fem.stiffness
        .write_matrix_market(&mut ctx.create("stiffness.mtx")?)?;

    let mut w = ctx.create("phi.csv")?;
    write!(w, "dof")?;
    for j in 0..fem.n_sources() {
        write!(w, ",source_{j}")?;
    }
    writeln!(w)?;
    for i in 0..fem.n_dofs {
        write!(w, "{i}")?;
        for j in 0..fem.n_sources() {
            write!(w, ",{:.17e}", fem.phi[(i, j)])?;
        }
        writeln!(w)?;
    }
    drop(w);

    let mut w = ctx.create("obs_dofs.csv")?;
    writeln!(w, "dof,vertex,x,y")?;
    for &dof in &fem.obs_dofs {
        let vertex = fem.vertex_of_dof[dof];
        let [x, y] = fem.mesh.vertex_coord(vertex);
        writeln!(w, "{dof},{vertex},{x:.17e},{y:.17e}")?;
    }
    drop(w);

    let layout = serde_json::to_string_pretty(&fem.layout)
        .map_err(|e| Error::Persistence(e.to_string()))?;
    std::fs::write(ctx.dir.join("layout.json"), layout)?;

    Ok(vec![
        "mass.mtx".into(),
        "stiffness.mtx".into(),
        "phi.csv".into(),
        "obs_dofs.csv".into(),
        "layout.json".into(),
    ])
}

fn cmd_reduce(ctx: &Ctx, order: Option<usize>, tol: Option<f64>) -> Result<Vec<String>> {
    let spec = &ctx.cfg.instance;
    let inst = generate_instance(spec)?;
    let bt = BalancedTruncation::from_fem(&inst.fem)?;
    let tol = tol.unwrap_or(ctx.cfg.experiment.sigma_tol);
    let order = order.unwrap_or_else(|| bt.order_for_tail(tol));
    let time = TimeGrid::new(1.0, spec.n_time)?;
    let model = ReducedModel::build(&inst.fem, &bt, order, time)?;
    ctx.note(&format!(
        "reduced {} unknowns to order {} (tail {:.3e})",
        inst.fem.n_dofs,
        model.order,
        model.sigma_tail()
    ));

    model.save(&ctx.dir.join("reduced_model"))?;

    let mut w = ctx.create("sigma.csv")?;
    writeln!(w, "r,sigma_tail")?;
    for r in 0..=bt.max_order() {
        writeln!(w, "{r},{:.17e}", bt.sigma_tail(r))?;
    }
    drop(w);

    let summary = serde_json::json!({
        "n_state": inst.fem.n_dofs,
        "max_order": bt.max_order(),
        "order": model.order,
        "sigma_tail": model.sigma_tail(),
    });
    std::fs::write(
        ctx.dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Persistence(e.to_string()))?,
    )?;

    Ok(vec![
        "reduced_model".into(),
        "sigma.csv".into(),
        "summary.json".into(),
    ])
}

fn cmd_relax(ctx: &Ctx) -> Result<Vec<String>> {
    let inst = generate_instance(&ctx.cfg.instance)?;
    let u0 = vec![0.5; inst.ops.control_dim()];
    ctx.note("solving the continuous relaxation (no binary penalty)");
    let (iterate, report) = ipm_solve(
        &*inst.ops,
        &inst.knapsack,
        &inst.y_d,
        f64::INFINITY,
        &u0,
        &ctx.cfg.ipm,
    )?;
    if !report.converged {
        eprintln!(
            "warning: subsolver stopped before the KKT tolerance \
             (residual {:.3e}, mu {:.3e})",
            report.residuals.max(),
            report.final_mu
        );
    }

    let mut w = ctx.create("control.csv")?;
    write_control_csv(&mut w, &inst.ops.time, &iterate.u, inst.knapsack.n_sources)?;
    drop(w);

    let summary = serde_json::json!({
        "converged": report.converged,
        "mu_floored": report.mu_floored,
        "newton_steps": report.newton_steps,
        "gmres_iterations": report.gmres_iterations,
        "final_mu": report.final_mu,
        "residuals": {
            "primal": report.residuals.primal,
            "dual": report.residuals.dual,
            "complementarity": report.residuals.complementarity,
        },
        "objective": report.objective,
    });
    std::fs::write(
        ctx.dir.join("report.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Persistence(e.to_string()))?,
    )?;
    println!("relaxation objective: {:.12e}", report.objective);

    Ok(vec!["control.csv".into(), "report.json".into()])
}

fn build_reduced(ctx: &Ctx, inst: &Instance) -> Result<ReducedSpaceTime> {
    let bt = BalancedTruncation::from_fem(&inst.fem)?;
    let order = bt.order_for_tail(ctx.cfg.experiment.sigma_tol);
    let time = TimeGrid::new(1.0, ctx.cfg.instance.n_time)?;
    let model = ReducedModel::build(&inst.fem, &bt, order, time)?;
    ctx.note(&format!(
        "reduced backend at order {} (tail {:.3e})",
        model.order,
        model.sigma_tail()
    ));
    ReducedSpaceTime::new(inst.fem.clone(), model)
}

fn cmd_solve(ctx: &Ctx, variant: SolveVariant) -> Result<Vec<String>> {
    let inst = generate_instance(&ctx.cfg.instance)?;
    let reduced = match variant {
        SolveVariant::Full => None,
        SolveVariant::Mor => Some(build_reduced(ctx, &inst)?),
    };
    let ops: &dyn SpaceTimeOps = match &reduced {
        Some(red) => red,
        None => &*inst.ops,
    };
    ctx.note(&format!(
        "improvement heuristic on the {} system, {} blocks x {} sources, budget {}",
        variant_name(variant),
        inst.knapsack.n_time,
        inst.knapsack.n_sources,
        inst.knapsack.budget
    ));

    let ipm = match variant {
        SolveVariant::Full => ctx.cfg.ipm,
        SolveVariant::Mor => ctx.cfg.ipm.for_reduced_backend(),
    };
    let problem = IpaProblem::new(ops, &inst.knapsack, &inst.y_d, &inst.adjacency)?;
    let (point, trace) = tipa(&problem, &ctx.cfg.ipa, &ipm)?;

    let y = forward_map(&*inst.ops, &point.u);
    let objective = inst.ops.tracking_objective(&y, &inst.y_d);

    let mut w = ctx.create("trace.csv")?;
    trace.write_csv(&mut w)?;
    drop(w);
    std::fs::write(ctx.dir.join("trace.json"), trace.to_json()?)?;

    let mut w = ctx.create("control.csv")?;
    write_control_csv(&mut w, &inst.ops.time, &point.u, inst.knapsack.n_sources)?;
    drop(w);

    let summary = serde_json::json!({
        "variant": variant_name(variant),
        "objective": objective,
        "termination": match trace.termination {
            Termination::Stationary => "stationary",
            Termination::IterationCap => "iteration_cap",
        },
        "outer_iterations": trace.outer_iterations(),
        "subsolver_calls": trace.total_subsolver_calls(),
        "reduced_order": reduced.as_ref().map(|r| r.order()),
    });
    std::fs::write(
        ctx.dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Persistence(e.to_string()))?,
    )?;
    println!(
        "final objective: {objective:.12e} after {} outer iterations ({} subsolver calls)",
        trace.outer_iterations(),
        trace.total_subsolver_calls()
    );

    Ok(vec![
        "trace.csv".into(),
        "trace.json".into(),
        "control.csv".into(),
        "summary.json".into(),
    ])
}

fn cmd_oracle(ctx: &Ctx) -> Result<Vec<String>> {
    let inst = generate_instance(&ctx.cfg.instance)?;
    let k = &inst.knapsack;
    ctx.note(&format!(
        "exhaustive search over {:.3e} feasible controls",
        enumeration_size(k.n_sources, k.budget, k.n_time)
    ));
    let (u_opt, objective) = brute_force_solve(&*inst.ops, k, &inst.y_d)?;

    let mut w = ctx.create("control.csv")?;
    write_control_csv(&mut w, &inst.ops.time, &u_opt, k.n_sources)?;
    drop(w);

    let summary = serde_json::json!({
        "objective": objective,
        "enumerated": enumeration_size(k.n_sources, k.budget, k.n_time),
    });
    std::fs::write(
        ctx.dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Persistence(e.to_string()))?,
    )?;
    println!("optimal objective: {objective:.12e}");

    Ok(vec!["control.csv".into(), "summary.json".into()])
}

fn cmd_sigma(ctx: &Ctx) -> Result<Vec<String>> {
    let spec = &ctx.cfg.instance;
    ctx.note(&format!(
        "Hankel-tail decay for {:?} at h = {}",
        spec.kind, spec.h
    ));
    let table = sigma_decay(spec.kind, spec.h)?;
    let mut w = ctx.create("sigma.csv")?;
    table.write_csv(&mut w)?;
    drop(w);
    println!(
        "{} singular values; tail drops below 1e-5 at order {}",
        table.rows.len() - 1,
        table
            .rows
            .iter()
            .find(|&&(_, tail)| tail <= 1e-5)
            .map(|&(r, _)| r)
            .unwrap_or(table.rows.len() - 1)
    );
    Ok(vec!["sigma.csv".into()])
}

fn cmd_table2(ctx: &Ctx) -> Result<Vec<String>> {
    let kinds = [FemKind::Poisson, FemKind::ConvectionDiffusion];
    ctx.note(&format!(
        "reduced orders for h in {:?} at tail tolerance {:.1e}",
        ctx.cfg.experiment.h_list, ctx.cfg.experiment.sigma_tol
    ));
    let rows = order_table(&kinds, &ctx.cfg.experiment.h_list, ctx.cfg.experiment.sigma_tol)?;
    let mut w = ctx.create("orders.csv")?;
    write_order_table_csv(&rows, &mut w)?;
    drop(w);
    for row in &rows {
        println!(
            "{:?} h={:<10} n={} -> order {} ({:.1}s)",
            row.kind, row.h, row.n_state, row.order, row.seconds
        );
    }
    Ok(vec!["orders.csv".into()])
}

fn cmd_batch(ctx: &Ctx, seeds: &[u64], variants: &[VariantSpec]) -> Result<Vec<String>> {
    let instances = generate_set(&ctx.cfg.instance, seeds)?;
    ctx.note(&format!(
        "{} variants x {} instances (seeds {:?})",
        variants.len(),
        instances.len(),
        seeds
    ));
    let outcome = run_compare(
        &instances,
        variants,
        &ctx.cfg.ipa,
        &ctx.cfg.ipm,
        ctx.cfg.experiment.sigma_tol,
    )?;
    outcome.self_check(variants)?;

    let mut w = ctx.create("runs.csv")?;
    outcome.write_runs_csv(&mut w)?;
    drop(w);
    let mut w = ctx.create("metrics.csv")?;
    outcome.write_metrics_csv(&mut w)?;
    drop(w);

    println!("variant          min_count  rel_err_av    av_subsolvercalls");
    for m in &outcome.metrics {
        println!(
            "{:<16} {:>9}  {:<12}  {:>17.1}",
            m.variant,
            m.min_count,
            m.rel_err_av
                .map(|g| format!("{g:.3e}"))
                .unwrap_or_else(|| "-".into()),
            m.av_subsolver_calls
        );
    }
    Ok(vec!["runs.csv".into(), "metrics.csv".into()])
}
