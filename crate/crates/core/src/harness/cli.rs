//! `cmlab` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{parse_optimizer_name, ExperimentConfig, ExperimentKind, InitMode, SurfaceSpec, SweepConfig};
use super::experiments::{run_experiment, ExperimentOutput};
use super::output::write_output;
use crate::analysis::MSharpnessConfig;
use crate::convergence::TuneMode;
use crate::error::{Error, Result};
use crate::losses::check_grad;
use crate::optimizers::{Algorithm, OptimizerConfig, Schedule};
use crate::rng::{Seed, SplitMix64};

/// Threshold for `gradcheck`'s exit status.
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "cmlab", version, about = "Critical-momenta optimizer lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record per-step trajectories (loss, rate, buffer statistics, path length).
    Trajectory(CommonArgs),
    /// Escape ratio on the sharp/flat family.
    Escape(CommonArgs),
    /// Final loss and sharpness over a seed list, per surface and optimizer.
    Table(CommonArgs),
    /// Optimal quadratic convergence rates of CM and heavy-ball momentum.
    Converge(CommonArgs),
    /// Compare analytic gradients with central differences at seeded points.
    Gradcheck(CommonArgs),
    /// Buffer agreement, cancellation, path length and sharpness per run.
    Diagnose(CommonArgs),
}

#[derive(Debug, Args, Default)]
struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    surface: Option<String>,
    /// Comma-separated surfaces for `table`.
    #[arg(long, value_delimiter = ',')]
    surfaces: Vec<String>,
    /// Sharpness coefficient of the sharp/flat family.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Optimizer labels, comma-separated or repeated (e.g. adam,adam_cm,adam_sam_cg).
    #[arg(long, value_delimiter = ',')]
    optimizer: Vec<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    sam_rho: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Use seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Vec<u64>,
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<Schedule>,
    /// Fixed comma-separated starting point instead of seeded uniform draws.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init: Vec<f64>,
    /// Also write full parameter snapshots.
    #[arg(long)]
    record_theta: bool,
    /// Dataset seed for the MLP surface.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Caps worker threads (also read from CMLAB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// `converge`: buffer capacities to sweep.
    #[arg(long, value_delimiter = ',')]
    capacities: Vec<usize>,
    /// `converge`: condition numbers.
    #[arg(long, value_delimiter = ',')]
    kappas: Vec<f64>,
    /// `converge`: tune_both and/or fixed_beta_<b>.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<TuneMode>,
    /// `converge`: omit the heavy-ball baseline rows.
    #[arg(long)]
    no_heavy_ball: bool,
    /// `gradcheck`: number of seeded points.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// `diagnose`: m-sharpness ball radius (0 disables it).
    #[arg(long)]
    m_radius: Option<f64>,
    /// Only write files; print nothing on success.
    #[arg(long, short)]
    quiet: bool,
}

fn parse_schedule(s: &str) -> std::result::Result<Schedule, String> {
    match s {
        "constant" => Ok(Schedule::Constant),
        "half_decay" => Ok(Schedule::HalfDecay),
        other => Err(format!("unknown schedule '{other}' (expected constant or half_decay)")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<TuneMode, String> {
    if s == "tune_both" {
        return Ok(TuneMode::TuneBoth);
    }
    s.strip_prefix("fixed_beta_")
        .or_else(|| s.strip_prefix("fixed_beta="))
        .and_then(|b| b.parse::<f64>().ok())
        .map(TuneMode::FixedBeta)
        .ok_or_else(|| format!("unknown mode '{s}' (expected tune_both or fixed_beta_<b>)"))
}

/// Defaults per subcommand before any config file or flag is applied.
fn defaults(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    match kind {
        ExperimentKind::Trajectory | ExperimentKind::Diagnostics => {
            cfg.schedule = Schedule::HalfDecay;
            cfg.optimizers = if kind == ExperimentKind::Trajectory {
                vec![OptimizerConfig::adam(0.1), OptimizerConfig::adam_cm(0.1, 20, 0.99)]
            } else {
                vec![
                    OptimizerConfig::adam_cg(0.1, 20, 0.99),
                    OptimizerConfig::adam_cm(0.1, 20, 0.99),
                ]
            };
            if kind == ExperimentKind::Diagnostics {
                cfg.m_sharpness = Some(MSharpnessConfig::default());
            }
        }
        ExperimentKind::EscapeRatio => {
            cfg.surface = SurfaceSpec::Sharpflat { s: 25.0, dim: 10 };
            cfg.seeds = (0..50).map(Seed).collect();
            cfg.optimizers = vec![
                OptimizerConfig::adam(0.05),
                OptimizerConfig::adam_cg(0.05, 20, 0.99),
                OptimizerConfig::adam_cm(0.05, 20, 0.99),
            ];
        }
        ExperimentKind::SeedTable => {
            cfg.surfaces = vec![SurfaceSpec::GoldsteinPrice, SurfaceSpec::Levy];
            cfg.seeds = (0..20).map(Seed).collect();
            cfg.optimizers = vec![
                OptimizerConfig::adam(0.1),
                OptimizerConfig::adam(0.1).with_sam(0.05),
                OptimizerConfig::adam_cg(0.1, 20, 0.99),
                OptimizerConfig::adam_cm(0.1, 20, 0.99),
            ];
        }
        ExperimentKind::ConvergenceSweep => cfg.sweep = Some(SweepConfig::default()),
    }
    cfg
}

fn is_sharp_flat(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.surface, SurfaceSpec::Sharpflat { .. })
}

/// Buffer defaults for the toy studies; pass `--capacity 5 --decay 0.7` for the
/// general-purpose defaults.
const TOY_BUFFER: (usize, f64) = (20, 0.99);

fn build_optimizer(name: &str, a: &CommonArgs, lr: f64) -> Result<OptimizerConfig> {
    let (alg, sam) = parse_optimizer_name(name)?;
    let (c, lambda) = TOY_BUFFER;
    let mut cfg = match alg {
        Algorithm::SimpleCm => OptimizerConfig::simple_cm(lr, a.beta1.unwrap_or(0.9), a.capacity.unwrap_or(c)),
        a_ if a_.uses_buffer() => {
            OptimizerConfig::buffered(alg, lr, a.capacity.unwrap_or(c), a.decay.unwrap_or(lambda))
        }
        _ => OptimizerConfig {
            algorithm: alg,
            ..OptimizerConfig::sgd(lr)
        },
    };
    if sam {
        cfg = cfg.with_sam(a.sam_rho.unwrap_or(0.05));
    }
    Ok(cfg)
}

fn apply_hyper(o: &mut OptimizerConfig, a: &CommonArgs) {
    if let Some(lr) = a.lr {
        o.lr = lr;
    }
    if let Some(b) = a.beta1 {
        o.beta1 = b;
        if o.algorithm == Algorithm::SimpleCm {
            o.beta = Some(b);
        }
    }
    if let Some(b) = a.beta2 {
        o.beta2 = b;
    }
    if let Some(e) = a.eps {
        o.eps = e;
    }
    if o.algorithm.uses_buffer() || o.algorithm == Algorithm::SimpleCm {
        if a.capacity.is_some() {
            o.capacity = a.capacity;
        }
        if a.decay.is_some() && o.algorithm != Algorithm::SimpleCm {
            o.decay = a.decay;
        }
    }
    if o.sam && a.sam_rho.is_some() {
        o.sam_rho = a.sam_rho;
    }
}

fn surface_with_params(name: &str, a: &CommonArgs) -> Result<SurfaceSpec> {
    let mut spec = SurfaceSpec::from_name(name)?;
    apply_surface_params(&mut spec, a);
    Ok(spec)
}

fn apply_surface_params(spec: &mut SurfaceSpec, a: &CommonArgs) {
    match spec {
        SurfaceSpec::Sharpflat { s, dim } => {
            if let Some(v) = a.s {
                *s = v;
            }
            if let Some(d) = a.dim {
                *dim = d;
            }
        }
        SurfaceSpec::Quadratic { diag } => {
            if let Some(d) = a.dim {
                *diag = vec![1.0; d];
            }
        }
        SurfaceSpec::Mlp { data_seed, .. } => {
            if let Some(ds) = a.data_seed {
                *data_seed = ds;
            }
        }
        _ => {}
    }
}

/// Defaults, then the `--config` file, then flags.
fn resolve(kind: ExperimentKind, a: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut c = ExperimentConfig::from_json(&text)?;
            c.experiment = kind;
            if kind == ExperimentKind::ConvergenceSweep && c.sweep.is_none() {
                c.sweep = Some(SweepConfig::default());
            }
            c
        }
        None => defaults(kind),
    };
    match &a.surface {
        Some(name) => cfg.surface = surface_with_params(name, a)?,
        None => apply_surface_params(&mut cfg.surface, a),
    }
    if !a.surfaces.is_empty() {
        cfg.surfaces = a
            .surfaces
            .iter()
            .map(|n| surface_with_params(n, a))
            .collect::<Result<_>>()?;
    }
    if !a.optimizer.is_empty() {
        let lr = a.lr.unwrap_or(if is_sharp_flat(&cfg) { 0.05 } else { 0.1 });
        cfg.optimizers = a
            .optimizer
            .iter()
            .map(|n| build_optimizer(n, a, lr))
            .collect::<Result<_>>()?;
    }
    for o in &mut cfg.optimizers {
        apply_hyper(o, a);
    }
    if let Some(t) = a.steps {
        cfg.steps = t;
    }
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).map(Seed).collect();
    }
    if !a.seed_list.is_empty() {
        cfg.seeds = a.seed_list.iter().copied().map(Seed).collect();
    }
    if let Some(s) = a.schedule {
        cfg.schedule = s;
    }
    if !a.init.is_empty() {
        cfg.init = InitMode::Fixed { point: a.init.clone() };
    }
    if a.record_theta {
        cfg.record_theta = true;
    }
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    if let Some(r) = a.m_radius {
        cfg.m_sharpness = (r > 0.0).then(|| MSharpnessConfig {
            radius: r,
            ..cfg.m_sharpness.unwrap_or_default()
        });
    }
    if kind == ExperimentKind::ConvergenceSweep {
        let sweep = cfg.sweep.get_or_insert_with(SweepConfig::default);
        if !a.capacities.is_empty() {
            sweep.capacities = a.capacities.clone();
        }
        if !a.kappas.is_empty() {
            sweep.kappas = a.kappas.clone();
        }
        if !a.modes.is_empty() {
            sweep.modes = a.modes.clone();
        }
        if a.no_heavy_ball {
            sweep.heavy_ball = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. }
    )
}

fn thread_cap(a: &CommonArgs) -> Result<Option<usize>> {
    if let Some(n) = a.threads {
        return Ok(Some(n.max(1)));
    }
    match std::env::var("CMLAB_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(|n| Some(n.max(1)))
            .map_err(|_| Error::Config(format!("CMLAB_THREADS must be a positive integer, got '{v}'"))),
        _ => Ok(None),
    }
}

fn gradcheck(cfg: &ExperimentConfig, points: usize) -> Result<i32> {
    let surface = cfg.surface.build()?;
    let mut rng = SplitMix64::new(cfg.seeds[0]);
    let mut worst = (0.0_f64, 0usize, Vec::new());
    let mut checked = 0;
    let mut draws = 0;
    while checked < points {
        draws += 1;
        if draws > 100 * points.max(1) {
            return Err(Error::Domain("could not draw points away from kinks".into()));
        }
        let theta = surface.sample_point(&mut rng);
        // Central differences straddling a branch switch are not a gradient.
        if surface.near_kink(&theta, 1e-3) {
            continue;
        }
        let r = check_grad(&surface, &theta)?;
        if r.max_rel_error > worst.0 || checked == 0 {
            worst = (r.max_rel_error, r.worst_coordinate, theta.into_inner());
        }
        checked += 1;
    }
    let pass = worst.0 < GRADCHECK_TOL;
    println!(
        "gradcheck {}: points={checked} max_rel_error={:e} worst_coordinate={} {}",
        cfg.surface.label(),
        worst.0,
        worst.1,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

fn report(output: &ExperimentOutput) {
    match output {
        ExperimentOutput::Trajectory(runs) => {
            for r in runs {
                println!(
                    "seed={} optimizer={} final_loss={} diverged={}",
                    r.seed.0, r.optimizer, r.final_loss, r.diverged
                );
            }
        }
        ExperimentOutput::Escape(res) => {
            for (label, ratio) in &res.ratios {
                println!("{label}: escape_ratio={ratio}");
            }
        }
        ExperimentOutput::Table(_, summary) => {
            for s in summary {
                println!(
                    "{} {}: mean_loss={} mean_h_max={} runs={} diverged={}",
                    s.surface, s.optimizer, s.mean_loss, s.mean_h_max, s.runs, s.diverged
                );
            }
        }
        ExperimentOutput::Sweep(rows) => {
            for r in rows {
                println!(
                    "C={} kappa={} {}: rho*={} 1-rho*={}",
                    r.capacity,
                    r.kappa,
                    r.mode,
                    r.rho_star,
                    1.0 - r.rho_star
                );
            }
        }
        ExperimentOutput::Diagnostics(rows) => {
            for r in rows {
                println!(
                    "seed={} optimizer={} cosine={:?} variance={:?} path={}",
                    r.seed, r.optimizer, r.mean_buf_cosine, r.mean_buf_variance, r.path_dist
                );
            }
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    let (kind, args) = match command {
        Command::Trajectory(a) => (ExperimentKind::Trajectory, a),
        Command::Escape(a) => (ExperimentKind::EscapeRatio, a),
        Command::Table(a) => (ExperimentKind::SeedTable, a),
        Command::Converge(a) => (ExperimentKind::ConvergenceSweep, a),
        Command::Diagnose(a) => (ExperimentKind::Diagnostics, a),
        Command::Gradcheck(a) => {
            let mut cfg = ExperimentConfig::new(ExperimentKind::Trajectory);
            cfg.seeds = vec![Seed(0)];
            if let Some(name) = &a.surface {
                cfg.surface = surface_with_params(name, &a)?;
            }
            if !a.seed_list.is_empty() {
                cfg.seeds = vec![Seed(a.seed_list[0])];
            }
            return gradcheck(&cfg, a.points);
        }
    };
    let cfg = resolve(kind, &args)?;
    let run = || -> Result<i32> {
        let output = run_experiment(&cfg)?;
        let paths = write_output(&cfg.output, &output, cfg.record_theta)?;
        if !args.quiet {
            report(&output);
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Ok(0)
    };
    match thread_cap(&args)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                2
            } else {
                1
            }
        }
    }
}
