//! Experiment runners. Each returns plain data; writing files is the caller's job.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InitMode, SharpnessSettings, SweepConfig};
use crate::analysis::{m_sharpness, max_hessian_eig, MSharpnessConfig, SharpnessReport};
use crate::convergence::{optimal_rate, Method};
use crate::error::{check_dim, Error, Result};
use crate::losses::LossSurface;
use crate::optimizers::{lr_schedule_at, Optimizer, OptimizerConfig, Schedule};
use crate::rng::{Seed, SplitMix64};
use crate::vector::{inf_norm, norm, sub, ParamVector};

/// State after update `step` (1-based), plus the rate used to get there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub theta_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ParamVector>,
    pub buf_variance: Option<f64>,
    pub buf_cosine: Option<f64>,
    pub cancel_index: Option<f64>,
    /// Cumulative path length up to and including this step.
    pub path_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: Seed,
    pub optimizer: String,
    /// Position in the optimizer list the run came from.
    pub optimizer_index: usize,
    pub initial_theta: ParamVector,
    pub final_theta: ParamVector,
    pub final_loss: f64,
    pub path_dist: f64,
    /// A non-finite loss, gradient or iterate stopped the run early.
    pub diverged: bool,
    pub steps_completed: usize,
    pub records: Vec<TrajectoryRecord>,
    pub sharpness: Option<SharpnessReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub record_theta: bool,
    /// Skip per-step records (final values are still reported).
    pub summary_only: bool,
    /// Estimate the dominant Hessian eigenvalue at the final iterate.
    pub final_sharpness: Option<SharpnessSettings>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Runs `steps` updates from `theta0`. Divergence is an outcome, not an error.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    surface: &LossSurface,
    config: &OptimizerConfig,
    steps: usize,
    schedule: Schedule,
    theta0: &[f64],
    seed: Seed,
    opts: RunOptions,
) -> Result<RunOutcome> {
    check_dim(surface.dim(), theta0.len())?;
    let mut opt = Optimizer::new(config.clone(), surface.dim())?;
    let mut theta = ParamVector::from(theta0);
    let mut loss = surface.eval_loss(&theta)?;
    let mut path = 0.0;
    let mut records = Vec::new();
    let mut diverged = !loss.is_finite();
    let mut done = 0;
    while !diverged && done < steps {
        let lr = lr_schedule_at(config.lr, done, steps, schedule);
        opt.set_lr(lr);
        let info = match opt.step_on(surface, &theta) {
            Ok(info) => info,
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if !info.theta.is_finite() {
            diverged = true;
            break;
        }
        let next_loss = match surface.eval_loss(&info.theta) {
            Ok(l) if l.is_finite() => l,
            Ok(_) => {
                diverged = true;
                break;
            }
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        path += norm(&sub(&info.theta, &theta));
        theta = info.theta;
        loss = next_loss;
        done += 1;
        if !opts.summary_only {
            let stats = opt.buffer().filter(|b| !b.is_empty()).map(|b| b.stats());
            records.push(TrajectoryRecord {
                step: done,
                loss,
                lr,
                theta_norm: theta.norm(),
                theta: opts.record_theta.then(|| theta.clone()),
                buf_variance: stats.map(|s| s.variance),
                buf_cosine: stats.map(|s| s.cosine_agreement),
                cancel_index: opt.state().last_cancellation,
                path_dist: path,
            });
        }
    }
    let sharpness = match (opts.final_sharpness, diverged) {
        (Some(s), false) => Some(max_hessian_eig(surface, &theta, s.tol, s.max_iters, seed)?),
        _ => None,
    };
    Ok(RunOutcome {
        seed,
        optimizer: config.label(),
        optimizer_index: 0,
        initial_theta: ParamVector::from(theta0),
        final_theta: theta,
        final_loss: loss,
        path_dist: path,
        diverged,
        steps_completed: done,
        records,
        sharpness,
    })
}

/// Starting point for `seed`: a fixed point, or a uniform draw over the surface's domain.
pub fn initial_point(surface: &LossSurface, init: &InitMode, seed: Seed) -> Result<ParamVector> {
    match init {
        InitMode::Fixed { point } => {
            check_dim(surface.dim(), point.len())?;
            Ok(ParamVector::from(point.as_slice()))
        }
        InitMode::Uniform => Ok(surface.sample_point(&mut SplitMix64::new(seed))),
    }
}

/// Runs every (optimizer, seed) pair in parallel and returns outcomes
/// ordered by seed, then by the optimizer's position in the list.
pub fn run_many(
    surface: &LossSurface,
    optimizers: &[OptimizerConfig],
    seeds: &[Seed],
    steps: usize,
    schedule: Schedule,
    init: &InitMode,
    opts: RunOptions,
) -> Result<Vec<RunOutcome>> {
    let jobs: Vec<(Seed, usize)> = seeds
        .iter()
        .flat_map(|&s| (0..optimizers.len()).map(move |i| (s, i)))
        .collect();
    let mut out: Vec<(Seed, usize, RunOutcome)> = jobs
        .par_iter()
        .map(|&(seed, i)| {
            let theta0 = initial_point(surface, init, seed)?;
            run_trajectory(surface, &optimizers[i], steps, schedule, &theta0, seed, opts).map(|o| {
                (
                    seed,
                    i,
                    RunOutcome {
                        optimizer_index: i,
                        ..o
                    },
                )
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|(s, i, _)| (s.0, *i));
    Ok(out.into_iter().map(|(_, _, o)| o).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeRow {
    pub seed: u64,
    pub s: f64,
    pub dim: usize,
    pub optimizer: String,
    pub escaped: bool,
    pub final_loss: f64,
    pub final_inf_norm: f64,
}

/// A run escapes when it ends finite inside the flat basin, `‖θ‖∞ < 0.5`.
pub const ESCAPE_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeResult {
    pub rows: Vec<EscapeRow>,
    /// `(optimizer label, escaped fraction)` in configuration order.
    pub ratios: Vec<(String, f64)>,
}

pub fn run_escape_ratio(
    s: f64,
    dim: usize,
    optimizers: &[OptimizerConfig],
    seeds: &[Seed],
    steps: usize,
    schedule: Schedule,
    init: &InitMode,
) -> Result<EscapeResult> {
    let surface = LossSurface::sharp_flat(s, dim)?;
    let runs = run_many(
        &surface,
        optimizers,
        seeds,
        steps,
        schedule,
        init,
        RunOptions {
            summary_only: true,
            ..RunOptions::default()
        },
    )?;
    let rows: Vec<(usize, EscapeRow)> = runs
        .iter()
        .map(|r| {
            let inf = inf_norm(&r.final_theta);
            let row = EscapeRow {
                seed: r.seed.0,
                s,
                dim,
                optimizer: r.optimizer.clone(),
                escaped: !r.diverged && inf < ESCAPE_RADIUS,
                final_loss: r.final_loss,
                final_inf_norm: inf,
            };
            (r.optimizer_index, row)
        })
        .collect();
    let ratios = optimizers
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mine: Vec<&EscapeRow> = rows.iter().filter(|r| r.0 == i).map(|r| &r.1).collect();
            let hits = mine.iter().filter(|r| r.escaped).count();
            (o.label(), hits as f64 / mine.len().max(1) as f64)
        })
        .collect();
    let rows = rows.into_iter().map(|r| r.1).collect();
    Ok(EscapeResult { rows, ratios })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub surface: String,
    pub optimizer: String,
    pub seed: u64,
    pub final_loss: f64,
    pub h_max: Option<f64>,
    pub diverged: bool,
}

/// Per (surface, optimizer) means over the runs that did not diverge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub surface: String,
    pub optimizer: String,
    pub mean_loss: f64,
    pub mean_h_max: f64,
    pub runs: usize,
    pub diverged: usize,
}

pub fn run_seed_table(
    surfaces: &[(String, LossSurface)],
    optimizers: &[OptimizerConfig],
    seeds: &[Seed],
    steps: usize,
    schedule: Schedule,
    init: &InitMode,
    sharpness: SharpnessSettings,
) -> Result<(Vec<TableRow>, Vec<TableSummary>)> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, surface) in surfaces {
        let runs = run_many(
            surface,
            optimizers,
            seeds,
            steps,
            schedule,
            init,
            RunOptions {
                summary_only: true,
                final_sharpness: Some(sharpness),
                ..RunOptions::default()
            },
        )?;
        for r in &runs {
            rows.push(TableRow {
                surface: name.clone(),
                optimizer: r.optimizer.clone(),
                seed: r.seed.0,
                final_loss: r.final_loss,
                h_max: r.sharpness.map(|s| s.h_max),
                diverged: r.diverged,
            });
        }
        for (i, o) in optimizers.iter().enumerate() {
            let label = o.label();
            let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.optimizer_index == i).collect();
            let ok: Vec<&&RunOutcome> = mine.iter().filter(|r| !r.diverged).collect();
            let n = ok.len();
            let mean = |f: &dyn Fn(&RunOutcome) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            summary.push(TableSummary {
                surface: name.clone(),
                optimizer: label,
                mean_loss: mean(&|r| r.final_loss),
                mean_h_max: mean(&|r| r.sharpness.map_or(f64::NAN, |s| s.h_max)),
                runs: mine.len(),
                diverged: mine.len() - n,
            });
        }
    }
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Buffer capacity; 0 marks the heavy-ball baseline.
    pub capacity: usize,
    pub kappa: f64,
    pub mode: String,
    pub alpha_star: f64,
    pub beta_star: f64,
    pub rho_star: f64,
}

pub fn run_convergence_sweep(sweep: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut methods: Vec<(usize, Method)> = sweep
        .capacities
        .iter()
        .map(|&c| (c, Method::CriticalMomenta { capacity: c }))
        .collect();
    if sweep.heavy_ball {
        methods.insert(0, (0, Method::HeavyBall));
    }
    let mut rows = Vec::new();
    for &(c, method) in &methods {
        for &kappa in &sweep.kappas {
            for mode in &sweep.modes {
                let r = optimal_rate(method, kappa, *mode, &sweep.grids)?;
                rows.push(SweepRow {
                    capacity: c,
                    kappa,
                    mode: mode.label(),
                    alpha_star: r.alpha.unwrap_or(f64::NAN),
                    beta_star: r.beta.unwrap_or(f64::NAN),
                    rho_star: r.rho,
                });
            }
        }
    }
    Ok(rows)
}

/// Trajectory-level diagnostics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub seed: u64,
    pub optimizer: String,
    pub mean_buf_variance: Option<f64>,
    pub mean_buf_cosine: Option<f64>,
    pub mean_cancel_index: Option<f64>,
    pub path_dist: f64,
    pub final_loss: f64,
    pub h_max: Option<f64>,
    pub m_sharpness: Option<f64>,
    pub diverged: bool,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize_run(run: &RunOutcome, sharp: Option<f64>) -> DiagnosticsRow {
    DiagnosticsRow {
        seed: run.seed.0,
        optimizer: run.optimizer.clone(),
        mean_buf_variance: mean_of(run.records.iter().map(|r| r.buf_variance)),
        mean_buf_cosine: mean_of(run.records.iter().map(|r| r.buf_cosine)),
        mean_cancel_index: mean_of(run.records.iter().map(|r| r.cancel_index)),
        path_dist: run.path_dist,
        final_loss: run.final_loss,
        h_max: run.sharpness.map(|s| s.h_max),
        m_sharpness: sharp,
        diverged: run.diverged,
    }
}

pub fn run_diagnostics(
    surface: &LossSurface,
    optimizers: &[OptimizerConfig],
    seeds: &[Seed],
    steps: usize,
    schedule: Schedule,
    init: &InitMode,
    sharpness: SharpnessSettings,
    msharp: Option<MSharpnessConfig>,
) -> Result<Vec<DiagnosticsRow>> {
    let runs = run_many(
        surface,
        optimizers,
        seeds,
        steps,
        schedule,
        init,
        RunOptions {
            final_sharpness: Some(sharpness),
            ..RunOptions::default()
        },
    )?;
    runs.par_iter()
        .map(|r| {
            let ms = match (msharp, r.diverged) {
                (Some(cfg), false) => Some(m_sharpness(surface, &r.final_theta, &cfg, r.seed)?),
                _ => None,
            };
            Ok(summarize_run(r, ms))
        })
        .collect()
}

/// Everything an experiment produced, ready to be written out.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentOutput {
    Trajectory(Vec<RunOutcome>),
    Escape(EscapeResult),
    Table(Vec<TableRow>, Vec<TableSummary>),
    Sweep(Vec<SweepRow>),
    Diagnostics(Vec<DiagnosticsRow>),
}

/// Dispatches on `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    use super::config::ExperimentKind::*;
    config.validate()?;
    match config.experiment {
        Trajectory => {
            let surface = config.surface.build()?;
            let runs = run_many(
                &surface,
                &config.optimizers,
                &config.seeds,
                config.steps,
                config.schedule,
                &config.init,
                RunOptions {
                    record_theta: config.record_theta,
                    final_sharpness: Some(config.sharpness),
                    ..RunOptions::default()
                },
            )?;
            Ok(ExperimentOutput::Trajectory(runs))
        }
        EscapeRatio => {
            let super::config::SurfaceSpec::Sharpflat { s, dim } = config.surface else {
                return Err(Error::Config("escape_ratio needs a sharpflat surface".into()));
            };
            let r = run_escape_ratio(
                s,
                dim,
                &config.optimizers,
                &config.seeds,
                config.steps,
                config.schedule,
                &config.init,
            )?;
            Ok(ExperimentOutput::Escape(r))
        }
        SeedTable => {
            let specs = if config.surfaces.is_empty() {
                std::slice::from_ref(&config.surface)
            } else {
                config.surfaces.as_slice()
            };
            let surfaces = specs
                .iter()
                .map(|s| Ok((s.label().to_string(), s.build()?)))
                .collect::<Result<Vec<_>>>()?;
            let (rows, summary) = run_seed_table(
                &surfaces,
                &config.optimizers,
                &config.seeds,
                config.steps,
                config.schedule,
                &config.init,
                config.sharpness,
            )?;
            Ok(ExperimentOutput::Table(rows, summary))
        }
        ConvergenceSweep => {
            let sweep = config.sweep.clone().unwrap_or_default();
            Ok(ExperimentOutput::Sweep(run_convergence_sweep(&sweep)?))
        }
        Diagnostics => {
            let surface = config.surface.build()?;
            let rows = run_diagnostics(
                &surface,
                &config.optimizers,
                &config.seeds,
                config.steps,
                config.schedule,
                &config.init,
                config.sharpness,
                config.m_sharpness,
            )?;
            Ok(ExperimentOutput::Diagnostics(rows))
        }
    }
}
