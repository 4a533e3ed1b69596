//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "experiment": "escape_ratio",
//!   "surface": { "kind": "sharpflat", "s": 25.0, "dim": 10 },
//!   "optimizers": [
//!     { "algorithm": "adam", "lr": 0.05 },
//!     { "algorithm": "adam_cm", "lr": 0.05, "capacity": 20, "decay": 0.99 }
//!   ],
//!   "steps": 500,
//!   "schedule": "half_decay",
//!   "seeds": [0, 1, 2],
//!   "init": { "mode": "uniform" },
//!   "output": "results"
//! }
//! ```
//!
//! Every field except `experiment` has a default; see [`ExperimentConfig`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::{MSharpnessConfig, DEFAULT_EIG_MAX_ITERS, DEFAULT_EIG_TOL};
use crate::convergence::{RateGrids, TuneMode};
use crate::error::{Error, Result};
use crate::losses::{make_mlp_loss, LossSurface};
use crate::optimizers::{Algorithm, OptimizerConfig, Schedule};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Ackley,
    GoldsteinPrice,
    Levy,
    AckleyRosenbrock,
    Sharpflat {
        s: f64,
        dim: usize,
    },
    Quadratic {
        diag: Vec<f64>,
    },
    Mlp {
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_mlp_samples")]
        n_samples: usize,
        #[serde(default = "default_mlp_hidden")]
        hidden: usize,
    },
}

fn default_mlp_samples() -> usize {
    200
}
fn default_mlp_hidden() -> usize {
    16
}

impl SurfaceSpec {
    /// Parses a surface name; parameterised families take their defaults.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "ackley" => SurfaceSpec::Ackley,
            "gp" | "goldstein_price" | "goldstein-price" => SurfaceSpec::GoldsteinPrice,
            "levy" => SurfaceSpec::Levy,
            "ackley_rosenbrock" | "ackley+rosenbrock" => SurfaceSpec::AckleyRosenbrock,
            "sharpflat" | "sharp_flat" => SurfaceSpec::Sharpflat { s: 10.0, dim: 1 },
            "quadratic" => SurfaceSpec::Quadratic { diag: vec![1.0] },
            "mlp" => SurfaceSpec::Mlp {
                data_seed: 0,
                n_samples: default_mlp_samples(),
                hidden: default_mlp_hidden(),
            },
            other => return Err(Error::Config(format!("unknown surface '{other}'"))),
        })
    }

    pub fn build(&self) -> Result<LossSurface> {
        match self {
            SurfaceSpec::Ackley => Ok(LossSurface::Ackley),
            SurfaceSpec::GoldsteinPrice => Ok(LossSurface::GoldsteinPrice),
            SurfaceSpec::Levy => Ok(LossSurface::Levy2D),
            SurfaceSpec::AckleyRosenbrock => Ok(LossSurface::AckleyRosenbrock),
            SurfaceSpec::Sharpflat { s, dim } => LossSurface::sharp_flat(*s, *dim),
            SurfaceSpec::Quadratic { diag } => LossSurface::quadratic_diag(diag),
            SurfaceSpec::Mlp {
                data_seed,
                n_samples,
                hidden,
            } => make_mlp_loss(Seed(*data_seed), *n_samples, *hidden),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SurfaceSpec::Ackley => "ackley",
            SurfaceSpec::GoldsteinPrice => "gp",
            SurfaceSpec::Levy => "levy",
            SurfaceSpec::AckleyRosenbrock => "ackley_rosenbrock",
            SurfaceSpec::Sharpflat { .. } => "sharpflat",
            SurfaceSpec::Quadratic { .. } => "quadratic",
            SurfaceSpec::Mlp { .. } => "mlp",
        }
    }
}

/// Parses optimizer labels such as `adam`, `adam_cm`, `adam_sam_cm`, `sgd_cg`.
/// Returns the algorithm and whether SAM is requested.
pub fn parse_optimizer_name(name: &str) -> Result<(Algorithm, bool)> {
    let unknown = || Error::Config(format!("unknown optimizer '{name}'"));
    let lowered = name.trim().to_ascii_lowercase().replace('+', "_");
    let (base, sam) = if let Some(rest) = lowered.strip_suffix("_sam") {
        (rest.to_string(), true)
    } else if lowered.contains("_sam_") {
        (lowered.replacen("_sam_", "_", 1), true)
    } else {
        (lowered.clone(), false)
    };
    let alg: Algorithm = base.parse().map_err(|_| unknown())?;
    if sam && alg == Algorithm::SimpleCm {
        return Err(unknown());
    }
    Ok((alg, sam))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Trajectory,
    EscapeRatio,
    SeedTable,
    ConvergenceSweep,
    Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    Fixed { point: Vec<f64> },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SharpnessSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_EIG_TOL,
            max_iters: DEFAULT_EIG_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub capacities: Vec<usize>,
    pub kappas: Vec<f64>,
    pub modes: Vec<TuneMode>,
    /// Adds classical heavy-ball rows (written with `C = 0`).
    #[serde(default = "yes")]
    pub heavy_ball: bool,
    #[serde(default)]
    pub grids: RateGrids,
}

fn yes() -> bool {
    true
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            capacities: vec![5],
            kappas: vec![1.0, 10.0, 100.0, 1000.0],
            modes: vec![TuneMode::TuneBoth, TuneMode::FixedBeta(0.9)],
            heavy_ball: true,
            grids: RateGrids::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_surface")]
    pub surface: SurfaceSpec,
    /// Surfaces for `seed_table`; other experiments use `surface`.
    #[serde(default)]
    pub surfaces: Vec<SurfaceSpec>,
    #[serde(default)]
    pub optimizers: Vec<OptimizerConfig>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<Seed>,
    #[serde(default = "default_init")]
    pub init: InitMode,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Also write full parameter snapshots (`theta.csv`) for trajectories.
    #[serde(default)]
    pub record_theta: bool,
    #[serde(default)]
    pub sharpness: SharpnessSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_sharpness: Option<MSharpnessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_surface() -> SurfaceSpec {
    SurfaceSpec::Ackley
}
fn default_steps() -> usize {
    500
}
fn default_seeds() -> Vec<Seed> {
    (0..10).map(Seed).collect()
}
fn default_init() -> InitMode {
    InitMode::Uniform
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            surface: default_surface(),
            surfaces: Vec::new(),
            optimizers: Vec::new(),
            steps: default_steps(),
            schedule: Schedule::default(),
            seeds: default_seeds(),
            init: default_init(),
            output: default_output(),
            record_theta: false,
            sharpness: SharpnessSettings::default(),
            m_sharpness: None,
            sweep: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        let needs_optimizers = !matches!(self.experiment, ExperimentKind::ConvergenceSweep);
        if needs_optimizers && self.optimizers.is_empty() {
            return Err(Error::Config("no optimizers configured".into()));
        }
        for o in &self.optimizers {
            o.validate()?;
        }
        if let InitMode::Fixed { point } = &self.init {
            if point.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("fixed init point must be finite".into()));
            }
        }
        Ok(())
    }
}
