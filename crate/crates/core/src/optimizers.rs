//! Parameter update rules.
//!
//! Adam, the two memory-augmented Adam variants (critical gradients and
//! critical momenta), their SGD counterparts, the simplified momentum-buffer
//! recursion analysed by [`crate::convergence`], a SAM wrapper that composes
//! with any of them, and the step-decay learning-rate schedule.
//!
//! Adam here places `ε` inside the square root: `θ ← θ - α m̂ / √(v̂ + ε)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::analysis::cancellation_ratio;
use crate::buffer::CriticalBuffer;
use crate::error::{check_dim, Error, Result};
use crate::losses::LossSurface;
use crate::vector::{norm, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    SgdCg,
    SgdCm,
    Adam,
    AdamCg,
    AdamCm,
    SimpleCm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Sgd,
        Algorithm::SgdCg,
        Algorithm::SgdCm,
        Algorithm::Adam,
        Algorithm::AdamCg,
        Algorithm::AdamCm,
        Algorithm::SimpleCm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::SgdCg => "sgd_cg",
            Algorithm::SgdCm => "sgd_cm",
            Algorithm::Adam => "adam",
            Algorithm::AdamCg => "adam_cg",
            Algorithm::AdamCm => "adam_cm",
            Algorithm::SimpleCm => "simple_cm",
        }
    }

    pub fn uses_buffer(self) -> bool {
        !matches!(self, Algorithm::Sgd | Algorithm::Adam)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer '{s}'")))
    }
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(default)]
    pub sam: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sam_rho: Option<f64>,
    /// Momentum of the simplified recursion `m ← βm + g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl OptimizerConfig {
    fn base(algorithm: Algorithm, lr: f64) -> Self {
        Self {
            algorithm,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            capacity: None,
            decay: None,
            sam: false,
            sam_rho: None,
            beta: None,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::base(Algorithm::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::base(Algorithm::Adam, lr)
    }

    /// Any of the buffered `*_cg` / `*_cm` algorithms.
    pub fn buffered(algorithm: Algorithm, lr: f64, capacity: usize, decay: f64) -> Self {
        Self {
            capacity: Some(capacity),
            decay: Some(decay),
            ..Self::base(algorithm, lr)
        }
    }

    pub fn adam_cg(lr: f64, capacity: usize, decay: f64) -> Self {
        Self::buffered(Algorithm::AdamCg, lr, capacity, decay)
    }

    pub fn adam_cm(lr: f64, capacity: usize, decay: f64) -> Self {
        Self::buffered(Algorithm::AdamCm, lr, capacity, decay)
    }

    pub fn simple_cm(lr: f64, beta: f64, capacity: usize) -> Self {
        Self {
            capacity: Some(capacity),
            beta: Some(beta),
            ..Self::base(Algorithm::SimpleCm, lr)
        }
    }

    pub fn with_sam(mut self, rho: f64) -> Self {
        self.sam = true;
        self.sam_rho = Some(rho);
        self
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    /// Display label such as `adam_sam_cm`.
    pub fn label(&self) -> String {
        let name = self.algorithm.name();
        if !self.sam {
            return name.to_string();
        }
        match name.split_once('_') {
            Some((head, tail)) => format!("{head}_sam_{tail}"),
            None => format!("{name}_sam"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be finite and nonnegative, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        let alg = self.algorithm;
        match alg {
            Algorithm::Sgd | Algorithm::Adam => {
                if self.capacity.is_some() || self.decay.is_some() {
                    return bad(format!("{} takes no buffer settings", alg.name()));
                }
            }
            Algorithm::SimpleCm => {
                if self.capacity.is_none() {
                    return bad("simple_cm requires capacity".into());
                }
                match self.beta {
                    Some(b) if (0.0..1.0).contains(&b) => {}
                    Some(b) => return bad(format!("beta must lie in [0, 1), got {b}")),
                    None => return bad("simple_cm requires beta".into()),
                }
            }
            _ => {
                if self.capacity.is_none() || self.decay.is_none() {
                    return bad(format!("{} requires capacity and decay", alg.name()));
                }
            }
        }
        if self.capacity == Some(0) {
            return bad("capacity must be positive".into());
        }
        if let Some(d) = self.decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("decay must lie in (0, 1], got {d}"));
            }
        }
        if self.sam {
            match self.sam_rho {
                Some(r) if r >= 0.0 && r.is_finite() => {}
                Some(r) => return bad(format!("sam_rho must be nonnegative, got {r}")),
                None => return bad("sam requires sam_rho".into()),
            }
        } else if self.sam_rho.is_some() {
            return bad("sam_rho given without sam".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ParamVector,
    pub v: ParamVector,
    pub buffer: Option<CriticalBuffer>,
    /// Last `C` momenta of the simplified recursion, newest at the back.
    pub fifo: VecDeque<ParamVector>,
    /// Cancellation index of the most recent aggregation, when defined.
    pub last_cancellation: Option<f64>,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let buffer = match config.algorithm {
            Algorithm::Sgd | Algorithm::Adam | Algorithm::SimpleCm => None,
            _ => Some(CriticalBuffer::new(
                config.capacity.unwrap_or_default(),
                config.decay.unwrap_or(1.0),
            )?),
        };
        Ok(Self {
            step: 0,
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            buffer,
            fifo: VecDeque::new(),
            last_cancellation: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    fn buffer_mut(&mut self) -> Result<&mut CriticalBuffer> {
        self.buffer
            .as_mut()
            .ok_or_else(|| Error::Config("algorithm needs a buffer but state has none".into()))
    }
}

fn check_inputs(state: &OptimizerState, theta: &[f64], g: &[f64]) -> Result<()> {
    check_dim(state.dim(), theta.len())?;
    check_dim(state.dim(), g.len())?;
    if !g.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

/// Adaptive update shared by all Adam variants: bias-correct the first-moment
/// quantity with `1-β₁^t` and `v` with `1-β₂^t`, then step.
fn adam_update(state: &OptimizerState, config: &OptimizerConfig, theta: &[f64], first: &[f64]) -> ParamVector {
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    theta
        .iter()
        .zip(first)
        .zip(state.v.iter())
        .map(|((th, a), v)| th - config.lr * (a / c1) / (v / c2 + config.eps).sqrt())
        .collect()
}

pub fn adam_step(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    theta: &[f64],
    g: &[f64],
) -> Result<ParamVector> {
    check_inputs(state, theta, g)?;
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    for ((m, v), gi) in state.m.iter_mut().zip(state.v.iter_mut()).zip(g) {
        *m = b1 * *m + (1.0 - b1) * gi;
        *v = b2 * *v + (1.0 - b2) * gi * gi;
    }
    let m = state.m.clone();
    Ok(adam_update(state, config, theta, &m))
}

/// Adam with critical momenta. Per step: update `m`, aggregate
/// `a = m + mean(buffer)`, update `v` with `a²`, step with the bias-corrected
/// `a`, then offer `(‖g‖, m)` to the buffer and decay its priorities.
pub fn adam_cm_step(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    theta: &[f64],
    g: &[f64],
) -> Result<ParamVector> {
    check_inputs(state, theta, g)?;
    state.step += 1;
    let b1 = config.beta1;
    for (m, gi) in state.m.iter_mut().zip(g) {
        *m = b1 * *m + (1.0 - b1) * gi;
    }
    let dim = state.dim();
    let buffer = state.buffer_mut()?;
    let mean = buffer.mean(dim);
    let nonempty = !buffer.is_empty();
    let agg: Vec<f64> = state.m.iter().zip(mean.iter()).map(|(m, c)| m + c).collect();
    state.last_cancellation = if nonempty {
        aggregate_cancellation(&state.m, &mean)
    } else {
        None
    };
    let b2 = config.beta2;
    for (v, a) in state.v.iter_mut().zip(&agg) {
        *v = b2 * *v + (1.0 - b2) * a * a;
    }
    let next = adam_update(state, config, theta, &agg);
    let m = state.m.clone();
    let buffer = state.buffer_mut()?;
    buffer.maybe_insert(norm(g), &m)?;
    buffer.decay_priorities();
    Ok(next)
}

/// Adam with critical gradients: `a = g + mean(buffer)` feeds both moments;
/// the raw gradient is offered to the buffer.
pub fn adam_cg_step(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    theta: &[f64],
    g: &[f64],
) -> Result<ParamVector> {
    check_inputs(state, theta, g)?;
    state.step += 1;
    let dim = state.dim();
    let buffer = state.buffer_mut()?;
    let mean = buffer.mean(dim);
    let nonempty = !buffer.is_empty();
    state.last_cancellation = if nonempty {
        aggregate_cancellation(g, &mean)
    } else {
        None
    };
    let (b1, b2) = (config.beta1, config.beta2);
    for (((m, v), gi), c) in state.m.iter_mut().zip(state.v.iter_mut()).zip(g).zip(mean.iter()) {
        let a = gi + c;
        *m = b1 * *m + (1.0 - b1) * a;
        *v = b2 * *v + (1.0 - b2) * a * a;
    }
    let m = state.m.clone();
    let next = adam_update(state, config, theta, &m);
    let buffer = state.buffer_mut()?;
    buffer.maybe_insert(norm(g), g)?;
    buffer.decay_priorities();
    Ok(next)
}

/// Plain SGD and its buffered variants.
///
/// * `sgd`: `θ - α g`
/// * `sgd_cg`: `θ - α (g + mean(buffer))`, buffer stores gradients
/// * `sgd_cm`: `m ← β₁m + (1-β₁)g`, `θ - α (m + mean(buffer))`, buffer stores momenta
pub fn sgd_family_step(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    theta: &[f64],
    g: &[f64],
) -> Result<ParamVector> {
    check_inputs(state, theta, g)?;
    state.step += 1;
    let lr = config.lr;
    match config.algorithm {
        Algorithm::Sgd => Ok(theta.iter().zip(g).map(|(t, gi)| t - lr * gi).collect()),
        Algorithm::SgdCg => {
            let dim = state.dim();
            let buffer = state.buffer_mut()?;
            let mean = buffer.mean(dim);
            let cancel = if buffer.is_empty() {
                None
            } else {
                aggregate_cancellation(g, &mean)
            };
            let next = theta
                .iter()
                .zip(g)
                .zip(mean.iter())
                .map(|((t, gi), c)| t - lr * (gi + c))
                .collect();
            buffer.maybe_insert(norm(g), g)?;
            buffer.decay_priorities();
            state.last_cancellation = cancel;
            Ok(next)
        }
        Algorithm::SgdCm => {
            let b1 = config.beta1;
            for (m, gi) in state.m.iter_mut().zip(g) {
                *m = b1 * *m + (1.0 - b1) * gi;
            }
            let dim = state.dim();
            let m = state.m.clone();
            let buffer = state.buffer_mut()?;
            let mean = buffer.mean(dim);
            let cancel = if buffer.is_empty() {
                None
            } else {
                aggregate_cancellation(&m, &mean)
            };
            let next = theta
                .iter()
                .zip(m.iter())
                .zip(mean.iter())
                .map(|((t, mi), c)| t - lr * (mi + c))
                .collect();
            buffer.maybe_insert(norm(g), &m)?;
            buffer.decay_priorities();
            state.last_cancellation = cancel;
            Ok(next)
        }
        other => Err(Error::Config(format!(
            "{} is not an SGD-family algorithm",
            other.name()
        ))),
    }
}

/// The simplified recursion `m ← βm + g`,
/// `θ ← θ - α (m + (1/C) Σ_{k=1..C} m_{t-k})`, where the buffer holds exactly
/// the previous `C` momenta (zeros before they exist).
pub fn simple_cm_step(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    theta: &[f64],
    g: &[f64],
) -> Result<ParamVector> {
    check_inputs(state, theta, g)?;
    let capacity = config
        .capacity
        .ok_or_else(|| Error::Config("simple_cm requires capacity".into()))?;
    let beta = config
        .beta
        .ok_or_else(|| Error::Config("simple_cm requires beta".into()))?;
    state.step += 1;
    for (m, gi) in state.m.iter_mut().zip(g) {
        *m = beta * *m + gi;
    }
    let mut sum = vec![0.0; state.dim()];
    for past in &state.fifo {
        for (s, p) in sum.iter_mut().zip(past.iter()) {
            *s += p;
        }
    }
    let c = capacity as f64;
    let next = theta
        .iter()
        .zip(state.m.iter())
        .zip(&sum)
        .map(|((t, m), s)| t - config.lr * (m + s / c))
        .collect();
    state.fifo.push_back(state.m.clone());
    while state.fifo.len() > capacity {
        state.fifo.pop_front();
    }
    Ok(next)
}

/// Dispatches to the update rule named by `config.algorithm`.
pub fn step(state: &mut OptimizerState, config: &OptimizerConfig, theta: &[f64], g: &[f64]) -> Result<ParamVector> {
    match config.algorithm {
        Algorithm::Adam => adam_step(state, config, theta, g),
        Algorithm::AdamCg => adam_cg_step(state, config, theta, g),
        Algorithm::AdamCm => adam_cm_step(state, config, theta, g),
        Algorithm::Sgd | Algorithm::SgdCg | Algorithm::SgdCm => sgd_family_step(state, config, theta, g),
        Algorithm::SimpleCm => simple_cm_step(state, config, theta, g),
    }
}

fn aggregate_cancellation(current: &[f64], mean: &[f64]) -> Option<f64> {
    cancellation_ratio(current, mean).ok()
}

/// Gradient at the SAM ascent point `θ + ρ g/‖g‖` (just `g` when `g = 0`).
pub fn sam_gradient(surface: &LossSurface, theta: &[f64], rho: f64) -> Result<ParamVector> {
    let g = surface.eval_grad(theta)?;
    let gn = g.norm();
    if gn == 0.0 || rho == 0.0 {
        return Ok(g);
    }
    let perturbed: Vec<f64> = theta.iter().zip(g.iter()).map(|(t, gi)| t + rho * gi / gn).collect();
    let g_sam = surface.eval_grad(&perturbed)?;
    if !g_sam.is_finite() {
        return Err(Error::NonFinite("perturbed gradient".into()));
    }
    Ok(g_sam)
}

/// One step of `inner` driven by the SAM gradient, taken from the unperturbed `θ`.
pub fn sam_outer_step<F>(
    inner: F,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    surface: &LossSurface,
    theta: &[f64],
) -> Result<ParamVector>
where
    F: FnOnce(&mut OptimizerState, &OptimizerConfig, &[f64], &[f64]) -> Result<ParamVector>,
{
    let rho = config
        .sam_rho
        .ok_or_else(|| Error::Config("sam requires sam_rho".into()))?;
    let g_sam = sam_gradient(surface, theta, rho)?;
    inner(state, config, theta, &g_sam)
}

/// Optimizer config plus its mutable state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

/// What one surface-driven step produced.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub theta: ParamVector,
    /// Gradient consumed by the update rule (the SAM gradient when enabled).
    pub grad: ParamVector,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        let state = OptimizerState::new(&config, dim)?;
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }

    pub fn buffer(&self) -> Option<&CriticalBuffer> {
        self.state.buffer.as_ref()
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, theta: &[f64], g: &[f64]) -> Result<ParamVector> {
        step(&mut self.state, &self.config, theta, g)
    }

    /// Evaluates the (SAM) gradient on `surface` and applies one update.
    pub fn step_on(&mut self, surface: &LossSurface, theta: &[f64]) -> Result<StepInfo> {
        let grad = if self.config.sam {
            sam_gradient(surface, theta, self.config.sam_rho.unwrap_or(0.0))?
        } else {
            surface.eval_grad(theta)?
        };
        let theta = self.step(theta, &grad)?;
        Ok(StepInfo { theta, grad })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Base rate for the first half of training, a tenth of it afterwards.
    HalfDecay,
}

pub fn lr_schedule_at(base: f64, t: usize, total: usize, mode: Schedule) -> f64 {
    match mode {
        Schedule::Constant => base,
        Schedule::HalfDecay => {
            if 2 * t < total {
                base
            } else {
                base / 10.0
            }
        }
    }
}
