//! Sharpness estimators and trajectory diagnostics.

use serde::{Deserialize, Serialize};

use crate::buffer::CriticalBuffer;
use crate::error::{check_dim, Error, Result};
use crate::losses::LossSurface;
use crate::rng::{Seed, SplitMix64};
use crate::vector::{dot, norm, sub, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub h_max: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

pub const DEFAULT_EIG_TOL: f64 = 1e-6;
pub const DEFAULT_EIG_MAX_ITERS: usize = 1000;

/// Dominant Hessian eigenvalue by power iteration on Hessian-vector products.
///
/// Starts from a seeded random unit vector and stops once the Rayleigh
/// quotient moves by less than `tol`. The reported value is the Rayleigh
/// quotient, so it carries the sign of the largest-magnitude eigenvalue.
pub fn max_hessian_eig(
    surface: &LossSurface,
    theta: &[f64],
    tol: f64,
    max_iters: usize,
    seed: Seed,
) -> Result<SharpnessReport> {
    check_dim(surface.dim(), theta.len())?;
    let mut rng = SplitMix64::new(seed);
    let mut v = rng.unit_vector(theta.len());
    let mut rayleigh = f64::NAN;
    for it in 1..=max_iters {
        let w = surface.eval_hvp(theta, &v)?;
        if !w.is_finite() {
            return Err(Error::NonFinite("Hessian-vector product".into()));
        }
        let next = dot(&v, &w);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(SharpnessReport {
                h_max: 0.0,
                iterations_used: it,
                converged: true,
            });
        }
        v = w.iter().map(|x| x / wn).collect();
        let done = (next - rayleigh).abs() < tol;
        rayleigh = next;
        if done {
            return Ok(SharpnessReport {
                h_max: rayleigh,
                iterations_used: it,
                converged: true,
            });
        }
    }
    Ok(SharpnessReport {
        h_max: rayleigh,
        iterations_used: max_iters,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MSharpnessConfig {
    pub radius: f64,
    pub ascent_steps: usize,
    /// Ignored for deterministic toy surfaces, where the whole objective is one batch.
    pub n_batches: usize,
    pub batch_size: usize,
}

impl Default for MSharpnessConfig {
    fn default() -> Self {
        Self {
            radius: 0.05,
            ascent_steps: 20,
            n_batches: 1,
            batch_size: 200,
        }
    }
}

/// Batch-averaged worst-case loss increase inside the `radius` ball.
///
/// Each batch runs projected gradient ascent on the perturbation: start on the
/// boundary along the normalized gradient (or, if the gradient vanishes, along
/// the dominant curvature direction from a seeded power iteration), take
/// `ascent_steps` normalized steps of length `radius / 10`, project back onto
/// the ball after each, and keep the best increase seen. MLP batches are disjoint slices of a seeded shuffle.
pub fn m_sharpness(surface: &LossSurface, theta: &[f64], cfg: &MSharpnessConfig, seed: Seed) -> Result<f64> {
    check_dim(surface.dim(), theta.len())?;
    if !(cfg.radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {}",
            cfg.radius
        )));
    }
    if cfg.ascent_steps == 0 || cfg.n_batches == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("m-sharpness counts must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    match surface {
        LossSurface::Mlp(mlp) => {
            let n = mlp.n_samples();
            if cfg.n_batches * cfg.batch_size > n {
                return Err(Error::InvalidParameter(format!(
                    "{} batches of {} exceed {} samples",
                    cfg.n_batches, cfg.batch_size, n
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size).take(cfg.n_batches) {
                total += ball_ascent(
                    theta,
                    cfg,
                    &mut rng,
                    |x| Ok(mlp.loss_on(x, Some(batch))),
                    |x| Ok(mlp.loss_grad_on(x, Some(batch)).1),
                )?;
            }
            Ok(total / cfg.n_batches as f64)
        }
        _ => ball_ascent(
            theta,
            cfg,
            &mut rng,
            |x| surface.eval_loss(x),
            |x| surface.eval_grad(x).map(ParamVector::into_inner),
        ),
    }
}

fn ball_ascent<L, G>(theta: &[f64], cfg: &MSharpnessConfig, rng: &mut SplitMix64, loss: L, grad: G) -> Result<f64>
where
    L: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let r = cfg.radius;
    let base = loss(theta)?;
    let g = grad(theta)?;
    let gn = norm(&g);
    let mut eps: Vec<f64> = if gn > 0.0 {
        g.iter().map(|x| r * x / gn).collect()
    } else {
        // Stationary point: the steepest second-order ascent direction is the
        // dominant curvature direction, found by power iteration on
        // finite-difference Hessian-vector products.
        let mut v = rng.unit_vector(theta.len());
        let fd = 1e-5;
        for _ in 0..DEFAULT_EIG_MAX_ITERS {
            let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, x)| t + fd * x).collect();
            let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, x)| t - fd * x).collect();
            let hv: Vec<f64> = grad(&plus)?
                .iter()
                .zip(grad(&minus)?)
                .map(|(a, b)| (a - b) / (2.0 * fd))
                .collect();
            let n = norm(&hv);
            if n == 0.0 {
                break;
            }
            let next: Vec<f64> = hv.iter().map(|x| x / n).collect();
            let moved = norm(&sub(&next, &v)).min(norm(&next.iter().zip(&v).map(|(a, b)| a + b).collect::<Vec<_>>()));
            v = next;
            if moved < 1e-10 {
                break;
            }
        }
        v.into_iter().map(|x| r * x).collect()
    };
    let shifted = |e: &[f64]| -> Vec<f64> { theta.iter().zip(e).map(|(t, x)| t + x).collect() };
    let mut best = loss(&shifted(&eps))? - base;
    for _ in 0..cfg.ascent_steps {
        let d = grad(&shifted(&eps))?;
        let dn = norm(&d);
        if dn == 0.0 {
            break;
        }
        for (e, di) in eps.iter_mut().zip(&d) {
            *e += 0.1 * r * di / dn;
        }
        let en = norm(&eps);
        if en > r {
            eps.iter_mut().for_each(|e| *e *= r / en);
        }
        best = best.max(loss(&shifted(&eps))? - base);
    }
    Ok(best)
}

/// Total Euclidean length of a piecewise-linear trajectory.
pub fn path_distance(trajectory: &[ParamVector]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::InvalidParameter("trajectory is empty".into()));
    }
    Ok(trajectory.windows(2).map(|w| norm(&sub(&w[1], &w[0]))).sum())
}

/// `‖g + mean‖ / (‖g‖ + ‖mean‖)`: near 0 when the buffer cancels `g`, 1 when aligned.
pub fn cancellation_ratio(g: &[f64], mean: &[f64]) -> Result<f64> {
    check_dim(g.len(), mean.len())?;
    let denom = norm(g) + norm(mean);
    if denom == 0.0 {
        return Err(Error::Domain("cancellation index undefined for zero vectors".into()));
    }
    let sum: Vec<f64> = g.iter().zip(mean).map(|(a, b)| a + b).collect();
    Ok((norm(&sum) / denom).min(1.0))
}

pub fn cancellation_index(buffer: &CriticalBuffer, g: &[f64]) -> Result<f64> {
    if buffer.is_empty() {
        return Err(Error::Domain("cancellation index needs a nonempty buffer".into()));
    }
    cancellation_ratio(g, &buffer.mean(g.len()))
}
