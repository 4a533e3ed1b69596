//! Spectral convergence analysis of the simplified momentum-buffer recursion
//! on quadratics.
//!
//! With a scalar curvature `h`, the recursion
//!
//! ```text
//! m_t     = β m_{t-1} + h θ_t
//! θ_{t+1} = θ_t - α [ m_t + (1/C)(m_{t-1} + ... + m_{t-C}) ]
//! ```
//!
//! is linear in the state `V_t = [θ_t, θ_{t-1}, m_{t-1}, ..., m_{t-C}]`, so
//! `V_{t+1} = A_h V_t` with a `(C+2) x (C+2)` companion matrix. The asymptotic
//! rate is the spectral radius of `A_h`; the worst case over `h ∈ [μ, L]` is
//! then minimised over the step size and momentum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CompanionMatrix {
    pub matrix: Matrix,
    pub alpha: f64,
    pub beta: f64,
    pub capacity: usize,
    pub h: f64,
}

impl CompanionMatrix {
    pub fn side(&self) -> usize {
        self.matrix.rows()
    }

    /// `V_{t+1} = A V_t`.
    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        self.matrix.matvec(state)
    }
}

/// Builds `A_h` for the simplified recursion. `α = 0` is accepted and gives a
/// stationary `θ`.
pub fn build_companion(alpha: f64, beta: f64, capacity: usize, h: f64) -> Result<CompanionMatrix> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
    }
    if capacity == 0 {
        return Err(Error::InvalidParameter("capacity must be at least 1".into()));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("curvature must be positive, got {h}")));
    }
    let c = capacity as f64;
    let n = capacity + 2;
    let mut a = Matrix::zeros(n, n);
    a[(0, 0)] = 1.0 - alpha * h;
    a[(0, 2)] = -alpha * (beta + 1.0 / c);
    for j in 3..n {
        a[(0, j)] = -alpha / c;
    }
    a[(1, 0)] = 1.0;
    a[(2, 0)] = h;
    a[(2, 2)] = beta;
    for i in 3..n {
        a[(i, i - 1)] = 1.0;
    }
    Ok(CompanionMatrix {
        matrix: a,
        alpha,
        beta,
        capacity,
        h,
    })
}

/// Classical heavy-ball momentum `θ_{t+1} = θ_t - α h θ_t + β (θ_t - θ_{t-1})`
/// over the state `[θ_t, θ_{t-1}]`.
pub fn heavy_ball_companion(alpha: f64, beta: f64, h: f64) -> Matrix {
    Matrix::from_rows(&[vec![1.0 - alpha * h + beta, -beta], vec![1.0, 0.0]])
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.modulus()).fold(0.0, f64::max))
}

/// Gelfand estimate `‖A^(2^k)‖₂^(1/2^k)`, renormalising after every squaring.
pub fn gelfand_radius(a: &Matrix, k: u32) -> f64 {
    let n0 = a.spectral_norm();
    if n0 == 0.0 {
        return 0.0;
    }
    let mut b = a.scale(1.0 / n0);
    let mut log_scale = n0.ln();
    for _ in 0..k {
        b = b.matmul(&b);
        log_scale *= 2.0;
        let n = b.spectral_norm();
        if n == 0.0 {
            return 0.0;
        }
        b = b.scale(1.0 / n);
        log_scale += n.ln();
    }
    (log_scale / f64::powi(2.0, k as i32)).exp()
}

/// [`spectral_radius`] cross-checked against [`gelfand_radius`] with `k = 12`;
/// disagreement above `1e-3` is an error.
pub fn spectral_radius_checked(a: &Matrix) -> Result<f64> {
    let qr = spectral_radius(a)?;
    let gelfand = gelfand_radius(a, 12);
    if (qr - gelfand).abs() > 1e-3 {
        return Err(Error::Domain(format!(
            "QR spectral radius {qr} disagrees with Gelfand estimate {gelfand}"
        )));
    }
    Ok(qr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub rho: f64,
    pub argmax_h: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

/// Which linear recursion to analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CriticalMomenta { capacity: usize },
    HeavyBall,
}

impl Method {
    pub fn matrix(&self, alpha: f64, beta: f64, h: f64) -> Result<Matrix> {
        match *self {
            Method::CriticalMomenta { capacity } => Ok(build_companion(alpha, beta, capacity, h)?.matrix),
            Method::HeavyBall => Ok(heavy_ball_companion(alpha, beta, h)),
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn worst_case(method: Method, alpha: f64, beta: f64, hs: &[f64]) -> Result<(f64, f64)> {
    let mut worst = (f64::NEG_INFINITY, hs[0]);
    for &h in hs {
        let r = spectral_radius(&method.matrix(alpha, beta, h)?)?;
        if r > worst.0 {
            worst = (r, h);
        }
    }
    Ok(worst)
}

/// `max_{h ∈ [μ, L]} ρ(A_h)` over a log-spaced grid of `h_grid_size` points
/// that includes both endpoints.
pub fn worst_case_rate(
    alpha: f64,
    beta: f64,
    capacity: usize,
    mu: f64,
    l: f64,
    h_grid_size: usize,
) -> Result<RateResult> {
    worst_case_rate_for(Method::CriticalMomenta { capacity }, alpha, beta, mu, l, h_grid_size)
}

pub fn worst_case_rate_for(
    method: Method,
    alpha: f64,
    beta: f64,
    mu: f64,
    l: f64,
    h_grid_size: usize,
) -> Result<RateResult> {
    if !(mu > 0.0 && mu <= l) {
        return Err(Error::InvalidParameter(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    if h_grid_size == 0 {
        return Err(Error::InvalidParameter("h grid must be nonempty".into()));
    }
    let hs = log_grid(mu, l, h_grid_size);
    let (rho, argmax_h) = worst_case(method, alpha, beta, &hs)?;
    Ok(RateResult {
        rho,
        argmax_h,
        alpha: Some(alpha),
        beta: Some(beta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    TuneBoth,
    FixedBeta(f64),
}

impl TuneMode {
    pub fn label(&self) -> String {
        match self {
            TuneMode::TuneBoth => "tune_both".into(),
            TuneMode::FixedBeta(b) => format!("fixed_beta_{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateGrids {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_points: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_points: usize,
    pub h_points: usize,
    /// Samples per zoom level.
    pub zoom_points: usize,
    /// Zoom levels after each coarse scan (0 keeps the plain grid minimum).
    pub zoom_levels: usize,
}

impl Default for RateGrids {
    fn default() -> Self {
        Self {
            alpha_min: 1e-6,
            alpha_max: 2.0,
            alpha_points: 80,
            beta_min: 0.0,
            beta_max: 0.99,
            beta_points: 34,
            h_points: 200,
            zoom_points: 9,
            zoom_levels: 40,
        }
    }
}

/// Minimizes `f` over `grid`, then repeatedly resamples `points` evenly spaced
/// values between the incumbent's two neighbours until the bracket is narrower
/// than `tol`. Ties keep the smaller coordinate. Returns `(value, x, extra)`.
fn zoom_min<T: Send>(
    grid: Vec<f64>,
    points: usize,
    levels: usize,
    tol: f64,
    f: &(dyn Fn(f64) -> Result<(f64, T)> + Sync),
) -> Result<(f64, f64, T)> {
    let mut xs = grid;
    let mut best: Option<(f64, f64, T)> = None;
    for level in 0..=levels {
        let values: Vec<Result<(f64, T)>> = xs.par_iter().map(|&x| f(x)).collect();
        for (&x, v) in xs.iter().zip(values) {
            let (r, extra) = v?;
            let wins = match &best {
                None => true,
                Some((br, bx, _)) => r < *br || (r == *br && x < *bx),
            };
            if wins {
                best = Some((r, x, extra));
            }
        }
        let bx = best.as_ref().expect("grid is nonempty").1;
        if level == levels || xs.len() < 2 {
            break;
        }
        let i = (0..xs.len())
            .min_by(|&a, &b| (xs[a] - bx).abs().total_cmp(&(xs[b] - bx).abs()))
            .unwrap();
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(xs.len() - 1)];
        if hi - lo < tol {
            break;
        }
        xs = linear_grid(lo, hi, points.max(3));
    }
    Ok(best.expect("grid is nonempty"))
}

/// `ρ* = min_{α, β} max_h ρ(A_h)` with `μ = 1`, `L = κ`.
///
/// A coarse grid (log-spaced α, linear β) locates the basin. The optimum
/// usually sits where several `h` constraints meet, at the tip of a thin wedge
/// with square-root cliffs on both sides, so local descent stalls; instead
/// nested one-dimensional zooms refine it: β over ±2 coarse steps around the
/// coarse winner and, for each β, ln α over ±4 coarse steps.
pub fn optimal_rate(method: Method, kappa: f64, mode: TuneMode, grids: &RateGrids) -> Result<RateResult> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(grids.alpha_min > 0.0 && grids.alpha_min <= grids.alpha_max) {
        return Err(Error::InvalidParameter("need 0 < alpha_min <= alpha_max".into()));
    }
    let hs = log_grid(1.0, kappa, grids.h_points.max(1));
    let alphas = log_grid(grids.alpha_min, grids.alpha_max, grids.alpha_points.max(1));
    let betas = match mode {
        TuneMode::TuneBoth => linear_grid(grids.beta_min, grids.beta_max, grids.beta_points.max(1)),
        TuneMode::FixedBeta(b) => vec![b],
    };
    let cells: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let evaluated: Vec<Result<(f64, f64, f64, f64)>> = cells
        .par_iter()
        .map(|&(a, b)| worst_case(method, a, b, &hs).map(|(r, h)| (r, a, b, h)))
        .collect();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for e in evaluated {
        let e = e?;
        let wins = best.map_or(true, |b| {
            e.0 < b.0 || (e.0 == b.0 && (e.1 < b.1 || (e.1 == b.1 && e.2 < b.2)))
        });
        if wins {
            best = Some(e);
        }
    }
    let (rho0, alpha0, beta0, h0) = best.expect("grid is nonempty");
    if grids.zoom_levels == 0 {
        return Ok(RateResult {
            rho: rho0,
            argmax_h: h0,
            alpha: Some(alpha0),
            beta: Some(beta0),
        });
    }

    let tol = 1e-10;
    let (la_lo, la_hi) = (grids.alpha_min.ln(), grids.alpha_max.ln());
    let da = if alphas.len() > 1 {
        (la_hi - la_lo) / (alphas.len() - 1) as f64
    } else {
        0.5
    };
    let inner_grid = linear_grid(
        (alpha0.ln() - 4.0 * da).max(la_lo),
        (alpha0.ln() + 4.0 * da).min(la_hi),
        grids.zoom_points.max(3),
    );
    let inner = |beta: f64| -> Result<(f64, (f64, f64))> {
        let (rho, la, h) = zoom_min(inner_grid.clone(), grids.zoom_points, grids.zoom_levels, tol, &|la| {
            worst_case(method, la.exp(), beta, &hs)
        })?;
        Ok((rho, (la.exp(), h)))
    };
    let (mut rho, mut beta, (mut alpha, mut argmax_h)) = match mode {
        TuneMode::FixedBeta(b) => {
            let (rho, extra) = inner(b)?;
            (rho, b, extra)
        }
        TuneMode::TuneBoth => {
            let db = if betas.len() > 1 {
                (grids.beta_max - grids.beta_min) / (betas.len() - 1) as f64
            } else {
                0.0
            };
            let outer_grid = linear_grid(
                (beta0 - 2.0 * db).max(grids.beta_min),
                (beta0 + 2.0 * db).min(grids.beta_max),
                grids.zoom_points.max(3),
            );
            zoom_min(outer_grid, grids.zoom_points, grids.zoom_levels, tol, &inner)?
        }
    };
    // The zoom never does worse than the coarse winner it started from.
    if rho0 < rho {
        (rho, alpha, beta, argmax_h) = (rho0, alpha0, beta0, h0);
    }
    Ok(RateResult {
        rho,
        argmax_h,
        alpha: Some(alpha),
        beta: Some(beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_layout_for_one_slot() {
        let a = build_companion(0.1, 0.9, 1, 2.0).unwrap();
        assert_eq!(a.side(), 3);
        let row0 = a.matrix.row(0);
        assert!((row0[0] - 0.8).abs() < 1e-15);
        assert_eq!(row0[1], 0.0);
        assert!((row0[2] + 0.1 * 1.9).abs() < 1e-15);
        assert_eq!(a.matrix.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(a.matrix.row(2), &[2.0, 0.0, 0.9]);
    }

    #[test]
    fn zero_step_is_stationary() {
        let a = build_companion(0.0, 0.5, 4, 3.0).unwrap();
        assert_eq!(a.matrix.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(spectral_radius(&a.matrix).unwrap() >= 1.0);
        let r = worst_case_rate(0.0, 0.5, 4, 1.0, 10.0, 20).unwrap();
        assert_eq!(r.rho, 1.0);
    }

    #[test]
    fn companion_rejects_bad_input() {
        assert!(build_companion(-0.1, 0.5, 1, 1.0).is_err());
        assert!(build_companion(0.1, 1.0, 1, 1.0).is_err());
        assert!(build_companion(0.1, 0.5, 0, 1.0).is_err());
        assert!(build_companion(0.1, 0.5, 1, 0.0).is_err());
    }

    #[test]
    fn simple_radii() {
        assert_eq!(spectral_radius(&Matrix::from_rows(&[vec![0.5]])).unwrap(), 0.5);
        let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
        let rot = Matrix::from_rows(&[vec![0.8 * c, -0.8 * s], vec![0.8 * s, 0.8 * c]]);
        assert!((spectral_radius(&rot).unwrap() - 0.8).abs() < 1e-14);
        assert!((spectral_radius_checked(&rot).unwrap() - 0.8).abs() < 1e-14);
    }

    #[test]
    fn heavy_ball_optimal_tuning_rate() {
        // Oracle: optimal heavy ball at κ=100 contracts at (√κ-1)/(√κ+1) = 9/11.
        let kappa: f64 = 100.0;
        let sk = kappa.sqrt();
        let alpha = 4.0 / (sk + 1.0).powi(2);
        let beta = ((sk - 1.0) / (sk + 1.0)).powi(2);
        let r = worst_case_rate_for(Method::HeavyBall, alpha, beta, 1.0, kappa, 200).unwrap();
        assert!((r.rho - 9.0 / 11.0).abs() < 1e-4, "{}", r.rho);
    }

    #[test]
    fn single_curvature_reduces_to_spectral_radius() {
        let r = worst_case_rate(0.3, 0.5, 3, 2.0, 2.0, 50).unwrap();
        let direct = spectral_radius(&build_companion(0.3, 0.5, 3, 2.0).unwrap().matrix).unwrap();
        assert_eq!(r.rho, direct);
        assert_eq!(r.argmax_h, 2.0);
    }

    #[test]
    fn grids_include_endpoints() {
        let g = log_grid(1.0, 1000.0, 200);
        assert_eq!((g[0], g[199], g.len()), (1.0, 1000.0, 200));
        assert_eq!(log_grid(3.0, 3.0, 10), vec![3.0]);
    }
}
