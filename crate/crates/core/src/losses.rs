//! Objective functions with analytic gradients.
//!
//! Every surface exposes its value, gradient and a Hessian-vector product.
//! The HVP is exact for the quadratic and sharp/flat families (their Hessians
//! are constant or piecewise constant) and a central difference of gradients
//! everywhere else.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{Seed, SplitMix64};
use crate::vector::{axpy, norm, ParamVector};

/// Per-coordinate closed interval used to sample initial points.
pub type Bounds = Vec<(f64, f64)>;

#[derive(Debug, Clone)]
pub enum LossSurface {
    Ackley,
    GoldsteinPrice,
    Levy2D,
    AckleyRosenbrock,
    /// `sum_d min(x_d^2, s (x_d - 1)^2)`: flat minimum at the origin, sharp one at `1`.
    SharpFlat {
        s: f64,
        dim: usize,
    },
    /// `0.5 θᵀ H θ` with symmetric `H`.
    Quadratic {
        hessian: Matrix,
    },
    Mlp(MlpLoss),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
}

impl LossSurface {
    pub fn sharp_flat(s: f64, dim: usize) -> Result<Self> {
        if !(s > 1.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sharpness coefficient must exceed 1, got {s}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(LossSurface::SharpFlat { s, dim })
    }

    pub fn quadratic(hessian: Matrix) -> Result<Self> {
        if !hessian.is_square() || hessian.rows() == 0 {
            return Err(Error::InvalidParameter(
                "Hessian must be a non-empty square matrix".into(),
            ));
        }
        if !hessian.is_symmetric(1e-12) {
            return Err(Error::InvalidParameter("Hessian must be symmetric".into()));
        }
        Ok(LossSurface::Quadratic { hessian })
    }

    pub fn quadratic_diag(diag: &[f64]) -> Result<Self> {
        Self::quadratic(Matrix::from_diag(diag))
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSurface::Ackley => "ackley",
            LossSurface::GoldsteinPrice => "goldstein_price",
            LossSurface::Levy2D => "levy",
            LossSurface::AckleyRosenbrock => "ackley_rosenbrock",
            LossSurface::SharpFlat { .. } => "sharpflat",
            LossSurface::Quadratic { .. } => "quadratic",
            LossSurface::Mlp(_) => "mlp",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LossSurface::Ackley | LossSurface::GoldsteinPrice | LossSurface::Levy2D | LossSurface::AckleyRosenbrock => {
                2
            }
            LossSurface::SharpFlat { dim, .. } => *dim,
            LossSurface::Quadratic { hessian } => hessian.rows(),
            LossSurface::Mlp(m) => m.num_params(),
        }
    }

    pub fn domain_bounds(&self) -> Bounds {
        let (lo, hi) = match self {
            LossSurface::Ackley => (-5.0, 5.0),
            LossSurface::GoldsteinPrice => (-2.0, 2.0),
            LossSurface::Levy2D => (-10.0, 10.0),
            LossSurface::AckleyRosenbrock => (-2.0, 4.0),
            LossSurface::SharpFlat { .. } => (-5.0, 5.0),
            LossSurface::Quadratic { .. } => (-1.0, 1.0),
            LossSurface::Mlp(_) => (-1.0, 1.0),
        };
        vec![(lo, hi); self.dim()]
    }

    /// Samples a point uniformly in [`domain_bounds`](Self::domain_bounds).
    pub fn sample_point(&self, rng: &mut SplitMix64) -> ParamVector {
        self.domain_bounds()
            .iter()
            .map(|&(lo, hi)| rng.uniform(lo, hi))
            .collect()
    }

    pub fn eval_loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let value = match self {
            LossSurface::Ackley => ackley(theta[0], theta[1]),
            LossSurface::GoldsteinPrice => gp_value(theta[0], theta[1])?,
            LossSurface::Levy2D => levy(theta[0], theta[1]),
            LossSurface::AckleyRosenbrock => ackley_rosenbrock(theta[0], theta[1]),
            LossSurface::SharpFlat { s, .. } => theta.iter().map(|&x| sharp_flat_branch(x, *s).0).sum(),
            LossSurface::Quadratic { hessian } => {
                0.5 * hessian.matvec(theta).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
            }
            LossSurface::Mlp(m) => m.loss_on(theta, None),
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} loss is not finite at {:?}",
                self.name(),
                theta
            )));
        }
        Ok(value)
    }

    pub fn eval_grad(&self, theta: &[f64]) -> Result<ParamVector> {
        check_dim(self.dim(), theta.len())?;
        let g = match self {
            LossSurface::Ackley => ackley_grad(theta[0], theta[1]).to_vec(),
            LossSurface::GoldsteinPrice => gp_grad(theta[0], theta[1])?.to_vec(),
            LossSurface::Levy2D => levy_grad(theta[0], theta[1]).to_vec(),
            LossSurface::AckleyRosenbrock => ackley_rosenbrock_grad(theta[0], theta[1]).to_vec(),
            LossSurface::SharpFlat { s, .. } => theta.iter().map(|&x| sharp_flat_branch(x, *s).1).collect(),
            LossSurface::Quadratic { hessian } => hessian.matvec(theta),
            LossSurface::Mlp(m) => m.loss_grad_on(theta, None).1,
        };
        Ok(ParamVector(g))
    }

    pub fn eval_hvp(&self, theta: &[f64], v: &[f64]) -> Result<ParamVector> {
        check_dim(self.dim(), theta.len())?;
        check_dim(self.dim(), v.len())?;
        match self {
            LossSurface::Quadratic { hessian } => Ok(ParamVector(hessian.matvec(v))),
            LossSurface::SharpFlat { s, .. } => Ok(theta
                .iter()
                .zip(v)
                .map(|(&x, &vi)| sharp_flat_branch(x, *s).2 * vi)
                .collect()),
            _ => {
                let h = 1e-5 / norm(v).max(1.0);
                let gp = self.eval_grad(&axpy(theta, h, v))?;
                let gm = self.eval_grad(&axpy(theta, -h, v))?;
                Ok(gp.iter().zip(gm.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect())
            }
        }
    }

    /// For the sharp/flat family: is any coordinate within `tol` of a branch switch?
    pub fn near_kink(&self, theta: &[f64], tol: f64) -> bool {
        match self {
            LossSurface::SharpFlat { s, .. } => {
                let (k1, k2) = sharp_flat_kinks(*s);
                theta.iter().any(|x| (x - k1).abs() < tol || (x - k2).abs() < tol)
            }
            _ => false,
        }
    }
}

/// Central-difference gradient check with step `1e-5 * max(1, |x_d|)`.
/// Relative error per coordinate uses the denominator `max(1, |analytic_d|)`.
pub fn check_grad(surface: &LossSurface, theta: &[f64]) -> Result<GradReport> {
    let analytic = surface.eval_grad(theta)?;
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
    };
    let mut probe = theta.to_vec();
    for d in 0..theta.len() {
        let h = 1e-5 * theta[d].abs().max(1.0);
        probe[d] = theta[d] + h;
        let fp = surface.eval_loss(&probe)?;
        probe[d] = theta[d] - h;
        let fm = surface.eval_loss(&probe)?;
        probe[d] = theta[d];
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic[d] - fd).abs() / analytic[d].abs().max(1.0);
        if err > report.max_rel_error {
            report = GradReport {
                max_rel_error: err,
                worst_coordinate: d,
            };
        }
    }
    Ok(report)
}

/// Branch switch points of `min(x^2, s (x-1)^2)`: `√s/(√s+1)` and `√s/(√s-1)`.
pub fn sharp_flat_kinks(s: f64) -> (f64, f64) {
    let r = s.sqrt();
    (r / (r + 1.0), r / (r - 1.0))
}

/// (value, derivative, curvature) of the active branch; ties go to `x^2`.
fn sharp_flat_branch(x: f64, s: f64) -> (f64, f64, f64) {
    let flat = x * x;
    let sharp = s * (x - 1.0) * (x - 1.0);
    if flat <= sharp {
        (flat, 2.0 * x, 2.0)
    } else {
        (sharp, 2.0 * s * (x - 1.0), 2.0 * s)
    }
}

fn ackley(x: f64, y: f64) -> f64 {
    let r = (0.5 * (x * x + y * y)).sqrt();
    let c = 0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos());
    -20.0 * (-0.2 * r).exp() - c.exp() + E + 20.0
}

fn ackley_grad(x: f64, y: f64) -> [f64; 2] {
    let r = (0.5 * (x * x + y * y)).sqrt();
    let c = (0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())).exp();
    // The cone term is not differentiable at the origin; use the zero subgradient.
    let radial = if r > 0.0 { 2.0 * (-0.2 * r).exp() / r } else { 0.0 };
    [
        radial * x + PI * (2.0 * PI * x).sin() * c,
        radial * y + PI * (2.0 * PI * y).sin() * c,
    ]
}

fn ackley_rosenbrock(x: f64, y: f64) -> f64 {
    let r = (0.5 * (x * x + y * y)).sqrt();
    let c = 0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos());
    0.05 * (1.0 - x).powi(2) + 0.05 * (y - x * x).powi(2) + 0.6 * ((-0.2 * r).exp() - c.exp() + E)
}

fn ackley_rosenbrock_grad(x: f64, y: f64) -> [f64; 2] {
    let r = (0.5 * (x * x + y * y)).sqrt();
    let c = (0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())).exp();
    let radial = if r > 0.0 { -0.06 * (-0.2 * r).exp() / r } else { 0.0 };
    let ridge = y - x * x;
    [
        -0.1 * (1.0 - x) - 0.2 * x * ridge + radial * x + 0.6 * PI * (2.0 * PI * x).sin() * c,
        0.1 * ridge + radial * y + 0.6 * PI * (2.0 * PI * y).sin() * c,
    ]
}

const GP_SHIFT: f64 = 8.693;
const GP_SCALE: f64 = 2.427;

/// Goldstein-Price factors and their partial derivatives.
fn gp_parts(x: f64, y: f64) -> ([f64; 3], [f64; 3]) {
    let u = x + y + 1.0;
    let b = 19.0 - 14.0 * x + 3.0 * x * x - 14.0 * y + 6.0 * x * y + 3.0 * y * y;
    let db = -14.0 + 6.0 * x + 6.0 * y;
    let p1 = 1.0 + u * u * b;
    let p1x = 2.0 * u * b + u * u * db;

    let w = 2.0 * x - 3.0 * y;
    let d = 18.0 - 32.0 * x + 12.0 * x * x + 48.0 * y - 36.0 * x * y + 27.0 * y * y;
    let p2 = 30.0 + w * w * d;
    let p2x = 4.0 * w * d + w * w * (-32.0 + 24.0 * x - 36.0 * y);
    let p2y = -6.0 * w * d + w * w * (48.0 - 36.0 * x + 54.0 * y);
    ([p1, p1x, p1x], [p2, p2x, p2y])
}

fn gp_value(x: f64, y: f64) -> Result<f64> {
    let ([p1, ..], [p2, ..]) = gp_parts(x, y);
    let prod = p1 * p2;
    if !prod.is_finite() {
        return Err(Error::NonFinite(format!("Goldstein-Price at ({x}, {y})")));
    }
    if !(prod > 0.0) {
        return Err(Error::Domain(format!(
            "Goldstein-Price log argument {prod} at ({x}, {y})"
        )));
    }
    Ok((prod.ln() - GP_SHIFT) / GP_SCALE)
}

fn gp_grad(x: f64, y: f64) -> Result<[f64; 2]> {
    let ([p1, p1x, p1y], [p2, p2x, p2y]) = gp_parts(x, y);
    if !(p1 * p2).is_finite() {
        return Err(Error::NonFinite(format!("Goldstein-Price at ({x}, {y})")));
    }
    if !(p1 * p2 > 0.0) {
        return Err(Error::Domain(format!(
            "Goldstein-Price log argument {} at ({x}, {y})",
            p1 * p2
        )));
    }
    Ok([(p1x / p1 + p2x / p2) / GP_SCALE, (p1y / p1 + p2y / p2) / GP_SCALE])
}

fn levy(x1: f64, x2: f64) -> f64 {
    let w1 = 1.0 + (x1 - 1.0) / 4.0;
    let w2 = 1.0 + (x2 - 1.0) / 4.0;
    (PI * w1).sin().powi(2)
        + (w1 - 1.0).powi(2) * (1.0 + 10.0 * (PI * w1 + 1.0).sin().powi(2))
        + (w2 - 1.0).powi(2) * (1.0 + (2.0 * PI * w2).sin().powi(2))
}

fn levy_grad(x1: f64, x2: f64) -> [f64; 2] {
    let w1 = 1.0 + (x1 - 1.0) / 4.0;
    let w2 = 1.0 + (x2 - 1.0) / 4.0;
    let s1 = (PI * w1 + 1.0).sin();
    let c1 = (PI * w1 + 1.0).cos();
    let dw1 = PI * (2.0 * PI * w1).sin()
        + 2.0 * (w1 - 1.0) * (1.0 + 10.0 * s1 * s1)
        + (w1 - 1.0).powi(2) * 20.0 * PI * s1 * c1;
    let s2 = (2.0 * PI * w2).sin();
    let c2 = (2.0 * PI * w2).cos();
    let dw2 = 2.0 * (w2 - 1.0) * (1.0 + s2 * s2) + (w2 - 1.0).powi(2) * 4.0 * PI * s2 * c2;
    [dw1 / 4.0, dw2 / 4.0]
}

/// Full-batch cross-entropy of a 2-input, `hidden`-unit tanh, 2-output network
/// on two Gaussian blobs.
///
/// Parameters are flattened as `W1` (row-major, `hidden x 2`), `b1`, `W2`
/// (row-major, `2 x hidden`), `b2`.
#[derive(Debug, Clone)]
pub struct MlpLoss {
    inputs: Vec<[f64; 2]>,
    labels: Vec<usize>,
    hidden: usize,
}

/// Builds the blob-classification MLP objective. Class 0 is centred at
/// `(1.5, 1.5)` and class 1 at `(-1.5, -1.5)`, both with unit covariance.
pub fn make_mlp_loss(data_seed: Seed, n_samples: usize, hidden: usize) -> Result<LossSurface> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    if hidden == 0 {
        return Err(Error::InvalidParameter("hidden width must be positive".into()));
    }
    let mut rng = SplitMix64::new(data_seed);
    let half = n_samples / 2;
    let mut inputs = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = usize::from(i >= half);
        let mean = if label == 0 { 1.5 } else { -1.5 };
        inputs.push([mean + rng.normal(), mean + rng.normal()]);
        labels.push(label);
    }
    Ok(LossSurface::Mlp(MlpLoss { inputs, labels, hidden }))
}

impl MlpLoss {
    pub fn num_params(&self) -> usize {
        self.hidden * 2 + self.hidden + 2 * self.hidden + 2
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.len()
    }

    /// Returns a copy with the samples reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> MlpLoss {
        MlpLoss {
            inputs: perm.iter().map(|&i| self.inputs[i]).collect(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            hidden: self.hidden,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let h = self.hidden;
        (2 * h, 3 * h, 5 * h)
    }

    /// Mean loss over `subset` (all samples when `None`).
    pub fn loss_on(&self, theta: &[f64], subset: Option<&[usize]>) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let h = self.hidden;
        let mut total = 0.0;
        let mut count = 0usize;
        let mut act = vec![0.0; h];
        let mut each = |i: usize| {
            let x = self.inputs[i];
            for j in 0..h {
                act[j] = (theta[2 * j] * x[0] + theta[2 * j + 1] * x[1] + theta[b1 + j]).tanh();
            }
            let logits = [0, 1].map(|k| theta[b2 + k] + (0..h).map(|j| theta[w2 + k * h + j] * act[j]).sum::<f64>());
            let mx = logits[0].max(logits[1]);
            let lse = mx + ((logits[0] - mx).exp() + (logits[1] - mx).exp()).ln();
            total += lse - logits[self.labels[i]];
            count += 1;
        };
        match subset {
            Some(idx) => idx.iter().for_each(|&i| each(i)),
            None => (0..self.inputs.len()).for_each(&mut each),
        }
        total / count as f64
    }

    /// Mean loss and its gradient over `subset`, by backpropagation.
    pub fn loss_grad_on(&self, theta: &[f64], subset: Option<&[usize]>) -> (f64, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let h = self.hidden;
        let mut grad = vec![0.0; theta.len()];
        let mut total = 0.0;
        let mut count = 0usize;
        let mut act = vec![0.0; h];
        let mut each = |i: usize| {
            let x = self.inputs[i];
            for j in 0..h {
                act[j] = (theta[2 * j] * x[0] + theta[2 * j + 1] * x[1] + theta[b1 + j]).tanh();
            }
            let logits = [0, 1].map(|k| theta[b2 + k] + (0..h).map(|j| theta[w2 + k * h + j] * act[j]).sum::<f64>());
            let mx = logits[0].max(logits[1]);
            let e = [(logits[0] - mx).exp(), (logits[1] - mx).exp()];
            let z = e[0] + e[1];
            total += mx + z.ln() - logits[self.labels[i]];
            let mut dlogit = [e[0] / z, e[1] / z];
            dlogit[self.labels[i]] -= 1.0;
            for k in 0..2 {
                grad[b2 + k] += dlogit[k];
                for j in 0..h {
                    grad[w2 + k * h + j] += dlogit[k] * act[j];
                }
            }
            for j in 0..h {
                let da = dlogit[0] * theta[w2 + j] + dlogit[1] * theta[w2 + h + j];
                let dz = da * (1.0 - act[j] * act[j]);
                grad[2 * j] += dz * x[0];
                grad[2 * j + 1] += dz * x[1];
                grad[b1 + j] += dz;
            }
            count += 1;
        };
        match subset {
            Some(idx) => idx.iter().for_each(|&i| each(i)),
            None => (0..self.inputs.len()).for_each(&mut each),
        }
        let n = count as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn known_minima() {
        assert!(close(LossSurface::Ackley.eval_loss(&[0.0, 0.0]).unwrap(), 0.0, 1e-14));
        assert!(close(LossSurface::Levy2D.eval_loss(&[1.0, 1.0]).unwrap(), 0.0, 1e-14));
        let sf = LossSurface::sharp_flat(5.0, 1).unwrap();
        assert_eq!(sf.eval_loss(&[0.5]).unwrap(), 0.25);
    }

    #[test]
    fn goldstein_price_minimizer() {
        // Canonical GP has its minimum value 3 at (0, -1).
        let v = LossSurface::GoldsteinPrice.eval_loss(&[0.0, -1.0]).unwrap();
        assert!(close(v, (3f64.ln() - 8.693) / 2.427, 1e-12));
        let g = LossSurface::GoldsteinPrice.eval_grad(&[0.0, -1.0]).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn gradients_of_simple_surfaces() {
        let q = LossSurface::quadratic_diag(&[1.0, 3.0]).unwrap();
        assert_eq!(q.eval_grad(&[1.0, 1.0]).unwrap().0, vec![1.0, 3.0]);
        let sf = LossSurface::sharp_flat(5.0, 1).unwrap();
        assert_eq!(sf.eval_grad(&[0.5]).unwrap().0, vec![1.0]);
    }

    #[test]
    fn analytic_hvp() {
        let q = LossSurface::quadratic_diag(&[1.0, 3.0]).unwrap();
        assert_eq!(q.eval_hvp(&[0.3, 0.2], &[0.0, 1.0]).unwrap().0, vec![0.0, 3.0]);
        let sf = LossSurface::sharp_flat(10.0, 1).unwrap();
        assert_eq!(sf.eval_hvp(&[1.0], &[1.0]).unwrap().0, vec![20.0]);
        assert_eq!(sf.eval_hvp(&[0.0], &[1.0]).unwrap().0, vec![2.0]);
    }

    #[test]
    fn sharp_flat_tie_prefers_flat_branch() {
        let s = 4.0;
        let (k1, _) = sharp_flat_kinks(s);
        // At k1 = 2/3 both branches give 4/9; the flat branch derivative is 2x.
        let sf = LossSurface::sharp_flat(s, 1).unwrap();
        let g = sf.eval_grad(&[k1]).unwrap();
        assert!(close(g[0], 2.0 * k1, 1e-12));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            LossSurface::Ackley.eval_loss(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(LossSurface::Levy2D.eval_hvp(&[1.0, 1.0], &[1.0]).is_err());
        assert!(LossSurface::sharp_flat(1.0, 3).is_err());
        assert!(LossSurface::sharp_flat(2.0, 0).is_err());
        assert!(make_mlp_loss(Seed(0), 1, 4).is_err());
        assert!(make_mlp_loss(Seed(0), 10, 0).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(LossSurface::quadratic(asym).is_err());
    }

    #[test]
    fn check_grad_examples() {
        let q = LossSurface::quadratic_diag(&[2.0]).unwrap();
        assert!(check_grad(&q, &[1.0]).unwrap().max_rel_error < 1e-9);
        assert!(check_grad(&LossSurface::Ackley, &[0.1, 0.1]).unwrap().max_rel_error < 1e-6);
        assert!(check_grad(&LossSurface::Ackley, &[1.3, -0.7]).unwrap().max_rel_error < 1e-6);
        let mut rng = SplitMix64::new(Seed(11));
        let p = LossSurface::Levy2D.sample_point(&mut rng);
        assert!(check_grad(&LossSurface::Levy2D, &p).unwrap().max_rel_error < 1e-6);
    }

    #[test]
    fn mlp_zero_params_give_ln2() {
        let mlp = make_mlp_loss(Seed(5), 200, 16).unwrap();
        assert_eq!(mlp.dim(), 82);
        let l = mlp.eval_loss(&vec![0.0; 82]).unwrap();
        assert!(close(l, 2f64.ln(), 1e-14));
    }

    #[test]
    fn mlp_deterministic_and_order_invariant() {
        let a = make_mlp_loss(Seed(9), 200, 16).unwrap();
        let b = make_mlp_loss(Seed(9), 200, 16).unwrap();
        let mut rng = SplitMix64::new(Seed(1));
        let theta = a.sample_point(&mut rng);
        assert_eq!(
            a.eval_loss(&theta).unwrap().to_bits(),
            b.eval_loss(&theta).unwrap().to_bits()
        );
        let LossSurface::Mlp(inner) = &a else { unreachable!() };
        let mut perm: Vec<usize> = (0..200).collect();
        rng.shuffle(&mut perm);
        let shuffled = LossSurface::Mlp(inner.permuted(&perm));
        assert!(close(
            a.eval_loss(&theta).unwrap(),
            shuffled.eval_loss(&theta).unwrap(),
            1e-12
        ));
        assert!(a.eval_loss(&theta).unwrap() >= 0.0);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mlp = make_mlp_loss(Seed(2), 200, 16).unwrap();
        let mut rng = SplitMix64::new(Seed(3));
        let theta = mlp.sample_point(&mut rng);
        assert!(check_grad(&mlp, &theta).unwrap().max_rel_error < 1e-5);
    }

    #[test]
    fn finite_difference_hvp_matches_second_difference() {
        // Oracle: d²/dt² L(θ + t v) at t = 0 equals vᵀHv; with v = e_0 that is H_00.
        let theta = [2.0, 2.0];
        let v = [1.0, 0.0];
        let hv = LossSurface::Ackley.eval_hvp(&theta, &v).unwrap();
        let h = 1e-4;
        let f = |t: f64| LossSurface::Ackley.eval_loss(&[2.0 + t, 2.0]).unwrap();
        let second = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
        assert!(
            (hv[0] - second).abs() / second.abs().max(1.0) < 1e-3,
            "{} vs {}",
            hv[0],
            second
        );
    }
}
