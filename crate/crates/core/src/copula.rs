//! The copula-like base density on the unit hypercube and the flip map.
//!
//! For θ = (a, b, α₁…α_d) with α* = Σα_ℓ, v* = Σv_ℓ and m = max_ℓ v_ℓ,
//!
//! ```text
//! log c_θ(v) = log Γ(α*) − log B(a, b) + Σ_ℓ [(α_ℓ − 1) log v_ℓ − log Γ(α_ℓ)]
//!              − α* log v* + a log m + (b − 1) log(1 − m)
//! ```
//!
//! The flip map sends v to u = (1 − δ) + (2δ − 1)v componentwise for a
//! frozen mask δ, mixing each coordinate with its antithetic reflection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::sampling::RngState;
use crate::specfn::{digamma_unchecked, log_beta, log_gamma_unchecked};

/// Shape parameters of the copula-like density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    pub a: f64,
    pub b: f64,
    pub alpha: Vec<f64>,
}

impl ThetaParams {
    pub fn new(a: f64, b: f64, alpha: Vec<f64>) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if alpha.is_empty() {
            return config("ThetaParams needs at least one alpha");
        }
        if !ok(a) || !ok(b) || !alpha.iter().all(|&x| ok(x)) {
            return domain(format!("ThetaParams entries must be positive and finite (a={a}, b={b}, alpha={alpha:?})"));
        }
        Ok(Self { a, b, alpha })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha_star(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Shapes of the d + 2 Gamma variates behind a draw: α₁…α_d, a, b.
    pub fn gamma_shapes(&self) -> Vec<f64> {
        let mut s = self.alpha.clone();
        s.push(self.a);
        s.push(self.b);
        s
    }
}

/// Gradient of `log c_θ(v)` with respect to v and θ.
#[derive(Debug, Clone, PartialEq)]
pub struct CthetaGrad {
    pub v: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub alpha: Vec<f64>,
}

/// Sum, maximum and first argmax in one pass.
fn sum_max(v: &[f64]) -> (f64, f64, usize) {
    let mut sum = 0.0;
    let mut m = f64::NEG_INFINITY;
    let mut k = 0;
    for (i, &x) in v.iter().enumerate() {
        sum += x;
        if x > m {
            m = x;
            k = i;
        }
    }
    (sum, m, k)
}

fn check_point(v: &[f64], theta: &ThetaParams) -> Result<bool> {
    if v.len() != theta.dim() {
        return config(format!("point has length {} but theta has dimension {}", v.len(), theta.dim()));
    }
    if v.iter().any(|x| x.is_nan()) {
        return domain("NaN in copula density argument");
    }
    Ok(v.iter().all(|&x| x > 0.0 && x < 1.0))
}

/// `log c_θ(v)`; `-inf` for points outside the open unit cube.
pub fn log_density_ctheta(v: &[f64], theta: &ThetaParams) -> Result<f64> {
    if !check_point(v, theta)? {
        return Ok(f64::NEG_INFINITY);
    }
    let (vs, m, _) = sum_max(v);
    let astar = theta.alpha_star();
    let mut acc = log_gamma_unchecked(astar) - log_beta(theta.a, theta.b)?;
    for (&x, &al) in v.iter().zip(&theta.alpha) {
        acc += (al - 1.0) * x.ln() - log_gamma_unchecked(al);
    }
    acc += -astar * vs.ln() + theta.a * m.ln() + (theta.b - 1.0) * (-m).ln_1p();
    Ok(acc)
}

/// `log c_θ(v)` with its gradient. Outside the support the value is `-inf`
/// and the gradient is zero.
pub fn log_density_ctheta_grad(v: &[f64], theta: &ThetaParams) -> Result<(f64, CthetaGrad)> {
    let d = theta.dim();
    let value = log_density_ctheta(v, theta)?;
    if value == f64::NEG_INFINITY {
        let zero = CthetaGrad { v: vec![0.0; d], a: 0.0, b: 0.0, alpha: vec![0.0; d] };
        return Ok((value, zero));
    }
    let (vs, m, k) = sum_max(v);
    let astar = theta.alpha_star();
    let (a, b) = (theta.a, theta.b);
    let mut gv: Vec<f64> = v.iter().zip(&theta.alpha).map(|(&x, &al)| (al - 1.0) / x - astar / vs).collect();
    gv[k] += a / m - (b - 1.0) / (1.0 - m);
    let psi_star = digamma_unchecked(astar);
    let ln_vs = vs.ln();
    let galpha = v
        .iter()
        .zip(&theta.alpha)
        .map(|(&x, &al)| psi_star + x.ln() - digamma_unchecked(al) - ln_vs)
        .collect();
    let psi_ab = digamma_unchecked(a + b);
    let ga = -(digamma_unchecked(a) - psi_ab) + m.ln();
    let gb = -(digamma_unchecked(b) - psi_ab) + (-m).ln_1p();
    Ok((value, CthetaGrad { v: gv, a: ga, b: gb, alpha: galpha }))
}

/// Frozen flip mask δ together with the (ε, p) it was drawn with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipMask {
    pub delta: Vec<f64>,
    pub epsilon: f64,
    pub p: f64,
    /// Seed of the stream the mask was drawn from, when it was drawn.
    pub seed: Option<u64>,
}

impl FlipMask {
    /// A mask with explicit entries. Entries may be any value in [0, 1]
    /// except 1/2, where the map degenerates.
    pub fn new(delta: Vec<f64>, epsilon: f64, p: f64) -> Result<Self> {
        if delta.iter().any(|&x| !(0.0..=1.0).contains(&x) || x == 0.5) {
            return domain(format!("flip mask entries must lie in [0,1] and differ from 0.5: {delta:?}"));
        }
        check_eps_p(epsilon, p)?;
        Ok(Self { delta, epsilon, p, seed: None })
    }

    /// δ = 1 everywhere: the flip map is the identity.
    pub fn identity(d: usize) -> Self {
        Self { delta: vec![1.0; d], epsilon: 0.01, p: 0.5, seed: None }
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// The support of u: each u_i lies between δ_i and 1 − δ_i.
    pub fn image_interval(&self, i: usize) -> (f64, f64) {
        let d = self.delta[i];
        (d.min(1.0 - d), d.max(1.0 - d))
    }
}

fn check_eps_p(epsilon: f64, p: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return domain(format!("flip epsilon must lie in (0, 0.5), got {epsilon}"));
    }
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("flip probability must lie in [0, 1], got {p}"));
    }
    Ok(())
}

/// Draws δ_i = ε with probability p and 1 − ε otherwise.
pub fn sample_flip_mask(d: usize, epsilon: f64, p: f64, rng: &mut RngState) -> Result<FlipMask> {
    check_eps_p(epsilon, p)?;
    let delta = (0..d)
        .map(|_| if rng.random::<f64>() < p { epsilon } else { 1.0 - epsilon })
        .collect();
    Ok(FlipMask { delta, epsilon, p, seed: Some(rng.seed()) })
}

fn check_len(x: &[f64], mask: &FlipMask) -> Result<()> {
    if x.len() != mask.dim() {
        return config(format!("vector of length {} does not match mask dimension {}", x.len(), mask.dim()));
    }
    Ok(())
}

/// u = (1 − δ) + (2δ − 1) v.
pub fn flip_forward(v: &[f64], mask: &FlipMask) -> Result<Vec<f64>> {
    check_len(v, mask)?;
    Ok(v.iter().zip(&mask.delta).map(|(&x, &d)| (1.0 - d) + (2.0 * d - 1.0) * x).collect())
}

/// Inverse of [`flip_forward`]; `None` when u lies outside the image box.
pub fn flip_inverse(u: &[f64], mask: &FlipMask) -> Result<Option<Vec<f64>>> {
    check_len(u, mask)?;
    let mut v = Vec::with_capacity(u.len());
    for (i, (&x, &d)) in u.iter().zip(&mask.delta).enumerate() {
        let (lo, hi) = mask.image_interval(i);
        if !(x >= lo && x <= hi) {
            return Ok(None);
        }
        v.push((x - (1.0 - d)) / (2.0 * d - 1.0));
    }
    Ok(Some(v))
}

/// Σ log|2δ_i − 1|, the log-determinant of the flip map.
pub fn flip_log_det(mask: &FlipMask) -> f64 {
    let ld: f64 = mask.delta.iter().map(|&d| (2.0 * d - 1.0).abs().ln()).sum();
    if crate::fault::flip_log_det_sign_flipped() {
        -ld
    } else {
        ld
    }
}
