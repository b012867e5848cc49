//! Gamma, Dirichlet and Beta sampling, the constructive draw behind the
//! copula-like density, and implicit shape derivatives of Gamma variates.

use rand::distr::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::copula::ThetaParams;
use crate::error::{domain, Error, Result};
use crate::specfn::quantile_shape_derivative;

/// Smallest Gamma variate handed out. Draws for very small shapes can
/// underflow; clamping keeps logarithms and ratios finite.
pub const GAMMA_FLOOR: f64 = 1e-300;

/// A seeded ChaCha20 stream. Equal `(seed, stream)` pairs reproduce the same
/// sequence bit for bit; different streams are independent.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// A fresh state on another stream of the same seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.sample(Open01)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn check_shape(name: &str, shape: f64) -> Result<()> {
    if shape.is_finite() && shape > 0.0 {
        Ok(())
    } else {
        domain(format!("{name} requires a positive finite shape, got {shape}"))
    }
}

/// One Gamma(shape, 1) variate.
///
/// Uses Marsaglia–Tsang squeeze/rejection from `rand_distr`; for shape < 1
/// that sampler draws Gamma(shape + 1) and multiplies by U^{1/shape} with one
/// extra uniform. The result is clamped below at [`GAMMA_FLOOR`].
pub fn sample_gamma(shape: f64, rng: &mut RngState) -> Result<f64> {
    check_shape("sample_gamma", shape)?;
    let dist = Gamma::new(shape, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.sample(rng).max(GAMMA_FLOOR))
}

/// Dirichlet(α) as normalized independent Gamma variates.
pub fn sample_dirichlet(alpha: &[f64], rng: &mut RngState) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return domain("sample_dirichlet requires at least one concentration");
    }
    let z = alpha.iter().map(|&a| sample_gamma(a, rng)).collect::<Result<Vec<_>>>()?;
    let s: f64 = z.iter().sum();
    Ok(z.into_iter().map(|x| x / s).collect())
}

/// Beta(a, b) as Z₁/(Z₁ + Z₂) with Z₁ ~ Gamma(a), Z₂ ~ Gamma(b).
pub fn sample_beta(a: f64, b: f64, rng: &mut RngState) -> Result<f64> {
    let za = sample_gamma(a, rng)?;
    let zb = sample_gamma(b, rng)?;
    Ok(za / (za + zb))
}

/// ∂z/∂shape for a Gamma(shape, 1) variate z at a fixed CDF level,
/// i.e. −(∂P(shape, z)/∂shape) / p_shape(z).
pub fn implicit_dz_dshape(z: f64, shape: f64) -> Result<f64> {
    check_shape("implicit_dz_dshape", shape)?;
    if !(z > 0.0 && z.is_finite()) {
        return domain(format!("implicit_dz_dshape requires z > 0, got {z}"));
    }
    quantile_shape_derivative(shape, z)
}

/// A draw from the copula-like density with every intermediate state.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDraw {
    /// d + 2 Gamma variates with shapes α₁…α_d, a, b.
    pub z: Vec<f64>,
    /// Dirichlet part, z_i / Σ_{j≤d} z_j.
    pub w: Vec<f64>,
    /// Beta part, z_{d+1} / (z_{d+1} + z_{d+2}).
    pub g: f64,
    /// v_i = g w_i / w*, so that max_i v_i = g.
    pub v: Vec<f64>,
    pub w_star: f64,
    /// First index attaining w*.
    pub argmax: usize,
}

impl BaseDraw {
    /// Assembles the draw from its Gamma variates.
    pub fn from_gammas(z: Vec<f64>) -> Result<Self> {
        if z.len() < 3 {
            return domain(format!("a base draw needs at least 3 Gamma variates, got {}", z.len()));
        }
        let d = z.len() - 2;
        let mut k = 0;
        for i in 1..d {
            if z[i] > z[k] {
                k = i;
            }
        }
        let sum: f64 = z[..d].iter().sum();
        let w: Vec<f64> = z[..d].iter().map(|x| x / sum).collect();
        let (za, zb) = (z[d], z[d + 1]);
        let g = za / (za + zb);
        let zk = z[k];
        let v = (0..d).map(|i| if i == k { g } else { g * (z[i] / zk) }).collect();
        Ok(Self { w_star: w[k], w, g, v, argmax: k, z })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Vector–Jacobian product of v(z): maps ∂l/∂v to ∂l/∂z.
    pub fn pullback(&self, gv: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let k = self.argmax;
        let zk = self.z[k];
        let mut gz = vec![0.0; d + 2];
        let mut gg = 0.0;
        for i in 0..d {
            gg += gv[i] * self.v[i] / self.g;
            if i != k {
                gz[i] = gv[i] * self.g / zk;
                gz[k] -= gv[i] * self.v[i] / zk;
            }
        }
        let (za, zb) = (self.z[d], self.z[d + 1]);
        let s2 = (za + zb) * (za + zb);
        gz[d] = gg * zb / s2;
        gz[d + 1] = -gg * za / s2;
        gz
    }
}

/// Draws z₁…z_d ~ Gamma(α_i), then z_{d+1} ~ Gamma(a), z_{d+2} ~ Gamma(b).
pub fn sample_base_draw(theta: &ThetaParams, rng: &mut RngState) -> Result<BaseDraw> {
    let z = theta.gamma_shapes().iter().map(|&s| sample_gamma(s, rng)).collect::<Result<Vec<_>>>()?;
    BaseDraw::from_gammas(z)
}
