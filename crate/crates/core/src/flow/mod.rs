//! Variational families: copula-like flows and their ablations, Gaussian
//! baselines, and mixtures of these.
//!
//! Every family is a reparametrized sampler x = T(ξ; noise) with a tractable
//! log-density. The copula-like flow is
//!
//! ```text
//! v ~ c_θ  →  u = 𝓗(v)  →  x′ = μ + σ Φ⁻¹(u)  →  x = ℛ x′
//! log q(x) = log c_θ(v) − log|det 𝓗| − Σ_i [log σ_i − log φ(Φ⁻¹(u_i))]
//! ```
//!
//! Families expose three derivative primitives that the ELBO engine
//! composes: [`FamilySpec::density_grad`] (∇ₓ log q and ∂_ξ log q at fixed
//! x), [`FamilySpec::pullback`] (the VJP of the sample path x(ξ)), and the
//! flat unconstrained parameter vector of [`FamilySpec::params`].

pub mod butterfly;
mod copula_flow;
mod gaussian;
mod init;
pub mod marginals;
mod mixture;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use butterfly::{build_butterfly, Butterfly, RotationParams};
pub use copula_flow::{CopulaBase, CopulaFlow};
pub use gaussian::{FullCovGaussian, MeanFieldGaussian};
pub use init::{init_family, InitConfig};
pub use marginals::{quantile_forward, quantile_inverse, MarginalParams};
pub use mixture::Mixture;

use crate::error::{config, domain, Error, Result};
use crate::sampling::{BaseDraw, RngState};

/// The catalogue of variational families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    CopulaRot,
    CopulaNorot,
    IndepRot,
    IndepNorot,
    GaussMeanfield,
    GaussFullcov,
    Mixture,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 7] = [
        FamilyKind::CopulaRot,
        FamilyKind::CopulaNorot,
        FamilyKind::IndepRot,
        FamilyKind::IndepNorot,
        FamilyKind::GaussMeanfield,
        FamilyKind::GaussFullcov,
        FamilyKind::Mixture,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::CopulaRot => "copula_rot",
            FamilyKind::CopulaNorot => "copula_norot",
            FamilyKind::IndepRot => "indep_rot",
            FamilyKind::IndepNorot => "indep_norot",
            FamilyKind::GaussMeanfield => "gauss_meanfield",
            FamilyKind::GaussFullcov => "gauss_fullcov",
            FamilyKind::Mixture => "mixture",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown family kind `{s}`")))
    }
}

/// Reparametrization noise for one draw. Its meaning depends on the
/// component's kind: Gamma variates (d + 2) for copula-like bases, uniforms
/// for the independence base, standard normals for Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub component: usize,
    pub values: Vec<f64>,
}

/// The base state behind a [`FlowSample`].
#[derive(Debug, Clone, PartialEq)]
pub enum SampleBase {
    Copula(BaseDraw),
    Uniform,
    Normal,
}

/// One draw with its intermediate states and exact log-density.
///
/// For Gaussian kinds `v` and `u` are empty, `normal_scores` holds the
/// standard normal draw and `x_prime` equals `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    /// Mixture component the draw came from; 0 otherwise.
    pub component: usize,
    pub base: SampleBase,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub x_prime: Vec<f64>,
    /// Φ⁻¹(u), the standardized marginal scores.
    pub normal_scores: Vec<f64>,
    pub x: Vec<f64>,
    pub log_q: f64,
}

/// log q at a point with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrad {
    pub log_q: f64,
    /// ∇ₓ log q.
    pub dx: Vec<f64>,
    /// ∂ log q / ∂ξ at fixed x, over the unconstrained parameters.
    pub dparams: Vec<f64>,
}

impl DensityGrad {
    fn unsupported(d: usize, n_params: usize) -> Self {
        Self { log_q: f64::NEG_INFINITY, dx: vec![0.0; d], dparams: vec![0.0; n_params] }
    }
}

/// A complete variational family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySpec {
    Copula(CopulaFlow),
    GaussMeanfield(MeanFieldGaussian),
    GaussFullcov(FullCovGaussian),
    Mixture(Mixture),
}

impl FamilySpec {
    pub fn kind(&self) -> FamilyKind {
        match self {
            FamilySpec::Copula(c) => c.kind(),
            FamilySpec::GaussMeanfield(_) => FamilyKind::GaussMeanfield,
            FamilySpec::GaussFullcov(_) => FamilyKind::GaussFullcov,
            FamilySpec::Mixture(_) => FamilyKind::Mixture,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FamilySpec::Copula(c) => c.dim(),
            FamilySpec::GaussMeanfield(g) => g.dim(),
            FamilySpec::GaussFullcov(g) => g.dim(),
            FamilySpec::Mixture(m) => m.dim(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            FamilySpec::Copula(c) => c.n_params(),
            FamilySpec::GaussMeanfield(g) => g.n_params(),
            FamilySpec::GaussFullcov(g) => g.n_params(),
            FamilySpec::Mixture(m) => m.n_params(),
        }
    }

    /// Flat unconstrained parameters; see [`FamilySpec::param_names`] for
    /// the ordering.
    pub fn params(&self) -> Vec<f64> {
        match self {
            FamilySpec::Copula(c) => c.params(),
            FamilySpec::GaussMeanfield(g) => g.params(),
            FamilySpec::GaussFullcov(g) => g.params(),
            FamilySpec::Mixture(m) => m.params(),
        }
    }

    /// One name per entry of [`FamilySpec::params`].
    pub fn param_names(&self) -> Vec<String> {
        match self {
            FamilySpec::Copula(c) => c.param_names(),
            FamilySpec::GaussMeanfield(g) => g.param_names(),
            FamilySpec::GaussFullcov(g) => g.param_names(),
            FamilySpec::Mixture(m) => m.param_names(),
        }
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.iter().any(|x| !x.is_finite()) {
            return domain("non-finite parameter");
        }
        match self {
            FamilySpec::Copula(c) => c.set_params(p),
            FamilySpec::GaussMeanfield(g) => g.set_params(p),
            FamilySpec::GaussFullcov(g) => g.set_params(p),
            FamilySpec::Mixture(m) => m.set_params(p),
        }
    }

    /// A copy with parameters replaced.
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let mut s = self.clone();
        s.set_params(p)?;
        Ok(s)
    }

    /// The same distribution with an identity rotation appended, turning a
    /// copula flow without rotation into its rotated counterpart.
    pub fn with_identity_rotation(&self) -> Result<Self> {
        match self {
            FamilySpec::Copula(c) if c.rotation.is_none() => {
                let mut c = c.clone();
                c.rotation = Some(RotationParams { nu: vec![0.0; c.dim().saturating_sub(1)] });
                Ok(FamilySpec::Copula(c))
            }
            _ => config(format!("{} has no rotation to add", self.kind())),
        }
    }

    /// Number of mixture components (1 for a plain family).
    pub fn n_components(&self) -> usize {
        match self {
            FamilySpec::Mixture(m) => m.components.len(),
            _ => 1,
        }
    }

    /// Mixture weights (a single 1 for a plain family).
    pub fn weights(&self) -> Vec<f64> {
        match self {
            FamilySpec::Mixture(m) => m.weights(),
            _ => vec![1.0],
        }
    }

    pub fn sample_noise(&self, rng: &mut RngState) -> Result<Noise> {
        let values = match self {
            FamilySpec::Copula(c) => c.sample_noise(rng)?,
            FamilySpec::GaussMeanfield(g) => gaussian::sample_normal_noise(g.dim(), rng),
            FamilySpec::GaussFullcov(g) => gaussian::sample_normal_noise(g.dim(), rng),
            FamilySpec::Mixture(m) => return m.sample_noise(rng),
        };
        Ok(Noise { component: 0, values })
    }

    /// Noise for a given mixture component; for plain families `k` must be 0.
    pub fn component_noise(&self, k: usize, rng: &mut RngState) -> Result<Noise> {
        match self {
            FamilySpec::Mixture(m) => m.component_noise(k, rng),
            _ if k == 0 => self.sample_noise(rng),
            _ => config(format!("component {k} requested from a family without components")),
        }
    }

    pub fn push_forward(&self, noise: &Noise) -> Result<FlowSample> {
        match self {
            FamilySpec::Copula(c) => c.push_forward(noise),
            FamilySpec::GaussMeanfield(g) => g.push_forward(noise),
            FamilySpec::GaussFullcov(g) => g.push_forward(noise),
            FamilySpec::Mixture(m) => m.push_forward(noise),
        }
    }

    /// Draws one sample with its log-density.
    pub fn sample(&self, rng: &mut RngState) -> Result<FlowSample> {
        let noise = self.sample_noise(rng)?;
        self.push_forward(&noise)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return config(format!("point of length {} for a family of dimension {}", x.len(), self.dim()));
        }
        if x.iter().any(|v| v.is_nan()) {
            return domain("NaN in density argument");
        }
        Ok(())
    }

    /// log q(x); `-inf` outside the support.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        match self {
            FamilySpec::Copula(c) => c.log_density(x),
            FamilySpec::GaussMeanfield(g) => Ok(g.density_grad(x, None)?.log_q),
            FamilySpec::GaussFullcov(g) => Ok(g.density_grad(x, None)?.log_q),
            FamilySpec::Mixture(m) => m.log_density(x),
        }
    }

    /// log q(x) with ∇ₓ log q and ∂_ξ log q. Passing the sample that produced
    /// x reuses its forward states for that component.
    pub fn density_grad(&self, x: &[f64], known: Option<&FlowSample>) -> Result<DensityGrad> {
        self.check_point(x)?;
        match self {
            FamilySpec::Copula(c) => c.density_grad(x, known),
            FamilySpec::GaussMeanfield(g) => g.density_grad(x, known),
            FamilySpec::GaussFullcov(g) => g.density_grad(x, known),
            FamilySpec::Mixture(m) => m.density_grad(x, known),
        }
    }

    /// (∂x/∂ξ)ᵀ gx along the sample path with the noise held fixed. Gamma
    /// variates move with their shapes through the implicit quantile
    /// derivative.
    pub fn pullback(&self, sample: &FlowSample, gx: &[f64]) -> Result<Vec<f64>> {
        if gx.len() != self.dim() {
            return config("cotangent length does not match the family dimension");
        }
        match self {
            FamilySpec::Copula(c) => c.pullback(sample, gx),
            FamilySpec::GaussMeanfield(g) => Ok(g.pullback(sample, gx)),
            FamilySpec::GaussFullcov(g) => Ok(g.pullback(sample, gx)),
            FamilySpec::Mixture(m) => m.pullback(sample, gx),
        }
    }

    /// Gradient of −log q(x(ε)) with respect to the parameters along the
    /// sample path, for families where it does not depend on ε. For a
    /// Gaussian it is the gradient of log |det L|.
    pub fn path_entropy_grad(&self) -> Option<Vec<f64>> {
        match self {
            FamilySpec::GaussMeanfield(g) => Some(g.path_entropy_grad()),
            FamilySpec::GaussFullcov(g) => Some(g.path_entropy_grad()),
            FamilySpec::Copula(_) | FamilySpec::Mixture(_) => None,
        }
    }

    /// An axis-aligned box holding the support (copula kinds) or all but a
    /// negligible tail (Gaussian kinds).
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            FamilySpec::Copula(c) => c.bounding_box(),
            FamilySpec::GaussMeanfield(g) => Ok(g.bounding_box()),
            FamilySpec::GaussFullcov(g) => Ok(g.bounding_box()),
            FamilySpec::Mixture(m) => m.bounding_box(),
        }
    }
}

/// Draws one sample from `spec`.
pub fn family_sample(spec: &FamilySpec, rng: &mut RngState) -> Result<FlowSample> {
    spec.sample(rng)
}

/// Evaluates log q(x) for `spec`.
pub fn family_log_density(spec: &FamilySpec, x: &[f64]) -> Result<f64> {
    spec.log_density(x)
}

/// Serialized form of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub kind: FamilyKind,
    pub d: usize,
    pub family: FamilySpec,
}

impl Checkpoint {
    pub fn new(family: &FamilySpec) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            kind: family.kind(),
            d: family.dim(),
            family: family.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))?;
        if c.family.kind() != c.kind || c.family.dim() != c.d {
            return config("checkpoint header disagrees with its family");
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests;
