use serde::{Deserialize, Serialize};

use super::{CopulaBase, CopulaFlow, FamilyKind, FamilySpec, FullCovGaussian, MarginalParams, MeanFieldGaussian, Mixture, RotationParams};
use crate::copula::sample_flip_mask;
use crate::error::{config, Result};
use crate::sampling::RngState;
use crate::specfn::softplus_inv;

/// Initialization settings. Defaults follow the usual conventions for these
/// flows: softplus⁻¹(a) = 15, softplus⁻¹(b) = 2, softplus⁻¹(α_i) ~ N(2, 0.01),
/// ν_i ~ U(−0.2, 0.2), log σ_i = −3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub epsilon: f64,
    pub p: f64,
    pub raw_a: f64,
    pub raw_b: f64,
    pub raw_alpha_mean: f64,
    /// Variance of the raw α draws.
    pub raw_alpha_var: f64,
    pub nu_half_width: f64,
    pub log_sigma: f64,
    /// Mean the initial family should have; zero when absent.
    pub target_mean: Option<Vec<f64>>,
    /// Draws used to estimate the initial mean of the flow.
    pub mean_samples: usize,
    pub mixture_components: usize,
    pub mixture_kind: FamilyKind,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            p: 0.5,
            raw_a: 15.0,
            raw_b: 2.0,
            raw_alpha_mean: 2.0,
            raw_alpha_var: 0.01,
            nu_half_width: 0.2,
            log_sigma: -3.0,
            target_mean: None,
            mean_samples: 1000,
            mixture_components: 3,
            mixture_kind: FamilyKind::CopulaRot,
        }
    }
}

/// Builds a freshly initialized family. Randomness is drawn from `rng` in a
/// fixed order: flip mask, α, ν, then the draws for the mean estimate.
pub fn init_family(kind: FamilyKind, d: usize, cfg: &InitConfig, rng: &mut RngState) -> Result<FamilySpec> {
    if d == 0 {
        return config("family dimension must be at least 1");
    }
    let target = match &cfg.target_mean {
        Some(t) if t.len() != d => return config(format!("target mean has length {} for dimension {d}", t.len())),
        Some(t) => t.clone(),
        None => vec![0.0; d],
    };
    match kind {
        FamilyKind::GaussMeanfield => Ok(FamilySpec::GaussMeanfield(MeanFieldGaussian::new(target, vec![cfg.log_sigma; d])?)),
        FamilyKind::GaussFullcov => {
            let diag = softplus_inv(cfg.log_sigma.exp())?;
            let raw = (0..d).flat_map(|i| (0..=i).map(move |j| if i == j { diag } else { 0.0 })).collect();
            Ok(FamilySpec::GaussFullcov(FullCovGaussian::new(target, raw)?))
        }
        FamilyKind::Mixture => {
            if cfg.mixture_components == 0 || cfg.mixture_kind == FamilyKind::Mixture {
                return config("mixture needs at least one non-mixture component kind");
            }
            let comps = (0..cfg.mixture_components)
                .map(|_| init_family(cfg.mixture_kind, d, cfg, rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(FamilySpec::Mixture(Mixture::new(vec![0.0; cfg.mixture_components], comps)?))
        }
        _ => init_copula(kind, d, cfg, &target, rng),
    }
}

fn init_copula(kind: FamilyKind, d: usize, cfg: &InitConfig, target: &[f64], rng: &mut RngState) -> Result<FamilySpec> {
    let mask = sample_flip_mask(d, cfg.epsilon, cfg.p, rng)?;
    let base = if matches!(kind, FamilyKind::CopulaRot | FamilyKind::CopulaNorot) {
        let sd = cfg.raw_alpha_var.sqrt();
        CopulaBase::CopulaLike {
            raw_a: cfg.raw_a,
            raw_b: cfg.raw_b,
            raw_alpha: (0..d).map(|_| cfg.raw_alpha_mean + sd * rng.standard_normal()).collect(),
        }
    } else {
        CopulaBase::Independent
    };
    let rotation = if matches!(kind, FamilyKind::CopulaRot | FamilyKind::IndepRot) {
        let w = cfg.nu_half_width;
        Some(RotationParams { nu: (1..d).map(|_| -w + 2.0 * w * rng.uniform_open()).collect() })
    } else {
        None
    };
    let marginals = MarginalParams::new(vec![0.0; d], vec![cfg.log_sigma; d])?;
    let mut flow = CopulaFlow::new(base, mask, marginals, rotation)?;

    // E[x] = ℛ(μ + σ E[n]), so μ = ℛᵀ t − σ n̄ puts the estimated mean at t.
    let spec = FamilySpec::Copula(flow.clone());
    let mut n_bar = vec![0.0; d];
    let m = cfg.mean_samples.max(1);
    for _ in 0..m {
        let s = spec.sample(rng)?;
        for i in 0..d {
            n_bar[i] += s.normal_scores[i] / m as f64;
        }
    }
    let t_rot = match &flow.rotation {
        Some(r) => super::build_butterfly(d, r)?.apply_transpose(target)?,
        None => target.to_vec(),
    };
    flow.marginals.mu = (0..d).map(|i| t_rot[i] - flow.marginals.sigma(i) * n_bar[i]).collect();
    Ok(FamilySpec::Copula(flow))
}
