//! Variational inference with copula-like flows.
//!
//! A copula-like flow draws v from a dependent density on the unit hypercube,
//! reflects chosen coordinates with a flip map, maps them through Gaussian
//! quantiles with learned location and scale, and mixes coordinates with a
//! butterfly of Givens rotations. Its log-density is exact and its ELBO
//! gradient is computed pathwise, with implicit derivatives for the Gamma
//! variates behind the base density.
//!
//! - [`specfn`]: special functions, including incomplete gamma derivatives.
//! - [`sampling`]: seeded streams, Gamma/Dirichlet/Beta draws and the base sampler.
//! - [`copula`]: the copula-like density and the flip map.
//! - [`flow`]: variational families, butterfly rotations and checkpoints.
//! - [`elbo`]: ELBO estimates, exact gradients and Adam training.
//! - [`targets`]: the target densities.
//! - [`oracle`]: grid quadrature and finite-difference ground truth.
//!
//! ```
//! use copula_vi::elbo::{fit, TrainConfig};
//! use copula_vi::flow::{init_family, FamilyKind, InitConfig};
//! use copula_vi::sampling::RngState;
//! use copula_vi::targets::horseshoe_posterior;
//!
//! let target = horseshoe_posterior(0.01)?;
//! let start = init_family(FamilyKind::CopulaRot, 2, &InitConfig::default(), &mut RngState::new(0, 0))?;
//! let cfg = TrainConfig { iterations: 200, elbo_eval_samples: 1000, ..TrainConfig::default() };
//! let out = fit(&start, &target, &cfg).map_err(|e| e.to_string())?;
//! println!("ELBO {:.3} ± {:.3}", out.report.value, out.report.std_error);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod copula;
pub mod elbo;
pub mod error;
pub mod fault;
pub mod flow;
pub mod oracle;
pub mod sampling;
pub mod specfn;
pub mod targets;

pub use error::{Error, Result};

/// Version string written into checkpoints and output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/copula.md")]
    struct Copula;
    #[doc = include_str!("../../../book/src/flow.md")]
    struct Flow;
    #[doc = include_str!("../../../book/src/elbo.md")]
    struct Elbo;
    #[doc = include_str!("../../../book/src/oracle.md")]
    struct Oracle;
}
