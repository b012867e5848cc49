//! The `fit` and `sample` subcommands.

use std::path::Path;

use copula_vi::elbo::{fit, select_start, FitError, FitOutcome, TrainConfig};
use copula_vi::flow::{init_family, FamilyKind, FamilySpec};
use copula_vi::oracle::{grid_kl, GridSpec, OracleRecord};
use copula_vi::sampling::RngState;
use copula_vi::targets::{
    gaussian_target, generate_synthetic_logistic, horseshoe_posterior, logistic_posterior, tiny_bnn_regression,
    BnnRegression, TargetDensity,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FamilyConfig, TargetConfig};
use crate::error::CliError;
use crate::output::{ensure_dir, read_checkpoint, write_checkpoint, write_csv, write_json, write_trace, Provenance};

/// RNG stream for the starting points of restart `r`.
pub const INIT_STREAM_BASE: u64 = 100;
/// RNG stream for draws written by `sample`.
pub const SAMPLE_STREAM: u64 = 3;
/// Draws used to rank restarts after their pilot runs.
pub const PILOT_EVAL_SAMPLES: usize = 2000;
/// Draws used to average predictions of the BNN on its test set.
pub const PREDICTIVE_SAMPLES: usize = 200;

/// A constructed target with any model-specific handle kept alongside.
pub struct BuiltTarget {
    pub density: Box<dyn TargetDensity>,
    pub bnn: Option<BnnRegression>,
}

pub fn build_target(cfg: &TargetConfig) -> Result<BuiltTarget, CliError> {
    Ok(match cfg {
        TargetConfig::Gaussian { mean, cov_factor } => {
            BuiltTarget { density: Box::new(gaussian_target(mean.clone(), cov_factor.clone())?), bnn: None }
        }
        TargetConfig::Logistic { dataset_seed } => {
            let data = generate_synthetic_logistic(&mut RngState::new(*dataset_seed, 0));
            BuiltTarget { density: Box::new(logistic_posterior(data)?), bnn: None }
        }
        TargetConfig::Horseshoe { y_obs } => BuiltTarget { density: Box::new(horseshoe_posterior(*y_obs)?), bnn: None },
        TargetConfig::TinyBnn { data_seed, network } => {
            let t = tiny_bnn_regression(network, &mut RngState::new(*data_seed, 0))?;
            BuiltTarget { density: Box::new(t.clone()), bnn: Some(t) }
        }
    })
}

/// A quadrature box holding essentially all of the target's mass.
pub fn default_grid(cfg: &TargetConfig) -> Option<GridSpec> {
    match cfg {
        TargetConfig::Horseshoe { .. } => Some(GridSpec { lower: [-70.0, -20.0], upper: [10.0, 32.0], resolution: 400 }),
        TargetConfig::Logistic { .. } => Some(GridSpec { lower: [-40.0, -40.0], upper: [90.0, 80.0], resolution: 600 }),
        TargetConfig::Gaussian { mean, cov_factor } if mean.len() == 2 => {
            let spread = cov_factor.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let w = 12.0 * spread;
            Some(GridSpec { lower: [mean[0] - w, mean[1] - w], upper: [mean[0] + w, mean[1] + w], resolution: 400 })
        }
        _ => None,
    }
}

/// Fits a family of `fam.kind`: draws `fam.restarts` starting points, keeps
/// the best after a pilot run when there is more than one, then trains it.
/// On the BNN target each starting point also draws its own network weights.
pub fn train_family(
    fam: &FamilyConfig,
    target: &BuiltTarget,
    train: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome, FitError> {
    let d = target.density.dim();
    let mut candidates: Vec<FamilySpec> = Vec::with_capacity(fam.restarts);
    for r in 0..fam.restarts as u64 {
        let mut rng = RngState::new(seed, INIT_STREAM_BASE + r);
        let mut init = fam.init.clone();
        if let (Some(bnn), None) = (&target.bnn, &init.target_mean) {
            init.target_mean = Some(bnn.initial_mean(&mut rng));
        }
        let c = init_family(fam.kind, d, &init, &mut rng)?;
        if !candidates.contains(&c) {
            candidates.push(c);
        }
    }
    let start = if candidates.len() > 1 && fam.pilot_iterations > 0 {
        let pilot = TrainConfig {
            iterations: fam.pilot_iterations,
            final_lr_fraction: 1.0,
            elbo_eval_samples: PILOT_EVAL_SAMPLES,
            record_wall_clock: false,
            ..train.clone()
        };
        select_start(&candidates, target.density.as_ref(), &pilot)?.1.spec
    } else {
        candidates.swap_remove(0)
    };
    fit(&start, target.density.as_ref(), train)
}

/// Mean network prediction on the BNN test inputs under `spec`, and its RMSE.
pub fn predictive_rmse(bnn: &BnnRegression, spec: &FamilySpec, seed: u64) -> Result<f64, CliError> {
    let mut rng = RngState::new(seed, SAMPLE_STREAM);
    let mut preds = vec![vec![0.0; bnn.y_test.first().map_or(1, Vec::len)]; bnn.x_test.len()];
    for _ in 0..PREDICTIVE_SAMPLES {
        let s = spec.sample(&mut rng)?;
        for (p, x) in preds.iter_mut().zip(&bnn.x_test) {
            for (pi, v) in p.iter_mut().zip(bnn.predict(&s.x, x)) {
                *pi += v / PREDICTIVE_SAMPLES as f64;
            }
        }
    }
    Ok(bnn.test_rmse(&preds))
}

/// Summary of a `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub family: FamilyKind,
    pub target: String,
    pub elbo: f64,
    pub elbo_stderr: f64,
    pub kl: Option<f64>,
    pub log_z: Option<f64>,
    pub iterations: usize,
    pub wall_ms: u64,
    pub seed: u64,
    pub skipped_steps: usize,
    pub test_rmse: Option<f64>,
}

pub fn provenance(cfg: &ExperimentConfig, family: FamilyKind) -> Provenance {
    Provenance {
        version: copula_vi::VERSION.to_string(),
        config_hash: cfg.hash(),
        family: family.to_string(),
        seed: cfg.seed,
    }
}

/// Runs one experiment and writes its outputs to `cfg.output_dir`.
pub fn run_fit(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let start = std::time::Instant::now();
    let target = build_target(&cfg.target)?;
    let prov = provenance(cfg, cfg.family.kind);
    let dir = cfg.output_dir.as_path();
    ensure_dir(dir)?;
    let train = TrainConfig { record_wall_clock: cfg.emit.wall_clock, ..cfg.train.clone() };
    let outcome = match train_family(&cfg.family, &target, &train, cfg.seed) {
        Ok(o) => o,
        Err(e) => {
            if let FitError::Diverged { last_finite, .. } = &e {
                write_checkpoint(dir, &prov, last_finite)?;
            }
            return Err(e.into());
        }
    };
    write_checkpoint(dir, &prov, &outcome.spec)?;
    if cfg.emit.trace_csv {
        write_trace(&dir.join("trace.csv"), &prov, &outcome.trace)?;
    }

    let grid = cfg.oracle.clone().or_else(|| default_grid(&cfg.target));
    let (mut kl, mut log_z) = (None, None);
    if let (2, Some(grid)) = (target.density.dim(), grid) {
        let k = grid_kl(&outcome.spec, target.density.as_ref(), &grid)?;
        kl = Some(k.kl);
        log_z = Some(k.log_z);
        if cfg.emit.oracle_json {
            write_json(&dir.join("oracle.json"), &prov, &OracleRecord::from_kl(target.density.label(), &grid, &k))?;
        }
    }
    let test_rmse = match &target.bnn {
        Some(b) => Some(predictive_rmse(b, &outcome.spec, cfg.seed)?),
        None => None,
    };
    if cfg.emit.samples_csv {
        write_samples(dir, &prov, &outcome.spec, cfg.emit.samples, cfg.emit.sample_intermediates, cfg.seed)?;
    }
    let summary = Summary {
        family: cfg.family.kind,
        target: target.density.label().to_string(),
        elbo: outcome.report.value,
        elbo_stderr: outcome.report.std_error,
        kl,
        log_z,
        iterations: cfg.train.iterations,
        wall_ms: if cfg.emit.wall_clock { start.elapsed().as_millis() as u64 } else { 0 },
        seed: cfg.seed,
        skipped_steps: outcome.skipped_steps,
        test_rmse,
    };
    if cfg.emit.summary_json {
        write_json(&dir.join("summary.json"), &prov, &summary)?;
    }
    Ok(summary)
}

fn write_samples(
    dir: &Path,
    prov: &Provenance,
    spec: &FamilySpec,
    n: usize,
    intermediates: bool,
    seed: u64,
) -> Result<(), CliError> {
    let d = spec.dim();
    let with_states = intermediates && !matches!(spec, FamilySpec::GaussMeanfield(_) | FamilySpec::GaussFullcov(_));
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    if with_states {
        for name in ["v", "u", "xp"] {
            header.extend((1..=d).map(|i| format!("{name}{i}")));
        }
    }
    header.push("log_q".into());
    let mut rng = RngState::new(seed, SAMPLE_STREAM);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let s = spec.sample(&mut rng)?;
        let mut row: Vec<String> = s.x.iter().map(f64::to_string).collect();
        if with_states {
            for part in [&s.v, &s.u, &s.x_prime] {
                row.extend(part.iter().map(f64::to_string));
            }
        }
        row.push(s.log_q.to_string());
        rows.push(row);
    }
    write_csv(&dir.join("samples.csv"), prov, &header, rows)
}

/// Writes `n` draws from the checkpoint in `cfg.output_dir`.
pub fn run_sample(cfg: &ExperimentConfig, n: usize) -> Result<(), CliError> {
    let dir = cfg.output_dir.as_path();
    let file = read_checkpoint(dir)?;
    let spec = file.checkpoint.family;
    let prov = Provenance {
        version: copula_vi::VERSION.to_string(),
        config_hash: file.config_hash,
        family: spec.kind().to_string(),
        seed: cfg.seed,
    };
    write_samples(dir, &prov, &spec, n, cfg.emit.sample_intermediates, cfg.seed)
}
