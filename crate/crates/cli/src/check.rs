//! The `check` subcommand: the invariant suite, one JSON line per invariant.
//!
//! Each check is a plain function so the acceptance harness can run the same
//! code at larger sample sizes.

use copula_vi::copula::{flip_forward, flip_inverse, log_density_ctheta, sample_flip_mask, ThetaParams};
use copula_vi::elbo::{draw_batch, estimate_elbo, evaluate_batch, freeze, frozen_value};
use copula_vi::fault::with_flipped_log_det_sign;
use copula_vi::flow::{build_butterfly, init_family, Checkpoint, FamilyKind, FamilySpec, FullCovGaussian, InitConfig, RotationParams};
use copula_vi::oracle::{grid_kl, grid_log_z, GridSpec};
use copula_vi::sampling::{sample_base_draw, sample_dirichlet, sample_gamma, RngState};
use copula_vi::specfn::{digamma, inv_reg_inc_gamma, normal_cdf, normal_quantile, reg_inc_gamma, reg_inc_gamma_upper};
use copula_vi::targets::{
    gaussian_target, generate_synthetic_logistic, horseshoe_posterior, logistic_posterior, tiny_bnn_regression,
    BnnConfig, FamilyTarget, TargetDensity,
};
use serde::Serialize;
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use crate::config::ExperimentConfig;

/// What a check found: a detail string on success or on failure.
pub type Outcome = Result<String, String>;

/// One line of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub module: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Deliberate defects the suite must detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipLogDetSign,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flip-log-det-sign" => Ok(Fault::FlipLogDetSign),
            _ => Err(format!("unknown fault {s:?}; expected flip-log-det-sign")),
        }
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(name: &str, value: f64, reference: f64, tol: f64) -> Result<(), String> {
    if (value - reference).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name}: {value} differs from {reference} by more than {tol}"))
    }
}

/// A family of `kind` with moderately spread parameters.
pub fn random_family(kind: FamilyKind, d: usize, mean: Option<Vec<f64>>, seed: u64) -> copula_vi::Result<FamilySpec> {
    let mut rng = RngState::new(seed, 0);
    let cfg = InitConfig { mean_samples: 50, mixture_components: 2, target_mean: mean, ..InitConfig::default() };
    let spec = init_family(kind, d, &cfg, &mut rng)?;
    let p: Vec<f64> = spec.params().iter().map(|v| v + 0.3 * rng.standard_normal()).collect();
    spec.with_params(&p)
}

/// Shape parameters drawn uniformly from [1.2, 4], where the copula density
/// is bounded and the midpoint rule converges quickly.
pub fn random_theta(d: usize, rng: &mut RngState) -> copula_vi::Result<ThetaParams> {
    let mut draw = || 1.2 + 2.8 * rng.uniform_open();
    let (a, b) = (draw(), draw());
    let alpha = (0..d).map(|_| draw()).collect();
    ThetaParams::new(a, b, alpha)
}

// ---------------------------------------------------------------- specfn

pub fn digamma_recurrence() -> Outcome {
    let lhs = digamma(4.7).map_err(err)? - digamma(3.7).map_err(err)?;
    within("digamma(4.7) - digamma(3.7)", lhs, 1.0 / 3.7, 1e-12)?;
    Ok(format!("{lhs:.15}"))
}

pub fn incomplete_gamma_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    for shape in [0.05, 0.5, 1.0, 3.7, 20.0, 150.0] {
        for x in [1e-3, 0.1, 1.0, 5.0, 40.0, 200.0] {
            let p = reg_inc_gamma(shape, x).map_err(err)?;
            let q = reg_inc_gamma_upper(shape, x).map_err(err)?;
            worst = worst.max((p + q - 1.0).abs());
            if p > 1e-12 && p < 1.0 - 1e-12 {
                let back = inv_reg_inc_gamma(shape, p).map_err(err)?;
                worst = worst.max((back - x).abs() / x);
            }
        }
    }
    within("worst residual", worst, 0.0, 1e-9)?;
    Ok(format!("worst residual {worst:.2e}"))
}

pub fn normal_quantile_round_trip() -> Outcome {
    let mut worst: f64 = 0.0;
    // above x = 5 the upper tail 1 − Φ(x) is no longer resolved in double precision
    for i in -80..=50 {
        let x = i as f64 / 10.0;
        let back = normal_quantile(normal_cdf(x)).map_err(err)?;
        worst = worst.max((back - x).abs());
    }
    within("worst round trip", worst, 0.0, 1e-8)?;
    Ok(format!("worst round trip {worst:.2e}"))
}

// --------------------------------------------------------- base_sampling

pub fn stream_reproducibility() -> Outcome {
    let draws = |seed, stream| -> Result<Vec<f64>, String> {
        let mut rng = RngState::new(seed, stream);
        (0..1000).map(|_| sample_gamma(0.7, &mut rng).map_err(err)).collect()
    };
    if draws(7, 3)? != draws(7, 3)? {
        return Err("equal seed and stream gave different draws".into());
    }
    if draws(7, 3)? == draws(7, 4)? {
        return Err("different streams gave identical draws".into());
    }
    Ok("1000 Gamma draws".into())
}

/// `max_i v_i == g` bit for bit on every draw.
pub fn max_v_equals_g(dims: &[usize], draws: usize, seed: u64) -> Outcome {
    for &d in dims {
        let mut rng = RngState::new(seed, d as u64);
        let theta = random_theta(d, &mut rng).map_err(err)?;
        for n in 0..draws {
            let b = sample_base_draw(&theta, &mut rng).map_err(err)?;
            let m = b.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m != b.g {
                return Err(format!("d={d} draw {n}: max v = {m} but g = {}", b.g));
            }
        }
    }
    Ok(format!("{draws} draws for d in {dims:?}"))
}

pub fn dirichlet_on_simplex() -> Outcome {
    let mut rng = RngState::new(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let w = sample_dirichlet(&[0.3, 1.0, 4.0, 0.05], &mut rng).map_err(err)?;
        if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(format!("component outside [0, 1]: {w:?}"));
        }
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    within("worst |sum - 1|", worst, 0.0, 1e-12)?;
    Ok(format!("worst |sum - 1| {worst:.1e}"))
}

// ----------------------------------------------------------- copula_core

/// Midpoint rule of c_θ over the unit square for `count` random θ.
pub fn ctheta_normalization(count: usize, resolution: usize, seed: u64) -> Outcome {
    let mut rng = RngState::new(seed, 0);
    let h = 1.0 / resolution as f64;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let theta = random_theta(2, &mut rng).map_err(err)?;
        let mut total = 0.0;
        for i in 0..resolution {
            for j in 0..resolution {
                let v = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                total += log_density_ctheta(&v, &theta).map_err(err)?.exp();
            }
        }
        worst = worst.max((total * h * h - 1.0).abs());
    }
    within("worst |∫c - 1|", worst, 0.0, 1e-3)?;
    Ok(format!("{count} θ, worst |∫c - 1| {worst:.2e}"))
}

pub fn one_dimensional_copula_is_beta() -> Outcome {
    for (a, b, alpha) in [(2.0, 3.0, 0.7), (0.5, 0.8, 4.0), (15.0, 2.1, 2.0)] {
        let theta = ThetaParams::new(a, b, vec![alpha]).map_err(err)?;
        let beta = Beta::new(a, b).map_err(err)?;
        for i in 1..50 {
            let x = i as f64 / 50.0;
            within("log c(x)", log_density_ctheta(&[x], &theta).map_err(err)?, beta.ln_pdf(x), 1e-10)?;
        }
    }
    Ok("three (a, b, α) settings".into())
}

/// Kolmogorov–Smirnov distance between `xs` and a continuous CDF.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS distance of the d = 1 sampler from Beta(a, b).
pub fn one_dimensional_sampler_ks(draws: usize, seed: u64) -> Result<f64, String> {
    let (a, b) = (2.5, 1.7);
    let theta = ThetaParams::new(a, b, vec![0.9]).map_err(err)?;
    let mut rng = RngState::new(seed, 0);
    let xs = (0..draws).map(|_| sample_base_draw(&theta, &mut rng).map(|d| d.v[0]).map_err(err)).collect::<Result<Vec<_>, _>>()?;
    let beta = Beta::new(a, b).map_err(err)?;
    Ok(ks_statistic(xs, |x| beta.cdf(x)))
}

pub fn flip_round_trip() -> Outcome {
    let mut rng = RngState::new(5, 0);
    for _ in 0..200 {
        let mask = sample_flip_mask(3, 0.01, 0.5, &mut rng).map_err(err)?;
        let v: Vec<f64> = (0..3).map(|_| rng.uniform_open()).collect();
        let u = flip_forward(&v, &mask).map_err(err)?;
        let back = flip_inverse(&u, &mask).map_err(err)?.ok_or("flip image left its interval")?;
        for (x, y) in v.iter().zip(&back) {
            within("flip round trip", *y, *x, 1e-12)?;
        }
    }
    Ok("200 masks".into())
}

// ------------------------------------------------------------ flow_stack

/// Midpoint rule of q over its bounding box, on the calling thread.
pub fn integrate_family_2d(spec: &FamilySpec, resolution: usize) -> copula_vi::Result<f64> {
    let (lo, hi) = spec.bounding_box()?;
    let (hx, hy) = ((hi[0] - lo[0]) / resolution as f64, (hi[1] - lo[1]) / resolution as f64);
    let mut total = 0.0;
    for i in 0..resolution {
        for j in 0..resolution {
            let x = [lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy];
            total += spec.log_density(&x)?.exp();
        }
    }
    Ok(total * hx * hy)
}

/// ∫ q = 1 within 1e-2 for every family kind in two dimensions.
pub fn family_normalization(resolution: usize) -> Outcome {
    let mut parts = Vec::new();
    for (i, kind) in FamilyKind::ALL.into_iter().enumerate() {
        let spec = random_family(kind, 2, None, 70 + i as u64).map_err(err)?;
        let total = integrate_family_2d(&spec, resolution).map_err(err)?;
        within(kind.as_str(), total, 1.0, 1e-2)?;
        parts.push(format!("{kind}={total:.5}"));
    }
    Ok(parts.join(" "))
}

pub fn sample_density_consistency() -> Outcome {
    for (i, kind) in FamilyKind::ALL.into_iter().enumerate() {
        for d in [1, 2, 5] {
            let spec = random_family(kind, d, None, 90 + i as u64).map_err(err)?;
            let mut rng = RngState::new(1, 0);
            for _ in 0..200 {
                let s = spec.sample(&mut rng).map_err(err)?;
                within(kind.as_str(), s.log_q, spec.log_density(&s.x).map_err(err)?, 1e-9)?;
            }
        }
    }
    Ok("200 draws per kind for d in [1, 2, 5]".into())
}

/// Orthogonality of the dense rotation and agreement of the sparse apply
/// with the dense matrix.
pub fn rotation_orthogonality(dims: &[usize]) -> Outcome {
    let mut rng = RngState::new(3, 0);
    for &d in dims {
        let nu = (0..d - 1).map(|_| 6.0 * rng.uniform_open() - 3.0).collect();
        let b = build_butterfly(d, &RotationParams { nu }).map_err(err)?;
        let r = b.to_dense();
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| r[k][i] * r[k][j]).sum();
                within(&format!("d={d} RᵀR[{i}][{j}]"), dot, if i == j { 1.0 } else { 0.0 }, 1e-12)?;
            }
        }
        let x: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = b.apply(&x).map_err(err)?;
        for i in 0..d {
            let dense: f64 = (0..d).map(|j| r[i][j] * x[j]).sum();
            within(&format!("d={d} (Rx)[{i}]"), y[i], dense, 1e-12)?;
        }
    }
    Ok(format!("d in {dims:?}"))
}

pub fn checkpoint_round_trip() -> Outcome {
    for (i, kind) in FamilyKind::ALL.into_iter().enumerate() {
        let spec = random_family(kind, 3, None, 110 + i as u64).map_err(err)?;
        let back = Checkpoint::from_json(&Checkpoint::new(&spec).to_json().map_err(err)?).map_err(err)?;
        if back.family != spec {
            return Err(format!("{kind} did not round-trip"));
        }
    }
    Ok("every kind".into())
}

// ----------------------------------------------------------- elbo_engine

/// Central difference that retries with smaller steps, so a step straddling
/// a kink of a piecewise-smooth target does not count as a mismatch.
fn fd_agrees(f: impl Fn(&[f64]) -> Result<f64, String>, p0: &[f64], i: usize, g: f64) -> Result<(), String> {
    let mut last = f64::NAN;
    for h in [1e-5, 1e-6, 1e-7] {
        let mut pp = p0.to_vec();
        let mut pm = p0.to_vec();
        pp[i] += h;
        pm[i] -= h;
        last = (f(&pp)? - f(&pm)?) / (2.0 * h);
        if (last - g).abs() <= 1e-4 * last.abs().max(1.0) {
            return Ok(());
        }
    }
    Err(format!("finite difference {last} vs gradient {g}"))
}

/// Frozen-level finite differences against `elbo_gradient` at one point.
pub fn frozen_gradient_point(spec: &FamilySpec, target: &dyn TargetDensity, seed: u64) -> Result<(), String> {
    let mut rng = RngState::new(seed, 9);
    let batch = draw_batch(spec, 8, &mut rng).map_err(err)?;
    let report = evaluate_batch(spec, target, &batch, true).map_err(err)?;
    if let Some(i) = report.flagged {
        return Err(format!("draw {i} gave a non-finite integrand"));
    }
    let frozen = freeze(spec, &batch).map_err(err)?;
    let p0 = spec.params();
    let f = |p: &[f64]| frozen_value(spec, target, &frozen, p).map_err(err);
    within("frozen value", f(&p0)?, report.value, 1e-9 * report.value.abs().max(1.0))?;
    let names = spec.param_names();
    for (i, g) in report.gradient.iter().enumerate() {
        fd_agrees(f, &p0, i, *g).map_err(|e| format!("{}: {e}", names[i]))?;
    }
    Ok(())
}

/// Every target of the zoo with a sensible centre for random families.
pub fn target_zoo() -> copula_vi::Result<Vec<(Box<dyn TargetDensity>, Option<Vec<f64>>)>> {
    let logistic = logistic_posterior(generate_synthetic_logistic(&mut RngState::new(0, 0)))?;
    let bnn = tiny_bnn_regression(&BnnConfig::default(), &mut RngState::new(0, 0))?;
    let bnn_mean = bnn.initial_mean(&mut RngState::new(0, 1));
    Ok(vec![
        (Box::new(gaussian_target(vec![1.0, -2.0], vec![vec![1.5, 0.0], vec![0.8, 0.5]])?), None),
        (Box::new(logistic), Some(vec![10.0, 7.0])),
        (Box::new(horseshoe_posterior(0.01)?), None),
        (Box::new(bnn), Some(bnn_mean)),
    ])
}

/// Frozen-level gradient check on `points` random parameter points for every
/// family kind and every target of the zoo.
pub fn gradient_exactness(points: usize, seed: u64) -> Outcome {
    let zoo = target_zoo().map_err(err)?;
    let mut checked = 0;
    for (t, (target, mean)) in zoo.iter().enumerate() {
        for (k, kind) in FamilyKind::ALL.into_iter().enumerate() {
            for p in 0..points {
                let s = seed + 1000 * t as u64 + 100 * k as u64 + p as u64;
                let spec = random_family(kind, target.dim(), mean.clone(), s).map_err(err)?;
                frozen_gradient_point(&spec, target.as_ref(), s)
                    .map_err(|e| format!("{} {kind} point {p}: {e}", target.label()))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} parameter points"))
}

pub fn self_target_elbo_zero() -> Outcome {
    for (i, kind) in FamilyKind::ALL.into_iter().enumerate() {
        let spec = random_family(kind, 2, None, 130 + i as u64).map_err(err)?;
        let r = estimate_elbo(&spec, &FamilyTarget::new(spec.clone()), 200, &mut RngState::new(3, 0)).map_err(err)?;
        within(kind.as_str(), r.value, 0.0, 1e-12)?;
    }
    Ok("every kind".into())
}

// --------------------------------------------------------------- targets

pub fn potential_gradients() -> Outcome {
    let zoo = target_zoo().map_err(err)?;
    let mut rng = RngState::new(17, 0);
    for (target, mean) in &zoo {
        let d = target.dim();
        for _ in 0..5 {
            let x: Vec<f64> = (0..d)
                .map(|i| mean.as_ref().map_or(0.0, |m| m[i]) + 0.5 * rng.standard_normal())
                .collect();
            let g = target.grad_potential(&x);
            let (u, g2) = target.potential_and_grad(&x);
            within("fused potential", u, target.potential(&x), 1e-10 * u.abs().max(1.0))?;
            for i in 0..d {
                within("fused gradient", g2[i], g[i], 1e-10 * g[i].abs().max(1.0))?;
                fd_agrees(|p| Ok(target.potential(p)), &x, i, g[i]).map_err(|e| format!("{} x{i}: {e}", target.label()))?;
            }
        }
    }
    Ok(format!("{} targets", zoo.len()))
}

pub fn horseshoe_reference_value() -> Outcome {
    let u = horseshoe_posterior(0.01).map_err(err)?.potential(&[0.0, 0.0]);
    within("U(0, 0)", u, 4.063718419054073, 1e-12)?;
    Ok(format!("{u}"))
}

// ---------------------------------------------------------------- oracle

pub fn gaussian_log_z() -> Outcome {
    let t = gaussian_target(vec![0.5, -1.0], vec![vec![1.0, 0.0], vec![0.6, 0.8]]).map_err(err)?;
    let grid = GridSpec::new([-11.5, -13.0], [12.5, 11.0], 400).map_err(err)?;
    let q = grid_log_z(&t, &grid).map_err(err)?;
    within("log Z", q.log_z, 0.0, 1e-6)?;
    if q.boundary_warning {
        return Err("boundary warning on a box of ±12 standard deviations".into());
    }
    let exact = FamilySpec::GaussFullcov(FullCovGaussian::from_factor(vec![0.5, -1.0], &[vec![1.0, 0.0], vec![0.6, 0.8]]).map_err(err)?);
    let kl = grid_kl(&exact, &t, &grid).map_err(err)?;
    within("KL of the target itself", kl.kl, 0.0, 1e-6)?;
    Ok(format!("log Z {:.2e}, KL {:.2e}", q.log_z, kl.kl))
}

// ------------------------------------------------------------ cli_runner

pub fn config_hash_stable() -> Outcome {
    let text = "experiment = \"table2\"\nfamily.kind = \"copula_rot\"\n";
    let a = ExperimentConfig::from_toml_str(text).map_err(err)?;
    let b = ExperimentConfig::from_toml_str(text).map_err(err)?;
    if a.hash() != b.hash() {
        return Err("equal configs hash differently".into());
    }
    if a.hash() == a.clone().with_seed(1).hash() {
        return Err("seed does not enter the hash".into());
    }
    Ok(a.hash())
}

type Check = (&'static str, &'static str, fn() -> Outcome);

const SUITE: &[Check] = &[
    ("specfn", "digamma_recurrence", digamma_recurrence),
    ("specfn", "incomplete_gamma_identities", incomplete_gamma_identities),
    ("specfn", "normal_quantile_round_trip", normal_quantile_round_trip),
    ("base_sampling", "stream_reproducibility", stream_reproducibility),
    ("base_sampling", "max_v_equals_g", || max_v_equals_g(&[1, 2, 5, 50], 10_000, 0)),
    ("base_sampling", "dirichlet_on_simplex", dirichlet_on_simplex),
    ("copula_core", "ctheta_normalization", || ctheta_normalization(5, 1000, 0)),
    ("copula_core", "one_dimensional_copula_is_beta", one_dimensional_copula_is_beta),
    ("copula_core", "one_dimensional_sampler_ks", || {
        let ks = one_dimensional_sampler_ks(100_000, 0)?;
        within("KS", ks, 0.0, 0.006)?;
        Ok(format!("KS {ks:.4}"))
    }),
    ("copula_core", "flip_round_trip", flip_round_trip),
    ("flow_stack", "normalization", || family_normalization(300)),
    ("flow_stack", "sample_density_consistency", sample_density_consistency),
    ("flow_stack", "rotation_orthogonality", || rotation_orthogonality(&[2, 3, 4, 5, 8, 17, 64])),
    ("flow_stack", "checkpoint_round_trip", checkpoint_round_trip),
    ("elbo_engine", "frozen_level_gradient", || gradient_exactness(1, 0)),
    ("elbo_engine", "self_target_elbo_zero", self_target_elbo_zero),
    ("targets", "potential_gradients", potential_gradients),
    ("targets", "horseshoe_reference_value", horseshoe_reference_value),
    ("oracle", "gaussian_log_z", gaussian_log_z),
    ("cli_runner", "config_hash_stable", config_hash_stable),
];

/// Runs the whole suite, with `fault` injected when given.
pub fn run_check(fault: Option<Fault>) -> Vec<CheckEntry> {
    let run = || {
        SUITE
            .iter()
            .map(|&(module, name, f)| {
                let (pass, detail) = match f() {
                    Ok(d) => (true, d),
                    Err(d) => (false, d),
                };
                CheckEntry { module, name, pass, detail }
            })
            .collect()
    };
    match fault {
        Some(Fault::FlipLogDetSign) => with_flipped_log_det_sign(run),
        None => run(),
    }
}
