//! Target densities π(x) ∝ e^{−U(x)}.
//!
//! All priors are normalized, so e^{−U} integrates to the model evidence and
//! ELBOs are directly comparable to log Z.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{config, Result};
use crate::flow::FamilySpec;
use crate::sampling::RngState;
use crate::specfn::{log1p_exp, sigmoid, LN_SQRT_2PI};

/// A target given through its potential U = −log π̃.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn potential(&self, x: &[f64]) -> f64;
    fn grad_potential(&self, x: &[f64]) -> Vec<f64>;
    fn label(&self) -> &str;

    /// log Z when the target is known to be normalized in closed form.
    fn known_log_z(&self) -> Option<f64> {
        None
    }

    fn potential_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.potential(x), self.grad_potential(x))
    }
}

/// Covariates, ±1 labels and prior precision for Bayesian logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDataset {
    pub covariates: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub tau: f64,
}

impl LogisticDataset {
    pub fn dim(&self) -> usize {
        self.covariates.first().map_or(2, Vec::len)
    }

    /// CSV with columns a1, a2, …, y.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut s = (1..=d).map(|i| format!("a{i}")).collect::<Vec<_>>().join(",");
        s.push_str(",y\n");
        for (a, y) in self.covariates.iter().zip(&self.labels) {
            for v in a {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{y}");
        }
        s
    }
}

/// 30 points from N((1, 5), I) labelled +1 and 30 from N((−5, 1), 1.1²I)
/// labelled −1, with prior precision τ = 0.01.
pub fn generate_synthetic_logistic(rng: &mut RngState) -> LogisticDataset {
    let mut covariates = Vec::with_capacity(60);
    let mut labels = Vec::with_capacity(60);
    for _ in 0..30 {
        covariates.push(vec![1.0 + rng.standard_normal(), 5.0 + rng.standard_normal()]);
        labels.push(1.0);
    }
    for _ in 0..30 {
        covariates.push(vec![-5.0 + 1.1 * rng.standard_normal(), 1.0 + 1.1 * rng.standard_normal()]);
        labels.push(-1.0);
    }
    LogisticDataset { covariates, labels, tau: 0.01 }
}

/// Posterior of logistic regression with a N(0, τ⁻¹I) prior.
#[derive(Debug, Clone)]
pub struct LogisticPosterior {
    data: LogisticDataset,
    d: usize,
    label: String,
}

pub fn logistic_posterior(data: LogisticDataset) -> Result<LogisticPosterior> {
    let d = data.dim();
    if data.covariates.iter().any(|a| a.len() != d) || data.covariates.len() != data.labels.len() {
        return config("logistic dataset has ragged covariates or mismatched labels");
    }
    if data.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return config("logistic labels must be -1 or +1");
    }
    if !(data.tau > 0.0) {
        return config("prior precision must be positive");
    }
    Ok(LogisticPosterior { data, d, label: "logistic".into() })
}

impl LogisticPosterior {
    pub fn data(&self) -> &LogisticDataset {
        &self.data
    }
}

impl TargetDensity for LogisticPosterior {
    fn dim(&self) -> usize {
        self.d
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let tau = self.data.tau;
        let mut u = 0.5 * self.d as f64 * (2.0 * PI / tau).ln() + 0.5 * tau * x.iter().map(|v| v * v).sum::<f64>();
        for (a, y) in self.data.covariates.iter().zip(&self.data.labels) {
            let z: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
            u += log1p_exp(-y * z);
        }
        u
    }

    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().map(|v| self.data.tau * v).collect();
        for (a, y) in self.data.covariates.iter().zip(&self.data.labels) {
            let z: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
            let s = sigmoid(-y * z);
            for (gi, ai) in g.iter_mut().zip(a) {
                *gi -= y * ai * s;
            }
        }
        g
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn potential_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let tau = self.data.tau;
        let mut u = 0.5 * self.d as f64 * (2.0 * PI / tau).ln() + 0.5 * tau * x.iter().map(|v| v * v).sum::<f64>();
        let mut g: Vec<f64> = x.iter().map(|v| tau * v).collect();
        for (a, y) in self.data.covariates.iter().zip(&self.data.labels) {
            let t = -y * a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>();
            // log(1 + e^t) and σ(t) from a single exponential.
            let (lp, s) = if t > 0.0 {
                let e = (-t).exp();
                (t + e.ln_1p(), 1.0 / (1.0 + e))
            } else {
                let e = t.exp();
                (e.ln_1p(), e / (1.0 + e))
            };
            u += lp;
            for (gi, ai) in g.iter_mut().zip(a) {
                *gi -= y * ai * s;
            }
        }
        (u, g)
    }

    fn known_log_z(&self) -> Option<f64> {
        self.data.covariates.is_empty().then_some(0.0)
    }
}

/// Horseshoe toy posterior over (log η, log λ) with η ~ G(1/2, 1),
/// λ | η ~ IG(1/2, rate η) and y | λ ~ N(0, λ).
#[derive(Debug, Clone)]
pub struct HorseshoePosterior {
    y: f64,
}

pub fn horseshoe_posterior(y_obs: f64) -> Result<HorseshoePosterior> {
    if !y_obs.is_finite() {
        return config("horseshoe observation must be finite");
    }
    Ok(HorseshoePosterior { y: y_obs })
}

impl TargetDensity for HorseshoePosterior {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        -x1 + x2 + x1.exp() + (x1 - x2).exp() + 0.5 * self.y * self.y * (-x2).exp() + PI.ln() + LN_SQRT_2PI
    }

    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        let (x1, x2) = (x[0], x[1]);
        let e12 = (x1 - x2).exp();
        vec![-1.0 + x1.exp() + e12, 1.0 - e12 - 0.5 * self.y * self.y * (-x2).exp()]
    }

    fn label(&self) -> &str {
        "horseshoe"
    }
}

/// Normalized Gaussian N(m, LLᵀ).
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    factor: Vec<Vec<f64>>,
    log_det: f64,
}

pub fn gaussian_target(mean: Vec<f64>, cov_factor: Vec<Vec<f64>>) -> Result<GaussianTarget> {
    let d = mean.len();
    if d == 0 || cov_factor.len() != d || cov_factor.iter().any(|r| r.len() != d) {
        return config("covariance factor must be a square matrix matching the mean");
    }
    for i in 0..d {
        if !(cov_factor[i][i] > 0.0) {
            return config(format!("covariance factor diagonal entry {i} is not positive"));
        }
        if (i + 1..d).any(|j| cov_factor[i][j] != 0.0) {
            return config("covariance factor must be lower-triangular");
        }
    }
    let log_det = (0..d).map(|i| cov_factor[i][i].ln()).sum();
    Ok(GaussianTarget { mean, factor: cov_factor, log_det })
}

impl GaussianTarget {
    fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut e = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|j| self.factor[i][j] * e[j]).sum();
            e[i] = (x[i] - self.mean[i] - s) / self.factor[i][i];
        }
        e
    }
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let e = self.whiten(x);
        0.5 * e.iter().map(|v| v * v).sum::<f64>() + self.log_det + self.mean.len() as f64 * LN_SQRT_2PI
    }

    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let e = self.whiten(x);
        let mut a = vec![0.0; d];
        for i in (0..d).rev() {
            let s: f64 = (i + 1..d).map(|k| self.factor[k][i] * a[k]).sum();
            a[i] = (e[i] - s) / self.factor[i][i];
        }
        a
    }

    fn label(&self) -> &str {
        "gaussian"
    }

    fn known_log_z(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// U(x) = −log q(x) for a variational family: a normalized target on which
/// the family is exact.
pub struct FamilyTarget {
    spec: FamilySpec,
}

impl FamilyTarget {
    pub fn new(spec: FamilySpec) -> Self {
        Self { spec }
    }
}

impl TargetDensity for FamilyTarget {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        -self.spec.log_density(x).unwrap_or(f64::NAN)
    }

    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        match self.spec.density_grad(x, None) {
            Ok(g) => g.dx.into_iter().map(|v| -v).collect(),
            Err(_) => vec![f64::NAN; self.dim()],
        }
    }

    fn label(&self) -> &str {
        "family"
    }

    fn known_log_z(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Settings for the one-hidden-layer ReLU regression network.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BnnConfig {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sd: f64,
    /// Inputs are drawn uniformly from [−x_range, x_range].
    pub x_range: f64,
    /// Variance σ₀² of the Normal prior on weights and biases.
    pub prior_var: f64,
    /// Variance of the Normal prior on the log noise variance.
    pub log_noise_prior_var: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            input: 1,
            hidden: 5,
            output: 1,
            n_train: 40,
            n_test: 100,
            noise_sd: 0.1,
            x_range: 1.5,
            prior_var: 1.0,
            log_noise_prior_var: 16.0,
        }
    }
}

/// Posterior of a one-hidden-layer ReLU network with Gaussian likelihood
/// N(y; f(x), e^s), where s, the log noise variance, has a N(0, 16) prior.
///
/// Parameters are laid out as W₁ (hidden × input, row-major), b₁, W₂
/// (output × hidden, row-major), b₂, s.
#[derive(Debug, Clone)]
pub struct BnnRegression {
    cfg: BnnConfig,
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<Vec<f64>>,
    pub x_test: Vec<Vec<f64>>,
    pub y_test: Vec<Vec<f64>>,
}

fn regression_function(x: &[f64]) -> f64 {
    (3.0 * x[0]).sin()
}

/// Builds the network posterior with a synthetic y = sin(3x) + noise dataset.
pub fn tiny_bnn_regression(cfg: &BnnConfig, rng: &mut RngState) -> Result<BnnRegression> {
    if cfg.input == 0 || cfg.hidden == 0 || cfg.output == 0 {
        return config("network widths must be positive");
    }
    if !(cfg.prior_var > 0.0 && cfg.log_noise_prior_var > 0.0) {
        return config("prior variances must be positive");
    }
    let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..cfg.input).map(|_| cfg.x_range * (2.0 * rng.uniform_open() - 1.0)).collect();
            let f = regression_function(&x);
            ys.push((0..cfg.output).map(|_| f + cfg.noise_sd * rng.standard_normal()).collect());
            xs.push(x);
        }
        (xs, ys)
    };
    let (x_train, y_train) = draw(cfg.n_train);
    let (x_test, y_test) = draw(cfg.n_test);
    Ok(BnnRegression { cfg: cfg.clone(), x_train, y_train, x_test, y_test })
}

impl BnnRegression {
    pub fn n_params(&self) -> usize {
        let c = &self.cfg;
        c.hidden * c.input + c.hidden + c.output * c.hidden + c.output + 1
    }

    /// Network output and hidden pre-activations.
    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.cfg;
        let (w1, rest) = w.split_at(c.hidden * c.input);
        let (b1, rest) = rest.split_at(c.hidden);
        let (w2, rest) = rest.split_at(c.output * c.hidden);
        let b2 = &rest[..c.output];
        let pre: Vec<f64> = (0..c.hidden)
            .map(|h| b1[h] + (0..c.input).map(|i| w1[h * c.input + i] * x[i]).sum::<f64>())
            .collect();
        let out = (0..c.output)
            .map(|o| b2[o] + (0..c.hidden).map(|h| w2[o * c.hidden + h] * pre[h].max(0.0)).sum::<f64>())
            .collect();
        (out, pre)
    }

    /// A starting mean for variational families: weights and biases drawn
    /// from their prior, noise variance at one percent of the variance of
    /// the training targets.
    pub fn initial_mean(&self, rng: &mut RngState) -> Vec<f64> {
        let sd = self.cfg.prior_var.sqrt();
        let mut m: Vec<f64> = (0..self.n_params() - 1).map(|_| sd * rng.standard_normal()).collect();
        let ys: Vec<f64> = self.y_train.iter().flatten().copied().collect();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        m.push(if var > 0.0 { (0.01 * var).ln() } else { 0.0 });
        m
    }

    /// Network prediction for one input under parameters `w`.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(w, x).0
    }

    /// Root mean squared error of given predictions on the held-out set.
    pub fn test_rmse(&self, predictions: &[Vec<f64>]) -> f64 {
        let mut sse = 0.0;
        let mut n = 0usize;
        for (p, y) in predictions.iter().zip(&self.y_test) {
            for (a, b) in p.iter().zip(y) {
                sse += (a - b) * (a - b);
                n += 1;
            }
        }
        (sse / n.max(1) as f64).sqrt()
    }

    fn prior_potential(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let c = &self.cfg;
        let n_w = w.len() - 1;
        let s = w[n_w];
        let mut u = 0.5 * n_w as f64 * (2.0 * PI * c.prior_var).ln() + 0.5 * (2.0 * PI * c.log_noise_prior_var).ln();
        let mut g = Vec::with_capacity(w.len());
        for &wi in &w[..n_w] {
            u += 0.5 * wi * wi / c.prior_var;
            g.push(wi / c.prior_var);
        }
        u += 0.5 * s * s / c.log_noise_prior_var;
        g.push(s / c.log_noise_prior_var);
        (u, g)
    }
}

impl TargetDensity for BnnRegression {
    fn dim(&self) -> usize {
        self.n_params()
    }

    fn potential(&self, w: &[f64]) -> f64 {
        self.potential_and_grad(w).0
    }

    fn grad_potential(&self, w: &[f64]) -> Vec<f64> {
        self.potential_and_grad(w).1
    }

    fn potential_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let c = &self.cfg;
        let (mut u, mut g) = self.prior_potential(w);
        let s = w[w.len() - 1];
        let inv_var = (-s).exp();
        let off_b1 = c.hidden * c.input;
        let off_w2 = off_b1 + c.hidden;
        let off_b2 = off_w2 + c.output * c.hidden;
        let is = w.len() - 1;
        for (x, y) in self.x_train.iter().zip(&self.y_train) {
            let (out, pre) = self.forward(w, x);
            for o in 0..c.output {
                let r = out[o] - y[o];
                u += LN_SQRT_2PI + 0.5 * s + 0.5 * r * r * inv_var;
                g[is] += 0.5 - 0.5 * r * r * inv_var;
                let go = r * inv_var;
                g[off_b2 + o] += go;
                for h in 0..c.hidden {
                    let act = pre[h].max(0.0);
                    g[off_w2 + o * c.hidden + h] += go * act;
                    if pre[h] > 0.0 {
                        let gh = go * w[off_w2 + o * c.hidden + h];
                        g[off_b1 + h] += gh;
                        for i in 0..c.input {
                            g[h * c.input + i] += gh * x[i];
                        }
                    }
                }
            }
        }
        (u, g)
    }

    fn label(&self) -> &str {
        "tiny_bnn"
    }

    fn known_log_z(&self) -> Option<f64> {
        self.x_train.is_empty().then_some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_gradient(t: &dyn TargetDensity, points: &[Vec<f64>], rel: f64) {
        let h = 1e-6;
        for x in points {
            let g = t.grad_potential(x);
            for i in 0..t.dim() {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (t.potential(&p) - t.potential(&m)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= rel * fd.abs().max(1.0), "{} coord {i}: {fd} vs {}", t.label(), g[i]);
            }
        }
    }

    fn random_points(d: usize, n: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngState::new(seed, 0);
        (0..n).map(|_| (0..d).map(|_| scale * rng.standard_normal()).collect()).collect()
    }

    #[test]
    fn logistic_generator() {
        let mut rng = RngState::new(1, 0);
        let data = generate_synthetic_logistic(&mut rng);
        assert_eq!(data.labels.iter().filter(|&&y| y == 1.0).count(), 30);
        assert_eq!(data.labels.iter().filter(|&&y| y == -1.0).count(), 30);
        assert_eq!(data.covariates.len(), 60);
        let mut m = [0.0; 2];
        let reps = 200;
        for s in 0..reps {
            let d = generate_synthetic_logistic(&mut RngState::new(s, 0));
            for a in d.covariates.iter().take(30) {
                m[0] += a[0] / (30 * reps) as f64;
                m[1] += a[1] / (30 * reps) as f64;
            }
        }
        assert!((m[0] - 1.0).abs() < 0.2 && (m[1] - 5.0).abs() < 0.2);
        assert!(data.to_csv().starts_with("a1,a2,y\n"));
        assert_eq!(data.to_csv().lines().count(), 61);
    }

    #[test]
    fn logistic_potential() {
        let data = generate_synthetic_logistic(&mut RngState::new(2, 0));
        let t = logistic_posterior(data).unwrap();
        let expected = (200.0 * PI).ln() + 60.0 * 2f64.ln();
        assert!((t.potential(&[0.0, 0.0]) - expected).abs() < 1e-12);
        assert!((t.potential(&[0.0, 0.0]) - 48.031_878_085_994_155).abs() < 1e-10);
        check_gradient(&t, &random_points(2, 100, 2.0, 3), 1e-5);
        for x in random_points(2, 100, 20.0, 8) {
            let (u, g) = t.potential_and_grad(&x);
            assert!((u - t.potential(&x)).abs() <= 1e-12 * u.abs());
            for (a, b) in g.iter().zip(t.grad_potential(&x)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        let empty = logistic_posterior(LogisticDataset { covariates: vec![], labels: vec![], tau: 0.01 }).unwrap();
        assert_eq!(empty.known_log_z(), Some(0.0));
        assert!(logistic_posterior(LogisticDataset { covariates: vec![vec![1.0, 2.0]], labels: vec![0.0], tau: 0.01 }).is_err());
    }

    #[test]
    fn horseshoe_potential() {
        let t = horseshoe_posterior(0.01).unwrap();
        // −log of G(1; 1/2, 1), IG(1; 1/2, 1), N(0.01; 0, 1) and the unit
        // Jacobian, evaluated in 30-digit arithmetic.
        assert!((t.potential(&[0.0, 0.0]) - 4.063_718_419_054_073).abs() < 1e-13);
        check_gradient(&t, &random_points(2, 100, 2.0, 4), 1e-5);
    }

    #[test]
    fn gaussian_target_basics() {
        let l = vec![vec![1.5, 0.0], vec![0.3, 0.7]];
        let t = gaussian_target(vec![1.0, -1.0], l).unwrap();
        let at_mean = t.potential(&[1.0, -1.0]);
        assert!((at_mean - (2.0 * LN_SQRT_2PI + 1.5f64.ln() + 0.7f64.ln())).abs() < 1e-14);
        check_gradient(&t, &random_points(2, 100, 2.0, 5), 1e-5);
        assert!(gaussian_target(vec![0.0], vec![vec![0.0]]).is_err());
        assert!(gaussian_target(vec![0.0, 0.0], vec![vec![1.0, 0.5], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn bnn_shapes_and_gradient() {
        let mut rng = RngState::new(6, 0);
        let t = tiny_bnn_regression(&BnnConfig::default(), &mut rng).unwrap();
        assert_eq!(t.dim(), 17);
        assert_eq!(t.x_train.len(), 40);
        // Nudge points away from ReLU kinks so finite differences are valid.
        let mut pts = Vec::new();
        for x in random_points(17, 200, 1.0, 7) {
            let c = &t.cfg;
            let kink = t.x_train.iter().any(|xi| {
                let (_, pre) = t.forward(&x, xi);
                pre.iter().take(c.hidden).any(|p| p.abs() < 1e-4)
            });
            if !kink {
                pts.push(x);
            }
            if pts.len() == 20 {
                break;
            }
        }
        assert_eq!(pts.len(), 20);
        check_gradient(&t, &pts, 1e-4);
        let prior_only = tiny_bnn_regression(&BnnConfig { n_train: 0, ..BnnConfig::default() }, &mut rng).unwrap();
        assert_eq!(prior_only.known_log_z(), Some(0.0));
        check_gradient(&prior_only, &pts, 1e-5);
    }
}
