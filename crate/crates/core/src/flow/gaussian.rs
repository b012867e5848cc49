use serde::{Deserialize, Serialize};

use super::{DensityGrad, FlowSample, Noise, SampleBase};
use crate::error::{config, domain, Result};
use crate::sampling::RngState;
use crate::specfn::{sigmoid, softplus, LN_SQRT_2PI};

/// How far out, in standard deviations, the bounding box of a Gaussian reaches.
const BOX_SDS: f64 = 8.0;

/// Diagonal Gaussian x = μ + σ ⊙ ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldGaussian {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl MeanFieldGaussian {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.len() != log_sigma.len() {
            return config("mean-field Gaussian needs matching non-empty mu and log_sigma");
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn n_params(&self) -> usize {
        2 * self.dim()
    }

    /// mu, then log_sigma.
    pub fn params(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.log_sigma).copied().collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let d = self.dim();
        (0..d).map(|i| format!("mu[{i}]")).chain((0..d).map(|i| format!("log_sigma[{i}]"))).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let d = self.dim();
        if p.len() != 2 * d {
            return config(format!("expected {} parameters, got {}", 2 * d, p.len()));
        }
        self.mu.copy_from_slice(&p[..d]);
        self.log_sigma.copy_from_slice(&p[d..]);
        Ok(())
    }

    pub fn push_forward(&self, noise: &Noise) -> Result<FlowSample> {
        let d = self.dim();
        let eps = &noise.values;
        if eps.len() != d {
            return config(format!("normal noise of length {} for dimension {d}", eps.len()));
        }
        let x: Vec<f64> = (0..d).map(|i| self.mu[i] + self.log_sigma[i].exp() * eps[i]).collect();
        let log_q = -self.log_sigma.iter().sum::<f64>() - 0.5 * eps.iter().map(|e| e * e).sum::<f64>() - d as f64 * LN_SQRT_2PI;
        Ok(FlowSample::gaussian(noise.component, eps.clone(), x, log_q))
    }

    pub fn density_grad(&self, x: &[f64], known: Option<&FlowSample>) -> Result<DensityGrad> {
        let d = self.dim();
        let n: Vec<f64> = match known {
            Some(s) => s.normal_scores.clone(),
            None => (0..d).map(|i| (x[i] - self.mu[i]) / self.log_sigma[i].exp()).collect(),
        };
        let log_q = -self.log_sigma.iter().sum::<f64>() - 0.5 * n.iter().map(|e| e * e).sum::<f64>() - d as f64 * LN_SQRT_2PI;
        let dx: Vec<f64> = (0..d).map(|i| -n[i] / self.log_sigma[i].exp()).collect();
        let mut dparams: Vec<f64> = dx.iter().map(|g| -g).collect();
        dparams.extend(n.iter().map(|e| e * e - 1.0));
        Ok(DensityGrad { log_q, dx, dparams })
    }

    pub fn path_entropy_grad(&self) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        g.extend(std::iter::repeat(1.0).take(d));
        g
    }

    pub fn pullback(&self, sample: &FlowSample, gx: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = gx.to_vec();
        g.extend((0..d).map(|i| gx[i] * self.log_sigma[i].exp() * sample.normal_scores[i]));
        g
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let half = |i: usize| BOX_SDS * self.log_sigma[i].exp();
        let lo = (0..self.dim()).map(|i| self.mu[i] - half(i)).collect();
        let hi = (0..self.dim()).map(|i| self.mu[i] + half(i)).collect();
        (lo, hi)
    }
}

/// Full-covariance Gaussian x = m + Lε with L lower-triangular.
///
/// The diagonal of L is softplus of its raw entry; the strict lower triangle
/// is stored as is. `raw_scale` holds the lower triangle row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullCovGaussian {
    pub mean: Vec<f64>,
    pub raw_scale: Vec<f64>,
}

fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl FullCovGaussian {
    pub fn new(mean: Vec<f64>, raw_scale: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || raw_scale.len() != d * (d + 1) / 2 {
            return config(format!("full-covariance Gaussian of dimension {d} needs {} scale entries", d * (d + 1) / 2));
        }
        Ok(Self { mean, raw_scale })
    }

    /// Builds the raw parametrization from a lower-triangular factor with a
    /// positive diagonal, given row-major as a dense matrix.
    pub fn from_factor(mean: Vec<f64>, factor: &[Vec<f64>]) -> Result<Self> {
        let d = mean.len();
        let mut raw = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                let l = factor[i][j];
                raw.push(if i == j {
                    if !(l > 0.0) {
                        return domain(format!("scale factor diagonal must be positive, got {l}"));
                    }
                    crate::specfn::softplus_inv(l)?
                } else {
                    l
                });
            }
        }
        Self::new(mean, raw)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_params(&self) -> usize {
        let d = self.dim();
        d + d * (d + 1) / 2
    }

    /// mean, then the raw lower triangle row by row.
    pub fn params(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.raw_scale).copied().collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let d = self.dim();
        let mut n: Vec<String> = (0..d).map(|i| format!("mean[{i}]")).collect();
        for i in 0..d {
            for j in 0..=i {
                n.push(if i == j { format!("raw_scale[{i},{j}]") } else { format!("scale[{i},{j}]") });
            }
        }
        n
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return config(format!("expected {} parameters, got {}", self.n_params(), p.len()));
        }
        let d = self.dim();
        self.mean.copy_from_slice(&p[..d]);
        self.raw_scale.copy_from_slice(&p[d..]);
        Ok(())
    }

    /// Entry (i, j) of L for j ≤ i.
    pub fn factor(&self, i: usize, j: usize) -> f64 {
        let r = self.raw_scale[tri(i, j)];
        if i == j {
            softplus(r)
        } else {
            r
        }
    }

    /// Dense L, row-major.
    pub fn factor_dense(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| if j <= i { self.factor(i, j) } else { 0.0 }).collect()).collect()
    }

    fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.factor(i, i).ln()).sum()
    }

    fn solve_lower(&self, r: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut e = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|j| self.factor(i, j) * e[j]).sum();
            e[i] = (r[i] - s) / self.factor(i, i);
        }
        e
    }

    fn solve_upper_transpose(&self, e: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut a = vec![0.0; d];
        for i in (0..d).rev() {
            let s: f64 = (i + 1..d).map(|k| self.factor(k, i) * a[k]).sum();
            a[i] = (e[i] - s) / self.factor(i, i);
        }
        a
    }

    pub fn push_forward(&self, noise: &Noise) -> Result<FlowSample> {
        let d = self.dim();
        let eps = &noise.values;
        if eps.len() != d {
            return config(format!("normal noise of length {} for dimension {d}", eps.len()));
        }
        let x: Vec<f64> = (0..d).map(|i| self.mean[i] + (0..=i).map(|j| self.factor(i, j) * eps[j]).sum::<f64>()).collect();
        let log_q = -self.log_det() - 0.5 * eps.iter().map(|e| e * e).sum::<f64>() - d as f64 * LN_SQRT_2PI;
        Ok(FlowSample::gaussian(noise.component, eps.clone(), x, log_q))
    }

    pub fn density_grad(&self, x: &[f64], known: Option<&FlowSample>) -> Result<DensityGrad> {
        let d = self.dim();
        let eps = match known {
            Some(s) => s.normal_scores.clone(),
            None => {
                let r: Vec<f64> = (0..d).map(|i| x[i] - self.mean[i]).collect();
                self.solve_lower(&r)
            }
        };
        let a = self.solve_upper_transpose(&eps);
        let log_q = -self.log_det() - 0.5 * eps.iter().map(|e| e * e).sum::<f64>() - d as f64 * LN_SQRT_2PI;
        let dx: Vec<f64> = a.iter().map(|v| -v).collect();
        let mut dparams = a.clone();
        for i in 0..d {
            for j in 0..=i {
                let mut g = a[i] * eps[j];
                if i == j {
                    g = (g - 1.0 / self.factor(i, i)) * sigmoid(self.raw_scale[tri(i, i)]);
                }
                dparams.push(g);
            }
        }
        Ok(DensityGrad { log_q, dx, dparams })
    }

    pub fn path_entropy_grad(&self) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        for i in 0..d {
            for j in 0..=i {
                g.push(if i == j { sigmoid(self.raw_scale[tri(i, i)]) / self.factor(i, i) } else { 0.0 });
            }
        }
        g
    }

    pub fn pullback(&self, sample: &FlowSample, gx: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let eps = &sample.normal_scores;
        let mut g = gx.to_vec();
        for i in 0..d {
            for j in 0..=i {
                let mut v = gx[i] * eps[j];
                if i == j {
                    v *= sigmoid(self.raw_scale[tri(i, i)]);
                }
                g.push(v);
            }
        }
        g
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let sd = |i: usize| (0..=i).map(|j| self.factor(i, j).powi(2)).sum::<f64>().sqrt();
        let lo = (0..d).map(|i| self.mean[i] - BOX_SDS * sd(i)).collect();
        let hi = (0..d).map(|i| self.mean[i] + BOX_SDS * sd(i)).collect();
        (lo, hi)
    }
}

pub(super) fn sample_normal_noise(d: usize, rng: &mut RngState) -> Vec<f64> {
    (0..d).map(|_| rng.standard_normal()).collect()
}

impl FlowSample {
    fn gaussian(component: usize, eps: Vec<f64>, x: Vec<f64>, log_q: f64) -> Self {
        FlowSample {
            component,
            base: SampleBase::Normal,
            v: Vec::new(),
            u: Vec::new(),
            x_prime: x.clone(),
            normal_scores: eps,
            x,
            log_q,
        }
    }
}
