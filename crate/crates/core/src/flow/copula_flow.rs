use serde::{Deserialize, Serialize};

use super::butterfly::{build_butterfly, Butterfly, RotationParams};
use super::marginals::MarginalParams;
use super::{DensityGrad, FamilyKind, FlowSample, Noise, SampleBase};
use crate::copula::{flip_forward, flip_inverse, flip_log_det, log_density_ctheta_grad, FlipMask, ThetaParams};
use crate::error::{config, Result};
use crate::sampling::{implicit_dz_dshape, sample_gamma, BaseDraw, RngState};
use crate::specfn::{normal_cdf, normal_log_pdf, normal_quantile, sigmoid, softplus};

/// Base law on the hypercube, in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaBase {
    /// Copula-like density; a = softplus(raw_a) and so on.
    CopulaLike { raw_a: f64, raw_b: f64, raw_alpha: Vec<f64> },
    /// Uniform on the cube, i.e. the independence copula.
    Independent,
}

/// Base → flip map → Gaussian quantile marginals → optional butterfly
/// rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaFlow {
    pub base: CopulaBase,
    pub mask: FlipMask,
    pub marginals: MarginalParams,
    pub rotation: Option<RotationParams>,
}

/// Quantile of the innermost level the flip image can reach when δ ∈ {0, 1}.
const OPEN_EDGE_SCORE: f64 = 8.3;

impl CopulaFlow {
    pub fn new(base: CopulaBase, mask: FlipMask, marginals: MarginalParams, rotation: Option<RotationParams>) -> Result<Self> {
        let d = marginals.dim();
        if d == 0 {
            return config("a flow needs dimension at least 1");
        }
        if mask.dim() != d {
            return config(format!("mask dimension {} does not match marginals dimension {d}", mask.dim()));
        }
        if let CopulaBase::CopulaLike { raw_alpha, .. } = &base {
            if raw_alpha.len() != d {
                return config(format!("{} alphas for dimension {d}", raw_alpha.len()));
            }
        }
        if let Some(r) = &rotation {
            build_butterfly(d, r)?;
        }
        Ok(Self { base, mask, marginals, rotation })
    }

    pub fn dim(&self) -> usize {
        self.marginals.dim()
    }

    pub fn kind(&self) -> FamilyKind {
        match (&self.base, self.rotation.is_some()) {
            (CopulaBase::CopulaLike { .. }, true) => FamilyKind::CopulaRot,
            (CopulaBase::CopulaLike { .. }, false) => FamilyKind::CopulaNorot,
            (CopulaBase::Independent, true) => FamilyKind::IndepRot,
            (CopulaBase::Independent, false) => FamilyKind::IndepNorot,
        }
    }

    /// Constrained base parameters, if the base is copula-like.
    pub fn theta(&self) -> Option<ThetaParams> {
        match &self.base {
            CopulaBase::CopulaLike { raw_a, raw_b, raw_alpha } => Some(ThetaParams {
                a: softplus(*raw_a),
                b: softplus(*raw_b),
                alpha: raw_alpha.iter().map(|&r| softplus(r)).collect(),
            }),
            CopulaBase::Independent => None,
        }
    }

    fn butterfly(&self) -> Result<Option<Butterfly>> {
        self.rotation.as_ref().map(|r| build_butterfly(self.dim(), r)).transpose()
    }

    fn base_len(&self) -> usize {
        match &self.base {
            CopulaBase::CopulaLike { .. } => self.dim() + 2,
            CopulaBase::Independent => 0,
        }
    }

    pub fn n_params(&self) -> usize {
        let d = self.dim();
        self.base_len() + 2 * d + self.rotation.as_ref().map_or(0, |_| d - 1)
    }

    /// Unconstrained parameters: raw_a, raw_b, raw_alpha (copula-like base
    /// only), then mu, log_sigma, then nu (rotated kinds only).
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        if let CopulaBase::CopulaLike { raw_a, raw_b, raw_alpha } = &self.base {
            p.push(*raw_a);
            p.push(*raw_b);
            p.extend(raw_alpha);
        }
        p.extend(&self.marginals.mu);
        p.extend(&self.marginals.log_sigma);
        if let Some(r) = &self.rotation {
            p.extend(&r.nu);
        }
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let d = self.dim();
        let mut n = Vec::with_capacity(self.n_params());
        if self.base_len() > 0 {
            n.push("raw_a".to_string());
            n.push("raw_b".to_string());
            n.extend((0..d).map(|i| format!("raw_alpha[{i}]")));
        }
        n.extend((0..d).map(|i| format!("mu[{i}]")));
        n.extend((0..d).map(|i| format!("log_sigma[{i}]")));
        if self.rotation.is_some() {
            n.extend((0..d - 1).map(|i| format!("nu[{i}]")));
        }
        n
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return config(format!("expected {} parameters, got {}", self.n_params(), p.len()));
        }
        let d = self.dim();
        let mut it = p.iter().copied();
        if let CopulaBase::CopulaLike { raw_a, raw_b, raw_alpha } = &mut self.base {
            *raw_a = it.next().unwrap();
            *raw_b = it.next().unwrap();
            raw_alpha.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        self.marginals.mu = it.by_ref().take(d).collect();
        self.marginals.log_sigma = it.by_ref().take(d).collect();
        if let Some(r) = &mut self.rotation {
            r.nu = it.collect();
        }
        Ok(())
    }

    pub fn sample_noise(&self, rng: &mut RngState) -> Result<Vec<f64>> {
        match self.theta() {
            Some(theta) => theta.gamma_shapes().iter().map(|&s| sample_gamma(s, rng)).collect(),
            None => Ok((0..self.dim()).map(|_| rng.uniform_open()).collect()),
        }
    }

    pub fn push_forward(&self, noise: &Noise) -> Result<FlowSample> {
        let d = self.dim();
        let (base, v) = match &self.base {
            CopulaBase::CopulaLike { .. } => {
                let draw = BaseDraw::from_gammas(noise.values.clone())?;
                if draw.dim() != d {
                    return config(format!("gamma noise of length {} for dimension {d}", noise.values.len()));
                }
                let v = draw.v.clone();
                (SampleBase::Copula(draw), v)
            }
            CopulaBase::Independent => {
                if noise.values.len() != d {
                    return config(format!("uniform noise of length {} for dimension {d}", noise.values.len()));
                }
                (SampleBase::Uniform, noise.values.clone())
            }
        };
        let u = flip_forward(&v, &self.mask)?;
        let mut n = Vec::with_capacity(d);
        let mut x_prime = Vec::with_capacity(d);
        let mut quantile_ld = 0.0;
        for i in 0..d {
            let ni = normal_quantile(u[i])?;
            x_prime.push(self.marginals.mu[i] + self.marginals.sigma(i) * ni);
            quantile_ld += self.marginals.log_sigma[i] - normal_log_pdf(ni);
            n.push(ni);
        }
        let x = match self.butterfly()? {
            Some(b) => b.apply(&x_prime)?,
            None => x_prime.clone(),
        };
        let log_c = self.base_log_density(&v)?;
        let log_q = log_c - flip_log_det(&self.mask) - quantile_ld;
        Ok(FlowSample { component: noise.component, base, v, u, x_prime, normal_scores: n, x, log_q })
    }

    fn base_log_density(&self, v: &[f64]) -> Result<f64> {
        Ok(match self.theta() {
            Some(theta) => crate::copula::log_density_ctheta(v, &theta)?,
            None if v.iter().all(|&x| x > 0.0 && x < 1.0) => 0.0,
            None => f64::NEG_INFINITY,
        })
    }

    /// Inverse pass: (x′, n, v) for a point x, or `None` outside the support.
    fn invert(&self, x: &[f64]) -> Result<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> {
        let x_prime = match self.butterfly()? {
            Some(b) => b.apply_transpose(x)?,
            None => x.to_vec(),
        };
        let n: Vec<f64> = (0..self.dim())
            .map(|i| (x_prime[i] - self.marginals.mu[i]) / self.marginals.sigma(i))
            .collect();
        let u: Vec<f64> = n.iter().map(|&t| normal_cdf(t)).collect();
        Ok(flip_inverse(&u, &self.mask)?.map(|v| (x_prime, n, v)))
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let Some((_, n, v)) = self.invert(x)? else {
            return Ok(f64::NEG_INFINITY);
        };
        let log_c = self.base_log_density(&v)?;
        if log_c == f64::NEG_INFINITY {
            return Ok(log_c);
        }
        let quantile_ld: f64 = (0..self.dim()).map(|i| self.marginals.log_sigma[i] - normal_log_pdf(n[i])).sum();
        Ok(log_c - flip_log_det(&self.mask) - quantile_ld)
    }

    /// log q at x with its gradient in x and in the parameters at fixed x.
    /// When `known` is a sample of this flow at x, its forward states are
    /// reused instead of inverting.
    pub fn density_grad(&self, x: &[f64], known: Option<&FlowSample>) -> Result<DensityGrad> {
        let d = self.dim();
        let (x_prime, n, v) = match known {
            Some(s) => (s.x_prime.clone(), s.normal_scores.clone(), s.v.clone()),
            None => match self.invert(x)? {
                Some(t) => t,
                None => return Ok(DensityGrad::unsupported(d, self.n_params())),
            },
        };
        let theta = self.theta();
        let (log_c, cg) = match &theta {
            Some(th) => {
                let (lc, g) = log_density_ctheta_grad(&v, th)?;
                (lc, Some(g))
            }
            None => (self.base_log_density(&v)?, None),
        };
        if log_c == f64::NEG_INFINITY {
            return Ok(DensityGrad::unsupported(d, self.n_params()));
        }
        let mut grad = Vec::with_capacity(self.n_params());
        if let (Some(g), CopulaBase::CopulaLike { raw_a, raw_b, raw_alpha }) = (&cg, &self.base) {
            grad.push(g.a * sigmoid(*raw_a));
            grad.push(g.b * sigmoid(*raw_b));
            grad.extend(g.alpha.iter().zip(raw_alpha).map(|(ga, &r)| ga * sigmoid(r)));
        }
        let mut gx_prime = vec![0.0; d];
        let mut g_mu = vec![0.0; d];
        let mut g_ls = vec![0.0; d];
        let mut quantile_ld = 0.0;
        for i in 0..d {
            let gv = cg.as_ref().map_or(0.0, |g| g.v[i]);
            let gu = gv / (2.0 * self.mask.delta[i] - 1.0);
            let gn = gu * normal_log_pdf(n[i]).exp() - n[i];
            let sigma = self.marginals.sigma(i);
            gx_prime[i] = gn / sigma;
            g_mu[i] = -gn / sigma;
            g_ls[i] = -1.0 - gn * n[i];
            quantile_ld += self.marginals.log_sigma[i] - normal_log_pdf(n[i]);
        }
        grad.extend(g_mu);
        grad.extend(g_ls);
        let dx = match self.butterfly()? {
            Some(b) => {
                let (gx, gnu) = b.vjp_transpose(&x_prime, &gx_prime);
                grad.extend(gnu);
                gx
            }
            None => gx_prime,
        };
        Ok(DensityGrad { log_q: log_c - flip_log_det(&self.mask) - quantile_ld, dx, dparams: grad })
    }

    /// Vector–Jacobian product of the sample path x(params; noise).
    pub fn pullback(&self, sample: &FlowSample, gx: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let (gx_prime, gnu) = match self.butterfly()? {
            Some(b) => {
                let (g, gnu) = b.vjp(&sample.x, gx);
                (g, Some(gnu))
            }
            None => (gx.to_vec(), None),
        };
        let mut g_mu = vec![0.0; d];
        let mut g_ls = vec![0.0; d];
        let mut gv = vec![0.0; d];
        for i in 0..d {
            let sigma = self.marginals.sigma(i);
            let n = sample.normal_scores[i];
            g_mu[i] = gx_prime[i];
            g_ls[i] = gx_prime[i] * sigma * n;
            let gu = gx_prime[i] * sigma / normal_log_pdf(n).exp();
            gv[i] = gu * (2.0 * self.mask.delta[i] - 1.0);
        }
        let mut grad = Vec::with_capacity(self.n_params());
        if let (CopulaBase::CopulaLike { raw_a, raw_b, raw_alpha }, SampleBase::Copula(draw), Some(theta)) =
            (&self.base, &sample.base, self.theta())
        {
            let gz = draw.pullback(&gv);
            let shapes = theta.gamma_shapes();
            let mut gshape = Vec::with_capacity(d + 2);
            for j in 0..d + 2 {
                gshape.push(if gz[j] == 0.0 { 0.0 } else { gz[j] * implicit_dz_dshape(draw.z[j], shapes[j])? });
            }
            grad.push(gshape[d] * sigmoid(*raw_a));
            grad.push(gshape[d + 1] * sigmoid(*raw_b));
            grad.extend((0..d).map(|i| gshape[i] * sigmoid(raw_alpha[i])));
        }
        grad.extend(g_mu);
        grad.extend(g_ls);
        if let Some(gnu) = gnu {
            grad.extend(gnu);
        }
        Ok(grad)
    }

    /// Axis-aligned box containing the support.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let half_scores: Vec<f64> = (0..d)
            .map(|i| {
                let (_, hi) = self.mask.image_interval(i);
                if hi >= 1.0 {
                    OPEN_EDGE_SCORE
                } else {
                    normal_quantile(hi).unwrap_or(OPEN_EDGE_SCORE)
                }
            })
            .collect();
        let (center, dense) = match self.butterfly()? {
            Some(b) => (b.apply(&self.marginals.mu)?, b.to_dense()),
            None => {
                let eye = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
                (self.marginals.mu.clone(), eye)
            }
        };
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for i in 0..d {
            let half: f64 = (0..d).map(|j| dense[i][j].abs() * self.marginals.sigma(j) * half_scores[j]).sum();
            lo.push(center[i] - half);
            hi.push(center[i] + half);
        }
        Ok((lo, hi))
    }
}
