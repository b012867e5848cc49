use serde::{Deserialize, Serialize};

use super::{DensityGrad, FamilySpec, FlowSample, Noise};
use crate::error::{config, Result};
use crate::sampling::RngState;
use crate::specfn::log_sum_exp;

/// Finite mixture with softmax weights over unconstrained logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub logits: Vec<f64>,
    pub components: Vec<FamilySpec>,
}

impl Mixture {
    pub fn new(logits: Vec<f64>, components: Vec<FamilySpec>) -> Result<Self> {
        if components.is_empty() || logits.len() != components.len() {
            return config("mixture needs one logit per component and at least one component");
        }
        let d = components[0].dim();
        for c in &components {
            if matches!(c, FamilySpec::Mixture(_)) {
                return config("mixture components cannot themselves be mixtures");
            }
            if c.dim() != d {
                return config("mixture components must share a dimension");
            }
        }
        Ok(Self { logits, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Normalized weights w̄ = softmax(logits).
    pub fn weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| (l - lse).exp()).collect()
    }

    fn log_weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn n_params(&self) -> usize {
        self.logits.len() + self.components.iter().map(FamilySpec::n_params).sum::<usize>()
    }

    /// Offsets of each component's block in the flat parameter vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.components.len());
        let mut o = self.logits.len();
        for c in &self.components {
            off.push(o);
            o += c.n_params();
        }
        off
    }

    /// logits, then every component's parameters in order.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.logits.clone();
        for c in &self.components {
            p.extend(c.params());
        }
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = (0..self.logits.len()).map(|k| format!("logit[{k}]")).collect();
        for (k, c) in self.components.iter().enumerate() {
            n.extend(c.param_names().into_iter().map(|s| format!("component[{k}].{s}")));
        }
        n
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return config(format!("expected {} parameters, got {}", self.n_params(), p.len()));
        }
        let k = self.logits.len();
        self.logits.copy_from_slice(&p[..k]);
        let mut o = k;
        for c in &mut self.components {
            let n = c.n_params();
            c.set_params(&p[o..o + n])?;
            o += n;
        }
        Ok(())
    }

    /// Picks a component by its weight, then draws that component's noise.
    pub fn sample_noise(&self, rng: &mut RngState) -> Result<Noise> {
        let w = self.weights();
        let r = rng.uniform_open();
        let mut acc = 0.0;
        let mut k = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if r < acc {
                k = i;
                break;
            }
        }
        self.component_noise(k, rng)
    }

    pub fn component_noise(&self, k: usize, rng: &mut RngState) -> Result<Noise> {
        let c = self.components.get(k).ok_or_else(|| crate::Error::Config(format!("no mixture component {k}")))?;
        let mut n = c.sample_noise(rng)?;
        n.component = k;
        Ok(n)
    }

    pub fn push_forward(&self, noise: &Noise) -> Result<FlowSample> {
        let k = noise.component;
        let c = self.components.get(k).ok_or_else(|| crate::Error::Config(format!("no mixture component {k}")))?;
        let mut s = c.push_forward(noise)?;
        s.component = k;
        let lw = self.log_weights();
        let terms: Vec<f64> = self
            .components
            .iter()
            .enumerate()
            .map(|(j, cj)| Ok(lw[j] + if j == k { s.log_q } else { cj.log_density(&s.x)? }))
            .collect::<Result<_>>()?;
        s.log_q = log_sum_exp(&terms);
        Ok(s)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let lw = self.log_weights();
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&lw)
            .map(|(c, w)| Ok(w + c.log_density(x)?))
            .collect::<Result<_>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn density_grad(&self, x: &[f64], known: Option<&FlowSample>) -> Result<DensityGrad> {
        let d = self.dim();
        let lw = self.log_weights();
        let w = self.weights();
        let grads: Vec<DensityGrad> = self
            .components
            .iter()
            .enumerate()
            .map(|(j, c)| c.density_grad(x, known.filter(|s| s.component == j)))
            .collect::<Result<_>>()?;
        let terms: Vec<f64> = grads.iter().zip(&lw).map(|(g, l)| l + g.log_q).collect();
        let log_q = log_sum_exp(&terms);
        if log_q == f64::NEG_INFINITY {
            return Ok(DensityGrad::unsupported(d, self.n_params()));
        }
        let r: Vec<f64> = terms.iter().map(|t| (t - log_q).exp()).collect();
        let mut dx = vec![0.0; d];
        let mut dparams: Vec<f64> = r.iter().zip(&w).map(|(ri, wi)| ri - wi).collect();
        for (g, &rj) in grads.iter().zip(&r) {
            for i in 0..d {
                dx[i] += rj * g.dx[i];
            }
            dparams.extend(g.dparams.iter().map(|v| rj * v));
        }
        Ok(DensityGrad { log_q, dx, dparams })
    }

    /// Path VJP: only the sampled component's parameters move the sample.
    pub fn pullback(&self, sample: &FlowSample, gx: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n_params()];
        let k = sample.component;
        let off = self.offsets()[k];
        let gk = self.components[k].pullback(sample, gx)?;
        g[off..off + gk.len()].copy_from_slice(&gk);
        Ok(g)
    }

    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for c in &self.components {
            let (l, h) = c.bounding_box()?;
            for i in 0..d {
                lo[i] = lo[i].min(l[i]);
                hi[i] = hi[i].max(h[i]);
            }
        }
        Ok((lo, hi))
    }
}
