//! Independent ground truth on two-dimensional grids: normalizing constants,
//! KL divergences, histogram comparisons and finite-difference gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::flow::FamilySpec;
use crate::specfn::log_sum_exp;
use crate::targets::TargetDensity;

/// Boundary-to-peak density ratio above which the box is considered too small.
pub const BOUNDARY_RATIO: f64 = 1e-12;

/// An axis-aligned box split into `resolution` cells per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(lower: [f64; 2], upper: [f64; 2], resolution: usize) -> Result<Self> {
        let g = Self { lower, upper, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upper[0] > self.lower[0] && self.upper[1] > self.lower[1]) {
            return config("grid upper corner must exceed the lower corner");
        }
        if self.resolution < 50 {
            return config("grid resolution must be at least 50");
        }
        Ok(())
    }

    pub fn step(&self) -> [f64; 2] {
        let n = self.resolution as f64;
        [(self.upper[0] - self.lower[0]) / n, (self.upper[1] - self.lower[1]) / n]
    }

    /// The same box at twice the resolution.
    pub fn refined(&self) -> Self {
        Self { resolution: 2 * self.resolution, ..self.clone() }
    }

    fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.step();
        [self.lower[0] + i as f64 * h[0], self.lower[1] + j as f64 * h[1]]
    }

    fn is_edge(&self, i: usize) -> bool {
        i == 0 || i == self.resolution
    }
}

/// A quadrature result with its boundary diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub log_z: f64,
    /// log of the largest boundary density relative to the largest density.
    pub log_boundary_ratio: f64,
    /// True when the boundary density exceeds [`BOUNDARY_RATIO`] of the peak.
    pub boundary_warning: bool,
}

fn check_target(target: &dyn TargetDensity, grid: &GridSpec) -> Result<()> {
    grid.validate()?;
    if target.dim() != 2 {
        return config("grid quadrature needs a two-dimensional target");
    }
    Ok(())
}

/// Evaluates `f` on every grid node, row by row.
fn node_values(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64 + Sync) -> Vec<Vec<f64>> {
    let n = grid.resolution;
    (0..=n).into_par_iter().map(|i| (0..=n).map(|j| f(grid.node(i, j))).collect()).collect()
}

fn log_trapezoid_weight(grid: &GridSpec, i: usize, j: usize) -> f64 {
    let h = grid.step();
    let mut w = (h[0] * h[1]).ln();
    if grid.is_edge(i) {
        w -= std::f64::consts::LN_2;
    }
    if grid.is_edge(j) {
        w -= std::f64::consts::LN_2;
    }
    w
}

fn integrate_log(grid: &GridSpec, log_f: &[Vec<f64>]) -> QuadratureResult {
    let n = grid.resolution;
    let mut terms = Vec::with_capacity((n + 1) * (n + 1));
    let mut peak = f64::NEG_INFINITY;
    let mut boundary = f64::NEG_INFINITY;
    for (i, row) in log_f.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
            terms.push(v + log_trapezoid_weight(grid, i, j));
            peak = peak.max(v);
            if grid.is_edge(i) || grid.is_edge(j) {
                boundary = boundary.max(v);
            }
        }
    }
    let log_boundary_ratio = boundary - peak;
    QuadratureResult {
        log_z: log_sum_exp(&terms),
        log_boundary_ratio,
        boundary_warning: !(log_boundary_ratio < BOUNDARY_RATIO.ln()),
    }
}

/// log ∫ e^{−U} over the box by the trapezoidal rule, accumulated in log space.
pub fn grid_log_z(target: &dyn TargetDensity, grid: &GridSpec) -> Result<QuadratureResult> {
    check_target(target, grid)?;
    let log_f = node_values(grid, |x| -target.potential(&x));
    Ok(integrate_log(grid, &log_f))
}

/// KL(q‖π) together with the quantities it is assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlResult {
    pub kl: f64,
    pub log_z: f64,
    /// ∫ q (−U − log q), the exact ELBO on the grid.
    pub elbo: f64,
    /// ∫ q over the box; close to one when the box holds the family.
    pub q_mass: f64,
    pub boundary_warning: bool,
}

/// KL(q‖π) = log Z − ∫ q (−U − log q), both integrals on the grid.
pub fn grid_kl(spec: &FamilySpec, target: &dyn TargetDensity, grid: &GridSpec) -> Result<KlResult> {
    check_target(target, grid)?;
    if spec.dim() != 2 {
        return config("grid KL needs a two-dimensional family");
    }
    let z = grid_log_z(target, grid)?;
    let n = grid.resolution;
    let rows: Vec<Result<(f64, f64)>> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let mut mass = 0.0;
            let mut cross = 0.0;
            for j in 0..=n {
                let x = grid.node(i, j);
                let lq = spec.log_density(&x)?;
                if lq == f64::NEG_INFINITY {
                    continue;
                }
                let w = log_trapezoid_weight(grid, i, j).exp();
                let q = lq.exp();
                mass += w * q;
                if q > 0.0 {
                    cross += w * q * (-target.potential(&x) - lq);
                }
            }
            Ok((mass, cross))
        })
        .collect();
    let mut q_mass = 0.0;
    let mut elbo = 0.0;
    for r in rows {
        let (m, c) = r?;
        q_mass += m;
        elbo += c;
    }
    let q_box_escape = (q_mass - 1.0).abs() > 1e-3;
    Ok(KlResult { kl: z.log_z - elbo, log_z: z.log_z, elbo, q_mass, boundary_warning: z.boundary_warning || q_box_escape })
}

/// Sub-cells per axis used to integrate a density over each histogram cell.
pub const TV_SUBCELLS: usize = 8;

/// Total-variation distance between the histogram of `samples` and the
/// cell-integrated density on a `grid.resolution`² histogram. Mass outside the
/// box enters as one extra cell.
pub fn histogram_tv(samples: &[[f64; 2]], log_density: impl Fn(&[f64]) -> f64 + Sync, grid: &GridSpec) -> Result<f64> {
    if !(grid.upper[0] > grid.lower[0] && grid.upper[1] > grid.lower[1]) || grid.resolution == 0 {
        return config("histogram grid must be a non-empty box");
    }
    if samples.is_empty() {
        return config("histogram needs at least one sample");
    }
    let n = grid.resolution;
    let h = grid.step();
    let mut counts = vec![0usize; n * n];
    let mut outside = 0usize;
    for s in samples {
        let ci = ((s[0] - grid.lower[0]) / h[0]).floor();
        let cj = ((s[1] - grid.lower[1]) / h[1]).floor();
        if ci >= 0.0 && cj >= 0.0 && (ci as usize) < n && (cj as usize) < n {
            counts[ci as usize * n + cj as usize] += 1;
        } else {
            outside += 1;
        }
    }
    let sub = TV_SUBCELLS;
    let sh = [h[0] / sub as f64, h[1] / sub as f64];
    let cell_mass: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / n, c % n);
            let mut m = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let x = [
                        grid.lower[0] + i as f64 * h[0] + (a as f64 + 0.5) * sh[0],
                        grid.lower[1] + j as f64 * h[1] + (b as f64 + 0.5) * sh[1],
                    ];
                    let lp = log_density(&x);
                    if lp > f64::NEG_INFINITY {
                        m += lp.exp();
                    }
                }
            }
            m * sh[0] * sh[1]
        })
        .collect();
    let total = samples.len() as f64;
    let inside_mass: f64 = cell_mass.iter().sum();
    let mut l1: f64 = counts.iter().zip(&cell_mass).map(|(&c, &p)| (c as f64 / total - p).abs()).sum();
    l1 += (outside as f64 / total - (1.0 - inside_mass).max(0.0)).abs();
    Ok(0.5 * l1)
}

/// Central finite differences of `f` at `x`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return config("finite-difference step must be positive");
    }
    let mut g = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + step;
        let fp = f(&p);
        p[i] = x[i] - step;
        let fm = f(&p);
        p[i] = x[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::Numerical(format!("non-finite evaluation at coordinate {i}")));
        }
        g.push((fp - fm) / (2.0 * step));
    }
    Ok(g)
}

/// A serializable oracle result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub target: String,
    pub grid: GridSpec,
    pub log_z: f64,
    pub kl: Option<f64>,
    pub flags: Vec<String>,
}

impl OracleRecord {
    pub fn from_quadrature(target: &str, grid: &GridSpec, q: &QuadratureResult) -> Self {
        let flags = if q.boundary_warning { vec!["boundary_mass".to_string()] } else { Vec::new() };
        Self { target: target.to_string(), grid: grid.clone(), log_z: q.log_z, kl: None, flags }
    }

    pub fn from_kl(target: &str, grid: &GridSpec, k: &KlResult) -> Self {
        let flags = if k.boundary_warning { vec!["boundary_mass".to_string()] } else { Vec::new() };
        Self { target: target.to_string(), grid: grid.clone(), log_z: k.log_z, kl: Some(k.kl), flags }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Numerical(e.to_string()))
    }
}
