//! Butterfly-structured rotations built from d − 1 Givens angles.
//!
//! With k = ⌈log₂ d⌉, factor 𝒪_ℓ (stride s = 2^{ℓ−1}) splits the padded index
//! range into blocks of 2s. Block b rotates the pairs (2sb + t, 2sb + s + t)
//! for t < s, all by the angle ν_m with m = 2sb + s. Pairs reaching past d − 1
//! are dropped, which leaves the surviving partner untouched. The operator is
//! ℛ = 𝒪₁𝒪₂⋯𝒪_k, so the widest stride acts first on a vector.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{config, Result};

/// Rotation angles ν₁…ν_{d−1}.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RotationParams {
    pub nu: Vec<f64>,
}

/// One Givens rotation acting on coordinates `i < j` with angle index `m`
/// (zero-based into ν).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pair {
    i: usize,
    j: usize,
    m: usize,
}

/// A rotation operator ready for sparse application.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterfly {
    d: usize,
    /// Factors 𝒪₁…𝒪_k in order.
    layers: Vec<Vec<Pair>>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Minimal arithmetic needed to run a rotation; lets tests count operations.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {}

impl Scalar for f64 {}

/// Builds the operator for dimension `d` from `d − 1` angles.
pub fn build_butterfly(d: usize, r: &RotationParams) -> Result<Butterfly> {
    if d == 0 {
        return config("rotation dimension must be at least 1");
    }
    if r.nu.len() != d - 1 {
        return config(format!("dimension {d} needs {} rotation angles, got {}", d - 1, r.nu.len()));
    }
    let mut layers = Vec::new();
    let mut s = 1;
    while s < d {
        let mut layer = Vec::new();
        let mut start = 0;
        while start + s < d {
            for t in 0..s {
                let (i, j) = (start + t, start + s + t);
                if j < d {
                    layer.push(Pair { i, j, m: start + s - 1 });
                }
            }
            start += 2 * s;
        }
        layers.push(layer);
        s *= 2;
    }
    Ok(Butterfly {
        d,
        layers,
        cos: r.nu.iter().map(|v| v.cos()).collect(),
        sin: r.nu.iter().map(|v| v.sin()).collect(),
    })
}

impl Butterfly {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of factors, ⌈log₂ d⌉.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return config(format!("rotation of dimension {} applied to a vector of length {}", self.d, x.len()));
        }
        Ok(())
    }

    /// In-place x ← ℛx over any [`Scalar`].
    pub fn apply_generic<T: Scalar>(&self, x: &mut [T], cos: &[T], sin: &[T]) {
        for layer in self.layers.iter().rev() {
            for p in layer {
                let (c, s) = (cos[p.m], sin[p.m]);
                let (xi, xj) = (x[p.i], x[p.j]);
                x[p.i] = c * xi - s * xj;
                x[p.j] = s * xi + c * xj;
            }
        }
    }

    /// In-place x ← ℛᵀx over any [`Scalar`].
    pub fn apply_transpose_generic<T: Scalar>(&self, x: &mut [T], cos: &[T], sin: &[T]) {
        for layer in &self.layers {
            for p in layer {
                let (c, s) = (cos[p.m], sin[p.m]);
                let (xi, xj) = (x[p.i], x[p.j]);
                x[p.i] = c * xi + s * xj;
                x[p.j] = c * xj - s * xi;
            }
        }
    }

    /// ℛx.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut y = x.to_vec();
        self.apply_generic(&mut y, &self.cos, &self.sin);
        Ok(y)
    }

    /// ℛᵀx, the exact inverse of [`Butterfly::apply`].
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut y = x.to_vec();
        self.apply_transpose_generic(&mut y, &self.cos, &self.sin);
        Ok(y)
    }

    /// Dense d × d realization, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let d = self.d;
        let mut cols = Vec::with_capacity(d);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            self.apply_generic(&mut e, &self.cos, &self.sin);
            cols.push(e);
        }
        (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
    }

    /// Given y = ℛx and the cotangent gy, returns (ℛᵀgy, ∂⟨gy, y⟩/∂ν).
    pub fn vjp(&self, y: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = y.to_vec();
        let mut g = gy.to_vec();
        let mut gnu = vec![0.0; self.d.saturating_sub(1)];
        // Undo the factors in reverse application order: 𝒪₁ was applied last.
        for layer in &self.layers {
            for p in layer {
                let (c, s) = (self.cos[p.m], self.sin[p.m]);
                let (yi, yj) = (y[p.i], y[p.j]);
                let (gi, gj) = (g[p.i], g[p.j]);
                gnu[p.m] += -gi * yj + gj * yi;
                y[p.i] = c * yi + s * yj;
                y[p.j] = c * yj - s * yi;
                g[p.i] = c * gi + s * gj;
                g[p.j] = c * gj - s * gi;
            }
        }
        (g, gnu)
    }

    /// Given y = ℛᵀx and the cotangent gy, returns (ℛgy, ∂⟨gy, y⟩/∂ν).
    pub fn vjp_transpose(&self, y: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = y.to_vec();
        let mut g = gy.to_vec();
        let mut gnu = vec![0.0; self.d.saturating_sub(1)];
        for layer in self.layers.iter().rev() {
            for p in layer {
                let (c, s) = (self.cos[p.m], self.sin[p.m]);
                let (yi, yj) = (y[p.i], y[p.j]);
                let (gi, gj) = (g[p.i], g[p.j]);
                gnu[p.m] += gi * yj - gj * yi;
                y[p.i] = c * yi - s * yj;
                y[p.j] = s * yi + c * yj;
                g[p.i] = c * gi - s * gj;
                g[p.j] = s * gi + c * gj;
            }
        }
        (g, gnu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    thread_local! {
        static MULS: Cell<usize> = const { Cell::new(0) };
    }

    #[derive(Clone, Copy, Debug)]
    struct Counted(f64);

    impl Add for Counted {
        type Output = Self;
        fn add(self, o: Self) -> Self {
            Counted(self.0 + o.0)
        }
    }
    impl Sub for Counted {
        type Output = Self;
        fn sub(self, o: Self) -> Self {
            Counted(self.0 - o.0)
        }
    }
    impl Mul for Counted {
        type Output = Self;
        fn mul(self, o: Self) -> Self {
            MULS.with(|m| m.set(m.get() + 1));
            Counted(self.0 * o.0)
        }
    }
    impl Neg for Counted {
        type Output = Self;
        fn neg(self) -> Self {
            Counted(-self.0)
        }
    }
    impl Scalar for Counted {}

    fn angles(d: usize, seed: u64) -> RotationParams {
        let mut rng = crate::sampling::RngState::new(seed, 0);
        RotationParams { nu: (0..d.saturating_sub(1)).map(|_| 6.0 * rng.uniform_open() - 3.0).collect() }
    }

    fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
    }

    #[test]
    fn four_dimensional_display() {
        let nu = vec![0.3, -1.1, 0.7];
        let r = build_butterfly(4, &RotationParams { nu: nu.clone() }).unwrap().to_dense();
        let (c, s): (Vec<f64>, Vec<f64>) = nu.iter().map(|v| (v.cos(), v.sin())).unzip();
        let (c1, c2, c3, s1, s2, s3) = (c[0], c[1], c[2], s[0], s[1], s[2]);
        let expected = [
            [c1 * c2, -s1 * c2, -c1 * s2, s1 * s2],
            [s1 * c2, c1 * c2, -s1 * s2, -c1 * s2],
            [c3 * s2, -s3 * s2, c3 * c2, -s3 * c2],
            [s3 * s2, c3 * s2, s3 * c2, c3 * c2],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((r[i][j] - expected[i][j]).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn five_dimensional_display() {
        let nu = vec![0.4, -0.9, 1.3, 2.2];
        let r = build_butterfly(5, &RotationParams { nu: nu.clone() }).unwrap().to_dense();
        let (c, s): (Vec<f64>, Vec<f64>) = nu.iter().map(|v| (v.cos(), v.sin())).unzip();
        let f1 = vec![
            vec![c[0], -s[0], 0.0, 0.0, 0.0],
            vec![s[0], c[0], 0.0, 0.0, 0.0],
            vec![0.0, 0.0, c[2], -s[2], 0.0],
            vec![0.0, 0.0, s[2], c[2], 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let f2 = vec![
            vec![c[1], 0.0, -s[1], 0.0, 0.0],
            vec![0.0, c[1], 0.0, -s[1], 0.0],
            vec![s[1], 0.0, c[1], 0.0, 0.0],
            vec![0.0, s[1], 0.0, c[1], 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let f3 = vec![
            vec![c[3], 0.0, 0.0, 0.0, -s[3]],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
            vec![s[3], 0.0, 0.0, 0.0, c[3]],
        ];
        let expected = matmul(&matmul(&f1, &f2), &f3);
        for i in 0..5 {
            for j in 0..5 {
                assert!((r[i][j] - expected[i][j]).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_angles_and_trivial_dimension() {
        let r = build_butterfly(6, &RotationParams { nu: vec![0.0; 5] }).unwrap().to_dense();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(r[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let one = build_butterfly(1, &RotationParams { nu: vec![] }).unwrap();
        assert_eq!(one.to_dense(), vec![vec![1.0]]);
        assert_eq!(one.depth(), 0);
        assert!(build_butterfly(3, &RotationParams { nu: vec![0.0] }).is_err());
    }

    #[test]
    fn orthogonality() {
        for d in [2, 3, 4, 5, 8, 17, 64] {
            let r = build_butterfly(d, &angles(d, d as u64)).unwrap().to_dense();
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = (0..d).map(|k| r[k][i] * r[k][j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - target).abs() <= 1e-12, "d={d} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn every_angle_used_once() {
        for d in 2..70 {
            let b = build_butterfly(d, &angles(d, 1)).unwrap();
            let mut used = vec![false; d - 1];
            for layer in &b.layers {
                let mut seen = std::collections::BTreeSet::new();
                for p in layer {
                    seen.insert(p.m);
                }
                for m in seen {
                    assert!(!used[m]);
                    used[m] = true;
                }
            }
            assert!(used.iter().all(|&u| u), "d={d}");
        }
    }

    #[test]
    fn multiply_count_bound() {
        for d in [2, 3, 5, 8, 16, 17, 100, 1000] {
            let b = build_butterfly(d, &angles(d, 2)).unwrap();
            let cos: Vec<Counted> = b.cos.iter().map(|&c| Counted(c)).collect();
            let sin: Vec<Counted> = b.sin.iter().map(|&s| Counted(s)).collect();
            let mut x: Vec<Counted> = (0..d).map(|i| Counted(i as f64)).collect();
            MULS.with(|m| m.set(0));
            b.apply_generic(&mut x, &cos, &sin);
            let muls = MULS.with(Cell::get);
            let k = (d as f64).log2().ceil() as usize;
            assert!(muls <= 4 * d * k, "d={d}: {muls}");
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let d = 16;
        let b = build_butterfly(d, &angles(d, 3)).unwrap();
        let r = b.to_dense();
        // materialize independently from the factor definitions
        let mut dense = vec![vec![0.0; d]; d];
        for (i, row) in dense.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for layer in &b.layers {
            let mut f = vec![vec![0.0; d]; d];
            for (i, row) in f.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            for p in layer {
                let (c, s) = (b.cos[p.m], b.sin[p.m]);
                f[p.i][p.i] = c;
                f[p.i][p.j] = -s;
                f[p.j][p.i] = s;
                f[p.j][p.j] = c;
            }
            dense = matmul(&dense, &f);
        }
        let x: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = b.apply(&x).unwrap();
        for i in 0..d {
            let yd: f64 = (0..d).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - yd).abs() < 1e-12);
            for j in 0..d {
                assert!((r[i][j] - dense[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_and_inverse() {
        for d in [3, 8, 100] {
            let b = build_butterfly(d, &angles(d, 4)).unwrap();
            let x: Vec<f64> = (0..d).map(|i| (i as f64 * 1.3).cos() + 0.2).collect();
            let y = b.apply(&x).unwrap();
            let n0: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-12);
            let back = b.apply_transpose(&y).unwrap();
            assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!(b.apply(&x[1..]).is_err());
        }
    }

    #[test]
    fn vjps_match_finite_differences() {
        for d in [2, 5, 8] {
            let r = angles(d, 5);
            let x: Vec<f64> = (0..d).map(|i| 0.5 - 0.3 * i as f64).collect();
            let gy: Vec<f64> = (0..d).map(|i| (i as f64 + 1.0).sqrt()).collect();
            let b = build_butterfly(d, &r).unwrap();
            for transpose in [false, true] {
                let f = |nu: &[f64], x: &[f64]| -> f64 {
                    let b = build_butterfly(d, &RotationParams { nu: nu.to_vec() }).unwrap();
                    let y = if transpose { b.apply_transpose(x) } else { b.apply(x) }.unwrap();
                    y.iter().zip(&gy).map(|(a, b)| a * b).sum()
                };
                let y = if transpose { b.apply_transpose(&x) } else { b.apply(&x) }.unwrap();
                let (gx, gnu) = if transpose { b.vjp_transpose(&y, &gy) } else { b.vjp(&y, &gy) };
                let h = 1e-6;
                for m in 0..d - 1 {
                    let mut p = r.nu.clone();
                    let mut q = r.nu.clone();
                    p[m] += h;
                    q[m] -= h;
                    let fd = (f(&p, &x) - f(&q, &x)) / (2.0 * h);
                    assert!((fd - gnu[m]).abs() < 1e-8, "d={d} t={transpose} m={m}");
                }
                for i in 0..d {
                    let mut p = x.clone();
                    let mut q = x.clone();
                    p[i] += h;
                    q[i] -= h;
                    let fd = (f(&r.nu, &p) - f(&r.nu, &q)) / (2.0 * h);
                    assert!((fd - gx[i]).abs() < 1e-8);
                }
            }
        }
    }
}
