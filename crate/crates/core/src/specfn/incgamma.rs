//! Regularized incomplete Gamma functions, their shape derivatives, and
//! inverses.
//!
//! P(a, x) is evaluated by the power series when `x < a + 1` and Q(a, x) by
//! the Legendre continued fraction (modified Lentz) otherwise. Both are run
//! on [`Dual`] numbers seeded in the shape, which yields ∂P/∂a alongside the
//! value at roughly twice the cost.

use super::{digamma_unchecked, log_gamma_unchecked, Dual};
use crate::error::{domain, Error, Result};

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

/// P and Q together with their shape derivatives.
#[derive(Debug, Clone, Copy)]
struct Tails {
    lower: Dual,
    upper: Dual,
    /// ln P and ln Q, kept separately so far tails do not underflow.
    ln_lower: f64,
    ln_upper: f64,
}

fn use_series(a: f64, x: f64) -> bool {
    x < a + 1.0
}

/// Σ_{n≥0} Π_{k=1..n} x/(a+k), so that P = xᵃe⁻ˣ/Γ(a+1) · S.
fn series(a: Dual, x: f64) -> Result<Dual> {
    let mut term = Dual::constant(1.0);
    let mut sum = term;
    for n in 1..MAX_ITER {
        term = term * x / (a + n as f64);
        sum = sum + term;
        if term.v.abs() <= sum.v.abs() * EPS && term.d.abs() <= sum.d.abs().max(sum.v.abs()) * EPS
        {
            return Ok(sum);
        }
    }
    Err(Error::Numerical(format!("incomplete gamma series did not converge (a={}, x={x})", a.v)))
}

/// Continued fraction F with Q = xᵃe⁻ˣ/Γ(a) · F.
fn continued_fraction(a: Dual, x: f64) -> Result<Dual> {
    let guard = |t: Dual| if t.v.abs() < FPMIN { Dual::new(FPMIN, t.d) } else { t };
    let mut b = -a + (x + 1.0);
    let mut c = Dual::constant(1.0 / FPMIN);
    let mut d = guard(b).recip();
    let mut h = d;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        // an = −i (i − a)
        let an = (a - fi) * fi;
        b = b + 2.0;
        d = guard(an * d + b);
        c = guard(b + an / c);
        d = d.recip();
        let del = d * c;
        h = h * del;
        let rel_d = (h.d / h.v).abs().max(1.0);
        if (del.v - 1.0).abs() <= EPS && del.d.abs() <= EPS * rel_d {
            return Ok(h);
        }
    }
    Err(Error::Numerical(format!(
        "incomplete gamma continued fraction did not converge (a={}, x={x})",
        a.v
    )))
}

fn tails(a: f64, x: f64) -> Result<Tails> {
    if x == 0.0 {
        return Ok(Tails {
            lower: Dual::constant(0.0),
            upper: Dual::constant(1.0),
            ln_lower: f64::NEG_INFINITY,
            ln_upper: 0.0,
        });
    }
    if x == f64::INFINITY {
        return Ok(Tails {
            lower: Dual::constant(1.0),
            upper: Dual::constant(0.0),
            ln_lower: 0.0,
            ln_upper: f64::NEG_INFINITY,
        });
    }
    let ad = Dual::new(a, 1.0);
    let lnx = x.ln();
    if use_series(a, x) {
        let s = series(ad, x)?;
        let log_pref = Dual::new(a * lnx - x - log_gamma_unchecked(a + 1.0), lnx - digamma_unchecked(a + 1.0));
        let p = log_pref.exp() * s;
        let ln_lower = log_pref.v + s.v.ln();
        Ok(Tails {
            lower: p,
            upper: Dual::new(1.0 - p.v, -p.d),
            ln_lower,
            ln_upper: (-p.v).ln_1p(),
        })
    } else {
        let f = continued_fraction(ad, x)?;
        let log_pref = Dual::new(a * lnx - x - log_gamma_unchecked(a), lnx - digamma_unchecked(a));
        let q = log_pref.exp() * f;
        let ln_upper = log_pref.v + f.v.ln();
        Ok(Tails {
            lower: Dual::new(1.0 - q.v, -q.d),
            upper: q,
            ln_lower: (-q.v).ln_1p(),
            ln_upper,
        })
    }
}

fn check_shape(a: f64) -> Result<()> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        domain(format!("incomplete gamma requires shape > 0, got {a}"))
    }
}

fn check_x(x: f64) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        domain(format!("incomplete gamma requires x >= 0, got {x}"))
    }
}

/// Regularized lower incomplete Gamma function P(a, x).
pub fn reg_inc_gamma(shape: f64, x: f64) -> Result<f64> {
    check_shape(shape)?;
    check_x(x)?;
    Ok(tails(shape, x)?.lower.v)
}

/// Regularized upper incomplete Gamma function Q(a, x) = 1 − P(a, x),
/// accurate in the far upper tail.
pub fn reg_inc_gamma_upper(shape: f64, x: f64) -> Result<f64> {
    check_shape(shape)?;
    check_x(x)?;
    Ok(tails(shape, x)?.upper.v)
}

/// ∂P(a, x)/∂a.
///
/// Returns exactly 0 when P(a, x) rounds to 0 or 1.
pub fn reg_inc_gamma_dshape(shape: f64, x: f64) -> Result<f64> {
    check_shape(shape)?;
    if !(x > 0.0) {
        return domain(format!("reg_inc_gamma_dshape requires x > 0, got {x}"));
    }
    let t = tails(shape, x)?;
    if t.lower.v == 0.0 || t.lower.v == 1.0 {
        return Ok(0.0);
    }
    Ok(t.lower.d)
}

/// −(∂P/∂a)/p_a(x): the derivative of the Gamma(a, 1) quantile in the shape at
/// fixed probability level, evaluated at the point `x` that the level maps to.
///
/// The Gamma density prefactor cancels analytically against the series or
/// continued-fraction prefactor, so this never forms 0/0 in the tails.
pub(crate) fn quantile_shape_derivative(a: f64, x: f64) -> Result<f64> {
    let ad = Dual::new(a, 1.0);
    let lnx = x.ln();
    let r = if use_series(a, x) {
        let s = series(ad, x)?;
        -(x / a) * ((lnx - digamma_unchecked(a + 1.0)) * s.v + s.d)
    } else {
        let f = continued_fraction(ad, x)?;
        x * ((lnx - digamma_unchecked(a)) * f.v + f.d)
    };
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Numerical(format!("non-finite quantile derivative at a={a}, x={x}")))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Tail {
    Lower,
    Upper,
}

/// Inverse of P in its second argument: the x with P(a, x) = u.
pub fn inv_reg_inc_gamma(shape: f64, u: f64) -> Result<f64> {
    check_shape(shape)?;
    if !(u > 0.0 && u < 1.0) {
        return domain(format!("inv_reg_inc_gamma requires 0 < u < 1, got {u}"));
    }
    if u <= 0.5 {
        solve(shape, Tail::Lower, u, 1.0 - u)
    } else {
        solve(shape, Tail::Upper, 1.0 - u, u)
    }
}

/// Inverse of Q in its second argument: the x with Q(a, x) = q.
pub fn inv_reg_inc_gamma_upper(shape: f64, q: f64) -> Result<f64> {
    check_shape(shape)?;
    if !(q > 0.0 && q < 1.0) {
        return domain(format!("inv_reg_inc_gamma_upper requires 0 < q < 1, got {q}"));
    }
    if q <= 0.5 {
        solve(shape, Tail::Upper, q, 1.0 - q)
    } else {
        solve(shape, Tail::Lower, 1.0 - q, q)
    }
}

/// Starting point from the classical Wilson–Hilferty / small-shape heuristics.
fn initial_guess(a: f64, p: f64, q: f64) -> f64 {
    if a > 1.0 {
        let pp = p.min(q);
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
        if p < 0.5 {
            z = -z;
        }
        (a * (1.0 - 1.0 / (9.0 * a) - z / (3.0 * a.sqrt())).powi(3)).max(1e-3)
    } else {
        let t = 1.0 - a * (0.253 + a * 0.12);
        if p < t {
            (p / t).powf(1.0 / a)
        } else {
            1.0 - (q / (1.0 - t)).ln()
        }
    }
}

/// Newton iteration on y = ln x for ln P(a, eʸ) = ln p (or the Q analogue),
/// safeguarded by a bracket that falls back to bisection.
fn solve(a: f64, tail: Tail, target: f64, complement: f64) -> Result<f64> {
    let (p, q) = match tail {
        Tail::Lower => (target, complement),
        Tail::Upper => (complement, target),
    };
    let ln_target = target.ln();
    let lg = log_gamma_unchecked(a);
    let mut y = initial_guess(a, p, q).max(1e-300).ln();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut expand = 1.0;
    for _ in 0..400 {
        let x = y.exp();
        let t = tails(a, x)?;
        let (lnv, sign) = match tail {
            Tail::Lower => (t.ln_lower, 1.0),
            Tail::Upper => (t.ln_upper, -1.0),
        };
        let f = lnv - ln_target;
        if f == 0.0 {
            return Ok(x);
        }
        // f is increasing in y for the lower tail, decreasing for the upper.
        if f * sign > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let slope = sign * (a * y - x - lg - lnv).exp();
        let mut next = y - f / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                expand *= 2.0;
                y + expand
            } else {
                expand *= 2.0;
                y - expand
            };
        }
        let step = next - y;
        y = next;
        if step.abs() <= 2e-16 * y.abs().max(1.0) || (hi - lo) <= 4e-16 * y.abs().max(1.0) {
            return Ok(y.exp());
        }
    }
    Err(Error::Numerical(format!("incomplete gamma inversion did not converge (a={a}, target={target})")))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson quadrature of P(a, x) after the substitution t = s²
    /// (removes the t^{a−1} singularity for a < 1):
    /// P = 2/Γ(a) ∫₀^{√x} s^{2a−1} e^{−s²} ds.
    fn quadrature_oracle(a: f64, x: f64) -> f64 {
        let f = |s: f64| if s == 0.0 { if a == 0.5 { 1.0 } else { 0.0 } } else { s.powf(2.0 * a - 1.0) * (-s * s).exp() };
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            simpson(f, a, m, fa, flm, fm, left, tol, depth - 1)
                + simpson(f, m, b, fm, frm, fb, right, tol, depth - 1)
        }
        let b = x.sqrt();
        let (fa, fm, fb) = (f(0.0), f(0.5 * b), f(b));
        let whole = b / 6.0 * (fa + 4.0 * fm + fb);
        2.0 * simpson(&f, 0.0, b, fa, fm, fb, whole, 1e-15, 50) / log_gamma_unchecked(a).exp()
    }

    #[test]
    fn exponential_cdf() {
        for x in [0.5, 1.0, 2.0] {
            let p = reg_inc_gamma(1.0, x).unwrap();
            assert!((p - (1.0 - (-x).exp())).abs() < 1e-12);
        }
        assert_eq!(reg_inc_gamma(2.5, 0.0).unwrap(), 0.0);
        assert_eq!(reg_inc_gamma(2.5, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn quadrature_values() {
        let oracle = quadrature_oracle(0.5, 1.3);
        assert!((oracle - 0.893_136_285_006_620_5).abs() < 1e-12);
        assert!((reg_inc_gamma(0.5, 1.3).unwrap() - oracle).abs() < 1e-12);
        for (a, x) in [(2.5, 3.0), (10.0, 7.0), (1.7, 0.4)] {
            let o = quadrature_oracle(a, x);
            assert!((reg_inc_gamma(a, x).unwrap() - o).abs() < 1e-11, "a={a} x={x}");
        }
    }

    #[test]
    fn high_precision_reference() {
        // (a, x, P, dP/da) from 40-digit arithmetic.
        let refs = [
            (0.5, 1.3, 0.893_136_285_006_620_5, -0.284_375_638_439_190_5),
            (2.5, 3.0, 0.693_781_081_586_721_6, -0.227_548_551_278_260_8),
            (10.0, 7.0, 0.169_504_062_761_326_56, -0.085_804_237_504_888_77),
            (50.0, 60.0, 0.915_593_318_906_308_2, -0.021_284_992_786_349_49),
            (0.1, 0.01, 0.662_621_259_954_479_8, -2.776_160_812_425_422_3),
            (30.0, 25.0, 0.182_103_915_977_455_1, -0.049_954_877_425_834_86),
        ];
        for (a, x, p, dp) in refs {
            assert!((reg_inc_gamma(a, x).unwrap() - p).abs() < 1e-13, "P a={a} x={x}");
            let d = reg_inc_gamma_dshape(a, x).unwrap();
            assert!((d - dp).abs() <= 1e-6 * dp.abs(), "dP a={a} x={x}: {d} vs {dp}");
        }
    }

    #[test]
    fn dshape_finite_difference() {
        let h = 1e-6;
        let fd = (reg_inc_gamma(1.0 + h, 1.0).unwrap() - reg_inc_gamma(1.0 - h, 1.0).unwrap()) / (2.0 * h);
        let d = reg_inc_gamma_dshape(1.0, 1.0).unwrap();
        assert!((d - fd).abs() <= 1e-6 * fd.abs());
        assert!(reg_inc_gamma_dshape(2.0, 50.0).unwrap().abs() < 1e-8);
    }

    #[test]
    fn dshape_negative_below_shape() {
        for a in [0.3, 1.0, 4.0, 20.0] {
            for frac in [0.1, 0.5, 0.9] {
                let x = a * frac;
                let h = 1e-5;
                let fd = (reg_inc_gamma(a + h, x).unwrap() - reg_inc_gamma(a - h, x).unwrap()) / (2.0 * h);
                assert!(fd < 0.0);
                assert!(reg_inc_gamma_dshape(a, x).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn inverse_values() {
        for u in [0.01, 0.3, 0.5, 0.9, 0.999] {
            let x = inv_reg_inc_gamma(1.0, u).unwrap();
            assert!((x - (-(1.0 - u).ln())).abs() < 1e-12 * x.max(1.0));
        }
        // bisection oracle on P(0.5, ·)
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if reg_inc_gamma(0.5, m).unwrap() < 0.5 { lo = m } else { hi = m }
        }
        let x = inv_reg_inc_gamma(0.5, 0.5).unwrap();
        assert!((x - lo).abs() < 1e-13);
        assert!((x - 0.227_468_211_559_786_37).abs() < 1e-13);
        assert!(inv_reg_inc_gamma(1.0, 0.0).is_err());
        assert!(inv_reg_inc_gamma(1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_tails() {
        for a in [0.05, 0.2, 1.0, 3.0, 40.0, 500.0] {
            for q in [1e-300, 1e-30, 1e-8, 0.2] {
                let x = inv_reg_inc_gamma_upper(a, q).unwrap();
                let back = reg_inc_gamma_upper(a, x).unwrap();
                assert!((back - q).abs() <= 1e-13 * q * x.max(10.0), "a={a} q={q} x={x} back={back}");
            }
            for p in [1e-300f64, 1e-30, 1e-8, 0.2] {
                // the quantile itself underflows f64 here
                if (p.ln() + log_gamma_unchecked(a + 1.0)) / a < -690.0 {
                    continue;
                }
                let x = inv_reg_inc_gamma(a, p).unwrap();
                let back = reg_inc_gamma(a, x).unwrap();
                assert!((back - p).abs() <= 1e-13 * p * x.max(10.0).max(a), "a={a} p={p} x={x} back={back}");
            }
        }
    }

    #[test]
    fn quantile_derivative_reference() {
        // d/da of the Gamma(a) quantile at fixed level, from 40-digit arithmetic.
        for (a, x, r) in [
            (1.0, 1.0, 1.173_563_027_224_726_9),
            (0.3, 0.05, 0.494_710_987_004_131_24),
            (5.0, 2.0, 0.630_802_802_677_854_7),
            (2.0, 20.0, 2.753_981_262_653_098),
        ] {
            let d = quantile_shape_derivative(a, x).unwrap();
            assert!((d - r).abs() <= 1e-10 * r, "a={a} x={x}: {d} vs {r}");
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn inverse_round_trip(a in 0.05f64..200.0, x in 1e-3f64..300.0) {
            let p = reg_inc_gamma(a, x).unwrap();
            // Near P = 1 the level no longer determines x to 1e-9; stay where it does.
            prop_assume!(p > 1e-300 && reg_inc_gamma_upper(a, x).unwrap() > 1e-6);
            let back = inv_reg_inc_gamma(a, p).unwrap();
            prop_assert!((back - x).abs() <= 1e-9 * x.max(1.0), "a={} x={} back={}", a, x, back);
            prop_assert!((reg_inc_gamma(a, back).unwrap() - p).abs() <= 1e-10);
        }

        #[test]
        fn dshape_matches_five_point_stencil(a in 0.1f64..50.0, x in 0.01f64..100.0) {
            let h = 1e-3 * a.min(1.0);
            let p = |s: f64| reg_inc_gamma(s, x).unwrap();
            let fd = (-p(a + 2.0 * h) + 8.0 * p(a + h) - 8.0 * p(a - h) + p(a - 2.0 * h)) / (12.0 * h);
            let d = reg_inc_gamma_dshape(a, x).unwrap();
            prop_assert!((d - fd).abs() <= 1e-5 * fd.abs() + 1e-11, "a={} x={} d={} fd={}", a, x, d, fd);
        }

        #[test]
        fn monotone_in_x(a in 0.05f64..100.0) {
            let mut prev = -1.0;
            for i in 0..100 {
                let x = a * 0.05 + (i as f64) * a * 0.05;
                let p = reg_inc_gamma(a, x).unwrap();
                prop_assert!(p >= prev);
                if p < 1.0 - 1e-15 && prev > 0.0 { prop_assert!(p > prev); }
                prev = p;
            }
        }
    }
}
