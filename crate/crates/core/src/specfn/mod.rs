//! Scalar special functions.
//!
//! Everything downstream (the copula-like density, the Gamma samplers and
//! their implicit shape derivatives, the Gaussian marginals) is built on the
//! functions in this module. Accuracy contracts on the supported ranges:
//!
//! | Function | Range | Contract |
//! |----------|-------|----------|
//! | [`log_gamma`] | `[1e-3, 1e6]` | relative `1e-12` (absolute `1e-14` next to the roots at 1 and 2) |
//! | [`digamma`] | `[1e-3, 1e6]` | absolute `1e-10` |
//! | [`reg_inc_gamma`] | `a > 0, x >= 0` | absolute `1e-14` |
//! | [`reg_inc_gamma_dshape`] | `a in [0.1, 50], x in [0.01, 100]` | relative `1e-6` |
//! | [`inv_reg_inc_gamma`] | `0 < u < 1` | `P(a, result) = u` to `1e-10` |
//! | [`normal_cdf`] | all reals | absolute `1e-12` |
//! | [`normal_quantile`] | `[1e-8, 1 - 1e-8]` | round trip `1e-10` |
//!
//! All functions are pure and may be called concurrently.

mod dual;
mod incgamma;

pub(crate) use dual::Dual;
pub use incgamma::{
    inv_reg_inc_gamma, inv_reg_inc_gamma_upper, reg_inc_gamma, reg_inc_gamma_dshape,
    reg_inc_gamma_upper,
};
pub(crate) use incgamma::quantile_shape_derivative;

use crate::error::{domain, Result};
use std::f64::consts::PI;

/// `ln(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Error bounds attached to a special function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyBudget {
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl AccuracyBudget {
    pub const LOG_GAMMA: AccuracyBudget = AccuracyBudget { abs_tol: 1e-14, rel_tol: 1e-12 };
    pub const DIGAMMA: AccuracyBudget = AccuracyBudget { abs_tol: 1e-10, rel_tol: 1e-12 };
    pub const REG_INC_GAMMA: AccuracyBudget = AccuracyBudget { abs_tol: 1e-14, rel_tol: 1e-12 };
    pub const REG_INC_GAMMA_DSHAPE: AccuracyBudget = AccuracyBudget { abs_tol: 1e-12, rel_tol: 1e-6 };
    pub const INV_REG_INC_GAMMA: AccuracyBudget = AccuracyBudget { abs_tol: 1e-10, rel_tol: 1e-10 };
    pub const NORMAL_CDF: AccuracyBudget = AccuracyBudget { abs_tol: 1e-12, rel_tol: 1e-12 };
    pub const NORMAL_QUANTILE: AccuracyBudget = AccuracyBudget { abs_tol: 1e-10, rel_tol: 1e-10 };

    /// True when `value` is within budget of `reference`.
    pub fn accepts(&self, value: f64, reference: f64) -> bool {
        (value - reference).abs() <= self.abs_tol.max(self.rel_tol * reference.abs())
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        domain(format!("{name} requires a positive finite argument, got {x}"))
    }
}

/// Natural log of the Gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // ln Γ(x) = ln Γ(x + 1) − ln x
        return lanczos_ln_gamma(x + 1.0) - x.ln();
    }
    lanczos_ln_gamma(x)
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    let z = x - 1.0;
    let mut sum = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + sum.ln()
}

/// Digamma function ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Asymptotic series with Bernoulli numbers B_2 .. B_14.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// `ln B(a, b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    check_positive("log_beta", a)?;
    check_positive("log_beta", b)?;
    Ok(log_gamma_unchecked(a) + log_gamma_unchecked(b) - log_gamma_unchecked(a + b))
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal log-density.
pub fn normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal quantile Φ⁻¹(u) for `0 < u < 1`.
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return domain(format!("normal_quantile requires 0 < u < 1, got {u}"));
    }
    if u > 0.5 {
        // 1 - u is exact on [0.5, 1].
        return Ok(-lower_quantile(1.0 - u));
    }
    Ok(lower_quantile(u))
}

/// Quantile for `u <= 0.5`: Acklam's rational approximation refined by one
/// Halley step against the erfc-based CDF.
fn lower_quantile(u: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let x = if u < 0.02425 {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - u;
    let step = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - step / (1.0 + 0.5 * x * step)
}

/// softplus(x) = ln(1 + eˣ), evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> Result<f64> {
    check_positive("softplus_inv", y)?;
    if y < 20.0 {
        Ok(y.exp_m1().ln())
    } else {
        // ln(e^y − 1) = y + ln(1 − e^{−y})
        Ok(y + (-(-y).exp()).ln_1p())
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(values)`; returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// ln(1 + eˣ) for the logistic likelihood.
pub fn log1p_exp(x: f64) -> f64 {
    softplus(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from 40-digit arithmetic.
    const LGAMMA_REF: [(f64, f64); 11] = [
        (0.001, 6.907_178_885_383_853_7),
        (0.1, 2.252_712_651_734_206),
        (0.5, 0.572_364_942_924_700_1),
        (1.5, -0.120_782_237_635_245_22),
        (2.0, 0.0),
        (2.5, 0.284_682_870_472_919_16),
        (3.7, 1.428_072_326_665_388),
        (10.0, 12.801_827_480_081_469),
        (100.0, 359.134_205_369_575_4),
        (1000.0, 5_905.220_423_209_181),
        (1e6, 12_815_504.569_147_612),
    ];

    #[test]
    fn log_gamma_reference_values() {
        for (x, r) in LGAMMA_REF {
            let v = log_gamma(x).unwrap();
            assert!(AccuracyBudget::LOG_GAMMA.accepts(v, r), "x={x}: {v} vs {r}");
        }
        assert_eq!(log_gamma(1.0).unwrap().abs() < 1e-15, true);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-13);
        assert!((log_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_gamma_recurrence() {
        let mut x = 1e-3;
        while x < 1e5 {
            let lhs = log_gamma(x + 1.0).unwrap();
            let rhs = log_gamma(x).unwrap() + x.ln();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "x={x}");
            x *= 1.37;
        }
    }

    #[test]
    fn domain_errors() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.0).is_err());
        assert!(log_gamma(f64::NAN).is_err());
        assert!(digamma(0.0).is_err());
        assert!(log_beta(1.0, -2.0).is_err());
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    /// Σ_{k≤N} 1/k − ln N with the Euler–Maclaurin tail corrections.
    fn harmonic_oracle_digamma_one() -> f64 {
        let n = 100_000usize;
        let h: f64 = (1..=n).rev().map(|k| 1.0 / k as f64).sum();
        let nf = n as f64;
        -(h - nf.ln() - 1.0 / (2.0 * nf) + 1.0 / (12.0 * nf * nf))
    }

    #[test]
    fn digamma_values() {
        let oracle = harmonic_oracle_digamma_one();
        assert!((oracle + 0.577_215_664_901_532_9).abs() < 1e-12);
        assert!((digamma(1.0).unwrap() - oracle).abs() < 1e-10);
        // recurrence
        let x = 3.7;
        let diff = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
        assert!((diff - 1.0 / x).abs() < 1e-12);
        // large-x asymptote ln x − 1/(2x)
        let big = 1e6;
        assert!((digamma(big).unwrap() - (big.ln() - 0.5 / big)).abs() < 1e-9);
        for (x, r) in [
            (0.001, -1_000.575_571_931_810_3),
            (0.5, -1.963_510_026_021_423_5),
            (3.7, 1.167_153_539_361_511_4),
            (100.0, 4.600_161_852_738_087),
            (1e6, 13.815_510_057_964_19),
        ] {
            assert!((digamma(x).unwrap() - r).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn digamma_recurrence_grid() {
        let mut x = 1e-3;
        while x < 1e6 {
            let diff = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((diff - 1.0 / x).abs() <= 1e-12 * (1.0 / x).max(1.0), "x={x}");
            x *= 1.9;
        }
    }

    #[test]
    fn log_beta_values() {
        assert!(log_beta(1.0, 1.0).unwrap().abs() < 1e-15);
        assert!((log_beta(2.0, 3.0).unwrap() - (1.0f64 / 12.0).ln()).abs() < 1e-13);
        assert!((log_beta(0.5, 0.5).unwrap() - PI.ln()).abs() < 1e-13);
    }

    /// erf by its Maclaurin series in extended summation, valid for |x| ≲ 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-20 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn normal_cdf_quantile() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        // bisection on the series oracle
        let cdf = |x: f64| 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        let (mut lo, mut hi) = (1.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < 0.975 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let q = normal_quantile(0.975).unwrap();
        assert!((q - lo).abs() < 1e-12, "{q} vs {lo}");
        assert!((q - 1.959_963_984_540_054).abs() < 1e-12);
        for x in [-2.5, -1.0, -0.3, 0.2, 1.7, 2.9] {
            assert!((normal_cdf(x) - cdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_round_trip_extremes() {
        for u in [1e-8, 1e-6, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-6, 1.0 - 1e-8] {
            let x = normal_quantile(u).unwrap();
            assert!((normal_cdf(x) - u).abs() < 1e-10 * u.max(1e-6), "u={u}");
        }
    }

    #[test]
    fn softplus_pairs() {
        for x in [-30.0, -2.0, 0.0, 1.5, 15.0, 50.0] {
            let y = softplus(x);
            assert!((softplus_inv(y).unwrap() - x).abs() < 1e-9 * x.abs().max(1.0));
        }
        assert!((softplus(15.0) - 15.000_000_305_902_32).abs() < 1e-12);
        let h = 1e-6;
        let fd = (softplus(0.3 + h) - softplus(0.3 - h)) / (2.0 * h);
        assert!((fd - sigmoid(0.3)).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, f64::NEG_INFINITY]) - 0.0).abs() < 1e-15);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normal_round_trip(u in 1e-8f64..(1.0 - 1e-8)) {
            let x = normal_quantile(u).unwrap();
            prop_assert!((normal_cdf(x) - u).abs() <= 1e-10);
        }

        #[test]
        fn log_beta_matches_log_gamma(a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            let lb = log_beta(a, b).unwrap();
            let lg = log_gamma(a).unwrap() + log_gamma(b).unwrap() - log_gamma(a + b).unwrap();
            prop_assert!((lb - lg).abs() <= 1e-12 * lg.abs().max(1.0));
        }
    }
}
