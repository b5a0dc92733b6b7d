//! Scalar distribution functions backing the inference layer.
//!
//! The standard normal CDF uses Hart's double-precision rational approximation
//! (absolute error well below 1e-12 over the whole line), so no external
//! special-function dependency is needed. The chi-squared(4) distribution has
//! the closed-form CDF `F(x) = 1 - exp(-x/2) (1 + x/2)`; its quantile is
//! obtained by bisection on that expression.

/// Logistic function `1 / (1 + exp(-x))`, evaluated in the numerically stable
/// branch for each sign.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds `ln(p / (1 - p))` for `p` strictly inside (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    let z = x.abs();
    let upper = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.071_067_811_865_475 {
            // Rational approximation for the central region.
            let mut num = 3.52624965998911e-2 * z + 0.700383064443688;
            num = num * z + 6.37396220353165;
            num = num * z + 33.912866078383;
            num = num * z + 112.079291497871;
            num = num * z + 221.213596169931;
            num = num * z + 220.206867912376;
            let mut den = 8.83883476483184e-2 * z + 1.75566716318264;
            den = den * z + 16.064177579207;
            den = den * z + 86.7807322029461;
            den = den * z + 296.564248779674;
            den = den * z + 637.333633378831;
            den = den * z + 793.826512519948;
            den = den * z + 440.413735824752;
            e * num / den
        } else {
            // Continued-fraction tail.
            let mut b = z + 0.65;
            b = z + 4.0 / b;
            b = z + 3.0 / b;
            b = z + 2.0 / b;
            b = z + 1.0 / b;
            e / (b * 2.506628274631)
        }
    };
    if x > 0.0 {
        1.0 - upper
    } else {
        upper
    }
}

/// Error function, expressed through the normal CDF: `erf(x) = 2 Phi(x sqrt 2) - 1`.
pub fn erf(x: f64) -> f64 {
    2.0 * norm_cdf(x * std::f64::consts::SQRT_2) - 1.0
}

/// CDF of the chi-squared distribution with 4 degrees of freedom.
#[inline]
pub fn chi2_4_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0)
    }
}

/// Quantile of the chi-squared distribution with 4 degrees of freedom, found
/// by bisection on [`chi2_4_cdf`] to an interval width of 1e-12.
///
/// Panics if `p` is not strictly inside (0, 1).
pub fn chi2_4_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while chi2_4_cdf(hi) < p {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if chi2_4_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
