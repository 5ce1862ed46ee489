//! Scalar normal-distribution helpers.
//!
//! Thin wrappers over the `statrs` error function keep the call sites short
//! and make the tail conventions explicit.

use statrs::function::erf;

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal density.
#[inline]
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Standard normal CDF, evaluated through `erfc` to keep tail precision.
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper tail probability `1 - cdf(z)` without cancellation.
#[inline]
pub fn tail(z: f64) -> f64 {
    0.5 * erf::erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile.
#[inline]
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Density of `N(mean, sd^2)` at `x`.
#[inline]
pub fn pdf_at(x: f64, mean: f64, sd: f64) -> f64 {
    pdf((x - mean) / sd) / sd
}

/// CDF of `N(mean, sd^2)` at `x`.
#[inline]
pub fn cdf_at(x: f64, mean: f64, sd: f64) -> f64 {
    cdf((x - mean) / sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // The statrs error function carries a relative error around 1e-11,
    // well inside every tolerance used by the pricing pipeline.
    #[test]
    fn cdf_reference_points() {
        assert_abs_diff_eq!(cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-10);
        assert_abs_diff_eq!(cdf(-8.0), 6.220_960_574_271_78e-16, epsilon = 1e-25);
        assert_abs_diff_eq!(cdf(z_for(1e-10)), 1.0 - 1e-10, epsilon = 1e-12);
    }

    #[test]
    fn quantile_round_trips() {
        for &p in &[1e-12, 1e-6, 0.3, 0.5, 0.9, 1.0 - 1e-9] {
            let back = cdf(quantile(p));
            assert_abs_diff_eq!(back, p, epsilon = 1e-8 * p + 1e-12);
        }
    }

    #[test]
    fn tail_complements_cdf() {
        for &z in &[-6.0, -1.0, 0.0, 2.5, 7.5] {
            assert_abs_diff_eq!(tail(z), 1.0 - cdf(z), epsilon = 1e-15);
        }
    }

    fn z_for(eps: f64) -> f64 {
        quantile(1.0 - eps)
    }
}
