//! Floating-point helpers routed through `libm` for platform-stable results.
//!
//! `core` does not expose transcendental functions, and the `std` intrinsics
//! may differ between platforms; every call site in this crate goes through
//! this module (or `libm` directly) instead.

/// Gaussian tail probability `Q(x) = P(Z > x)` for a standard normal `Z`.
///
/// Evaluated via the complementary error function,
/// `Q(x) = erfc(x / sqrt(2)) / 2`, which is accurate to well below 1e-12
/// absolute error over the full range. This is the single source of truth
/// for bit success rates in [`crate::netmodel`].
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

/// `x^n` for a nonnegative integer exponent, via `libm::pow`.
///
/// Used for packet success rates `eps^(32K)` where the exponent can reach
/// tens of thousands; `libm::pow` keeps the relative error at a few ulp and
/// is deterministic across platforms.
pub fn powu(x: f64, n: u64) -> f64 {
    libm::pow(x, n as f64)
}

/// Round half to even, matching the link-count rule `round(rho*N(N-1)/2)`.
pub fn round_ties_even(x: f64) -> f64 {
    libm::rint(x)
}

pub use libm::{exp, fabs, log, log10, pow, sqrt};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_function_anchors() {
        // Q(0) = 1/2, Q(inf) = 0, and a tabulated mid value.
        assert_eq!(q_function(0.0), 0.5);
        assert!(q_function(f64::INFINITY) == 0.0);
        // Q(1) = 0.158655253931457... (Abramowitz & Stegun 26.2.17 territory,
        // cross-checked against numerical integration of the Gaussian tail).
        assert!((q_function(1.0) - 0.15865525393145707).abs() < 1e-15);
        // Q(sqrt(2)) drives the BER example eps = 1 - Q(sqrt(2)).
        assert!((1.0 - q_function(core::f64::consts::SQRT_2) - 0.9213503964748574).abs() < 1e-12);
    }

    #[test]
    fn q_function_matches_trapezoid_tail_integration() {
        // Independent oracle: integrate the standard normal density from x
        // outward with a fine trapezoid rule.
        let density = |t: f64| exp(-0.5 * t * t) / sqrt(2.0 * core::f64::consts::PI);
        for &x in &[0.0, 0.3, 1.0, 1.5, 2.0, 3.0] {
            let (mut acc, upper, steps) = (0.0, x + 14.0, 2_000_000);
            let h = (upper - x) / steps as f64;
            for i in 0..steps {
                let a = x + i as f64 * h;
                acc += 0.5 * h * (density(a) + density(a + h));
            }
            assert!(
                (q_function(x) - acc).abs() < 1e-12,
                "Q({x}) = {} vs integral {acc}",
                q_function(x)
            );
        }
    }

    #[test]
    fn round_ties_even_matches_link_count_rule() {
        assert_eq!(round_ties_even(22.5), 22.0);
        assert_eq!(round_ties_even(31.5), 32.0);
        assert_eq!(round_ties_even(22.4), 22.0);
        assert_eq!(round_ties_even(22.6), 23.0);
    }
}
