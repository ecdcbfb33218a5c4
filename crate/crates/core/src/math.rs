//! Scalar primitives shared by the objectives and the policy head.
//!
//! All transcendental functions route through `libm` so results are the same
//! with or without `std` and across targets.

/// Above this argument `softplus(z)` is returned as `z`; the dropped term
/// `ln(1 + e^-z)` is below `1e-13`.
pub const SOFTPLUS_LINEAR_THRESHOLD: f64 = 30.0;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// `ln(1 + e^z)` with a linear branch for large `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > SOFTPLUS_LINEAR_THRESHOLD {
        z
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Logistic sigmoid, evaluated on the side that cannot overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `-ln σ(z)`, computed as `softplus(-z)`.
#[inline]
pub fn neg_log_sigmoid(z: f64) -> f64 {
    softplus(-z)
}

/// `ln Σ exp(x_i)` with max subtraction. Summation is left to right.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_linear_branch_is_within_tolerance() {
        // ln(1 + e^z) - z = ln(1 + e^-z) ~ e^-z
        for z in [30.0_f64, 30.5, 40.0, 700.0] {
            let exact_gap = libm::log1p(libm::exp(-z));
            assert!(exact_gap < 1e-13);
        }
        assert_eq!(softplus(31.0), 31.0);
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-16);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        for z in [-800.0, -30.0, -1.0, 0.3, 5.0, 800.0] {
            let s = sigmoid(z);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn neg_log_sigmoid_matches_direct_form() {
        for z in [-5.0, -0.5, 0.0, 1.0, 4.0] {
            let direct = -libm::log(1.0 / (1.0 + libm::exp(-z)));
            assert!((neg_log_sigmoid(z) - direct).abs() < 1e-14);
        }
        // no overflow for large negative margins
        assert_eq!(neg_log_sigmoid(-1000.0), 1000.0);
    }

    #[test]
    fn logsumexp_handles_large_values() {
        let xs = [1000.0, 1000.0];
        assert!((logsumexp(&xs) - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }
}
