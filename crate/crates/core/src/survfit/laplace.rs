//! Laplace transform of the mean-one Gamma frailty and its conjugate posterior.

use statrs::function::gamma::digamma;

/// `q`-th derivative of `φ(k) = E[exp(-kγ)]` for `γ ~ Gamma(1/θ, θ)`, `q ≤ 2`.
/// `θ = 0` gives the degenerate limit `φ(k) = exp(-k)`.
pub fn gamma_laplace_deriv(theta: f64, k: f64, q: u8) -> f64 {
    let sign = if q % 2 == 1 { -1.0 } else { 1.0 };
    sign * log_abs_laplace_deriv(theta, k, q).exp()
}

/// `log |φ^(q)(k)|`, computed stably for small `θ`.
pub fn log_abs_laplace_deriv(theta: f64, k: f64, q: u8) -> f64 {
    assert!(q <= 2, "only derivatives up to order 2 are supported");
    if theta <= 0.0 {
        return -k;
    }
    let l = (theta * k).ln_1p();
    let base = -l / theta;
    match q {
        0 => base,
        1 => base - l,
        _ => theta.ln_1p() + base - 2.0 * l,
    }
}

/// Posterior `(E[γ | D], E[log γ | D])` after `delta_prime` events with exposure `k`.
/// The posterior is Gamma with shape `1/θ + δ'` and rate `1/θ + k`.
pub fn posterior_frailty_moments(theta: f64, k: f64, delta_prime: u8) -> (f64, f64) {
    if theta <= 0.0 {
        return (1.0, 0.0);
    }
    let d = delta_prime as f64;
    let mean = (1.0 + theta * d) / (1.0 + theta * k);
    let shape = 1.0 / theta + d;
    let log_mean = digamma(shape) - (1.0 / theta + k).ln();
    (mean, log_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(gamma_laplace_deriv(1.0, 0.0, 0), 1.0);
        assert_eq!(gamma_laplace_deriv(1.0, 0.0, 1), -1.0);
        assert_relative_eq!(gamma_laplace_deriv(1.0, 1.0, 2), 0.25, max_relative = 1e-15);
        assert_eq!(posterior_frailty_moments(1.0, 0.0, 0).0, 1.0);
        assert_relative_eq!(posterior_frailty_moments(1.0, 1.0, 2).0, 1.5, max_relative = 1e-15);
        let (m, _) = posterior_frailty_moments(1e-12, 3.0, 2);
        assert!((m - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_limit_is_continuous() {
        for q in 0..=2 {
            let a = gamma_laplace_deriv(1e-10, 0.7, q);
            let b = gamma_laplace_deriv(0.0, 0.7, q);
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(theta in 0.01f64..5.0, k in 0.0f64..5.0) {
            let h = 1e-4 * (1.0 + k);
            let phi = |k: f64| gamma_laplace_deriv(theta, k, 0);
            let d1 = |k: f64| gamma_laplace_deriv(theta, k, 1);
            let fd1 = (phi(k + h) - phi(k - h)) / (2.0 * h);
            let fd2 = (d1(k + h) - d1(k - h)) / (2.0 * h);
            let a1 = gamma_laplace_deriv(theta, k, 1);
            let a2 = gamma_laplace_deriv(theta, k, 2);
            prop_assert!(((fd1 - a1) / a1).abs() < 1e-6);
            prop_assert!(((fd2 - a2) / a2).abs() < 1e-6);
        }

        #[test]
        fn ratio_form_of_posterior_mean(theta in 0.01f64..5.0, k in 0.0f64..5.0, d in 0u8..2) {
            let ratio = -gamma_laplace_deriv(theta, k, d + 1) / gamma_laplace_deriv(theta, k, d);
            let (m, _) = posterior_frailty_moments(theta, k, d);
            prop_assert!((ratio - m).abs() <= 1e-12 * m.max(1.0));
        }
    }
}
