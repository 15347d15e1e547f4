//! Scalar special functions: log-gamma family, the regularized lower incomplete gamma
//! function with its shape derivative, and stable logistic helpers.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 15.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn clamp_logit(x: f64) -> f64 {
    x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // asymptotic series 1/x + 1/(2x²) + Σ B_2k / x^(2k+1)
    acc + inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))))
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_cdf(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::gamma::gamma_lr(a, x)
    }
}

/// Density of Gamma(a, 1) at x.
pub fn gamma_pdf(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() - x - ln_gamma(a)).exp()
}

/// `∂P(a, x)/∂a` from the power series
/// `P(a,x) = Σ_k e^{−x} x^{a+k} / Γ(a+k+1)`, differentiated term by term.
pub fn gamma_cdf_da(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lx = x.ln();
    let mut term = (a * lx - x - ln_gamma(a + 1.0)).exp();
    let mut psi = digamma(a + 1.0);
    let mut sum = 0.0;
    let mut k = 0usize;
    loop {
        let contrib = term * (lx - psi);
        sum += contrib;
        let denom = a + k as f64 + 1.0;
        psi += 1.0 / denom;
        term *= x / denom;
        k += 1;
        if (k as f64 > x && term < 1e-17 * (1.0 + sum.abs())) || k > 20_000 {
            break;
        }
        if term == 0.0 && k as f64 > x {
            break;
        }
    }
    sum
}

/// `dx/da` of the quantile map `x = P⁻¹(u; a)` holding `u` fixed, evaluated at a sample `x`.
/// This is the implicit reparameterization gradient of a Gamma(a, 1) draw.
pub fn gamma_sample_da(a: f64, x: f64) -> f64 {
    let pdf = gamma_pdf(a, x);
    if pdf <= 0.0 || !pdf.is_finite() {
        return 0.0;
    }
    let g = -gamma_cdf_da(a, x) / pdf;
    if g.is_finite() {
        g
    } else {
        0.0
    }
}

/// Quantile of Gamma(a, 1): solves `P(a, x) = u` by safeguarded Newton iteration in `ln x`.
pub fn gamma_quantile(a: f64, u: f64) -> f64 {
    debug_assert!(a > 0.0 && u > 0.0 && u < 1.0);
    let lga1 = ln_gamma(a + 1.0);
    let lga = lga1 - a.ln();
    // left-tail approximation P(a,x) ≈ x^a / Γ(a+1), else Wilson–Hilferty
    let t_small = (u.ln() + lga1) / a;
    let mut t = if a < 1.0 || t_small < (0.1 * a).ln() {
        t_small
    } else {
        let z = normal_quantile(u);
        let c = 1.0 - 1.0 / (9.0 * a) + z / (3.0 * a.sqrt());
        (a * c.max(1e-3).powi(3)).ln()
    };
    let (mut lo, mut hi) = (-745.0_f64, 800.0_f64.ln().max(((a + 40.0 * a.sqrt() + 60.0) * 2.0).ln()));
    t = t.clamp(lo, hi);
    for _ in 0..200 {
        let x = t.exp();
        let f = gamma_cdf(a, x) - u;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let dens_t = (a * t - x - lga).exp(); // dP/dt = x · pdf(x)
        let mut next = if dens_t > 0.0 { t - f / dens_t } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-15 * (1.0 + t.abs()) {
            t = next;
            break;
        }
        t = next;
    }
    t.exp()
}

/// Standard normal quantile (Acklam's rational approximation, ~1e-9 relative).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    let plow = 0.02425;
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// `ln B(α) = Σ ln Γ(α_k) − ln Γ(Σ α_k)`.
pub fn ln_multivariate_beta(alpha: &[f64]) -> f64 {
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn trigamma_matches_finite_difference_of_digamma() {
        for &x in &[0.05f64, 0.3, 1.0, 2.5, 7.0, 40.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(close(trigamma(x), fd, 1e-6), "x={x}: {} vs {fd}", trigamma(x));
        }
        // ψ'(1) = π²/6
        assert!(close(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, 1e-13));
    }

    #[test]
    fn cdf_shape_derivative_matches_finite_difference() {
        for &(a, x) in &[(0.3, 0.01), (0.3, 2.0), (1.0, 1.0), (2.5, 0.7), (2.5, 6.0), (12.0, 9.0), (40.0, 55.0)] {
            let h = 1e-6 * a;
            let fd = (gamma_cdf(a + h, x) - gamma_cdf(a - h, x)) / (2.0 * h);
            let d = gamma_cdf_da(a, x);
            assert!((d - fd).abs() < 1e-7, "a={a} x={x}: {d} vs {fd}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &a in &[0.05, 0.4, 1.0, 3.3, 25.0, 300.0] {
            for &u in &[1e-9, 0.001, 0.2, 0.5, 0.9, 0.999_999] {
                let x = gamma_quantile(a, u);
                assert!(x > 0.0);
                assert!((gamma_cdf(a, x) - u).abs() < 1e-12 * (1.0 + u / 1e-3), "a={a} u={u} x={x}");
            }
        }
    }

    #[test]
    fn quantile_derivative_matches_finite_difference() {
        for &a in &[0.2, 1.0, 4.0, 30.0] {
            for &u in &[0.05, 0.5, 0.95] {
                let x = gamma_quantile(a, u);
                let h = 1e-6 * a;
                let fd = (gamma_quantile(a + h, u) - gamma_quantile(a - h, u)) / (2.0 * h);
                let d = gamma_sample_da(a, x);
                assert!(close(d, fd, 1e-6), "a={a} u={u}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn exponential_quantile_closed_form() {
        // a = 1 is Exp(1): x = −ln(1 − u), dx/da has no closed form but the value does
        for &u in &[0.1, 0.5, 0.99] {
            assert!(close(gamma_quantile(1.0, u), -(1.0 - u).ln(), 1e-12));
        }
    }

    #[test]
    fn logistic_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(close(sigmoid(logit(0.3)), 0.3, 1e-15));
        assert!(close(softplus(0.0), 2f64.ln(), 1e-15));
        assert_eq!(softplus(100.0), 100.0);
        assert_eq!(clamp_logit(1e9), LOGIT_CLAMP);
    }
}
