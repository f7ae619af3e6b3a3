//! Univariate Hawkes processes with an exponential kernel.
//!
//! The conditional intensity is
//!
//! ```text
//! λ(t) = λ∞ + Σ_{t_i < t} α e^{-β (t - t_i)}
//! ```
//!
//! All likelihood computations use the O(m) recursion
//! `R(s) = e^{-β (t_s - t_{s-1})} (1 + R(s-1))` for the excitation sum, and the
//! compensator is evaluated up to an explicit horizon.

mod mle;
mod simulate;
mod waiting;

pub use mle::{fit_mle, fit_mle_with, HawkesFit, MleConfig};
pub use simulate::{simulate, simulate_from, simulate_with_ceiling, DEFAULT_EVENT_CEILING};
pub use waiting::expected_next_event_time;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Parameters `(α, β, λ∞)` of one exponential Hawkes process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    /// Jump in intensity at each event.
    pub alpha: f64,
    /// Exponential decay rate of the excitation.
    pub beta: f64,
    /// Background rate.
    pub lambda_inf: f64,
}

impl HawkesParams {
    pub fn new(alpha: f64, beta: f64, lambda_inf: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            lambda_inf,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return invalid(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return invalid(format!("beta must be finite and > 0, got {}", self.beta));
        }
        if !(self.lambda_inf.is_finite() && self.lambda_inf > 0.0) {
            return invalid(format!(
                "lambda_inf must be finite and > 0, got {}",
                self.lambda_inf
            ));
        }
        Ok(())
    }

    /// Branching ratio `α / β`; the process is stationary when below one.
    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }

    /// Long-run event rate `λ∞ / (1 - α/β)` of a stationary process.
    pub fn stationary_rate(&self) -> Option<f64> {
        let n = self.branching_ratio();
        (n < 1.0).then(|| self.lambda_inf / (1.0 - n))
    }
}

/// Conditional intensity at `t` given ascending `history`; only events
/// strictly before `t` contribute.
pub fn intensity(params: &HawkesParams, history: &[f64], t: f64) -> f64 {
    let excitation: f64 = history
        .iter()
        .take_while(|&&ti| ti < t)
        .map(|&ti| (-params.beta * (t - ti)).exp())
        .sum();
    params.lambda_inf + params.alpha * excitation
}

/// Log-likelihood of ascending event `times` observed over `[0, horizon]`.
pub fn log_likelihood(params: &HawkesParams, times: &[f64], horizon: f64) -> Result<f64> {
    params.validate()?;
    check_times(times, horizon)?;
    Ok(log_likelihood_unchecked(
        params.alpha,
        params.beta,
        params.lambda_inf,
        times,
        horizon,
    ))
}

pub(crate) fn check_times(times: &[f64], horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return invalid(format!("horizon must be positive, got {horizon}"));
    }
    if let Some(&first) = times.first() {
        if first < 0.0 {
            return invalid("event times must be nonnegative");
        }
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("event times must be ascending");
    }
    if let Some(&last) = times.last() {
        if last > horizon {
            return invalid(format!("event time {last} exceeds horizon {horizon}"));
        }
    }
    Ok(())
}

pub(crate) fn log_likelihood_unchecked(
    alpha: f64,
    beta: f64,
    lambda: f64,
    times: &[f64],
    horizon: f64,
) -> f64 {
    let mut ll = -lambda * horizon;
    let Some(&last) = times.last() else {
        return ll;
    };
    // r = sum_j exp(-beta (t - t_j)) and q = sum_j (1 - exp(-beta (t - t_j)))
    // over earlier events; q stays a sum of nonnegative terms.
    let (mut r, mut q) = (0.0, 0.0);
    let mut prev = f64::NAN;
    for (s, &t) in times.iter().enumerate() {
        if s > 0 {
            let em1 = (-beta * (t - prev)).exp_m1();
            let e = 1.0 + em1;
            q = e * q - s as f64 * em1;
            r = e * (1.0 + r);
        }
        ll += (lambda + alpha * r).ln();
        prev = t;
    }
    let em1 = (-beta * (horizon - last)).exp_m1();
    let tail = (1.0 + em1) * q - times.len() as f64 * em1;
    ll - alpha / beta * tail
}

/// Value, gradient and Hessian of the log-likelihood with respect to
/// `(α, β, λ∞)`.
pub(crate) struct Derivatives {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

pub(crate) fn log_likelihood_derivatives(
    alpha: f64,
    beta: f64,
    lambda: f64,
    times: &[f64],
    horizon: f64,
) -> Derivatives {
    let (mut r, mut d, mut g) = (0.0, 0.0, 0.0);
    let mut prev = f64::NAN;
    let mut value = -lambda * horizon;
    let (mut s_inv, mut s_r, mut s_d) = (0.0, 0.0, 0.0);
    let (mut s_inv2, mut s_r2, mut s_d2, mut s_rinv2, mut s_dinv2, mut s_rd2, mut s_g) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut q = 0.0;
    for (s, &t) in times.iter().enumerate() {
        if s > 0 {
            let dt = t - prev;
            let em1 = (-beta * dt).exp_m1();
            let e = 1.0 + em1;
            let one_r = 1.0 + r;
            g = e * (g + 2.0 * dt * d + dt * dt * one_r);
            d = e * (d + dt * one_r);
            r = e * one_r;
            q = e * q - s as f64 * em1;
        }
        let x = lambda + alpha * r;
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        value += x.ln();
        s_inv += inv;
        s_r += r * inv;
        s_d += d * inv;
        s_g += g * inv;
        s_inv2 += inv2;
        s_rinv2 += r * inv2;
        s_dinv2 += d * inv2;
        s_r2 += r * r * inv2;
        s_d2 += d * d * inv2;
        s_rd2 += r * d * inv2;
        prev = t;
    }
    // sums over events of 1 - exp(-beta u), u exp(-beta u), -u^2 exp(-beta u)
    // with u = horizon - t_j, continued from the recursions
    let (b0, b1, b2) = if times.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let u = horizon - prev;
        let em1 = (-beta * u).exp_m1();
        let e = 1.0 + em1;
        let one_r = 1.0 + r;
        (
            e * q - times.len() as f64 * em1,
            e * (d + u * one_r),
            -e * (g + 2.0 * u * d + u * u * one_r),
        )
    };
    value -= alpha / beta * b0;

    // compensator (α/β) B(β) and its derivatives
    let c_a = b0 / beta;
    let c_b = alpha * (b1 / beta - b0 / (beta * beta));
    let c_ab = b1 / beta - b0 / (beta * beta);
    let c_bb = alpha * (b2 / beta - 2.0 * b1 / (beta * beta) + 2.0 * b0 / (beta * beta * beta));

    let grad = [s_r - c_a, -alpha * s_d - c_b, s_inv - horizon];
    let h_aa = -s_r2;
    let h_ab = -s_d + alpha * s_rd2 - c_ab;
    let h_al = -s_rinv2;
    let h_bb = alpha * s_g - alpha * alpha * s_d2 - c_bb;
    let h_bl = alpha * s_dinv2;
    let h_ll = -s_inv2;
    Derivatives {
        value,
        grad,
        hess: [[h_aa, h_ab, h_al], [h_ab, h_bb, h_bl], [h_al, h_bl, h_ll]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intensity_examples() {
        let p = HawkesParams::new(1.0, 2.0, 0.5).unwrap();
        assert_eq!(intensity(&p, &[], 3.0), 0.5);
        assert_relative_eq!(intensity(&p, &[0.0], 0.5), 0.5 + (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(intensity(&p, &[0.0], 0.5), 0.867879, epsilon = 1e-6);

        let q = HawkesParams::new(0.6, 0.8, 1.8).unwrap();
        let expected = 1.8 + 0.6 * ((-0.8f64 * 0.5).exp() + (-0.8f64 * 0.3).exp());
        assert_relative_eq!(intensity(&q, &[1.0, 1.2], 1.5), expected, epsilon = 1e-14);
    }

    #[test]
    fn intensity_jumps_by_alpha() {
        let p = HawkesParams::new(0.7, 1.3, 0.2).unwrap();
        let h = [0.5, 1.0, 2.0];
        let before = intensity(&p, &h, 2.0 - 1e-9);
        let after = intensity(&p, &h, 2.0 + 1e-9);
        assert!(((after - before) - 0.7).abs() < 1e-6 * 0.7);
    }

    #[test]
    fn poisson_reduction() {
        let p = HawkesParams::new(0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(log_likelihood(&p, &[0.5], 0.5).unwrap(), -0.5, epsilon = 1e-15);
        let q = HawkesParams::new(0.3, 2.0, 1.7).unwrap();
        assert_relative_eq!(log_likelihood(&q, &[], 4.0).unwrap(), -1.7 * 4.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let bad = HawkesParams {
            alpha: 0.1,
            beta: 0.0,
            lambda_inf: 1.0,
        };
        assert!(log_likelihood(&bad, &[0.1], 1.0).is_err());
        let bad = HawkesParams {
            alpha: 0.1,
            beta: 1.0,
            lambda_inf: -1.0,
        };
        assert!(log_likelihood(&bad, &[0.1], 1.0).is_err());
        let p = HawkesParams::new(0.1, 1.0, 1.0).unwrap();
        assert!(log_likelihood(&p, &[0.5, 0.2], 1.0).is_err());
        assert!(log_likelihood(&p, &[0.5, 2.0], 1.0).is_err());
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let times = [0.1, 0.3, 0.35, 1.2, 1.25, 1.27, 2.9, 3.0, 4.4];
        let h = 5.0;
        let x = [0.9, 1.7, 0.6];
        let d = log_likelihood_derivatives(x[0], x[1], x[2], &times, h);
        let f = |p: [f64; 3]| log_likelihood_unchecked(p[0], p[1], p[2], &times, h);
        assert_relative_eq!(d.value, f(x), epsilon = 1e-12);
        let step = 1e-5;
        for i in 0..3 {
            let mut up = x;
            let mut dn = x;
            up[i] += step;
            dn[i] -= step;
            let fd = (f(up) - f(dn)) / (2.0 * step);
            assert_relative_eq!(d.grad[i], fd, max_relative = 1e-6, epsilon = 1e-8);
            let gu = log_likelihood_derivatives(up[0], up[1], up[2], &times, h).grad;
            let gd = log_likelihood_derivatives(dn[0], dn[1], dn[2], &times, h).grad;
            for j in 0..3 {
                let fd = (gu[j] - gd[j]) / (2.0 * step);
                assert_relative_eq!(d.hess[i][j], fd, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }
}
