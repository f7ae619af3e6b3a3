use nalgebra::{Matrix3, Vector3};

use super::{check_times, log_likelihood_derivatives, log_likelihood_unchecked, HawkesParams};
use crate::error::Result;

/// Bounds and stopping rules for [`fit_mle_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub alpha_floor: f64,
    pub beta_floor: f64,
    pub lambda_floor: f64,
    pub upper_cap: f64,
    pub max_iterations: usize,
    /// Stop when the predicted gain of a Newton step falls below this
    /// fraction of `1 + |loglik|`.
    pub tolerance: f64,
    /// Initial decay rate used when no starting point is given.
    pub beta_init: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            alpha_floor: 1e-10,
            beta_floor: 1e-8,
            lambda_floor: 1e-8,
            upper_cap: 1e8,
            max_iterations: 500,
            tolerance: 1e-12,
            beta_init: 1.0,
        }
    }
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HawkesFit {
    pub params: HawkesParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// `false` when the iteration limit was reached first; `params` then
    /// holds the best point found.
    pub converged: bool,
}

/// Maximum-likelihood fit with default settings.
pub fn fit_mle(times: &[f64], horizon: f64, init: Option<HawkesParams>) -> Result<HawkesFit> {
    fit_mle_with(times, horizon, init, &MleConfig::default())
}

/// Maximizes the log-likelihood over log-transformed `(α, β, λ∞)` with a
/// bound-constrained Levenberg-damped Newton iteration and Armijo
/// backtracking. Every accepted step increases the objective, so the result
/// is never worse than `init`.
pub fn fit_mle_with(
    times: &[f64],
    horizon: f64,
    init: Option<HawkesParams>,
    config: &MleConfig,
) -> Result<HawkesFit> {
    check_times(times, horizon)?;
    if times.is_empty() {
        let params = HawkesParams {
            alpha: 0.0,
            beta: config.beta_floor,
            lambda_inf: config.lambda_floor,
        };
        return Ok(HawkesFit {
            params,
            log_likelihood: -config.lambda_floor * horizon,
            iterations: 0,
            converged: true,
        });
    }
    let start = init.unwrap_or(HawkesParams {
        alpha: 0.5 * config.beta_init,
        beta: config.beta_init,
        lambda_inf: times.len() as f64 / horizon,
    });
    Ok(newton(times, horizon, start, config))
}

fn newton(times: &[f64], horizon: f64, start: HawkesParams, config: &MleConfig) -> HawkesFit {
    let lo = Vector3::new(
        config.alpha_floor.ln(),
        config.beta_floor.ln(),
        config.lambda_floor.ln(),
    );
    let hi = Vector3::repeat(config.upper_cap.ln());
    let mut x = Vector3::new(
        start.alpha.max(config.alpha_floor).ln(),
        start.beta.ln(),
        start.lambda_inf.ln(),
    )
    .zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));

    let eval = |x: &Vector3<f64>| {
        let p = x.map(f64::exp);
        log_likelihood_unchecked(p[0], p[1], p[2], times, horizon)
    };

    let derivs = |x: &Vector3<f64>| {
        let p = x.map(f64::exp);
        log_likelihood_derivatives(p[0], p[1], p[2], times, horizon)
    };

    // The full Newton step is scored with a derivative pass, which also
    // serves the next iteration when the step is accepted.
    let mut d = derivs(&x);
    let mut f = d.value;
    let mut mu = 1e-6;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let p = x.map(f64::exp);
        let gp = Vector3::from(d.grad);
        let g = p.component_mul(&gp);
        let mut h = Matrix3::from_fn(|i, j| p[i] * p[j] * d.hess[i][j]);
        for i in 0..3 {
            h[(i, i)] += p[i] * gp[i];
        }

        let free: [bool; 3] = std::array::from_fn(|i| {
            !((x[i] <= lo[i] && g[i] <= 0.0) || (x[i] >= hi[i] && g[i] >= 0.0))
        });
        if free.iter().all(|&v| !v) {
            converged = true;
            break;
        }

        let Some(step) = damped_step(&h, &g, &free, &mut mu) else {
            break;
        };
        let gain = g.dot(&step);
        if gain <= config.tolerance * (1.0 + f.abs()) {
            converged = true;
            break;
        }

        let sufficient = |cand: &Vector3<f64>, fc: f64, t: f64| {
            let realized = g.dot(&(cand - x));
            fc.is_finite() && fc >= f + 1e-4 * realized.min(gain * t) && fc >= f
        };
        let clamp = |t: f64| (x + step * t).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
        let full = clamp(1.0);
        let d_full = derivs(&full);
        let accepted = if sufficient(&full, d_full.value, 1.0) {
            mu = (mu * 0.3).max(1e-12);
            Some((full, d_full))
        } else {
            let mut t = 0.5;
            let mut found = None;
            for _ in 0..39 {
                let cand = clamp(t);
                if sufficient(&cand, eval(&cand), t) {
                    found = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            found.map(|cand| {
                let dc = derivs(&cand);
                (cand, dc)
            })
        };
        match accepted {
            Some((cand, dc)) => {
                let rel = (dc.value - f) / (1.0 + f.abs());
                x = cand;
                f = dc.value;
                d = dc;
                if rel < 1e-15 {
                    converged = true;
                    break;
                }
            }
            None => {
                mu *= 10.0;
                if mu > 1e12 {
                    converged = true;
                    break;
                }
            }
        }
    }

    let p = x.map(f64::exp);
    HawkesFit {
        params: HawkesParams {
            alpha: p[0],
            beta: p[1],
            lambda_inf: p[2],
        },
        log_likelihood: f,
        iterations,
        converged,
    }
}

/// Ascent direction `(-H + μ D) d = g` restricted to the free coordinates,
/// with damping raised until the system is positive definite. Steps are
/// capped at 2 in each log coordinate.
fn damped_step(
    h: &Matrix3<f64>,
    g: &Vector3<f64>,
    free: &[bool; 3],
    mu: &mut f64,
) -> Option<Vector3<f64>> {
    let mut a = -h;
    let mut rhs = *g;
    for i in 0..3 {
        if !free[i] {
            for j in 0..3 {
                a[(i, j)] = 0.0;
                a[(j, i)] = 0.0;
            }
            a[(i, i)] = 1.0;
            rhs[i] = 0.0;
        }
    }
    let scale = (0..3).map(|i| a[(i, i)].abs()).fold(1e-12, f64::max);
    for _ in 0..60 {
        let mut m = a;
        for i in 0..3 {
            m[(i, i)] += *mu * scale;
        }
        if let Some(chol) = m.cholesky() {
            let mut d = chol.solve(&rhs);
            let big = d.amax();
            if big > 2.0 {
                d *= 2.0 / big;
            }
            return d.iter().all(|v| v.is_finite()).then_some(d);
        }
        *mu = (*mu * 10.0).max(1e-8);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::{log_likelihood, simulate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_times_hit_the_floor() {
        let cfg = MleConfig::default();
        let fit = fit_mle(&[], 10.0, None).unwrap();
        assert_eq!(fit.params.alpha, 0.0);
        assert_eq!(fit.params.beta, cfg.beta_floor);
        assert_eq!(fit.params.lambda_inf, cfg.lambda_floor);
    }

    #[test]
    fn recovers_poisson_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = HawkesParams::new(0.0, 1.0, 2.0).unwrap();
        let times = simulate(&truth, 500.0, &mut rng).unwrap();
        let fit = fit_mle(&times, 500.0, None).unwrap();
        let p = fit.params;
        // compensator over the window divided by its length
        let tail: f64 = times
            .iter()
            .map(|&t| -(-p.beta * (500.0 - t)).exp_m1())
            .sum();
        let rate = p.lambda_inf + p.alpha / p.beta * tail / 500.0;
        assert!((rate - 2.0).abs() / 2.0 < 0.1, "rate {rate} {fit:?}");
        assert!(p.alpha < 0.05 * p.lambda_inf, "{p:?}");
    }

    #[test]
    fn recovers_hawkes_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = HawkesParams::new(0.6, 0.8, 1.8).unwrap();
        let times = simulate(&truth, 400.0, &mut rng).unwrap();
        assert!(times.len() >= 2000);
        let fit = fit_mle(&times, 400.0, None).unwrap();
        assert!(fit.converged);
        let p = fit.params;
        for (est, tru) in [(p.alpha, 0.6), (p.beta, 0.8), (p.lambda_inf, 1.8)] {
            assert!((est - tru).abs() / tru < 0.25, "{p:?}");
        }
    }

    #[test]
    fn never_worse_than_the_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = HawkesParams::new(1.0, 3.0, 0.5).unwrap();
        let times = simulate(&truth, 60.0, &mut rng).unwrap();
        for init in [
            HawkesParams::new(0.01, 50.0, 10.0).unwrap(),
            HawkesParams::new(5.0, 0.1, 0.01).unwrap(),
            truth,
        ] {
            let fit = fit_mle(&times, 60.0, Some(init)).unwrap();
            let at_init = log_likelihood(&init, &times, 60.0).unwrap();
            assert!(fit.log_likelihood >= at_init);
            let again = log_likelihood(&fit.params, &times, 60.0).unwrap();
            assert!((again - fit.log_likelihood).abs() < 1e-9 * (1.0 + again.abs()));
        }
    }
}
