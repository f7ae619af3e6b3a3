use super::HawkesParams;

const SURVIVAL_FLOOR: f64 = 1e-12;

/// Expected time from `now` until the next event, given the events in
/// `history` up to `now`.
///
/// With `E0` the excitation at `now`, the compensator over `(now, now + t]` is
/// `Λ(t) = λ∞ t + (E0 / β)(1 - e^{-β t})` and the expectation is
/// `∫ exp(-Λ(t)) dt`. The integral is evaluated by double-exponential
/// quadrature up to the point where the survival function drops below
/// `1e-12`, and the remaining tail is approximated by `S(t) / λ(t)`.
pub fn expected_next_event_time(params: &HawkesParams, history: &[f64], now: f64) -> f64 {
    let HawkesParams {
        alpha,
        beta,
        lambda_inf,
    } = *params;
    let e0: f64 = alpha
        * history
            .iter()
            .take_while(|&&t| t <= now)
            .map(|&t| (-beta * (now - t)).exp())
            .sum::<f64>();
    let c = e0 / beta;
    let compensator = |t: f64| lambda_inf * t - c * (-beta * t).exp_m1();
    let survival = |t: f64| (-compensator(t)).exp();

    let target = -SURVIVAL_FLOOR.ln();
    let mut hi = target / lambda_inf;
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if compensator(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let t_max = hi;

    // geometric breakpoints keep each piece free of sharp interior features
    let peak = lambda_inf + e0;
    let tol = 1e-8 / peak;
    let mut total = 0.0;
    let mut a = 0.0;
    let mut b = (1.0 / peak).min(t_max);
    loop {
        total += quadrature::integrate(survival, a, b, tol).integral;
        if b >= t_max {
            break;
        }
        a = b;
        b = (b * 4.0).min(t_max);
    }
    let rate_at_end = lambda_inf + e0 * (-beta * t_max).exp();
    total + survival(t_max) / rate_at_end
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `E[W] = (e^{-c} / β) Σ_k c^k / (k! (a + k))` with `a = λ∞/β`.
    fn series(params: &HawkesParams, e0: f64) -> f64 {
        let a = params.lambda_inf / params.beta;
        let c = e0 / params.beta;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..2000 {
            if k > 0 {
                term *= c / k as f64;
            }
            let add = term / (a + k as f64);
            sum += add;
            if k as f64 > c && add < 1e-18 * sum {
                break;
            }
        }
        (-c).exp() / params.beta * sum
    }

    #[test]
    fn poisson_waiting_time_is_reciprocal_rate() {
        let p = HawkesParams::new(0.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(expected_next_event_time(&p, &[], 3.0), 2.0, max_relative = 1e-6);
        assert_relative_eq!(
            expected_next_event_time(&p, &[0.5, 2.9], 3.0),
            2.0,
            max_relative = 1e-6
        );
    }

    #[test]
    fn continuous_as_alpha_vanishes() {
        let p = HawkesParams::new(1e-12, 2.0, 0.5).unwrap();
        let w = expected_next_event_time(&p, &[1.0, 2.0], 2.0);
        assert!((w - 2.0).abs() < 1e-6);
    }

    #[test]
    fn matches_series_expansion() {
        for (alpha, beta, lambda, hist, now) in [
            (1.0, 2.0, 0.5, vec![4.0], 4.0),
            (0.6, 0.8, 1.8, vec![1.0, 1.2], 1.5),
            (3.0, 0.5, 0.01, vec![0.0, 0.1, 0.2], 0.3),
            (50.0, 100.0, 5.0, vec![0.99, 1.0], 1.0),
            (1.0, 1.0, 1e-4, vec![10.0], 10.0),
        ] {
            let p = HawkesParams::new(alpha, beta, lambda).unwrap();
            let e0: f64 = hist.iter().map(|&t| alpha * (-beta * (now - t)).exp()).sum();
            let w = expected_next_event_time(&p, &hist, now);
            assert_relative_eq!(w, series(&p, e0), max_relative = 1e-6);
        }
    }

    #[test]
    fn matches_monte_carlo_first_arrivals() {
        let p = HawkesParams::new(1.0, 2.0, 0.5).unwrap();
        let now = 1.0;
        let hist = [now];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let runs = 1_000_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..runs {
            // thinning until the first accepted candidate
            let mut excitation = p.alpha;
            let mut w = 0.0;
            loop {
                let bound = p.lambda_inf + excitation;
                let gap = -(1.0 - rng.random::<f64>()).ln() / bound;
                w += gap;
                excitation *= (-p.beta * gap).exp();
                if rng.random::<f64>() * bound <= p.lambda_inf + excitation {
                    break;
                }
            }
            sum += w;
            sq += w * w;
        }
        let mean = sum / runs as f64;
        let se = ((sq / runs as f64 - mean * mean) / runs as f64).sqrt();
        let w = expected_next_event_time(&p, &hist, now);
        assert!((w - mean).abs() < 3.0 * se, "quad {w}, mc {mean} ± {se}");
    }
}
