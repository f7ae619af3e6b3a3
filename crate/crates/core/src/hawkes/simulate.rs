use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::HawkesParams;
use crate::error::{invalid, Error, Result};

/// Default limit on the number of simulated events before a run is declared
/// supercritical.
pub const DEFAULT_EVENT_CEILING: usize = 10_000_000;

/// Samples event times on `[0, horizon]` by Ogata thinning.
pub fn simulate<R: Rng + ?Sized>(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    simulate_with_ceiling(params, horizon, DEFAULT_EVENT_CEILING, rng)
}

pub fn simulate_with_ceiling<R: Rng + ?Sized>(
    params: &HawkesParams,
    horizon: f64,
    ceiling: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    simulate_from(params, &[], 0.0, horizon, ceiling, rng)
}

/// Continues a process from `start` given its `history` (times `<= start`),
/// returning only the new events in `(start, horizon]`.
pub fn simulate_from<R: Rng + ?Sized>(
    params: &HawkesParams,
    history: &[f64],
    start: f64,
    horizon: f64,
    ceiling: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(horizon.is_finite() && horizon > start) {
        return invalid(format!("horizon must exceed the start time, got {horizon}"));
    }
    let HawkesParams {
        alpha,
        beta,
        lambda_inf,
    } = *params;

    // excitation just after time t, including events at t
    let mut excitation: f64 = history
        .iter()
        .filter(|&&ti| ti <= start)
        .map(|&ti| alpha * (-beta * (start - ti)).exp())
        .sum();
    let mut t = start;
    let mut out = Vec::new();
    loop {
        let bound = lambda_inf + excitation;
        let wait = Exp::new(bound)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sample(rng);
        t += wait;
        if t > horizon {
            break;
        }
        excitation *= (-beta * wait).exp();
        if rng.random::<f64>() * bound <= lambda_inf + excitation {
            out.push(t);
            excitation += alpha;
            if out.len() > ceiling {
                return Err(Error::Supercritical { ceiling });
            }
        }
    }
    Ok(out)
}
