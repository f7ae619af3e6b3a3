#![allow(dead_code)]

use bppm::events::{partition_by_blocks, ClassAssignment, EventStream};
use bppm::hawkes::{fit_mle, HawkesParams};
use bppm::inference::conditional_log_likelihood_with;

/// Hawkes log-likelihood by the double sum over event pairs.
pub fn direct_log_likelihood(p: &HawkesParams, times: &[f64], horizon: f64) -> f64 {
    let mut ll = -p.lambda_inf * horizon;
    for (i, &t) in times.iter().enumerate() {
        let excitation: f64 = times[..i].iter().map(|&s| (-p.beta * (t - s)).exp()).sum();
        ll += (p.lambda_inf + p.alpha * excitation).ln();
        ll -= p.alpha / p.beta * (1.0 - (-p.beta * (horizon - t)).exp());
    }
    ll
}

/// Every label vector over `n` nodes and `k` classes.
pub fn all_assignments(n: usize, k: usize) -> impl Iterator<Item = ClassAssignment> {
    let total = k.pow(n as u32);
    (0..total).map(move |mut code| {
        let labels = (0..n)
            .map(|_| {
                let l = code % k;
                code /= k;
                l
            })
            .collect();
        ClassAssignment::new(labels, k).unwrap()
    })
}

/// Conditional log-likelihood with every block pair at its maximum-likelihood
/// parameters, each fit started from the default point.
pub fn profile_objective(stream: &EventStream, c: &ClassAssignment, horizon: f64) -> f64 {
    let view = partition_by_blocks(stream, c).unwrap();
    view.times
        .iter()
        .zip(&view.sizes)
        .map(|(times, &n)| {
            let fit = fit_mle(times, horizon, None).unwrap();
            let attach = if times.is_empty() { 0.0 } else { times.len() as f64 * (n as f64).ln() };
            fit.log_likelihood - attach
        })
        .sum()
}

/// Log marginal likelihood, summing the joint over all `K^N` assignments.
pub fn exact_log_evidence(stream: &EventStream, theta: &[HawkesParams], pi: &[f64], horizon: f64) -> f64 {
    let k = pi.len();
    let terms: Vec<f64> = all_assignments(stream.num_nodes(), k)
        .filter_map(|c| {
            let ll = conditional_log_likelihood_with(stream, &c, theta, horizon).ok()?;
            let prior: f64 = c.labels().iter().map(|&l| pi[l].ln()).sum();
            Some(ll + prior)
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Same partition up to a relabeling of classes.
pub fn same_partition(a: &ClassAssignment, b: &ClassAssignment) -> bool {
    let n = a.num_nodes();
    (0..n).all(|i| (0..n).all(|j| (a.label(i) == a.label(j)) == (b.label(i) == b.label(j))))
}
