//! Evidence lower bound for mean-field class posteriors.
//!
//! For `q(Z) = Π_i Multinomial(τ_i)` the bound is
//!
//! ```text
//! F = Σ τ log π − Σ τ log τ + Σ_ql [log-intensity + compensator] + attachment
//! ```
//!
//! with every expectation under `q` either exact or replaced by a lower bound:
//!
//! * compensator: exact, each event contributes `τ_{uq} τ_{vl}` times its
//!   kernel mass;
//! * log-intensity: `log(λ + α X)` is concave in the excitation `X`. Keeping
//!   only excitation from events of a reference assignment `ĉ` bounds `X`
//!   by the reference excitation `E_s`, and the chord of the logarithm on
//!   `[0, E_s]` gives a bound linear in `X`, whose conditional expectation
//!   is computed exactly (events sharing a node with `s` are counted with
//!   lower-bounding weights, and impossible ones are dropped);
//! * attachment: `E[log n_ql | s ∈ ql] ≤ log E[n_ql | s ∈ ql]` by Jensen.
//!
//! For hard `τ` equal to the reference assignment, all three are exact and
//! the bound equals the conditional log-likelihood plus the prior term.

use std::collections::HashMap;

use super::VariationalState;
use crate::error::{invalid, Result};
use crate::events::{pair_index, ClassAssignment, EventStream};
use crate::hawkes::HawkesParams;

/// Components of the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub prior: f64,
    pub entropy: f64,
    pub hawkes: f64,
    pub attachment: f64,
    pub total: f64,
}

/// Evidence lower bound with the reference assignment taken as the row-wise
/// argmax of `tau`.
pub fn elbo(
    stream: &EventStream,
    tau: &VariationalState,
    theta: &[HawkesParams],
    pi: &[f64],
    horizon: f64,
) -> Result<f64> {
    let reference = tau.hard_assignment();
    Ok(elbo_with_reference(stream, tau, theta, pi, &reference, horizon)?.total)
}

/// Evidence lower bound for an explicit reference assignment.
pub fn elbo_with_reference(
    stream: &EventStream,
    tau: &VariationalState,
    theta: &[HawkesParams],
    pi: &[f64],
    reference: &ClassAssignment,
    horizon: f64,
) -> Result<ElboParts> {
    let k = tau.num_classes();
    if tau.num_nodes() != stream.num_nodes() || reference.num_nodes() != stream.num_nodes() {
        return invalid("variational state does not match the stream");
    }
    if theta.len() != k * k || pi.len() != k || reference.num_classes() != k {
        return invalid("parameter dimensions do not match K");
    }
    if !(horizon > 0.0 && horizon >= stream.last_time()) {
        return invalid(format!("horizon {horizon} does not cover the events"));
    }
    theta.iter().try_for_each(HawkesParams::validate)?;
    let ctx = BoundContext::new(stream, horizon);
    Ok(ctx.evaluate(tau.as_slice(), k, theta, pi, reference.labels()))
}

/// Lazily decayed exponential sum.
#[derive(Clone, Copy, Default)]
struct Decayed {
    value: f64,
    time: f64,
}

impl Decayed {
    fn at(&self, t: f64, beta: f64) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.value * (-beta * (t - self.time).abs()).exp()
        }
    }

    fn add(&mut self, t: f64, beta: f64, w: f64) {
        self.value = self.at(t, beta) + w;
        self.time = t;
    }
}

/// Per-event quantities of one block pair that do not depend on `τ`.
pub(crate) struct PairWeights<'w> {
    /// `τ_{u_s q} τ_{v_s l}` for every event.
    pub w: &'w [f64],
    /// Whether the event belongs to the pair under the reference assignment.
    pub in_ref: &'w [bool],
    /// Off-diagonal pairs drop excitation from events whose endpoints cannot
    /// both be in the pair together with `s`.
    pub off_diagonal: bool,
}

/// Stream data shared by every evaluation of the bound.
pub(crate) struct BoundContext {
    pub horizon: f64,
    pub num_nodes: usize,
    pub times: Vec<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Distinct ordered node pairs with at least one event.
    pub dyads: Vec<(usize, usize)>,
    pub dyad_count: Vec<f64>,
    pub dyad_of: Vec<usize>,
    pub reverse: Vec<Option<usize>>,
}

impl BoundContext {
    pub fn new(stream: &EventStream, horizon: f64) -> Self {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut dyads = Vec::new();
        let mut dyad_count = Vec::new();
        let mut dyad_of = Vec::with_capacity(stream.len());
        let (mut times, mut src, mut dst) = (Vec::new(), Vec::new(), Vec::new());
        for e in stream.events() {
            let d = *index.entry((e.sender, e.receiver)).or_insert_with(|| {
                dyads.push((e.sender, e.receiver));
                dyad_count.push(0.0);
                dyads.len() - 1
            });
            dyad_count[d] += 1.0;
            dyad_of.push(d);
            times.push(e.time);
            src.push(e.sender);
            dst.push(e.receiver);
        }
        let reverse = dyads.iter().map(|&(u, v)| index.get(&(v, u)).copied()).collect();
        Self {
            horizon,
            num_nodes: stream.num_nodes(),
            times,
            src,
            dst,
            dyads,
            dyad_count,
            dyad_of,
            reverse,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Pair weights `τ_{u_s q} τ_{v_s l}` and reference membership.
    pub fn pair_weights(&self, tau: &[f64], k: usize, reference: &[usize], q: usize, l: usize) -> (Vec<f64>, Vec<bool>) {
        let w = (0..self.len())
            .map(|s| tau[self.src[s] * k + q] * tau[self.dst[s] * k + l])
            .collect();
        let in_ref = (0..self.len())
            .map(|s| reference[self.src[s]] == q && reference[self.dst[s]] == l)
            .collect();
        (w, in_ref)
    }

    /// Log-intensity and compensator terms of one block pair. With
    /// `grad = Some(buf)`, `buf[s]` receives the derivative of the value with
    /// respect to `w[s]`.
    pub fn hawkes_pair(&self, pw: &PairWeights, p: &HawkesParams, grad: Option<&mut Vec<f64>>) -> f64 {
        let HawkesParams {
            alpha,
            beta,
            lambda_inf: lambda,
        } = *p;
        let m = self.len();
        let ln_lambda = lambda.ln();
        let h = self.horizon;
        let want_grad = grad.is_some();

        let mut value = -lambda * h;
        let mut excite = 0.0;
        let mut weighted = 0.0;
        let mut last = 0.0;
        let mut out_state = vec![Decayed::default(); if pw.off_diagonal { self.num_nodes } else { 0 }];
        let mut in_state = out_state.clone();
        let mut dyad_state = vec![Decayed::default(); if pw.off_diagonal { self.dyads.len() } else { 0 }];
        let mut slope = if want_grad { vec![0.0; m] } else { Vec::new() };
        let mut mass = if want_grad { vec![0.0; m] } else { Vec::new() };

        for s in 0..m {
            let t = self.times[s];
            let decay = (-beta * (t - last)).exp();
            excite *= decay;
            weighted *= decay;
            last = t;
            let ws = pw.w[s];
            let (u, v, d) = (self.src[s], self.dst[s], self.dyad_of[s]);

            let mut g = 0.0;
            let mut y = 0.0;
            if excite > 0.0 {
                g = (alpha * excite / lambda).ln_1p() / excite;
                let conflict = if pw.off_diagonal {
                    out_state[v].at(t, beta) + in_state[u].at(t, beta)
                        - self.reverse[d].map_or(0.0, |r| dyad_state[r].at(t, beta))
                } else {
                    0.0
                };
                y = (weighted - conflict).max(0.0);
            }
            let kernel = alpha / beta * -(-beta * (h - t)).exp_m1();
            value += ws * (ln_lambda + g * y - kernel);
            if want_grad {
                slope[s] = g;
                mass[s] = ln_lambda + g * y - kernel;
            }

            if pw.in_ref[s] {
                excite += 1.0;
                weighted += ws;
                if pw.off_diagonal {
                    out_state[u].add(t, beta, ws);
                    in_state[v].add(t, beta, ws);
                    dyad_state[d].add(t, beta, ws);
                }
            }
        }

        if let Some(buf) = grad {
            // reverse pass: derivative of Σ_s w_s g_s Y_s through Y_s
            buf.clear();
            buf.extend_from_slice(&mass);
            let mut ahead = 0.0;
            let mut next = self.times.last().copied().unwrap_or(0.0);
            let mut r_out = vec![Decayed::default(); if pw.off_diagonal { self.num_nodes } else { 0 }];
            let mut r_in = r_out.clone();
            let mut r_dyad = vec![Decayed::default(); if pw.off_diagonal { self.dyads.len() } else { 0 }];
            for x in (0..m).rev() {
                let t = self.times[x];
                ahead *= (-beta * (next - t)).exp();
                next = t;
                let (u, v, d) = (self.src[x], self.dst[x], self.dyad_of[x]);
                if pw.in_ref[x] {
                    let conflict = if pw.off_diagonal {
                        r_in[u].at(t, beta) + r_out[v].at(t, beta)
                            - self.reverse[d].map_or(0.0, |r| r_dyad[r].at(t, beta))
                    } else {
                        0.0
                    };
                    buf[x] += ahead - conflict;
                }
                let gw = slope[x] * pw.w[x];
                ahead += gw;
                if pw.off_diagonal && gw != 0.0 {
                    r_out[u].add(t, beta, gw);
                    r_in[v].add(t, beta, gw);
                    r_dyad[d].add(t, beta, gw);
                }
            }
        }
        value
    }

    /// Column sums `c_k` and Gram matrix `G_ql = Σ_i τ_iq τ_il`.
    fn moments(&self, tau: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut col = vec![0.0; k];
        let mut gram = vec![0.0; k * k];
        for i in 0..self.num_nodes {
            let row = &tau[i * k..(i + 1) * k];
            for q in 0..k {
                col[q] += row[q];
                for l in 0..k {
                    gram[q * k + l] += row[q] * row[l];
                }
            }
        }
        (col, gram)
    }

    /// `E[n_ql | u ∈ q, v ∈ l]` and the conditional class counts `C_q`, `C_l`.
    fn expected_size(tau: &[f64], k: usize, col: &[f64], gram: &[f64], u: usize, v: usize, q: usize, l: usize) -> (f64, f64, f64) {
        let tu = &tau[u * k..(u + 1) * k];
        let tv = &tau[v * k..(v + 1) * k];
        let cc = |x: usize| col[x] - tu[x] - tv[x] + (x == q) as u8 as f64 + (x == l) as u8 as f64;
        let (cq, cl) = (cc(q), cc(l));
        let others = gram[q * k + l] - tu[q] * tu[l] - tv[q] * tv[l];
        let diag = if q == l { 2.0 } else { 0.0 };
        ((cq * cl - others - diag).max(1.0), cq, cl)
    }

    /// Attachment term `−Σ_d W_d Σ_ql w_d^{ql} log E[n_ql | d ∈ ql]`, and the
    /// table of `log E[n]` per dyad and pair.
    fn attachment(&self, tau: &[f64], k: usize) -> (f64, Vec<f64>) {
        let (col, gram) = self.moments(tau, k);
        let mut total = 0.0;
        let mut table = vec![0.0; self.dyads.len() * k * k];
        for (d, &(u, v)) in self.dyads.iter().enumerate() {
            for q in 0..k {
                for l in 0..k {
                    let (en, _, _) = Self::expected_size(tau, k, &col, &gram, u, v, q, l);
                    let ln = en.ln();
                    table[d * k * k + q * k + l] = ln;
                    total -= self.dyad_count[d] * tau[u * k + q] * tau[v * k + l] * ln;
                }
            }
        }
        (total, table)
    }

    /// Adds the derivative of the attachment term through `E[n]` (not through
    /// the pair weights) to `grad`.
    fn attachment_size_gradient(&self, tau: &[f64], k: usize, grad: &mut [f64]) {
        let (col, gram) = self.moments(tau, k);
        let mut a = vec![0.0; k];
        let mut bm = vec![0.0; k * k];
        for (d, &(u, v)) in self.dyads.iter().enumerate() {
            for q in 0..k {
                for l in 0..k {
                    let (en, cq, cl) = Self::expected_size(tau, k, &col, &gram, u, v, q, l);
                    let hgt = -self.dyad_count[d] * tau[u * k + q] * tau[v * k + l] / en;
                    if hgt == 0.0 {
                        continue;
                    }
                    a[q] += hgt * cl;
                    a[l] += hgt * cq;
                    bm[q * k + l] += hgt;
                    // E[n] does not depend on the rows of u and v
                    for x in [u, v] {
                        grad[x * k + q] -= hgt * (cl - tau[x * k + l]);
                        grad[x * k + l] -= hgt * (cq - tau[x * k + q]);
                    }
                }
            }
        }
        for x in 0..self.num_nodes {
            for kk in 0..k {
                let mut g = a[kk];
                for l in 0..k {
                    g -= bm[kk * k + l] * tau[x * k + l] + bm[l * k + kk] * tau[x * k + l];
                }
                grad[x * k + kk] += g;
            }
        }
    }

    pub fn evaluate(&self, tau: &[f64], k: usize, theta: &[HawkesParams], pi: &[f64], reference: &[usize]) -> ElboParts {
        let mut prior = 0.0;
        let mut entropy = 0.0;
        for i in 0..self.num_nodes {
            for q in 0..k {
                let t = tau[i * k + q];
                if t > 0.0 {
                    prior += t * pi[q].ln();
                    entropy -= t * t.ln();
                }
            }
        }
        let mut hawkes = 0.0;
        for q in 0..k {
            for l in 0..k {
                let (w, in_ref) = self.pair_weights(tau, k, reference, q, l);
                let pw = PairWeights {
                    w: &w,
                    in_ref: &in_ref,
                    off_diagonal: q != l,
                };
                hawkes += self.hawkes_pair(&pw, &theta[pair_index(q, l, k)], None);
            }
        }
        let (attachment, _) = self.attachment(tau, k);
        ElboParts {
            prior,
            entropy,
            hawkes,
            attachment,
            total: prior + entropy + hawkes + attachment,
        }
    }

    /// Value of the bound and the gradient of its Hawkes and attachment terms
    /// with respect to `τ` (row-major `N x K`). Prior and entropy are left
    /// out of the gradient.
    pub fn energy_gradient(&self, tau: &[f64], k: usize, theta: &[HawkesParams], pi: &[f64], reference: &[usize]) -> (ElboParts, Vec<f64>) {
        let mut grad = vec![0.0; self.num_nodes * k];
        let (attachment, ln_en) = self.attachment(tau, k);
        let mut hawkes = 0.0;
        let mut dw = Vec::new();
        for q in 0..k {
            for l in 0..k {
                let (w, in_ref) = self.pair_weights(tau, k, reference, q, l);
                let pw = PairWeights {
                    w: &w,
                    in_ref: &in_ref,
                    off_diagonal: q != l,
                };
                hawkes += self.hawkes_pair(&pw, &theta[pair_index(q, l, k)], Some(&mut dw));
                for s in 0..self.len() {
                    let (u, v) = (self.src[s], self.dst[s]);
                    let gs = dw[s] - ln_en[self.dyad_of[s] * k * k + q * k + l];
                    grad[u * k + q] += gs * tau[v * k + l];
                    grad[v * k + l] += gs * tau[u * k + q];
                }
            }
        }
        self.attachment_size_gradient(tau, k, &mut grad);
        let mut prior = 0.0;
        let mut entropy = 0.0;
        for i in 0..self.num_nodes {
            for q in 0..k {
                let t = tau[i * k + q];
                if t > 0.0 {
                    prior += t * pi[q].ln();
                    entropy -= t * t.ln();
                }
            }
        }
        let parts = ElboParts {
            prior,
            entropy,
            hawkes,
            attachment,
            total: prior + entropy + hawkes + attachment,
        };
        (parts, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use crate::inference::conditional_log_likelihood_with;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, m: usize, k: usize) -> (EventStream, Vec<HawkesParams>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        let mut t = 0.0;
        for _ in 0..m {
            t += rng.random::<f64>() * 0.5;
            let u = rng.random_range(0..n);
            let mut v = rng.random_range(0..n - 1);
            if v >= u {
                v += 1;
            }
            events.push(Event::new(u, v, t));
        }
        let stream = EventStream::new(events, n, t + 1.0).unwrap();
        let theta = (0..k * k)
            .map(|_| {
                HawkesParams::new(
                    rng.random_range(0.1..2.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.05..1.0),
                )
                .unwrap()
            })
            .collect();
        let mut pi: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        (stream, theta, pi)
    }

    #[test]
    fn hard_tau_recovers_the_conditional_likelihood() {
        for seed in 0..5 {
            let (stream, theta, pi) = random_instance(seed, 7, 40, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..2)).collect();
            let c = ClassAssignment::new(labels, 2).unwrap();
            let tau = VariationalState::hard(&c);
            let h = stream.horizon();
            let bound = elbo(&stream, &tau, &theta, &pi, h).unwrap();
            let prior: f64 = c.labels().iter().map(|&q| pi[q].ln()).sum();
            let ll = conditional_log_likelihood_with(&stream, &c, &theta, h).unwrap();
            assert_relative_eq!(bound, ll + prior, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_class_is_the_single_pair_likelihood() {
        let (stream, theta, _) = random_instance(9, 5, 30, 1);
        let tau = VariationalState::hard(&ClassAssignment::uniform(5, 1).unwrap());
        let c = ClassAssignment::uniform(5, 1).unwrap();
        let h = stream.horizon();
        let parts = elbo_with_reference(&stream, &tau, &theta, &[1.0], &c, h).unwrap();
        assert_eq!(parts.prior, 0.0);
        assert_eq!(parts.entropy, 0.0);
        let ll = conditional_log_likelihood_with(&stream, &c, &theta, h).unwrap();
        assert_relative_eq!(parts.total, ll, max_relative = 1e-12);
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let (stream, theta, pi) = random_instance(3, 6, 35, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tau = VariationalState::random(6, 3, &mut rng);
        let reference = tau.hard_assignment();
        let ctx = BoundContext::new(&stream, stream.horizon());
        let (parts, grad) = ctx.energy_gradient(tau.as_slice(), 3, &theta, &pi, reference.labels());
        let energy = |t: &[f64]| {
            let p = ctx.evaluate(t, 3, &theta, &pi, reference.labels());
            p.hawkes + p.attachment
        };
        assert_relative_eq!(parts.hawkes + parts.attachment, energy(tau.as_slice()), max_relative = 1e-12);
        let step = 1e-6;
        for idx in 0..18 {
            let mut up = tau.as_slice().to_vec();
            let mut dn = up.clone();
            up[idx] += step;
            dn[idx] -= step;
            let fd = (energy(&up) - energy(&dn)) / (2.0 * step);
            assert_relative_eq!(grad[idx], fd, max_relative = 1e-5, epsilon = 1e-6);
        }
    }
}
