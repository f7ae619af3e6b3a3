//! Sampling synthetic networks from a block Hawkes model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::events::{pair_index, ClassAssignment, Event, EventStream};
use crate::hawkes::{simulate_with_ceiling, HawkesParams, DEFAULT_EVENT_CEILING};

/// Class probabilities and one Hawkes process per ordered block pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHawkesModel {
    pub num_classes: usize,
    pub class_probs: Vec<f64>,
    /// Row-major `K x K` table indexed by [`pair_index`].
    pub params: Vec<HawkesParams>,
}

impl BlockHawkesModel {
    pub fn new(class_probs: Vec<f64>, params: Vec<HawkesParams>) -> Result<Self> {
        let model = Self {
            num_classes: class_probs.len(),
            class_probs,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    /// Same parameters on every diagonal pair and on every off-diagonal pair,
    /// with uniform class probabilities.
    pub fn planted(num_classes: usize, diagonal: HawkesParams, off_diagonal: HawkesParams) -> Result<Self> {
        let k = num_classes;
        let params = (0..k * k)
            .map(|b| if b / k == b % k { diagonal } else { off_diagonal })
            .collect();
        Self::new(vec![1.0 / k as f64; k], params)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes;
        if k == 0 {
            return invalid("a model needs at least one class");
        }
        if self.class_probs.len() != k {
            return invalid("class probability vector must have K entries");
        }
        check_simplex(&self.class_probs)?;
        if self.params.len() != k * k {
            return invalid(format!("expected {} block-pair parameter sets, got {}", k * k, self.params.len()));
        }
        self.params.iter().try_for_each(HawkesParams::validate)
    }

    pub fn param(&self, q: usize, l: usize) -> &HawkesParams {
        &self.params[pair_index(q, l, self.num_classes)]
    }
}

fn check_simplex(pi: &[f64]) -> Result<()> {
    if pi.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return invalid("class probabilities must be nonnegative");
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return invalid(format!("class probabilities sum to {total}, not 1"));
    }
    Ok(())
}

/// Draws i.i.d. categorical class labels.
pub fn sample_classes<R: Rng + ?Sized>(pi: &[f64], num_nodes: usize, rng: &mut R) -> Result<ClassAssignment> {
    if pi.is_empty() {
        return invalid("class probability vector is empty");
    }
    check_simplex(pi)?;
    let last = pi.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let labels = (0..num_nodes)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (q, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    return q;
                }
            }
            last
        })
        .collect();
    ClassAssignment::new(labels, pi.len())
}

/// A sampled network together with bookkeeping from the attachment step.
#[derive(Debug, Clone)]
pub struct SampledNetwork {
    pub stream: EventStream,
    pub classes: ClassAssignment,
    /// Events dropped because their block pair had no node pairs.
    pub discarded: usize,
}

/// Samples classes from `π`, then events for every block pair.
pub fn sample_network<R: Rng + ?Sized>(
    model: &BlockHawkesModel,
    num_nodes: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<(EventStream, ClassAssignment)> {
    model.validate()?;
    let classes = sample_classes(&model.class_probs, num_nodes, rng)?;
    let net = sample_network_with_classes(model, classes, horizon, rng)?;
    Ok((net.stream, net.classes))
}

/// Samples events for planted `classes`.
///
/// Each block pair gets its own generator seeded from one draw of `rng` and
/// the pair index, so the output depends only on the state of `rng`.
pub fn sample_network_with_classes<R: Rng + ?Sized>(
    model: &BlockHawkesModel,
    classes: ClassAssignment,
    horizon: f64,
    rng: &mut R,
) -> Result<SampledNetwork> {
    model.validate()?;
    let n = classes.num_nodes();
    if n < 2 {
        return invalid("a network needs at least two nodes");
    }
    if classes.num_classes() != model.num_classes {
        return invalid(format!(
            "assignment has {} classes but the model has {}",
            classes.num_classes(),
            model.num_classes
        ));
    }
    let k = model.num_classes;
    let mut members = vec![Vec::new(); k];
    for (i, &c) in classes.labels().iter().enumerate() {
        members[c].push(i);
    }

    let base: u64 = rng.random();
    let mut events = Vec::new();
    let mut discarded = 0;
    for q in 0..k {
        for l in 0..k {
            let b = pair_index(q, l, k);
            let mut sub = ChaCha8Rng::seed_from_u64(base);
            sub.set_stream(b as u64);
            let times = simulate_with_ceiling(&model.params[b], horizon, DEFAULT_EVENT_CEILING, &mut sub)?;
            let (from, to) = (&members[q], &members[l]);
            let empty = if q == l { from.len() < 2 } else { from.is_empty() || to.is_empty() };
            if empty {
                if !times.is_empty() {
                    log::warn!(
                        "block pair ({q}, {l}) has no node pairs; discarding {} events",
                        times.len()
                    );
                    discarded += times.len();
                }
                continue;
            }
            for t in times {
                let i = from[sub.random_range(0..from.len())];
                let j = if q == l {
                    let mut j = from[sub.random_range(0..from.len() - 1)];
                    if j == i {
                        j = from[from.len() - 1];
                    }
                    j
                } else {
                    to[sub.random_range(0..to.len())]
                };
                events.push(Event::new(i, j, t));
            }
        }
    }
    let stream = EventStream::new(events, n, horizon)?;
    Ok(SampledNetwork {
        stream,
        classes,
        discarded,
    })
}
