//! Fitting block Hawkes models: the conditional log-likelihood, greedy local
//! search over hard assignments, and variational EM over soft assignments.

mod bound;
mod local_search;
mod vem;

pub use bound::{elbo, elbo_with_reference, ElboParts};
pub use local_search::{local_search, LocalSearchConfig};
pub use vem::{variational_em, VemConfig};

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Error, Result};
use crate::events::{partition_by_blocks, ClassAssignment, EventStream};
use crate::generator::BlockHawkesModel;
use crate::hawkes::{log_likelihood_unchecked, HawkesParams};
use crate::spectral::SpectralEmbedding;

/// End point of the compensator window used when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HorizonMode {
    /// The stream's observation window end `T`.
    #[default]
    Window,
    /// The time of the last event.
    LastEvent,
}

impl HorizonMode {
    pub fn resolve(self, stream: &EventStream) -> f64 {
        match self {
            HorizonMode::Window => stream.horizon(),
            HorizonMode::LastEvent => {
                let t = stream.last_time();
                if t > 0.0 {
                    t
                } else {
                    stream.horizon()
                }
            }
        }
    }
}

/// Row-stochastic `N x K` matrix of variational class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    tau: Vec<f64>,
    num_nodes: usize,
    num_classes: usize,
}

impl VariationalState {
    /// Takes rows of length `num_classes`, validating that each lies on the
    /// simplex within `1e-10`.
    pub fn new(rows: Vec<Vec<f64>>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return invalid("number of classes must be at least 1");
        }
        let num_nodes = rows.len();
        let mut tau = Vec::with_capacity(num_nodes * num_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_classes {
                return invalid(format!("row {i} has {} entries, expected {num_classes}", row.len()));
            }
            if row.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return invalid(format!("row {i} has a negative or non-finite entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return invalid(format!("row {i} sums to {s}"));
            }
            tau.extend_from_slice(row);
        }
        Ok(Self {
            tau,
            num_nodes,
            num_classes,
        })
    }

    pub(crate) fn from_flat(tau: Vec<f64>, num_nodes: usize, num_classes: usize) -> Self {
        debug_assert_eq!(tau.len(), num_nodes * num_classes);
        Self {
            tau,
            num_nodes,
            num_classes,
        }
    }

    /// Indicator rows of a hard assignment.
    pub fn hard(c: &ClassAssignment) -> Self {
        let k = c.num_classes();
        let mut tau = vec![0.0; c.num_nodes() * k];
        for (i, &l) in c.labels().iter().enumerate() {
            tau[i * k + l] = 1.0;
        }
        Self::from_flat(tau, c.num_nodes(), k)
    }

    /// Rows drawn from a flat Dirichlet distribution.
    pub fn random<R: Rng + ?Sized>(num_nodes: usize, num_classes: usize, rng: &mut R) -> Self {
        let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid gamma");
        let mut tau = Vec::with_capacity(num_nodes * num_classes);
        for _ in 0..num_nodes {
            let row: Vec<f64> = (0..num_classes).map(|_| f64::max(gamma.sample(rng), 1e-300)).collect();
            let s: f64 = row.iter().sum();
            tau.extend(row.iter().map(|x| x / s));
        }
        Self::from_flat(tau, num_nodes, num_classes)
    }

    /// Soft initialization from a spectral embedding: the first `K`
    /// coordinates of each row, clamped at zero, floored at `1e-6`, and
    /// renormalized.
    pub fn from_embedding(emb: &SpectralEmbedding, num_classes: usize) -> Self {
        let n = emb.rows.nrows();
        let mut tau = Vec::with_capacity(n * num_classes);
        for i in 0..n {
            let row: Vec<f64> = (0..num_classes)
                .map(|q| emb.rows[(i, q)].max(0.0) + 1e-6)
                .collect();
            let s: f64 = row.iter().sum();
            tau.extend(row.iter().map(|x| x / s));
        }
        Self::from_flat(tau, n, num_classes)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.tau[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn get(&self, i: usize, q: usize) -> f64 {
        self.tau[i * self.num_classes + q]
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        &self.tau
    }

    /// Most probable class per node, ties to the lowest index.
    pub fn hard_assignment(&self) -> ClassAssignment {
        let labels = (0..self.num_nodes)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for q in 1..row.len() {
                    if row[q] > row[best] {
                        best = q;
                    }
                }
                best
            })
            .collect();
        ClassAssignment::new(labels, self.num_classes).expect("labels below K")
    }

    /// Column means, the mean-field update for `π`.
    pub fn class_means(&self) -> Vec<f64> {
        let mut pi = vec![0.0; self.num_classes];
        for i in 0..self.num_nodes {
            for (q, p) in pi.iter_mut().enumerate() {
                *p += self.get(i, q);
            }
        }
        let n = self.num_nodes.max(1) as f64;
        pi.iter_mut().for_each(|p| *p /= n);
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        pi
    }
}

/// Output of the fitting procedures.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Hard labels; for variational fits, the row-wise argmax of `tau`.
    pub assignment: ClassAssignment,
    pub tau: Option<VariationalState>,
    pub model: BlockHawkesModel,
    /// Final log-likelihood (local search) or evidence lower bound (VEM).
    pub objective: f64,
    /// Objective after initialization and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Conditional log-likelihood of the stream given hard classes and per-pair
/// parameters, with the compensator taken to the stream horizon.
pub fn conditional_log_likelihood(stream: &EventStream, c: &ClassAssignment, theta: &[HawkesParams]) -> Result<f64> {
    conditional_log_likelihood_with(stream, c, theta, stream.horizon())
}

/// As [`conditional_log_likelihood`] with an explicit compensator end.
pub fn conditional_log_likelihood_with(
    stream: &EventStream,
    c: &ClassAssignment,
    theta: &[HawkesParams],
    horizon: f64,
) -> Result<f64> {
    let k = c.num_classes();
    if theta.len() != k * k {
        return invalid(format!("expected {} parameter sets, got {}", k * k, theta.len()));
    }
    if !(horizon > 0.0 && horizon >= stream.last_time()) {
        return invalid(format!("horizon {horizon} does not cover the events"));
    }
    theta.iter().try_for_each(HawkesParams::validate)?;
    let view = partition_by_blocks(stream, c)?;
    let mut total = 0.0;
    for (b, times) in view.times.iter().enumerate() {
        let n = view.sizes[b];
        if n == 0 && !times.is_empty() {
            return Err(Error::Inconsistent(format!(
                "block pair {b} has {} events but no node pairs",
                times.len()
            )));
        }
        let p = &theta[b];
        total += log_likelihood_unchecked(p.alpha, p.beta, p.lambda_inf, times, horizon);
        if !times.is_empty() {
            total -= times.len() as f64 * (n as f64).ln();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{read_events, LoadOptions};
    use approx::assert_relative_eq;

    const FIG1: &str = "sender,receiver,time\n1,2,0.1\n2,3,0.4\n3,2,0.6\n1,2,1.2\n1,3,1.3\n2,1,1.6\n";

    #[test]
    fn single_class_poisson_reduction() {
        let (stream, _) = read_events(FIG1.as_bytes(), LoadOptions::default()).unwrap();
        let c = ClassAssignment::uniform(3, 1).unwrap();
        let lambda = 2.5;
        let theta = [HawkesParams::new(0.0, 1.0, lambda).unwrap()];
        let ll = conditional_log_likelihood(&stream, &c, &theta).unwrap();
        let expected = 6.0 * lambda.ln() - lambda * 1.6 - 6.0 * 6f64.ln();
        assert_relative_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn empty_stream_is_minus_background_mass() {
        let stream = EventStream::new(vec![], 4, 10.0).unwrap();
        let c = ClassAssignment::new(vec![0, 1, 1, 0], 2).unwrap();
        let theta: Vec<_> = (0..4)
            .map(|b| HawkesParams::new(0.1, 1.0, 0.5 + b as f64).unwrap())
            .collect();
        let ll = conditional_log_likelihood(&stream, &c, &theta).unwrap();
        assert_relative_eq!(ll, -(0.5 + 1.5 + 2.5 + 3.5) * 10.0, epsilon = 1e-12);
    }

    #[test]
    fn invariant_under_label_permutation() {
        let (stream, _) = read_events(FIG1.as_bytes(), LoadOptions::default()).unwrap();
        let c = ClassAssignment::new(vec![0, 1, 1], 2).unwrap();
        let theta: Vec<_> = (0..4)
            .map(|b| HawkesParams::new(0.2 * b as f64, 1.0 + b as f64, 0.3 + 0.1 * b as f64).unwrap())
            .collect();
        let swapped = ClassAssignment::new(vec![1, 0, 0], 2).unwrap();
        let theta_swapped = vec![theta[3], theta[2], theta[1], theta[0]];
        let a = conditional_log_likelihood(&stream, &c, &theta).unwrap();
        let b = conditional_log_likelihood(&stream, &swapped, &theta_swapped).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn variational_rows_are_validated() {
        assert!(VariationalState::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]], 2).is_ok());
        assert!(VariationalState::new(vec![vec![0.5, 0.6]], 2).is_err());
        assert!(VariationalState::new(vec![vec![1.5, -0.5]], 2).is_err());
        let c = ClassAssignment::new(vec![1, 0, 1], 2).unwrap();
        assert_eq!(VariationalState::hard(&c).hard_assignment(), c);
    }
}
