use rayon::prelude::*;

use super::{FitResult, HorizonMode};
use crate::error::{invalid, Error, Result};
use crate::events::{pair_index, ClassAssignment, EventStream};
use crate::generator::BlockHawkesModel;
use crate::hawkes::{fit_mle_with, HawkesParams, MleConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSearchConfig {
    /// Maximum number of applied swaps; `None` means `100 K`.
    pub max_iterations: Option<usize>,
    /// Reject swaps that would leave a class empty.
    pub forbid_empty_classes: bool,
    /// A swap must raise the objective by more than this fraction of
    /// `max(1, |objective|)` to count as an improvement.
    pub min_relative_gain: f64,
    pub horizon: HorizonMode,
    pub mle: MleConfig,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        Self {
            max_iterations: None,
            forbid_empty_classes: false,
            min_relative_gain: 1e-10,
            horizon: HorizonMode::Window,
            mle: MleConfig::default(),
        }
    }
}

/// Greedy single-node relabeling. Each iteration scores all `N (K - 1)`
/// moves, refitting the Hawkes parameters of the block pairs whose event
/// sets change, and applies the best strictly improving one. Ties go to the
/// lowest node index and then the lowest destination class.

pub fn local_search(
    stream: &EventStream,
    c0: &ClassAssignment,
    num_classes: usize,
    config: &LocalSearchConfig,
) -> Result<FitResult> {
    if c0.num_nodes() != stream.num_nodes() {
        return invalid("initial assignment does not match the stream");
    }
    if c0.num_classes() != num_classes {
        return invalid(format!(
            "initial assignment has {} classes, expected {num_classes}",
            c0.num_classes()
        ));
    }
    let mut search = Search::new(stream, c0, config)?;
    let mut trace = vec![search.objective()];
    let max_iterations = config.max_iterations.unwrap_or(100 * num_classes);
    let mut iterations = 0;
    let mut converged = num_classes < 2;
    while !converged && iterations < max_iterations {
        let current = search.objective();
        let threshold = config.min_relative_gain * current.abs().max(1.0);
        match search.best_move(threshold)? {
            Some((node, class)) => {
                search.apply(node, class)?;
                iterations += 1;
                trace.push(search.objective());
            }
            None => converged = true,
        }
    }
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("stopped after {iterations} swaps without reaching a local optimum"));
    }
    let failed = search.unconverged_fits();
    if failed > 0 {
        warnings.push(format!("{failed} block-pair fits hit the iteration limit"));
    }
    let assignment = ClassAssignment::new(search.labels.clone(), num_classes)?;
    let n = assignment.num_nodes() as f64;
    let class_probs = assignment.class_sizes().iter().map(|&s| s as f64 / n).collect();
    let model = BlockHawkesModel {
        num_classes,
        class_probs,
        params: search.params.clone(),
    };
    Ok(FitResult {
        assignment,
        tau: None,
        model,
        objective: search.objective(),
        trace,
        iterations,
        converged,
        warnings,
    })
}

struct Search<'a> {
    config: &'a LocalSearchConfig,
    k: usize,
    horizon: f64,
    times: Vec<f64>,
    src: Vec<u32>,
    dst: Vec<u32>,
    node_events: Vec<Vec<u32>>,
    labels: Vec<usize>,
    sizes: Vec<usize>,
    pair_events: Vec<Vec<u32>>,
    params: Vec<HawkesParams>,
    loglik: Vec<f64>,
    fit_ok: Vec<bool>,
}

impl<'a> Search<'a> {
    fn new(stream: &EventStream, c0: &ClassAssignment, config: &'a LocalSearchConfig) -> Result<Self> {
        let k = c0.num_classes();
        let n = stream.num_nodes();
        let mut node_events = vec![Vec::new(); n];
        let mut pair_events = vec![Vec::new(); k * k];
        let (mut times, mut src, mut dst) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, e) in stream.events().iter().enumerate() {
            let idx = idx as u32;
            times.push(e.time);
            src.push(e.sender as u32);
            dst.push(e.receiver as u32);
            node_events[e.sender].push(idx);
            node_events[e.receiver].push(idx);
            pair_events[pair_index(c0.label(e.sender), c0.label(e.receiver), k)].push(idx);
        }
        let mut search = Self {
            config,
            k,
            horizon: config.horizon.resolve(stream),
            times,
            src,
            dst,
            node_events,
            labels: c0.labels().to_vec(),
            sizes: c0.class_sizes(),
            pair_events,
            params: Vec::new(),
            loglik: Vec::new(),
            fit_ok: Vec::new(),
        };
        for b in 0..k * k {
            let t = search.times_of(&search.pair_events[b]);
            let fit = fit_mle_with(&t, search.horizon, None, &config.mle)?;
            search.params.push(fit.params);
            search.loglik.push(fit.log_likelihood);
            search.fit_ok.push(fit.converged);
        }
        Ok(search)
    }

    fn times_of(&self, events: &[u32]) -> Vec<f64> {
        events.iter().map(|&e| self.times[e as usize]).collect()
    }

    fn pair_size(sizes: &[usize], q: usize, l: usize) -> usize {
        ClassAssignment::pair_size(sizes, q, l)
    }

    fn penalty(m: usize, n: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            m as f64 * (n as f64).ln()
        }
    }

    fn objective(&self) -> f64 {
        let mut total = 0.0;
        for q in 0..self.k {
            for l in 0..self.k {
                let b = pair_index(q, l, self.k);
                total += self.loglik[b] - Self::penalty(self.pair_events[b].len(), Self::pair_size(&self.sizes, q, l));
            }
        }
        total
    }

    fn unconverged_fits(&self) -> usize {
        self.fit_ok.iter().filter(|&&ok| !ok).count()
    }

    /// New event lists of the block pairs whose membership changes when
    /// `node` moves to `class`, restricted to pairs accepted by `want`.
    fn rebuild(&self, node: usize, class: usize, want: impl Fn(usize) -> bool) -> Vec<(usize, Vec<u32>)> {
        let k = self.k;
        let lab = |x: usize| if x == node { class } else { self.labels[x] };
        let mut added: Vec<Vec<u32>> = vec![Vec::new(); k * k];
        let mut touched = vec![false; k * k];
        for &e in &self.node_events[node] {
            let (u, v) = (self.src[e as usize] as usize, self.dst[e as usize] as usize);
            touched[pair_index(self.labels[u], self.labels[v], k)] = true;
            let to = pair_index(lab(u), lab(v), k);
            touched[to] = true;
            added[to].push(e);
        }
        let node = node as u32;
        let mut out = Vec::new();
        for b in 0..k * k {
            if !touched[b] || !want(b) {
                continue;
            }
            let old = &self.pair_events[b];
            let add = &added[b];
            let mut merged = Vec::with_capacity(old.len() + add.len());
            let mut j = 0;
            for &e in old {
                if self.src[e as usize] == node || self.dst[e as usize] == node {
                    continue;
                }
                while j < add.len() && add[j] < e {
                    merged.push(add[j]);
                    j += 1;
                }
                merged.push(e);
            }
            merged.extend_from_slice(&add[j..]);
            out.push((b, merged));
        }
        out
    }

    fn refit(&self, b: usize, events: &[u32]) -> Result<crate::hawkes::HawkesFit> {
        let warm = (!self.pair_events[b].is_empty()).then_some(self.params[b]);
        fit_mle_with(&self.times_of(events), self.horizon, warm, &self.config.mle)
    }

    fn moved_sizes(&self, node: usize, class: usize) -> Vec<usize> {
        let mut sizes = self.sizes.clone();
        sizes[self.labels[node]] -= 1;
        sizes[class] += 1;
        sizes
    }

    /// Change in objective for each move of `node` to another class.
    ///
    /// Pairs in the row or column of the node's current class that do not
    /// involve the destination only lose the node's events, so their refits
    /// do not depend on the destination and are shared.
    fn node_gains(&self, node: usize) -> Vec<(usize, Result<f64>)> {
        let k = self.k;
        let from = self.labels[node];
        let mut shared: Vec<Option<std::result::Result<(f64, usize), String>>> = vec![None; k * k];
        let mut out = Vec::with_capacity(k - 1);
        for class in (0..k).filter(|&q| q != from) {
            let involves = |b: usize| b / k == class || b % k == class;
            let mut counts: Vec<usize> = self.pair_events.iter().map(Vec::len).collect();
            let mut delta = 0.0;
            let mut failed = None;
            for (b, events) in self.rebuild(node, class, |b| involves(b) || shared[b].is_none()) {
                let fit = self.refit(b, &events).map(|f| (f.log_likelihood - self.loglik[b], events.len()));
                if involves(b) {
                    match fit {
                        Ok((d, m)) => {
                            delta += d;
                            counts[b] = m;
                        }
                        Err(e) => failed = Some(e.to_string()),
                    }
                } else {
                    shared[b] = Some(fit.map_err(|e| e.to_string()));
                }
            }
            let from_row = |b: usize| b / k == from || b % k == from;
            for b in (0..k * k).filter(|&b| from_row(b) && !involves(b)) {
                match &shared[b] {
                    Some(Ok((d, m))) => {
                        delta += d;
                        counts[b] = *m;
                    }
                    Some(Err(e)) => failed = Some(e.clone()),
                    None => {}
                }
            }
            if let Some(e) = failed {
                out.push((class, Err(Error::Numerical(e))));
                continue;
            }
            let sizes = self.moved_sizes(node, class);
            for q in 0..k {
                for l in 0..k {
                    if q != from && q != class && l != from && l != class {
                        continue;
                    }
                    let b = pair_index(q, l, k);
                    delta -= Self::penalty(counts[b], Self::pair_size(&sizes, q, l));
                    delta += Self::penalty(self.pair_events[b].len(), Self::pair_size(&self.sizes, q, l));
                }
            }
            out.push((class, Ok(delta)));
        }
        out
    }

    fn best_move(&self, threshold: f64) -> Result<Option<(usize, usize)>> {
        let nodes: Vec<usize> = (0..self.labels.len())
            .filter(|&i| !(self.config.forbid_empty_classes && self.sizes[self.labels[i]] == 1))
            .collect();
        let gains: Vec<Vec<(usize, Result<f64>)>> = nodes.par_iter().map(|&i| self.node_gains(i)).collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for (&i, per_node) in nodes.iter().zip(gains) {
            for (q, g) in per_node {
                let g = match g {
                    Ok(g) if g.is_finite() => g,
                    Ok(_) => continue,
                    Err(e) => {
                        log::warn!("skipping move of node {i} to class {q}: {e}");
                        continue;
                    }
                };
                if g > threshold && best.is_none_or(|(bg, _, _)| g > bg) {
                    best = Some((g, i, q));
                }
            }
        }
        Ok(best.map(|(_, i, q)| (i, q)))
    }

    fn apply(&mut self, node: usize, class: usize) -> Result<()> {
        let rebuilt = self.rebuild(node, class, |_| true);
        let mut fits = Vec::with_capacity(rebuilt.len());
        for (b, events) in &rebuilt {
            fits.push(self.refit(*b, events)?);
        }
        self.sizes = self.moved_sizes(node, class);
        self.labels[node] = class;
        for ((b, events), fit) in rebuilt.into_iter().zip(fits) {
            self.pair_events[b] = events;
            self.params[b] = fit.params;
            self.loglik[b] = fit.log_likelihood;
            self.fit_ok[b] = fit.converged;
        }
        Ok(())
    }
}
