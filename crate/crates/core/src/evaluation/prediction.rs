use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::events::{partition_by_blocks, ClassAssignment, EventStream};
use crate::hawkes::{expected_next_event_time, fit_mle_with, HawkesParams, MleConfig};
use crate::inference::HorizonMode;

/// Train/test split and class assignment shared by both prediction arms.
///
/// Test windows are `[split + w * window, split + (w + 1) * window)` for
/// `w < num_windows`.
#[derive(Debug, Clone)]
pub struct PredictionProtocol {
    classes: ClassAssignment,
    split: f64,
    window: f64,
    num_windows: usize,
}

impl PredictionProtocol {
    pub fn new(stream: &EventStream, classes: ClassAssignment, split: f64, window: f64, num_windows: usize) -> Result<Self> {
        if classes.num_nodes() != stream.num_nodes() {
            return invalid(format!(
                "class assignment covers {} nodes but the stream has {}",
                classes.num_nodes(),
                stream.num_nodes()
            ));
        }
        let t = stream.horizon();
        if !(split > 0.0 && split < t) {
            return invalid(format!("split {split} must lie inside (0, {t})"));
        }
        if !(window > 0.0) || num_windows == 0 {
            return invalid("need at least one test window of positive length");
        }
        let end = split + window * num_windows as f64;
        if end > t * (1.0 + 1e-12) {
            return invalid(format!("test windows end at {end}, past the horizon {t}"));
        }
        Ok(Self {
            classes,
            split,
            window,
            num_windows,
        })
    }

    /// Splits at `train_fraction * T` and divides the remainder into
    /// `num_windows` equal windows.
    pub fn from_fraction(
        stream: &EventStream,
        classes: ClassAssignment,
        train_fraction: f64,
        num_windows: usize,
    ) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return invalid(format!("train fraction must lie in (0, 1), got {train_fraction}"));
        }
        let t = stream.horizon();
        let split = train_fraction * t;
        Self::new(stream, classes, split, (t - split) / num_windows.max(1) as f64, num_windows)
    }

    pub fn classes(&self) -> &ClassAssignment {
        &self.classes
    }

    pub fn split(&self) -> f64 {
        self.split
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    fn window_start(&self, w: usize) -> f64 {
        self.split + w as f64 * self.window
    }
}

/// One block pair in one test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub window: usize,
    pub from_class: usize,
    pub to_class: usize,
    pub predicted: Option<f64>,
    /// Time from the window start to the first event in the window;
    /// `None` when the window is censored.
    pub actual: Option<f64>,
    /// Set when the prediction rests on no training events.
    pub flagged: bool,
}

impl PredictionRecord {
    pub fn within(&self) -> bool {
        self.from_class == self.to_class
    }

    pub fn residual(&self) -> Option<f64> {
        Some(self.predicted? - self.actual?)
    }
}

/// Per-window records and pooled RMSE.
///
/// Residuals are grouped by block pair across windows, then pooled into the
/// within-block (diagonal), between-block, and total categories. Records
/// without an actual event or without a prediction do not contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub records: Vec<PredictionRecord>,
    pub within_rmse: Option<f64>,
    pub between_rmse: Option<f64>,
    pub total_rmse: Option<f64>,
}

impl PredictionReport {
    pub fn from_records(mut records: Vec<PredictionRecord>) -> Self {
        records.sort_by_key(|r| (r.from_class, r.to_class, r.window));
        let rmse = |keep: &dyn Fn(&PredictionRecord) -> bool| {
            let (sum, n) = records
                .iter()
                .filter(|r| keep(r))
                .filter_map(PredictionRecord::residual)
                .fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
            (n > 0).then(|| (sum / n as f64).sqrt())
        };
        Self {
            within_rmse: rmse(&|r| r.within()),
            between_rmse: rmse(&|r| !r.within()),
            total_rmse: rmse(&|_| true),
            records,
        }
    }

    /// Block pairs with at least one flagged record.
    pub fn flagged_pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.flagged)
            .map(|r| (r.from_class, r.to_class))
            .collect();
        out.dedup();
        out
    }

    pub fn scored(&self) -> usize {
        self.records.iter().filter(|r| r.residual().is_some()).count()
    }
}

fn first_wait(times: &[f64], start: f64, end: f64) -> Option<f64> {
    let i = times.partition_point(|&t| t < start);
    times.get(i).filter(|&&t| t < end).map(|&t| t - start)
}

/// Block Hawkes arm: before each test window every block pair is refit on
/// all events so far (warm-started from the previous window) and predicts
/// the expected time to its next event.
pub fn predict_rolling(
    stream: &EventStream,
    protocol: &PredictionProtocol,
    horizon: HorizonMode,
    mle: &MleConfig,
) -> Result<PredictionReport> {
    let view = partition_by_blocks(stream, &protocol.classes)?;
    let k = view.num_classes;
    let per_pair = (0..k * k)
        .into_par_iter()
        .map(|b| {
            let times = &view.times[b];
            let mut warm: Option<HawkesParams> = None;
            let mut out = Vec::with_capacity(protocol.num_windows);
            for w in 0..protocol.num_windows {
                let start = protocol.window_start(w);
                let history = &times[..times.partition_point(|&t| t < start)];
                let fit_end = match horizon {
                    HorizonMode::Window => start,
                    HorizonMode::LastEvent => history.last().copied().unwrap_or(start),
                };
                let fit = fit_mle_with(history, fit_end, warm, mle)?;
                warm = (!history.is_empty()).then_some(fit.params);
                out.push(PredictionRecord {
                    window: w,
                    from_class: b / k,
                    to_class: b % k,
                    predicted: Some(expected_next_event_time(&fit.params, history, start)),
                    actual: first_wait(times, start, start + protocol.window),
                    flagged: history.is_empty(),
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionReport::from_records(per_pair.into_iter().flatten().collect()))
}

/// Waiting time implied by a per-snapshot event probability `p`: the
/// geometric number of snapshots times their length, less half a snapshot.
pub fn discrete_prediction(p: f64, snapshot_length: f64) -> Option<f64> {
    (p > 0.0).then(|| snapshot_length / p - snapshot_length / 2.0)
}

/// Discrete-time arm: `p` is the fraction of complete training snapshots in
/// which the block pair has at least one event.
pub fn predict_discrete_baseline(
    stream: &EventStream,
    protocol: &PredictionProtocol,
    snapshot_length: f64,
) -> Result<PredictionReport> {
    if !(snapshot_length > 0.0 && snapshot_length.is_finite()) {
        return invalid(format!("snapshot length must be positive, got {snapshot_length}"));
    }
    let num_snapshots = (protocol.split / snapshot_length * (1.0 + 1e-12)).floor() as usize;
    if num_snapshots < 2 {
        return invalid(format!(
            "snapshot length {snapshot_length} leaves fewer than two training snapshots"
        ));
    }
    let covered = num_snapshots as f64 * snapshot_length;
    if covered < protocol.split * (1.0 - 1e-9) {
        log::warn!(
            "snapshot length {snapshot_length} does not divide the training window; using [0, {covered})"
        );
    }
    let view = partition_by_blocks(stream, &protocol.classes)?;
    let k = view.num_classes;
    let mut records = Vec::with_capacity(k * k * protocol.num_windows);
    for (b, times) in view.times.iter().enumerate() {
        let mut occupied = vec![false; num_snapshots];
        for &t in times.iter().take_while(|&&t| t < covered) {
            occupied[((t / snapshot_length) as usize).min(num_snapshots - 1)] = true;
        }
        let p = occupied.iter().filter(|&&o| o).count() as f64 / num_snapshots as f64;
        let predicted = discrete_prediction(p, snapshot_length);
        for w in 0..protocol.num_windows {
            let start = protocol.window_start(w);
            records.push(PredictionRecord {
                window: w,
                from_class: b / k,
                to_class: b % k,
                predicted,
                actual: first_wait(times, start, start + protocol.window),
                flagged: predicted.is_none(),
            });
        }
    }
    Ok(PredictionReport::from_records(records))
}
