//! Class-recovery scoring, the deviation-from-independence experiment, and
//! next-event-time prediction.

mod deviation;
mod prediction;

pub use deviation::{deviation_experiment, DeviationConfig, DeviationPoint, DeviationReport, ParamsRule};
pub use prediction::{
    discrete_prediction, predict_discrete_baseline, predict_rolling, PredictionProtocol, PredictionRecord, PredictionReport,
};

use crate::error::{invalid, Result};
use crate::events::ClassAssignment;

/// Adjusted Rand index of two partitions of the same nodes.
pub fn adjusted_rand_index(a: &ClassAssignment, b: &ClassAssignment) -> Result<f64> {
    if a.num_nodes() != b.num_nodes() {
        return invalid(format!(
            "partitions cover {} and {} nodes",
            a.num_nodes(),
            b.num_nodes()
        ));
    }
    let (ka, kb) = (a.num_classes(), b.num_classes());
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        table[x * kb + y] += 1;
    }
    let pairs = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&n| pairs(n)).sum();
    let rows: f64 = (0..ka).map(|x| pairs(table[x * kb..(x + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|y| pairs((0..ka).map(|x| table[x * kb + y]).sum())).sum();
    let total = pairs(a.num_nodes() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
