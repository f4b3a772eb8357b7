//! Evaluation: correspondence precision against ground-truth masks, a
//! linear probe on frozen backbone features, and overlay export.

mod overlay;
mod precision;
mod probe;

use serde::{Deserialize, Serialize};

pub use overlay::{export_overlay, read_sidecar, OverlayFiles, OverlaySidecar};
pub use precision::{
    correspondence_precision, evaluate_matching, held_out_pair, tally_pairs, PairTally, StrategyPrecision,
};
pub use probe::{linear_probe, probe_accuracy, probe_features, probe_scene, ProbeConfig};

/// Summary of one checkpoint on a fixed evaluation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correspondence_precision: Vec<StrategyPrecision>,
    pub probe_accuracy: f64,
    pub n_scenes: usize,
}

/// Fixed-width table of per-strategy precision.
pub fn format_precision_table(rows: &[StrategyPrecision]) -> String {
    let mut out = format!(
        "{:<12} {:>9} {:>8} {:>8}\n",
        "strategy", "precision", "correct", "pairs"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>9.4} {:>8} {:>8}\n",
            r.strategy.name(),
            r.precision,
            r.correct_pairs,
            r.total_pairs
        ));
    }
    out
}
