//! Run harnesses shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use setsim::encoder::EncoderParams;
use setsim::objectives::LossReport;
use setsim::trainer::{LossTerms, TrainConfig, TrainState};
use setsim::Result;

/// A configuration small enough for many short runs.
pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 2,
        steps: 6,
        queue_capacity: 8,
        seed,
        ..TrainConfig::default()
    }
}

/// Runs `steps` steps, returning every report and the query parameters
/// after each step.
pub fn trajectory(config: TrainConfig, steps: u64) -> Result<(TrainState, Vec<LossReport>, Vec<EncoderParams>)> {
    let mut state = TrainState::new(config)?;
    let mut reports = Vec::new();
    let mut params = Vec::new();
    for _ in 0..steps {
        reports.push(state.advance()?.0);
        params.push(state.query.clone());
    }
    Ok((state, reports, params))
}

/// Key parameters after applying `k ← m·k + (1−m)·q_t` elementwise to the
/// initial key for each recorded query state `q_t`.
pub fn ema_recurrence(initial_key: &EncoderParams, queries: &[EncoderParams], m: f64) -> EncoderParams {
    let mut key = initial_key.clone();
    for q in queries {
        for (k, qt) in key.tensors_mut().into_iter().zip(q.tensors()) {
            for (kv, qv) in k.data_mut().iter_mut().zip(qt.data()) {
                *kv = m * *kv + (1.0 - m) * qv;
            }
        }
    }
    key
}

/// Whether the key branch of a `steps`-step run equals the EMA recurrence
/// over its recorded query trajectory, bit for bit.
pub fn ema_matches_recurrence(config: TrainConfig, steps: u64) -> Result<bool> {
    let m = config.ema_m;
    let initial = TrainState::new(config.clone())?.key;
    let (state, _, queries) = trajectory(config, steps)?;
    Ok(ema_recurrence(&initial, &queries, m) == state.key)
}

/// Whether a weighted run at `lambda` follows exactly the same parameter
/// trajectory as the run restricted to `terms`.
pub fn lambda_extreme_matches(base: TrainConfig, lambda: f64, terms: LossTerms, steps: u64) -> Result<bool> {
    let weighted = TrainConfig {
        lambda,
        terms: LossTerms::Weighted,
        ..base.clone()
    };
    let restricted = TrainConfig { terms, ..base };
    let (_, _, a) = trajectory(weighted, steps)?;
    let (_, _, b) = trajectory(restricted, steps)?;
    Ok(a == b)
}

/// Whether saving after `split` steps, loading and finishing the run
/// reproduces the uninterrupted run's reports and final state exactly.
pub fn resume_matches(config: TrainConfig, split: u64, steps: u64, dir: &std::path::Path) -> Result<bool> {
    let (full_state, full_reports, _) = trajectory(config.clone(), steps)?;
    let (first, mut reports, _) = trajectory(config, split)?;
    let path = dir.join("mid.ckpt");
    first.save(&path)?;
    let mut resumed = TrainState::load(&path)?;
    for _ in split..steps {
        reports.push(resumed.advance()?.0);
    }
    let same_reports =
        reports.iter().zip(&full_reports).all(|(a, b)| bitwise_report(a, b)) && reports.len() == full_reports.len();
    Ok(same_reports && resumed == full_state)
}

/// Field-by-field bit equality, so that NaN-free reports compare exactly.
pub fn bitwise_report(a: &LossReport, b: &LossReport) -> bool {
    a.l_img.to_bits() == b.l_img.to_bits()
        && a.l_set.to_bits() == b.l_set.to_bits()
        && a.l_geo.to_bits() == b.l_geo.to_bits()
        && a.total.to_bits() == b.total.to_bits()
        && a.pair_count == b.pair_count
}
