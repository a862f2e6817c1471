//! Task sampling weights and curriculum start steps from corpus sizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("no tasks to weight")]
    Empty,
    #[error("line counts must be at least 1")]
    ZeroCount,
    #[error("temperature must be a finite value >= 1, got {0}")]
    Temperature(f64),
}

/// `w = max(1, round((count / min_count)^(1/T)))`. Larger temperatures
/// flatten the distribution towards uniform.
pub fn compute_weights<K: Ord + Clone>(
    line_counts: &BTreeMap<K, u64>,
    temperature: f64,
) -> Result<BTreeMap<K, u32>, WeightError> {
    if !(temperature.is_finite() && temperature >= 1.0) {
        return Err(WeightError::Temperature(temperature));
    }
    let min = *line_counts.values().min().ok_or(WeightError::Empty)?;
    if min == 0 {
        return Err(WeightError::ZeroCount);
    }
    Ok(line_counts
        .iter()
        .map(|(k, &c)| {
            let w = (c as f64 / min as f64).powf(1.0 / temperature).round();
            (k.clone(), w.clamp(1.0, u32::MAX as f64) as u32)
        })
        .collect())
}

/// A curriculum stage: tasks whose corpus size satisfies every given bound
/// are introduced at `start_step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub start_step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines_below: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines_at_least: Option<u64>,
}

impl CurriculumStage {
    pub fn matches(&self, lines: u64) -> bool {
        self.lines_below.is_none_or(|t| lines < t) && self.lines_at_least.is_none_or(|t| lines >= t)
    }
}

/// Start step of the earliest matching stage, or 0 when none match.
pub fn assign_curriculum<K: Ord + Clone>(
    line_counts: &BTreeMap<K, u64>,
    stages: &[CurriculumStage],
) -> BTreeMap<K, u64> {
    let mut stages = stages.to_vec();
    stages.sort_by_key(|s| s.start_step);
    line_counts
        .iter()
        .map(|(k, &c)| {
            let step = stages
                .iter()
                .find(|s| s.matches(c))
                .map_or(0, |s| s.start_step);
            (k.clone(), step)
        })
        .collect()
}
