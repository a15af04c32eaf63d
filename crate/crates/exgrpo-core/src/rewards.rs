//! Rule-based reward stack.
//!
//! Base reward is binary final-answer correctness. On top of it sits the
//! dialogue-structure bonus: a group-level margin test that pays `delta` to
//! correct full-dialogue trajectories whenever the full dialogue's mean base
//! reward strictly beats `nu` times the partial dialogue's. An optional
//! format reward (off by default) checks for a single well-nested think
//! span before the answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueTrajectory, Scenario};
use crate::policy::{THINK_CLOSE, THINK_OPEN};
use crate::task_model::{answers_match, Task};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("total reward is defined for full-dialogue trajectories only")]
    PartialTrajectory,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Bonus paid when the full dialogue demonstrably helps.
    pub delta: f64,
    /// Margin multiplier in the bonus condition.
    pub nu: f64,
    /// Weight of the format reward; 0 disables it.
    pub format_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { delta: 0.1, nu: 1.05, format_weight: 0.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        // delta = 0 is a valid ablation (bonus disabled)
        if !(self.delta >= 0.0) {
            return Err(RewardError::InvalidConfig("delta must be >= 0".into()));
        }
        if !(self.nu >= 1.0) {
            return Err(RewardError::InvalidConfig("nu must be >= 1".into()));
        }
        if !(self.format_weight >= 0.0) {
            return Err(RewardError::InvalidConfig("format_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Full accounting of one trajectory's reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_outcome: f64,
    pub r_base: f64,
    pub dsu_applied: bool,
    pub r_dsu: f64,
    pub r_format: f64,
    pub r_total: f64,
}

/// Binary correctness of the final answer under canonical matching.
pub fn outcome_reward(trajectory: &DialogueTrajectory, task: &Task) -> f64 {
    if !trajectory.final_answer.is_empty()
        && answers_match(&trajectory.final_answer, &task.answer_key)
    {
        1.0
    } else {
        0.0
    }
}

/// Mean base reward over a group of trajectories — the estimator for both
/// P_full (over the Scenario-A group) and P_partial (over the Scenario-B
/// group) of one original question.
pub fn group_mean_base(group: &[DialogueTrajectory], task: &Task) -> f64 {
    if group.is_empty() {
        return 0.0;
    }
    group.iter().map(|t| outcome_reward(t, task)).sum::<f64>() / group.len() as f64
}

/// The dialogue-structure bonus: `delta` iff `p_full > nu * p_partial`
/// (strict), else 0.
pub fn dsu_bonus(p_full: f64, p_partial: f64, config: &RewardConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_full) && (0.0..=1.0).contains(&p_partial));
    if p_full > config.nu * p_partial {
        config.delta
    } else {
        0.0
    }
}

/// Format check: exactly one well-nested think span, with answer content
/// after the closing marker.
pub fn format_reward(trajectory: &DialogueTrajectory) -> f64 {
    let text = &trajectory.final_reasoning;
    let opens = text.matches(THINK_OPEN).count();
    // THINK_OPEN is a prefix-free sibling of THINK_CLOSE, but count both
    // independently on the raw text
    let closes = text.matches(THINK_CLOSE).count();
    if opens != 1 || closes != 1 {
        return 0.0;
    }
    let open_at = text.find(THINK_OPEN).expect("counted above");
    let close_at = text.find(THINK_CLOSE).expect("counted above");
    if open_at > close_at {
        return 0.0;
    }
    let after = &text[close_at + THINK_CLOSE.len()..];
    if after.trim().is_empty() {
        return 0.0;
    }
    1.0
}

/// Total reward for a full-dialogue trajectory: the bonus is gated on both
/// the trajectory's own correctness and the group-level margin condition.
pub fn total_reward(
    trajectory: &DialogueTrajectory,
    task: &Task,
    p_full: f64,
    p_partial: f64,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    if trajectory.scenario != Scenario::Full {
        return Err(RewardError::PartialTrajectory);
    }
    config.validate()?;
    let r_outcome = outcome_reward(trajectory, task);
    let bonus = dsu_bonus(p_full, p_partial, config);
    let dsu_applied = r_outcome == 1.0 && bonus > 0.0;
    let r_format = if config.format_weight > 0.0 { format_reward(trajectory) } else { 0.0 };
    let r_total = r_outcome
        + if dsu_applied { bonus } else { 0.0 }
        + config.format_weight * r_format;
    Ok(RewardBreakdown {
        r_outcome,
        r_base: r_outcome,
        dsu_applied,
        r_dsu: bonus,
        r_format,
        r_total,
    })
}
