//! The policy update: group-normalized advantages, the clipped importance-
//! ratio surrogate with a KL anchor to the post-warm-up reference policy,
//! and the auxiliary teacher-imitation loss, combined into one gradient
//! ascent step per batch.
//!
//! Ratios are computed over final-response tokens only — the reward-bearing
//! segment. Intermediate probe turns are trained solely through the
//! imitation loss. All gradients are analytic and verified against central
//! finite differences in the test suite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueTrajectory, Scenario};
use crate::policy::{Gradient, PolicyError, PolicyParameters, TokenSequence};
use crate::rewards::{group_mean_base, total_reward, RewardConfig, RewardError};
use crate::task_model::Task;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("advantage group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("turn {turn} of trajectory {group_index} has an empty teacher target")]
    MissingTeacherTurn { group_index: usize, turn: usize },
    #[error("non-finite gradient (norm {0}); step aborted")]
    NonFiniteGradient(f64),
    #[error("surrogate objective requires full-dialogue trajectories")]
    PartialTrajectory,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Clip width for the importance ratio.
    pub epsilon: f64,
    /// KL coefficient anchoring the policy to the reference.
    pub beta: f64,
    /// Learning rate of the combined ascent step.
    pub lr: f64,
    /// Trajectories per group.
    pub group_size: usize,
    /// Weight of the auxiliary imitation loss.
    pub sft_aux_weight: f64,
    /// Standard-deviation floor; groups with less spread get zero advantages.
    pub norm_floor: f64,
    /// Subtract the group mean only, skipping the spread division.
    pub mean_only: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.01,
            lr: 1e-2,
            group_size: 4,
            sft_aux_weight: 0.1,
            norm_floor: 1e-8,
            mean_only: false,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        assert!(self.epsilon > 0.0 && self.epsilon < 1.0, "epsilon must be in (0,1)");
        assert!(self.beta >= 0.0, "beta must be >= 0");
        assert!(self.lr > 0.0, "lr must be > 0");
        assert!(self.group_size >= 2, "group_size must be >= 2");
        assert!(self.sft_aux_weight >= 0.0, "sft_aux_weight must be >= 0");
        assert!(self.norm_floor > 0.0, "norm_floor must be > 0");
        Ok(())
    }
}

/// Group-relative advantages: (r - mean) / population_std, with degenerate
/// groups (spread below `norm_floor`) mapped to exact zeros.
pub fn normalize_advantages(rewards: &[f64], norm_floor: f64) -> Result<Vec<f64>, OptError> {
    if rewards.len() < 2 {
        return Err(OptError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < norm_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Mean-only variant: subtract the group mean, keep the raw scale.
pub fn center_rewards(rewards: &[f64]) -> Result<Vec<f64>, OptError> {
    if rewards.len() < 2 {
        return Err(OptError::GroupTooSmall(rewards.len()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Every state (context prefix) the policy visited while emitting the final
/// responses — the empirical support of the KL term.
fn visited_states(trajectories: &[DialogueTrajectory]) -> Vec<TokenSequence> {
    let mut states = Vec::new();
    for t in trajectories {
        let mut ctx = t.final_context.clone();
        for &tok in &t.final_response.0 {
            states.push(ctx.clone());
            ctx.0.push(tok);
        }
    }
    states
}

fn surrogate_core(
    trajectories: &[DialogueTrajectory],
    advantages: &[f64],
    params: &PolicyParameters,
    params_old: &PolicyParameters,
    params_ref: &PolicyParameters,
    config: &UpdateConfig,
) -> Result<(f64, Gradient, f64), OptError> {
    if trajectories.len() != advantages.len() {
        return Err(OptError::LengthMismatch {
            what: "advantages",
            expected: trajectories.len(),
            got: advantages.len(),
        });
    }
    if trajectories.iter().any(|t| t.scenario != Scenario::Full) {
        return Err(OptError::PartialTrajectory);
    }
    let n = trajectories.len() as f64;
    let mut objective = 0.0;
    let mut grad = Gradient::new(params.vocab_size());
    for (t, &u) in trajectories.iter().zip(advantages) {
        let lp_new = params.log_prob(&t.final_context, &t.final_response)?;
        let lp_old = params_old.log_prob(&t.final_context, &t.final_response)?;
        let rho = (lp_new - lp_old).exp();
        let clipped_rho = rho.clamp(1.0 - config.epsilon, 1.0 + config.epsilon);
        let unclipped = rho * u;
        let clipped = clipped_rho * u;
        objective += unclipped.min(clipped) / n;
        // The min passes gradient through the unclipped branch only; when
        // the clipped branch is strictly smaller the term is constant in rho.
        if unclipped <= clipped {
            let logp_grad = params.log_prob_grad(&t.final_context, &t.final_response)?;
            grad.axpy(u * rho / n, &logp_grad);
        }
    }
    let mut kl = 0.0;
    if config.beta > 0.0 {
        let states = visited_states(trajectories);
        if !states.is_empty() {
            let (kl_value, kl_grad) = params.kl_divergence_and_grad(params_ref, &states)?;
            kl = kl_value;
            objective -= config.beta * kl_value;
            grad.axpy(-config.beta, &kl_grad);
        }
    }
    Ok((objective, grad, kl))
}

/// Clipped-ratio surrogate with KL regularization for one group. Returns the
/// objective (to be ascended) and its exact gradient.
pub fn surrogate_loss_and_grad(
    trajectories: &[DialogueTrajectory],
    advantages: &[f64],
    params: &PolicyParameters,
    params_old: &PolicyParameters,
    params_ref: &PolicyParameters,
    config: &UpdateConfig,
) -> Result<(f64, Gradient), OptError> {
    surrogate_core(trajectories, advantages, params, params_old, params_ref, config)
        .map(|(o, g, _)| (o, g))
}

/// Auxiliary imitation loss: negative log-likelihood of each turn's teacher
/// target given that turn's context, summed over all turns of all
/// trajectories. Exactly a supervised loss over (context, target) pairs.
pub fn sft_aux_loss_and_grad(
    trajectories: &[DialogueTrajectory],
    params: &PolicyParameters,
) -> Result<(f64, Gradient), OptError> {
    let mut batch = Vec::new();
    for t in trajectories {
        for (j, turn) in t.turns.iter().enumerate() {
            if turn.teacher_target_tokens.is_empty() {
                return Err(OptError::MissingTeacherTurn { group_index: t.group_index, turn: j });
            }
            batch.push((turn.context.clone(), turn.teacher_target_tokens.clone()));
        }
    }
    if batch.is_empty() {
        return Ok((0.0, Gradient::new(params.vocab_size())));
    }
    Ok(params.sft_loss_and_grad(&batch)?)
}

/// One task's rollouts: the full-dialogue group (policy-gradient bearing)
/// and the partial-dialogue group (bonus baseline only).
#[derive(Debug)]
pub struct TaskGroup {
    pub task: Task,
    pub full: Vec<DialogueTrajectory>,
    pub partial: Vec<DialogueTrajectory>,
}

/// Aggregates reported by one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub mean_r_base: f64,
    pub mean_r_total: f64,
    /// Fraction of groups whose bonus condition fired.
    pub dsu_rate: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

/// One combined gradient step over a batch of task groups: ascends the
/// clipped surrogate while descending the weighted imitation loss. The
/// reference parameters are read-only throughout.
pub fn train_step(
    batch: &[TaskGroup],
    params: &mut PolicyParameters,
    params_old: &PolicyParameters,
    params_ref: &PolicyParameters,
    reward_config: &RewardConfig,
    config: &UpdateConfig,
) -> Result<UpdateReport, OptError> {
    config.validate()?;
    assert!(!batch.is_empty(), "train_step needs a non-empty batch");
    let mut grad = Gradient::new(params.vocab_size());
    let mut sum_r_base = 0.0;
    let mut sum_r_total = 0.0;
    let mut n_traj = 0usize;
    let mut fired_groups = 0usize;
    let mut kl_sum = 0.0;
    for group in batch {
        let p_full = group_mean_base(&group.full, &group.task);
        let p_partial = group_mean_base(&group.partial, &group.task);
        // track the margin condition itself so delta = 0 ablations still log it
        if p_full > reward_config.nu * p_partial {
            fired_groups += 1;
        }
        let mut rewards = Vec::with_capacity(group.full.len());
        for t in &group.full {
            let b = total_reward(t, &group.task, p_full, p_partial, reward_config)?;
            sum_r_base += b.r_base;
            sum_r_total += b.r_total;
            rewards.push(b.r_total);
        }
        n_traj += group.full.len();
        let advantages = if config.mean_only {
            center_rewards(&rewards)?
        } else {
            normalize_advantages(&rewards, config.norm_floor)?
        };
        let (_, group_grad, kl) =
            surrogate_core(&group.full, &advantages, params, params_old, params_ref, config)?;
        grad.axpy(1.0 / batch.len() as f64, &group_grad);
        kl_sum += kl;
    }
    if config.sft_aux_weight > 0.0 {
        let all_full: Vec<DialogueTrajectory> =
            batch.iter().flat_map(|g| g.full.iter().cloned()).collect();
        let (_, aux_grad) = sft_aux_loss_and_grad(&all_full, params)?;
        // descend the auxiliary loss while ascending the surrogate
        grad.axpy(-config.sft_aux_weight, &aux_grad);
    }
    let grad_norm = grad.l2_norm();
    if !grad.is_finite() {
        return Err(OptError::NonFiniteGradient(grad_norm));
    }
    params.apply_gradient(config.lr, &grad);
    Ok(UpdateReport {
        mean_r_base: sum_r_base / n_traj as f64,
        mean_r_total: sum_r_total / n_traj as f64,
        dsu_rate: fired_groups as f64 / batch.len() as f64,
        kl: kl_sum / batch.len() as f64,
        grad_norm,
    })
}
