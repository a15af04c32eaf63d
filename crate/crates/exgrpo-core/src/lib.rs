//! Explanatory-inversion reinforcement distillation at desk scale.
//!
//! The crate implements the full pipeline: probe generation over ten
//! explanatory-inversion rules, two-stage data curation (teacher-consistency
//! filter plus rejective difficulty filter), supervised warm-up, multi-turn
//! explanatory dialogues, rule-based rewards with a dialogue-structure bonus,
//! and a clipped group-relative policy update with a KL anchor to the
//! post-warm-up reference policy. Everything runs against a synthetic
//! arithmetic environment with exact ground truth, so gradients, filters, and
//! the policy-improvement claim can all be checked by independent oracles.

pub mod curation;
pub mod dialogue;
pub mod ei_probe;
pub mod metrics;
pub mod opt;
pub mod pipeline;
pub mod policy;
pub mod rewards;
pub mod student;
pub mod synth_env;
pub mod task_model;

pub use curation::{curate, AuditRecord, BaselineStudent, CurationConfig};
pub use dialogue::{rollout, sample_rules, DialoguePlan, DialogueTrajectory, Scenario};
pub use ei_probe::{HttpTeacher, ReplayTeacher, ScriptedTeacher, TeacherError, TeacherOracle};
pub use metrics::{export_metrics, plot_emit, MetricsRow};
pub use opt::{
    normalize_advantages, sft_aux_loss_and_grad, surrogate_loss_and_grad, train_step,
    UpdateConfig, UpdateReport,
};
pub use pipeline::{run_pipeline, run_theorem_check, RunConfig, RunSummary, TheoremReport};
pub use policy::{FeatureMap, Gradient, PolicyError, PolicyParameters, TokenSequence, Vocabulary};
pub use rewards::{dsu_bonus, format_reward, outcome_reward, total_reward, RewardBreakdown, RewardConfig};
pub use student::StudentModel;
pub use synth_env::{generate_tasks, holdout_split, SyntheticTaskSpec};
pub use task_model::{
    load_dataset, load_tasks, save_dataset, AugmentedTuple, CuratedDataset, EIRuleId,
    ReasoningTrace, Task,
};
