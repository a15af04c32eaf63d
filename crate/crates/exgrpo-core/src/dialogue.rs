//! Multi-turn explanatory dialogues.
//!
//! For each original question, k distinct probe rules are drawn without
//! replacement (a full dialogue); a random k'-subset of those forms the
//! partial dialogue. A rollout walks the probes in order — presenting each
//! probe with the accumulated history as context, sampling the student's
//! response, and recording the teacher's reference response for the
//! imitation loss — then presents the original question and samples the
//! final answer. A group of G trajectories is generated per scenario.
//!
//! Probe and final-question turns carry text labels in the token context;
//! student responses follow their probe directly, unlabeled, so that the
//! policy's short feature window still sees the expression tail it needs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ei_probe::{TeacherError, TeacherOracle};
use crate::policy::{PolicyError, TokenSequence};
use crate::student::{extract_answer, StudentModel};
use crate::task_model::{EIRuleId, ReasoningTrace, Task};

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("group shrank to {got} trajectories; at least {need} required")]
    GroupTooSmall { got: usize, need: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
}

/// Which dialogue variant a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Full,
    Partial,
}

impl Scenario {
    fn tag(self) -> u64 {
        match self {
            Scenario::Full => 1,
            Scenario::Partial => 2,
        }
    }
}

/// The probe schedule for one task: k rules for the full dialogue and a
/// k'-subset of them for the partial dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePlan {
    pub task_id: String,
    pub full_rules: Vec<EIRuleId>,
    pub partial_rules: Vec<EIRuleId>,
    pub k: usize,
    pub k_prime: usize,
}

/// Draws k distinct rules without replacement from the first `n_rules` rule
/// ids (order randomized), then a random k'-subset for the partial dialogue.
pub fn sample_rules(
    task_id: &str,
    n_rules: usize,
    k: usize,
    k_prime: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DialoguePlan, DialogueError> {
    if n_rules > EIRuleId::ALL.len() {
        return Err(DialogueError::InvalidPlan(format!(
            "n_rules {n_rules} exceeds the {} available rules",
            EIRuleId::ALL.len()
        )));
    }
    if !(1 <= k_prime && k_prime < k && k <= n_rules) {
        return Err(DialogueError::InvalidPlan(format!(
            "need 1 <= k' < k <= N, got k'={k_prime} k={k} N={n_rules}"
        )));
    }
    let mut pool: Vec<EIRuleId> = EIRuleId::ALL[..n_rules].to_vec();
    pool.shuffle(rng);
    let full_rules: Vec<EIRuleId> = pool[..k].to_vec();
    let mut subset = full_rules.clone();
    subset.shuffle(rng);
    let partial_rules: Vec<EIRuleId> = subset[..k_prime].to_vec();
    Ok(DialoguePlan {
        task_id: task_id.to_string(),
        full_rules,
        partial_rules,
        k,
        k_prime,
    })
}

/// One probe turn: the probe, the student's sampled response with behavior
/// log-probabilities, and the teacher's reference response for imitation.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub rule: EIRuleId,
    pub q_aug: String,
    /// Conditioning prefix (history plus this probe) the student responded to.
    pub context: TokenSequence,
    pub student_tokens: TokenSequence,
    pub student_reasoning: String,
    pub student_answer: String,
    pub student_logprobs: Vec<f64>,
    pub teacher_reasoning: ReasoningTrace,
    pub teacher_answer: String,
    /// Imitation target: final teacher step plus end marker.
    pub teacher_target: String,
    /// The target tokenized against the student vocabulary, conditioning on
    /// `context`.
    pub teacher_target_tokens: TokenSequence,
}

/// One complete rollout of a dialogue plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTrajectory {
    pub plan: DialoguePlan,
    pub scenario: Scenario,
    pub turns: Vec<DialogueTurn>,
    /// Conditioning prefix (history plus the original question) for the
    /// final response — the segment the policy-gradient ratio runs over.
    pub final_context: TokenSequence,
    pub final_response: TokenSequence,
    pub final_reasoning: String,
    pub final_answer: String,
    pub final_logprobs: Vec<f64>,
    /// 1-based index within the group of G.
    pub group_index: usize,
}

/// Independent RNG stream per (run seed, task, scenario, group member).
pub fn trajectory_seed(run_seed: u64, task_id: &str, scenario: Scenario, g: usize) -> u64 {
    let mut h = run_seed ^ 0x51ed_2701_9e37_79b9;
    for b in task_id.bytes() {
        h ^= u64::from(b);
        h = h.rotate_left(17).wrapping_mul(0x9fb2_1c65_1e98_df25);
    }
    h ^= scenario.tag().wrapping_mul(0xa24b_aed4_963e_e407);
    h = h.rotate_left(31).wrapping_mul(0x9fb2_1c65_1e98_df25);
    h ^ (g as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)
}

fn rollout_one(
    task: &Task,
    plan: &DialoguePlan,
    scenario: Scenario,
    rules: &[EIRuleId],
    student: &StudentModel,
    oracle: &mut dyn TeacherOracle,
    run_seed: u64,
    g: usize,
) -> Result<DialogueTrajectory, DialogueError> {
    let mut rng = ChaCha8Rng::seed_from_u64(trajectory_seed(run_seed, &task.id, scenario, g));
    let mut context = TokenSequence::default();
    let mut turns = Vec::with_capacity(rules.len());
    for (j, &rule) in rules.iter().enumerate() {
        let (q_aug, teacher_reasoning, teacher_answer) = {
            let probe = oracle.generate_probe(task, rule)?;
            (probe.q_aug, probe.r_aug, probe.a_aug)
        };
        let label = student.vocab.encode(&format!("probe {} :", j + 1))?;
        context = context.concat(&label).concat(&student.vocab.encode(&q_aug)?);
        let turn_context = context.clone();
        let (student_tokens, student_logprobs) = student.sample_response(&context, &mut rng)?;
        context = context.concat(&student_tokens);
        let student_reasoning = student.vocab.decode(&student_tokens);
        let teacher_target = format!(
            "{} <eos>",
            teacher_reasoning.steps.last().expect("trace is non-empty")
        );
        let teacher_target_tokens = student.vocab.encode(&teacher_target)?;
        turns.push(DialogueTurn {
            rule,
            q_aug,
            context: turn_context,
            student_answer: extract_answer(&student_reasoning),
            student_tokens,
            student_reasoning,
            student_logprobs,
            teacher_reasoning,
            teacher_answer,
            teacher_target,
            teacher_target_tokens,
        });
    }
    let label = student.vocab.encode("original question :")?;
    context = context.concat(&label).concat(&student.vocab.encode(&task.question)?);
    let final_context = context.clone();
    let (final_response, final_logprobs) = student.sample_response(&final_context, &mut rng)?;
    let final_reasoning = student.vocab.decode(&final_response);
    Ok(DialogueTrajectory {
        plan: plan.clone(),
        scenario,
        turns,
        final_context,
        final_answer: extract_answer(&final_reasoning),
        final_response,
        final_reasoning,
        final_logprobs,
        group_index: g,
    })
}

/// Generates a group of G trajectories for one scenario. Trajectories whose
/// teacher calls fail are dropped (the group shrinks rather than resamples);
/// fewer than 2 survivors is an error.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    task: &Task,
    plan: &DialoguePlan,
    scenario: Scenario,
    student: &StudentModel,
    oracle: &mut dyn TeacherOracle,
    run_seed: u64,
    group_size: usize,
) -> Result<Vec<DialogueTrajectory>, DialogueError> {
    if plan.task_id != task.id {
        return Err(DialogueError::InvalidPlan(format!(
            "plan is for task {:?}, not {:?}",
            plan.task_id, task.id
        )));
    }
    if group_size < 2 {
        return Err(DialogueError::GroupTooSmall { got: group_size, need: 2 });
    }
    let rules = match scenario {
        Scenario::Full => &plan.full_rules,
        Scenario::Partial => &plan.partial_rules,
    };
    let mut group = Vec::with_capacity(group_size);
    for g in 1..=group_size {
        match rollout_one(task, plan, scenario, rules, student, oracle, run_seed, g) {
            Ok(t) => group.push(t),
            // failed trajectories shrink the group; resampling would bias
            // the group statistics
            Err(DialogueError::Teacher(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if group.len() < 2 {
        return Err(DialogueError::GroupTooSmall { got: group.len(), need: 2 });
    }
    Ok(group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ei_probe::ScriptedTeacher;
    use crate::policy::{FeatureMap, PolicyParameters};
    use crate::synth_env::{build_vocabulary, make_forward_task, Op};

    fn uniform_student() -> StudentModel {
        let vocab = build_vocabulary();
        let params = PolicyParameters::zeros(FeatureMap::new(2048, 4, 17), vocab.len());
        StudentModel::new(params, vocab)
    }

    fn task() -> Task {
        make_forward_task("t0", "forward pair-0", "tom", "apples", 9, 4, Op::Subtract)
    }

    #[test]
    fn five_of_ten_rules_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = sample_rules("t0", 10, 5, 2, &mut rng).unwrap();
        assert_eq!(plan.full_rules.len(), 5);
        let set: std::collections::HashSet<_> = plan.full_rules.iter().collect();
        assert_eq!(set.len(), 5);
        assert_eq!(plan.partial_rules.len(), 2);
    }

    #[test]
    fn k_equals_n_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = sample_rules("t0", 10, 10, 2, &mut rng).unwrap();
        let mut sorted = plan.full_rules.clone();
        sorted.sort();
        assert_eq!(sorted, EIRuleId::ALL.to_vec());
    }

    #[test]
    fn constraint_violations_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_rules("t", 10, 5, 5, &mut rng).is_err()); // k' == k
        assert!(sample_rules("t", 10, 11, 2, &mut rng).is_err()); // k > N
        assert!(sample_rules("t", 10, 5, 0, &mut rng).is_err()); // k' == 0
        assert!(sample_rules("t", 11, 5, 2, &mut rng).is_err()); // N too large
    }

    #[test]
    fn partial_rules_are_always_a_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let plan = sample_rules("t", 10, 5, 2, &mut rng).unwrap();
            for r in &plan.partial_rules {
                assert!(plan.full_rules.contains(r));
            }
        }
    }

    #[test]
    fn inclusion_frequency_matches_hypergeometric() {
        // each of 10 rules appears in a 5-draw with probability 1/2
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let plan = sample_rules("t", 10, 5, 2, &mut rng).unwrap();
            for r in plan.full_rules {
                *counts.entry(r).or_insert(0usize) += 1;
            }
        }
        for rule in EIRuleId::ALL {
            let freq = *counts.get(&rule).unwrap_or(&0) as f64 / n as f64;
            assert!((freq - 0.5).abs() < 0.02, "{rule} inclusion {freq}");
        }
    }

    #[test]
    fn first_position_is_uniform_by_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let plan = sample_rules("t", 10, 5, 2, &mut rng).unwrap();
            *counts.entry(plan.full_rules[0]).or_insert(0usize) += 1;
        }
        let expected = n as f64 / 10.0;
        let stat: f64 = EIRuleId::ALL
            .iter()
            .map(|r| {
                let obs = *counts.get(r).unwrap_or(&0) as f64;
                (obs - expected).powi(2) / expected
            })
            .sum();
        // chi-square critical value, 9 degrees of freedom, alpha = 0.01
        assert!(stat < 21.666, "chi-square statistic {stat}");
    }

    #[test]
    fn partial_rollouts_have_exactly_k_prime_turns() {
        let student = uniform_student();
        let mut teacher = ScriptedTeacher::perfect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let plan = sample_rules("t0", 10, 5, 2, &mut rng).unwrap();
        let group =
            rollout(&task(), &plan, Scenario::Partial, &student, &mut teacher, 7, 4).unwrap();
        assert_eq!(group.len(), 4);
        for t in &group {
            assert_eq!(t.turns.len(), 2);
            assert_eq!(t.scenario, Scenario::Partial);
        }
        let full = rollout(&task(), &plan, Scenario::Full, &student, &mut teacher, 7, 4).unwrap();
        for t in &full {
            assert_eq!(t.turns.len(), 5);
        }
    }

    #[test]
    fn saturated_policy_rolls_out_identically() {
        let vocab = build_vocabulary();
        let mut params = PolicyParameters::zeros(FeatureMap::new(512, 4, 0), vocab.len());
        let eos = vocab.eos();
        for row in 0..512 {
            params.theta_mut()[row * vocab.len() + eos] = 1e6;
        }
        let student = StudentModel::new(params, vocab);
        let mut teacher = ScriptedTeacher::perfect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let plan = sample_rules("t0", 10, 3, 2, &mut rng).unwrap();
        let group = rollout(&task(), &plan, Scenario::Full, &student, &mut teacher, 9, 4).unwrap();
        for t in &group[1..] {
            assert_eq!(t.turns.len(), group[0].turns.len());
            assert_eq!(t.final_response, group[0].final_response);
            for (a, b) in t.turns.iter().zip(&group[0].turns) {
                assert_eq!(a.student_tokens, b.student_tokens);
            }
        }
    }

    #[test]
    fn equal_seeds_give_equal_groups() {
        let student = uniform_student();
        let mut teacher = ScriptedTeacher::perfect();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let plan = sample_rules("t0", 10, 4, 2, &mut rng).unwrap();
        let a = rollout(&task(), &plan, Scenario::Full, &student, &mut teacher, 11, 4).unwrap();
        let b = rollout(&task(), &plan, Scenario::Full, &student, &mut teacher, 11, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contexts_are_prefix_extensions_and_contain_history() {
        let student = uniform_student();
        let mut teacher = ScriptedTeacher::perfect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let plan = sample_rules("t0", 10, 5, 2, &mut rng).unwrap();
        let group = rollout(&task(), &plan, Scenario::Full, &student, &mut teacher, 13, 2).unwrap();
        for t in &group {
            for w in t.turns.windows(2) {
                let prev = &w[0].context.0;
                let next = &w[1].context.0;
                assert!(next.len() > prev.len());
                assert_eq!(&next[..prev.len()], prev.as_slice(), "not a prefix extension");
            }
            // final context contains every probe and student response in order
            let rendered = student.vocab.decode(&t.final_context);
            let mut cursor = 0usize;
            for turn in &t.turns {
                let at = rendered[cursor..]
                    .find(&turn.q_aug)
                    .unwrap_or_else(|| panic!("probe missing from context: {}", turn.q_aug));
                cursor += at + turn.q_aug.len();
                if !turn.student_reasoning.is_empty() {
                    let at = rendered[cursor..]
                        .find(&turn.student_reasoning)
                        .expect("student response missing from context");
                    cursor += at + turn.student_reasoning.len();
                }
            }
            assert!(rendered[cursor..].contains(&task().question));
        }
    }

    #[test]
    fn failing_teacher_shrinks_the_group_below_minimum() {
        /// fails every generate_probe call
        struct DeadTeacher;
        impl TeacherOracle for DeadTeacher {
            fn generate_probe(
                &mut self,
                _task: &Task,
                _rule: EIRuleId,
            ) -> Result<crate::task_model::AugmentedTuple, TeacherError> {
                Err(TeacherError::UnparsablePrompt)
            }
            fn answer_probe(
                &mut self,
                _q: &str,
                _c: &str,
            ) -> Result<(ReasoningTrace, String), TeacherError> {
                Err(TeacherError::UnparsablePrompt)
            }
            fn predict_answer(&mut self, _p: &str) -> Result<String, TeacherError> {
                Err(TeacherError::UnparsablePrompt)
            }
            fn describe(&self) -> String {
                "dead".into()
            }
        }
        let student = uniform_student();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let plan = sample_rules("t0", 10, 3, 2, &mut rng).unwrap();
        let err = rollout(&task(), &plan, Scenario::Full, &student, &mut DeadTeacher, 1, 4)
            .unwrap_err();
        assert!(matches!(err, DialogueError::GroupTooSmall { got: 0, need: 2 }));
    }
}
