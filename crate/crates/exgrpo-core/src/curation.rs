//! Stage-1 data curation.
//!
//! Two sequential filters produce the training set. The consistency filter
//! keeps a probe only if the teacher, after conditioning on the probe and
//! its own explanation, still answers the *original* question correctly.
//! The rejective filter then drops whole tasks that are too easy (the
//! baseline student already solves every consistent probe) or too hard (it
//! solves fewer than `tau_hard`). Every decision is written to an audit
//! record so counts can be reconciled against the raw probe data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ei_probe::{generate_probes, TeacherError, TeacherOracle};
use crate::policy::PolicyError;
use crate::student::StudentModel;
use crate::task_model::{
    answers_match, AugmentedTuple, CuratedDataset, EIRuleId, Provenance, Task, TaskModelError,
};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dataset(#[from] TaskModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The pre-warm-up student evaluated by the rejective filter. Answering must
/// be deterministic (greedy decoding) so filtering is reproducible.
pub trait BaselineStudent {
    fn answer(&self, question: &str) -> Result<String, PolicyError>;
}

impl BaselineStudent for StudentModel {
    fn answer(&self, question: &str) -> Result<String, PolicyError> {
        self.greedy_answer(question)
    }
}

impl<F> BaselineStudent for F
where
    F: Fn(&str) -> String,
{
    fn answer(&self, question: &str) -> Result<String, PolicyError> {
        Ok(self(question))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Minimum number of consistent probes the baseline student must solve
    /// for a task to be retained.
    pub tau_hard: u32,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { tau_hard: 1 }
    }
}

/// Per-task audit entry, serialized as line-delimited JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub task_id: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_prime")]
    pub n_prime: usize,
    #[serde(rename = "Lambda")]
    pub lambda: usize,
    pub kept: bool,
    pub reason: String,
}

/// Builds the consistency-filter prompt: probe, teacher reasoning, teacher
/// answer, then the original question, each as a labeled segment. The
/// original question comes last, so its expression tail is the one a
/// tail-parsing teacher answers.
pub fn consistency_prompt(task: &Task, probe: &AugmentedTuple) -> String {
    format!(
        "probe : {}\nreasoning : {}\nanswer : {}\nquestion : {}",
        probe.q_aug,
        probe.r_aug.rendered(),
        probe.a_aug,
        task.question
    )
}

/// Consistency filter: does the teacher still produce the original answer
/// when conditioned on the probe and its explanation? Sets the probe's
/// `passed_consistency` flag.
pub fn ei_consistency_filter(
    task: &Task,
    probe: &mut AugmentedTuple,
    teacher: &mut dyn TeacherOracle,
) -> Result<bool, TeacherError> {
    debug_assert_eq!(probe.parent_task_id, task.id);
    let predicted = teacher.predict_answer(&consistency_prompt(task, probe))?;
    probe.passed_consistency = answers_match(&predicted, &task.answer_key);
    Ok(probe.passed_consistency)
}

/// Rejective filter over a task's consistent probes. Greedy-decodes the
/// baseline student on each probe, counts correct answers (Lambda), and
/// keeps the task iff it is neither too easy (Lambda == N') nor too hard
/// (Lambda < tau_hard). Sets each probe's `student_correct` flag. Returns
/// (keep, Lambda).
pub fn rejective_filter(
    _task: &Task,
    consistent_probes: &mut [AugmentedTuple],
    config: &CurationConfig,
    student: &dyn BaselineStudent,
) -> Result<(bool, usize), PolicyError> {
    let n_prime = consistent_probes.len();
    let mut lambda = 0usize;
    for probe in consistent_probes.iter_mut() {
        let answer = student.answer(&probe.q_aug)?;
        probe.student_correct = answers_match(&answer, &probe.a_aug);
        if probe.student_correct {
            lambda += 1;
        }
    }
    let keep = n_prime > 0 && lambda != n_prime && lambda >= config.tau_hard as usize;
    Ok((keep, lambda))
}

/// Curation output: the retained dataset plus the full audit trail.
#[derive(Debug)]
pub struct CurationOutcome {
    pub dataset: CuratedDataset,
    pub audit: Vec<AuditRecord>,
}

/// Runs both filters over every task. Individual task failures (probe
/// generation, teacher faults) demote the task with a logged reason rather
/// than aborting the run.
pub fn curate(
    tasks: &[Task],
    config: &CurationConfig,
    rules: &[EIRuleId],
    student: &dyn BaselineStudent,
    teacher: &mut dyn TeacherOracle,
) -> Result<CurationOutcome, CurationError> {
    assert!(!rules.is_empty(), "curation needs at least one rule");
    let mut audit = Vec::with_capacity(tasks.len());
    let mut retained_tasks = Vec::new();
    let mut retained_probes = Vec::new();
    for task in tasks {
        let batch = match generate_probes(task, rules, teacher) {
            Ok(b) => b,
            Err(e) => {
                audit.push(AuditRecord {
                    task_id: task.id.clone(),
                    n: 0,
                    n_prime: 0,
                    lambda: 0,
                    kept: false,
                    reason: format!("probe generation failed: {e}"),
                });
                continue;
            }
        };
        let n = batch.probes.len();
        let mut consistent = Vec::new();
        let mut filter_faults = 0usize;
        for mut probe in batch.probes {
            match ei_consistency_filter(task, &mut probe, teacher) {
                Ok(true) => consistent.push(probe),
                Ok(false) => {}
                // neither kept nor dropped on teacher fault: excluded with a
                // logged reason, per-run curation continues
                Err(_) => filter_faults += 1,
            }
        }
        let n_prime = consistent.len();
        if n_prime == 0 {
            audit.push(AuditRecord {
                task_id: task.id.clone(),
                n,
                n_prime: 0,
                lambda: 0,
                kept: false,
                reason: if filter_faults > 0 {
                    format!("no consistent probes ({filter_faults} filter faults)")
                } else {
                    "no consistent probes".to_string()
                },
            });
            continue;
        }
        let (keep, lambda) = rejective_filter(task, &mut consistent, config, student)?;
        let reason = if keep {
            "kept".to_string()
        } else if lambda == n_prime {
            "too easy: baseline solves all consistent probes".to_string()
        } else {
            format!("too hard: Lambda {lambda} below tau_hard {}", config.tau_hard)
        };
        audit.push(AuditRecord {
            task_id: task.id.clone(),
            n,
            n_prime,
            lambda,
            kept: keep,
            reason,
        });
        if keep {
            retained_tasks.push(task.clone());
            retained_probes.extend(consistent);
        }
    }
    let provenance = Provenance {
        tau_hard: config.tau_hard,
        teacher: teacher.describe(),
        rules: rules.iter().map(|r| r.as_str().to_string()).collect(),
    };
    let dataset = if retained_tasks.is_empty() {
        CuratedDataset::empty(provenance)
    } else {
        CuratedDataset::new(retained_tasks, retained_probes, provenance)?
    };
    Ok(CurationOutcome { dataset, audit })
}

/// Writes audit records as line-delimited JSON, ordered by task id.
pub fn save_audit<P: AsRef<std::path::Path>>(
    audit: &[AuditRecord],
    path: P,
) -> Result<(), CurationError> {
    use std::io::Write;
    let mut sorted: Vec<&AuditRecord> = audit.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in sorted {
        let line = serde_json::to_string(record).expect("audit record serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ei_probe::ScriptedTeacher;
    use crate::synth_env::{eval_expression_tail, generate_tasks, SyntheticTaskSpec};
    use crate::task_model::ReasoningTrace;

    fn tasks(n: usize, seed: u64) -> Vec<Task> {
        generate_tasks(&SyntheticTaskSpec { n_tasks: n, seed, ..Default::default() }).unwrap()
    }

    /// Answers probe tails exactly — the omniscient student.
    fn oracle_student(q: &str) -> String {
        eval_expression_tail(q).map(|v| v.to_string()).unwrap_or_default()
    }

    /// Correct only on why/justify probes (exactly 2 of the 10 rules).
    fn two_rule_student(q: &str) -> String {
        if q.starts_with("why") || q.starts_with("justify") {
            oracle_student(q)
        } else {
            "wrong".to_string()
        }
    }

    fn hopeless_student(_q: &str) -> String {
        "wrong".to_string()
    }

    #[test]
    fn perfect_teacher_passes_every_probe() {
        let mut teacher = ScriptedTeacher::perfect();
        for task in tasks(5, 1) {
            for rule in EIRuleId::ALL {
                let mut probe = teacher.generate_probe(&task, rule).unwrap();
                assert!(ei_consistency_filter(&task, &mut probe, &mut teacher).unwrap());
                assert!(probe.passed_consistency);
            }
        }
    }

    #[test]
    fn adversarial_teacher_fails_every_probe() {
        let mut gen = ScriptedTeacher::perfect();
        let mut teacher = ScriptedTeacher::new(0, 1.0);
        for task in tasks(5, 2) {
            for rule in EIRuleId::ALL {
                let mut probe = gen.generate_probe(&task, rule).unwrap();
                assert!(!ei_consistency_filter(&task, &mut probe, &mut teacher).unwrap());
            }
        }
    }

    /// Teacher that answers correctly unless the prompt carries a poison
    /// marker — the consistency decision must match the direct predicate.
    struct PoisonTeacher;

    impl TeacherOracle for PoisonTeacher {
        fn generate_probe(
            &mut self,
            task: &Task,
            rule: EIRuleId,
        ) -> Result<AugmentedTuple, TeacherError> {
            ScriptedTeacher::perfect().generate_probe(task, rule)
        }

        fn answer_probe(
            &mut self,
            q_aug: &str,
            context: &str,
        ) -> Result<(ReasoningTrace, String), TeacherError> {
            ScriptedTeacher::perfect().answer_probe(q_aug, context)
        }

        fn predict_answer(&mut self, prompt: &str) -> Result<String, TeacherError> {
            if prompt.contains("poison") {
                return Ok("poisoned".to_string());
            }
            ScriptedTeacher::perfect().predict_answer(prompt)
        }

        fn describe(&self) -> String {
            "poison".into()
        }
    }

    #[test]
    fn consistency_matches_direct_predicate_on_poisoned_fixtures() {
        let mut gen = ScriptedTeacher::perfect();
        let mut teacher = PoisonTeacher;
        for task in tasks(10, 3) {
            for rule in EIRuleId::ALL {
                let mut probe = gen.generate_probe(&task, rule).unwrap();
                // poison half the fixtures through the probe text
                let poisoned = matches!(rule, EIRuleId::R1 | EIRuleId::R4 | EIRuleId::R8);
                if poisoned {
                    probe.q_aug = format!("poison {}", probe.q_aug);
                }
                let got = ei_consistency_filter(&task, &mut probe, &mut teacher).unwrap();
                // direct predicate: teacher answers A unless poisoned
                assert_eq!(got, !poisoned, "rule {rule} task {}", task.id);
            }
        }
    }

    fn synthetic_probes(task: &Task, n_prime: usize) -> Vec<AugmentedTuple> {
        let mut teacher = ScriptedTeacher::perfect();
        let mut probes: Vec<AugmentedTuple> = EIRuleId::ALL
            .iter()
            .take(n_prime)
            .map(|&r| {
                let mut p = teacher.generate_probe(task, r).unwrap();
                p.passed_consistency = true;
                p
            })
            .collect();
        probes.truncate(n_prime);
        probes
    }

    #[test]
    fn rejective_filter_spec_examples() {
        let task = &tasks(1, 4)[0];
        let config = CurationConfig { tau_hard: 1 };
        // N' = 5, Lambda = 5 -> too easy, reject
        let mut probes = synthetic_probes(task, 5);
        let (keep, lambda) = rejective_filter(task, &mut probes, &config, &oracle_student).unwrap();
        assert_eq!((keep, lambda), (false, 5));
        // N' = 5, Lambda = 0, tau_hard = 1 -> too hard, reject
        let mut probes = synthetic_probes(task, 5);
        let (keep, lambda) =
            rejective_filter(task, &mut probes, &config, &hopeless_student).unwrap();
        assert_eq!((keep, lambda), (false, 0));
        // N' = 5 with first two correct -> keep
        let first_two = {
            let targets: Vec<String> = probes.iter().take(2).map(|p| p.q_aug.clone()).collect();
            move |q: &str| {
                if targets.iter().any(|t| t == q) {
                    oracle_student(q)
                } else {
                    "wrong".to_string()
                }
            }
        };
        let mut probes2 = synthetic_probes(task, 5);
        let (keep, lambda) = rejective_filter(task, &mut probes2, &config, &first_two).unwrap();
        assert_eq!((keep, lambda), (true, 2));
    }

    #[test]
    fn rejective_filter_matches_truth_table() {
        let task = &tasks(1, 5)[0];
        for n_prime in 0..=6usize {
            for lambda_target in 0..=n_prime {
                for tau in 1..=3u32 {
                    let mut probes = synthetic_probes(task, n_prime);
                    let targets: Vec<String> =
                        probes.iter().take(lambda_target).map(|p| p.q_aug.clone()).collect();
                    let student = move |q: &str| {
                        if targets.iter().any(|t| t == q) {
                            oracle_student(q)
                        } else {
                            "wrong".to_string()
                        }
                    };
                    let config = CurationConfig { tau_hard: tau };
                    let (keep, lambda) =
                        rejective_filter(task, &mut probes, &config, &student).unwrap();
                    assert_eq!(lambda, lambda_target);
                    // independent restatement of the predicate
                    let expected = n_prime > 0
                        && !(lambda_target == n_prime)
                        && lambda_target >= tau as usize;
                    assert_eq!(keep, expected, "N'={n_prime} Lambda={lambda_target} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn curate_keeps_tasks_in_the_goldilocks_zone() {
        let task_list = tasks(10, 6);
        let mut teacher = ScriptedTeacher::perfect();
        let outcome = curate(
            &task_list,
            &CurationConfig { tau_hard: 1 },
            &EIRuleId::ALL,
            &two_rule_student,
            &mut teacher,
        )
        .unwrap();
        assert_eq!(outcome.dataset.n_tasks(), 10);
        assert_eq!(outcome.audit.len(), 10);
        for record in &outcome.audit {
            assert!(record.kept);
            assert_eq!(record.n, 10);
            assert_eq!(record.n_prime, 10);
            assert_eq!(record.lambda, 2);
        }
    }

    #[test]
    fn curate_drops_everything_the_baseline_already_solves() {
        let task_list = tasks(6, 7);
        let mut teacher = ScriptedTeacher::perfect();
        let outcome = curate(
            &task_list,
            &CurationConfig { tau_hard: 1 },
            &EIRuleId::ALL,
            &oracle_student,
            &mut teacher,
        )
        .unwrap();
        assert_eq!(outcome.dataset.n_tasks(), 0);
        assert!(outcome.audit.iter().all(|r| !r.kept && r.reason.contains("too easy")));
    }

    #[test]
    fn curate_empty_input_is_empty_output() {
        let mut teacher = ScriptedTeacher::perfect();
        let outcome = curate(
            &[],
            &CurationConfig::default(),
            &EIRuleId::ALL,
            &two_rule_student,
            &mut teacher,
        )
        .unwrap();
        assert_eq!(outcome.dataset.n_tasks(), 0);
        assert!(outcome.audit.is_empty());
    }

    #[test]
    fn raising_tau_hard_never_adds_tasks() {
        let task_list = tasks(30, 8);
        // student correct on a pseudo-random subset of probes, varying by task
        let patchy = |q: &str| {
            let h: u32 = q.bytes().map(u32::from).sum();
            if h % 3 != 0 {
                oracle_student(q)
            } else {
                "wrong".to_string()
            }
        };
        let mut previous: Option<std::collections::HashSet<String>> = None;
        for tau in 1..=4u32 {
            let mut teacher = ScriptedTeacher::perfect();
            let outcome = curate(
                &task_list,
                &CurationConfig { tau_hard: tau },
                &EIRuleId::ALL,
                &patchy,
                &mut teacher,
            )
            .unwrap();
            let retained: std::collections::HashSet<String> =
                outcome.dataset.tasks().map(|t| t.id.clone()).collect();
            if let Some(prev) = &previous {
                assert!(retained.is_subset(prev), "tau {tau} grew the retained set");
            }
            previous = Some(retained);
        }
    }

    #[test]
    fn audit_reconciles_with_probe_records() {
        let task_list = tasks(20, 9);
        let mut teacher = ScriptedTeacher::perfect();
        let outcome = curate(
            &task_list,
            &CurationConfig { tau_hard: 1 },
            &EIRuleId::ALL,
            &two_rule_student,
            &mut teacher,
        )
        .unwrap();
        assert_eq!(outcome.audit.len(), task_list.len());
        for record in &outcome.audit {
            assert!(task_list.iter().any(|t| t.id == record.task_id));
            if record.kept {
                let probes: Vec<_> = outcome.dataset.probes_for(&record.task_id).collect();
                assert_eq!(probes.len(), record.n_prime);
                assert_eq!(
                    probes.iter().filter(|p| p.student_correct).count(),
                    record.lambda
                );
                assert!(probes.iter().all(|p| p.passed_consistency));
            }
        }
    }
}
