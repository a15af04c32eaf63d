//! Explanatory-probe generation over the ten inversion rules.
//!
//! Each rule owns a text template that rewrites a task's expression tail
//! into a probing question: why-questions, counterfactuals, comparisons,
//! inverse "what was the starting number" probes, and so on. A pluggable
//! [`TeacherOracle`] supplies the reasoning and answer for each probe — a
//! deterministic scripted teacher for tests and offline runs, or an HTTP
//! client speaking the chat-completions protocol for real LLM teachers.

mod http;

pub use http::{ChatRequest, HttpTeacher, HttpTeacherConfig, ReplayTeacher};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::synth_env::{eval_opword, inverse_of, parse_expression_tail};
use crate::task_model::{AugmentedTuple, EIRuleId, ReasoningTrace, Task};

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("task {task_id:?} has no parsable expression tail")]
    UnparsableTask { task_id: String },
    #[error("prompt has no parsable expression tail")]
    UnparsablePrompt,
    #[error("rule {rule} cannot be instantiated on task {task_id:?}: {reason}")]
    TemplateFailure { rule: EIRuleId, task_id: String, reason: String },
    #[error("http request failed after {attempts} attempts: {message}")]
    Http { attempts: u32, message: String },
    #[error("teacher reply missing answer delimiter {delimiter:?}; raw text: {raw:?}")]
    UnparseableReply { delimiter: String, raw: String },
    #[error("replay log has no recorded response for request: {0}")]
    ReplayMiss(String),
    #[error("all {0} rules failed: {1}")]
    AllRulesFailed(usize, String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A teacher model behind an abstract boundary.
///
/// Calls on one instance must be serializable (hence `&mut self`); clone or
/// wrap per worker for parallel generation.
pub trait TeacherOracle {
    /// Instantiates one rule on one task, producing the probe question plus
    /// the teacher's reasoning and answer for it.
    fn generate_probe(&mut self, task: &Task, rule: EIRuleId) -> Result<AugmentedTuple, TeacherError>;

    /// Answers a probe question given accumulated dialogue context.
    fn answer_probe(
        &mut self,
        q_aug: &str,
        context: &str,
    ) -> Result<(ReasoningTrace, String), TeacherError>;

    /// Free-form answer prediction over an arbitrary prompt (used by the
    /// consistency filter).
    fn predict_answer(&mut self, prompt: &str) -> Result<String, TeacherError>;

    /// Short description recorded in dataset provenance.
    fn describe(&self) -> String;
}

/// One rule's probe template: the rendered pattern plus the distinguishing
/// keyword every rendering must contain.
#[derive(Debug, Clone)]
pub struct ProbeTemplate {
    pub rule: EIRuleId,
    pub keyword: &'static str,
}

impl ProbeTemplate {
    pub fn for_rule(rule: EIRuleId) -> ProbeTemplate {
        let keyword = match rule {
            EIRuleId::R1 => "why",
            EIRuleId::R2 => "how does",
            EIRuleId::R3 => "step by step",
            EIRuleId::R4 => "what if",
            EIRuleId::R5 => "compare",
            EIRuleId::R6 => "alternative",
            EIRuleId::R7 => "another scenario",
            EIRuleId::R8 => "starting number",
            EIRuleId::R9 => "order",
            EIRuleId::R10 => "justify",
        };
        ProbeTemplate { rule, keyword }
    }

    /// Renders the probe question for a task. Every rendering ends with its
    /// own expression tail so the probe's ground-truth answer is explicit.
    pub fn render(&self, task: &Task) -> Result<String, TeacherError> {
        let (x, w, y) = parse_expression_tail(&task.question)
            .ok_or_else(|| TeacherError::UnparsableTask { task_id: task.id.clone() })?;
        let v = eval_opword(x, &w, y)
            .ok_or_else(|| TeacherError::UnparsableTask { task_id: task.id.clone() })?;
        let fail = |reason: &str| TeacherError::TemplateFailure {
            rule: self.rule,
            task_id: task.id.clone(),
            reason: reason.into(),
        };
        let text = match self.rule {
            EIRuleId::R1 => {
                format!("why does taking {x} {w} {y} give the answer here consider {x} {w} {y}")
            }
            EIRuleId::R2 => {
                format!("how does the operation {w} lead to the result consider {x} {w} {y}")
            }
            EIRuleId::R3 => {
                format!("explain step by step how to get the answer consider {x} {w} {y}")
            }
            EIRuleId::R4 => {
                let altered = x + 1;
                eval_opword(altered, &w, y).ok_or_else(|| fail("counterfactual out of range"))?;
                format!("what if the number was {altered} instead consider {altered} {w} {y}")
            }
            EIRuleId::R5 => {
                let (hi, lo) = (x.max(y), x.min(y));
                format!("compare the two amounts what is the difference consider {hi} minus {lo}")
            }
            EIRuleId::R6 => format!(
                "is there an alternative way to reach the same answer consider {x} {w} {y}"
            ),
            EIRuleId::R7 => format!(
                "apply the same logic to another scenario with the same numbers consider {x} {w} {y}"
            ),
            EIRuleId::R8 => {
                let inv = inverse_of(&w).ok_or_else(|| fail("no inverse opword"))?;
                format!("what was the starting number before the change consider {v} {inv} {y}")
            }
            EIRuleId::R9 => {
                format!("does the order of the two numbers matter consider {x} {w} {y}")
            }
            EIRuleId::R10 => {
                format!("justify why this operation is the right choice consider {x} {w} {y}")
            }
        };
        Ok(text)
    }
}

/// Generated probes plus any per-rule failures that were tolerated.
#[derive(Debug)]
pub struct ProbeBatch {
    pub probes: Vec<AugmentedTuple>,
    pub failures: Vec<(EIRuleId, TeacherError)>,
}

/// Instantiates every rule on the task through the oracle. Individual rule
/// failures are collected; only all-rules-failed is an error.
pub fn generate_probes(
    task: &Task,
    rules: &[EIRuleId],
    oracle: &mut dyn TeacherOracle,
) -> Result<ProbeBatch, TeacherError> {
    let mut probes = Vec::new();
    let mut failures = Vec::new();
    for &rule in rules {
        match oracle.generate_probe(task, rule) {
            Ok(p) => probes.push(p),
            Err(e) => failures.push((rule, e)),
        }
    }
    if probes.is_empty() && !rules.is_empty() {
        let detail = failures
            .iter()
            .map(|(r, e)| format!("{r}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(TeacherError::AllRulesFailed(rules.len(), detail));
    }
    Ok(ProbeBatch { probes, failures })
}

/// Deterministic synthetic teacher.
///
/// Probes come from the rule templates; reasoning and answers are derived
/// exactly from the expression tail. `predict_answer` parses the last
/// expression in the prompt and answers it, wrong with probability `p_err`
/// (seeded, reproducible).
#[derive(Debug, Clone)]
pub struct ScriptedTeacher {
    p_err: f64,
    rng: ChaCha8Rng,
}

impl ScriptedTeacher {
    pub fn new(seed: u64, p_err: f64) -> Self {
        assert!((0.0..=1.0).contains(&p_err), "p_err must be a probability");
        Self { p_err, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Perfect teacher (p_err = 0).
    pub fn perfect() -> Self {
        Self::new(0, 0.0)
    }

    fn solve(&self, question: &str) -> Option<(i64, String, i64, i64)> {
        let (x, w, y) = parse_expression_tail(question)?;
        let v = eval_opword(x, &w, y)?;
        Some((x, w, y, v))
    }

    fn reasoning(x: i64, w: &str, y: i64, v: i64) -> ReasoningTrace {
        ReasoningTrace::new(vec![
            format!("the question asks to consider {x} {w} {y}"),
            format!("take {x} {w} {y} gives {v}"),
        ])
        .expect("steps are non-empty")
    }
}

impl TeacherOracle for ScriptedTeacher {
    fn generate_probe(&mut self, task: &Task, rule: EIRuleId) -> Result<AugmentedTuple, TeacherError> {
        let q_aug = ProbeTemplate::for_rule(rule).render(task)?;
        let (x, w, y, v) = self
            .solve(&q_aug)
            .ok_or(TeacherError::UnparsablePrompt)?;
        Ok(AugmentedTuple::new(
            task.id.clone(),
            rule,
            q_aug,
            v.to_string(),
            Self::reasoning(x, &w, y, v),
        ))
    }

    fn answer_probe(
        &mut self,
        q_aug: &str,
        _context: &str,
    ) -> Result<(ReasoningTrace, String), TeacherError> {
        let (x, w, y, v) = self.solve(q_aug).ok_or(TeacherError::UnparsablePrompt)?;
        Ok((Self::reasoning(x, &w, y, v), v.to_string()))
    }

    fn predict_answer(&mut self, prompt: &str) -> Result<String, TeacherError> {
        let (_, _, _, v) = self.solve(prompt).ok_or(TeacherError::UnparsablePrompt)?;
        if self.p_err > 0.0 && self.rng.gen::<f64>() < self.p_err {
            return Ok(((v + 1) % 100).to_string());
        }
        Ok(v.to_string())
    }

    fn describe(&self) -> String {
        format!("scripted(p_err={})", self.p_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_env::{
        build_vocabulary, generate_tasks, make_forward_task, Op, SyntheticTaskSpec,
    };

    fn sub_task() -> Task {
        make_forward_task("t0", "forward pair-0", "tom", "apples", 5, 2, Op::Subtract)
    }

    #[test]
    fn counterfactual_probe_matches_manual_expansion() {
        // 5 - 2 = 3 task; what-if rule bumps the first operand to 6.
        let probe = ProbeTemplate::for_rule(EIRuleId::R4).render(&sub_task()).unwrap();
        assert_eq!(probe, "what if the number was 6 instead consider 6 minus 2");
    }

    #[test]
    fn every_rule_renders_with_its_keyword_in_vocabulary() {
        let vocab = build_vocabulary();
        let spec = SyntheticTaskSpec { n_tasks: 30, include_inverse: true, seed: 5, ..Default::default() };
        for task in generate_tasks(&spec).unwrap() {
            for rule in EIRuleId::ALL {
                let template = ProbeTemplate::for_rule(rule);
                let text = template.render(&task).unwrap();
                assert!(!text.is_empty());
                assert!(
                    text.contains(template.keyword),
                    "{rule} rendering {text:?} lacks keyword {:?}",
                    template.keyword
                );
                vocab.encode(&text).unwrap_or_else(|e| panic!("{rule} OOV: {e} in {text:?}"));
            }
        }
    }

    #[test]
    fn probe_answers_are_arithmetically_exact() {
        let mut teacher = ScriptedTeacher::perfect();
        let spec = SyntheticTaskSpec { n_tasks: 40, include_inverse: true, seed: 6, ..Default::default() };
        for task in generate_tasks(&spec).unwrap() {
            for rule in EIRuleId::ALL {
                let probe = teacher.generate_probe(&task, rule).unwrap();
                let expected = crate::synth_env::eval_expression_tail(&probe.q_aug).unwrap();
                assert_eq!(probe.a_aug, expected.to_string(), "{rule} on {}", task.id);
                assert!(!probe.r_aug.is_empty());
            }
        }
    }

    #[test]
    fn inverse_probe_recovers_the_left_operand() {
        // 5 - 2 = 3; starting-number probe asks 3 unminus 2 = 5.
        let mut teacher = ScriptedTeacher::perfect();
        let probe = teacher.generate_probe(&sub_task(), EIRuleId::R8).unwrap();
        assert!(probe.q_aug.ends_with("consider 3 unminus 2"));
        assert_eq!(probe.a_aug, "5");
    }

    #[test]
    fn generate_probes_preserves_rule_order_and_empty_is_empty() {
        let mut teacher = ScriptedTeacher::perfect();
        let task = sub_task();
        let batch = generate_probes(&task, &EIRuleId::ALL, &mut teacher).unwrap();
        assert_eq!(batch.probes.len(), 10);
        assert!(batch.failures.is_empty());
        let rules: Vec<EIRuleId> = batch.probes.iter().map(|p| p.rule).collect();
        assert_eq!(rules, EIRuleId::ALL.to_vec());
        let empty = generate_probes(&task, &[], &mut teacher).unwrap();
        assert!(empty.probes.is_empty());
    }

    #[test]
    fn all_rules_failing_is_an_aggregate_error() {
        let mut teacher = ScriptedTeacher::perfect();
        let bad = Task {
            question: "no expression tail at all".into(),
            ..sub_task()
        };
        let err = generate_probes(&bad, &EIRuleId::ALL, &mut teacher).unwrap_err();
        assert!(matches!(err, TeacherError::AllRulesFailed(10, _)));
    }

    #[test]
    fn perfect_teacher_always_matches_ground_truth() {
        let mut teacher = ScriptedTeacher::perfect();
        for _ in 0..50 {
            assert_eq!(teacher.predict_answer("consider 5 minus 2").unwrap(), "3");
        }
    }

    #[test]
    fn adversarial_teacher_never_matches() {
        let mut teacher = ScriptedTeacher::new(3, 1.0);
        for _ in 0..50 {
            assert_ne!(teacher.predict_answer("consider 5 minus 2").unwrap(), "3");
        }
    }

    #[test]
    fn error_rate_concentrates_near_p_err() {
        let mut teacher = ScriptedTeacher::new(2024, 0.3);
        let n = 10_000;
        let mut errors = 0;
        for _ in 0..n {
            if teacher.predict_answer("consider 7 plus 4").unwrap() != "11" {
                errors += 1;
            }
        }
        let rate = errors as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.02, "observed error rate {rate}");
    }

    #[test]
    fn scripted_teacher_is_seed_deterministic() {
        let mut a = ScriptedTeacher::new(9, 0.4);
        let mut b = ScriptedTeacher::new(9, 0.4);
        for _ in 0..200 {
            assert_eq!(
                a.predict_answer("consider 8 minus 3").unwrap(),
                b.predict_answer("consider 8 minus 3").unwrap()
            );
        }
    }
}
