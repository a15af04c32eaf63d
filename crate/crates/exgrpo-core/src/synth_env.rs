//! Synthetic arithmetic word-problem environment.
//!
//! The desk-scale stand-in for real reasoning datasets: two-operation
//! arithmetic over a closed lexicon, with exact ground truth for every task.
//! Each question ends with an explicit expression tail
//! (`consider {x} {opword} {y}`) so the scripted teacher, the baseline
//! student, and all probe templates share one unambiguous parse of what is
//! being asked. Forward tasks use `plus`/`minus`; inverse tasks — the
//! reversal-style counterparts — use the novel opwords `unplus`/`unminus`,
//! which a policy trained only on forward problems has never seen.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::Vocabulary;
use crate::task_model::{ReasoningTrace, Task};

#[derive(Debug, Error)]
pub enum SynthEnvError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// Arithmetic operations available to the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Add,
    Subtract,
}

impl Op {
    fn opword(self) -> &'static str {
        match self {
            Op::Add => "plus",
            Op::Subtract => "minus",
        }
    }

    fn inverse_opword(self) -> &'static str {
        match self {
            Op::Add => "unplus",
            Op::Subtract => "unminus",
        }
    }
}

/// Evaluates `x {opword} y`. The `un*` words invert their base operation:
/// `unplus` undoes an addition (subtracts), `unminus` undoes a subtraction
/// (adds). Returns None for unknown words or out-of-range results.
pub fn eval_opword(x: i64, opword: &str, y: i64) -> Option<i64> {
    let v = match opword {
        "plus" => x + y,
        "minus" => x - y,
        "unplus" => x - y,
        "unminus" => x + y,
        _ => return None,
    };
    (0..=99).contains(&v).then_some(v)
}

/// The opword that recovers the left operand from an expression's value:
/// if `x {w} y = v` then `v {inverse(w)} y = x`.
pub fn inverse_of(opword: &str) -> Option<&'static str> {
    match opword {
        "plus" => Some("unplus"),
        "minus" => Some("unminus"),
        "unplus" => Some("plus"),
        "unminus" => Some("minus"),
        _ => None,
    }
}

/// Parses the last `consider {x} {opword} {y}` tail in `text`.
pub fn parse_expression_tail(text: &str) -> Option<(i64, String, i64)> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let pos = tokens.iter().rposition(|&t| t == "consider")?;
    let x: i64 = tokens.get(pos + 1)?.parse().ok()?;
    let opword = tokens.get(pos + 2)?.to_string();
    let y: i64 = tokens.get(pos + 3)?.parse().ok()?;
    eval_opword(x, &opword, y)?;
    Some((x, opword, y))
}

/// Evaluates the last expression tail in `text`, if any.
pub fn eval_expression_tail(text: &str) -> Option<i64> {
    let (x, w, y) = parse_expression_tail(text)?;
    eval_opword(x, &w, y)
}

const NAMES: &[&str] = &["tom", "sara", "ben", "amy", "li", "omar"];
const ITEMS: &[&str] = &["apples", "coins", "books", "pears", "shells", "cards"];

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub operand_min: i64,
    pub operand_max: i64,
    pub operations: Vec<Op>,
    pub n_tasks: usize,
    pub seed: u64,
    /// When set, each forward task is paired with a reversal-style inverse
    /// task sharing a linkage id.
    pub include_inverse: bool,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            operand_min: 1,
            operand_max: 15,
            operations: vec![Op::Add, Op::Subtract],
            n_tasks: 100,
            seed: 0,
            include_inverse: false,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), SynthEnvError> {
        if self.operations.is_empty() {
            return Err(SynthEnvError::InvalidSpec("operations must be non-empty".into()));
        }
        if self.operand_min < 0 || self.operand_max < self.operand_min {
            return Err(SynthEnvError::InvalidSpec("operand range must be a positive interval".into()));
        }
        // Results and counterfactual (+1) variants must stay single-token (0..=99).
        if 2 * self.operand_max + 1 > 99 {
            return Err(SynthEnvError::InvalidSpec(
                "operand_max too large: sums must stay below 100".into(),
            ));
        }
        Ok(())
    }
}

fn linkage_tag(kind: &str, pair: usize) -> String {
    format!("{kind} pair-{pair}")
}

/// The linkage id shared by a forward task and its inverse twin.
pub fn linkage_id(task: &Task) -> Option<&str> {
    task.domain_tag.split_whitespace().find(|t| t.starts_with("pair-"))
}

pub fn is_inverse(task: &Task) -> bool {
    task.domain_tag.starts_with("inverse")
}

fn reasoning_for(x: i64, opword: &str, y: i64, v: i64) -> ReasoningTrace {
    ReasoningTrace::new(vec![
        format!("the question asks to consider {x} {opword} {y}"),
        format!("take {x} {opword} {y} gives {v}"),
    ])
    .expect("generated steps are non-empty")
}

/// Builds a forward word problem `a {op} b = ?`.
pub fn make_forward_task(id: &str, tag: &str, name: &str, item: &str, a: i64, b: i64, op: Op) -> Task {
    let verb_phrase = match op {
        Op::Add => format!("then got {b} more {item}"),
        Op::Subtract => format!("then gave away {b} {item}"),
    };
    let w = op.opword();
    let v = eval_opword(a, w, b).expect("forward result in range");
    Task {
        id: id.to_string(),
        question: format!(
            "{name} had {a} {item} {verb_phrase} how many {item} now ? consider {a} {w} {b}"
        ),
        answer_key: v.to_string(),
        answer_text: format!("{v} {item}"),
        reasoning: reasoning_for(a, w, b, v),
        domain_tag: tag.to_string(),
    }
}

/// Builds the inverse problem: the outcome `c` of `a {op} b` is given and the
/// starting quantity `a` is asked for, via the inverse opword.
pub fn make_inverse_task(id: &str, tag: &str, name: &str, item: &str, a: i64, b: i64, op: Op) -> Task {
    let w = op.opword();
    let c = eval_opword(a, w, b).expect("forward result in range");
    let inv = op.inverse_opword();
    let change_phrase = match op {
        Op::Add => format!("after getting {b} more {item}"),
        Op::Subtract => format!("after giving away {b} {item}"),
    };
    Task {
        id: id.to_string(),
        question: format!(
            "{name} ended with {c} {item} {change_phrase} how many {item} at the start ? consider {c} {inv} {b}"
        ),
        answer_key: a.to_string(),
        answer_text: format!("{a} {item}"),
        reasoning: reasoning_for(c, inv, b, a),
        domain_tag: tag.to_string(),
    }
}

/// Generates `n_tasks` forward word problems (plus inverse twins when
/// configured), deterministically from the spec seed.
pub fn generate_tasks(spec: &SyntheticTaskSpec) -> Result<Vec<Task>, SynthEnvError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tasks = Vec::with_capacity(spec.n_tasks * if spec.include_inverse { 2 } else { 1 });
    for i in 0..spec.n_tasks {
        let op = *spec.operations.choose(&mut rng).expect("non-empty operations");
        let a = rng.gen_range(spec.operand_min..=spec.operand_max);
        let b = match op {
            Op::Add => rng.gen_range(spec.operand_min..=spec.operand_max),
            // keep results nonnegative
            Op::Subtract => rng.gen_range(0..=a.min(spec.operand_max)),
        };
        let name = NAMES[rng.gen_range(0..NAMES.len())];
        let item = ITEMS[rng.gen_range(0..ITEMS.len())];
        let tag_fwd = linkage_tag("forward", i);
        tasks.push(make_forward_task(&format!("fwd-{i}"), &tag_fwd, name, item, a, b, op));
        if spec.include_inverse {
            let tag_inv = linkage_tag("inverse", i);
            tasks.push(make_inverse_task(&format!("inv-{i}"), &tag_inv, name, item, a, b, op));
        }
    }
    Ok(tasks)
}

/// How [`holdout_split`] treats forward/inverse twins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Twins land on the same side; the test set mirrors training.
    InDistribution,
    /// Forward twins always train; a held-out fraction of inverse tasks form
    /// the test set (the reversal-generalization probe).
    Reversal,
}

/// Seeded, disjoint, linkage-aware train/test split.
pub fn holdout_split(
    tasks: &[Task],
    fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Vec<Task>, Vec<Task>), SynthEnvError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SynthEnvError::InvalidSpec("fraction must be in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Group by linkage id (tasks without one form singleton groups).
    let mut groups: Vec<Vec<&Task>> = Vec::new();
    let mut by_link: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for task in tasks {
        match linkage_id(task) {
            Some(link) => {
                if let Some(&g) = by_link.get(link) {
                    groups[g].push(task);
                } else {
                    by_link.insert(link.to_string(), groups.len());
                    groups.push(vec![task]);
                }
            }
            None => groups.push(vec![task]),
        }
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    let n_test_groups = ((groups.len() as f64) * fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (rank, &g) in order.iter().enumerate() {
        let to_test = rank < n_test_groups;
        for &task in &groups[g] {
            match mode {
                SplitMode::InDistribution => {
                    if to_test {
                        test.push(task.clone());
                    } else {
                        train.push(task.clone());
                    }
                }
                SplitMode::Reversal => {
                    if to_test && is_inverse(task) {
                        test.push(task.clone());
                    } else {
                        train.push(task.clone());
                    }
                }
            }
        }
    }
    Ok((train, test))
}

/// Every word that can appear in generated tasks, probes, dialogue labels,
/// and teacher responses. The policy's vocabulary is closed over this list.
pub fn lexicon() -> Vec<String> {
    let mut words: Vec<String> = (0..=99).map(|n: i64| n.to_string()).collect();
    let template_words = [
        // task templates
        "had", "then", "got", "more", "gave", "away", "how", "many", "now", "?", "consider",
        "plus", "minus", "unplus", "unminus", "ended", "with", "after", "getting", "giving",
        "at", "the", "start",
        // teacher / student response format
        "take", "gives", "best", "answer", "is",
        // probe templates
        "why", "does", "taking", "give", "here", "operation", "lead", "to", "result", "explain",
        "step", "by", "get", "what", "if", "instead", "compare", "two", "amounts", "difference",
        "there", "an", "alternative", "way", "reach", "same", "apply", "logic", "another",
        "scenario", "numbers", "was", "starting", "number", "before", "change", "order", "of",
        "matter", "justify", "this", "right", "choice",
        // dialogue labels and filter segment labels
        "probe", "student", "teacher", "original", "question", ":", "reasoning", "asks",
    ];
    for w in template_words {
        words.push(w.to_string());
    }
    for name in NAMES {
        words.push(name.to_string());
    }
    for item in ITEMS {
        words.push(item.to_string());
    }
    let mut seen = std::collections::HashSet::new();
    words.retain(|w| seen.insert(w.clone()));
    words
}

/// The closed vocabulary over [`lexicon`] plus the reserved markers.
pub fn build_vocabulary() -> Vocabulary {
    Vocabulary::new(lexicon())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_five_minus_two_is_three() {
        let t = make_forward_task("f", "forward pair-0", "tom", "apples", 5, 2, Op::Subtract);
        assert_eq!(t.answer_key, "3");
        assert_eq!(parse_expression_tail(&t.question), Some((5, "minus".into(), 2)));
    }

    #[test]
    fn inverse_recovers_the_start() {
        // forward 5 - 2 = 3; inverse: ended with 3 after giving away 2 -> 5
        let t = make_inverse_task("i", "inverse pair-0", "tom", "apples", 5, 2, Op::Subtract);
        assert_eq!(t.answer_key, "5");
        let (x, w, y) = parse_expression_tail(&t.question).unwrap();
        assert_eq!((x, w.as_str(), y), (3, "unminus", 2));
        assert_eq!(eval_opword(x, &w, y), Some(5));
    }

    #[test]
    fn all_generated_answers_match_the_arithmetic_oracle() {
        let spec = SyntheticTaskSpec {
            n_tasks: 1000,
            include_inverse: true,
            seed: 42,
            ..Default::default()
        };
        let tasks = generate_tasks(&spec).unwrap();
        assert_eq!(tasks.len(), 2000);
        for task in &tasks {
            let (x, w, y) = parse_expression_tail(&task.question)
                .unwrap_or_else(|| panic!("no tail in {:?}", task.question));
            // independent recomputation, bypassing eval_opword's table
            let expected = match w.as_str() {
                "plus" | "unminus" => x + y,
                "minus" | "unplus" => x - y,
                other => panic!("unexpected opword {other}"),
            };
            assert_eq!(task.answer_key, expected.to_string(), "task {}", task.id);
            assert!((0..=99).contains(&expected));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticTaskSpec { n_tasks: 50, seed: 7, ..Default::default() };
        assert_eq!(generate_tasks(&spec).unwrap(), generate_tasks(&spec).unwrap());
    }

    #[test]
    fn task_text_is_closed_over_the_lexicon() {
        let vocab = build_vocabulary();
        let spec = SyntheticTaskSpec {
            n_tasks: 300,
            include_inverse: true,
            seed: 3,
            ..Default::default()
        };
        for task in generate_tasks(&spec).unwrap() {
            vocab
                .encode(&task.question)
                .unwrap_or_else(|e| panic!("question OOV: {e} in {:?}", task.question));
            vocab.encode(&task.answer_key).unwrap();
            for step in &task.reasoning.steps {
                vocab.encode(step).unwrap_or_else(|e| panic!("step OOV: {e} in {step:?}"));
            }
        }
    }

    #[test]
    fn fifty_fifty_split_is_disjoint() {
        let spec = SyntheticTaskSpec { n_tasks: 100, seed: 1, ..Default::default() };
        let tasks = generate_tasks(&spec).unwrap();
        let (train, test) = holdout_split(&tasks, 0.5, 9, SplitMode::InDistribution).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 50);
        let train_ids: std::collections::HashSet<_> = train.iter().map(|t| &t.id).collect();
        assert!(test.iter().all(|t| !train_ids.contains(&t.id)));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let spec = SyntheticTaskSpec { n_tasks: 40, include_inverse: true, seed: 2, ..Default::default() };
        let tasks = generate_tasks(&spec).unwrap();
        let s1 = holdout_split(&tasks, 0.3, 5, SplitMode::InDistribution).unwrap();
        let s2 = holdout_split(&tasks, 0.3, 5, SplitMode::InDistribution).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn in_distribution_split_keeps_twins_together() {
        let spec = SyntheticTaskSpec { n_tasks: 60, include_inverse: true, seed: 4, ..Default::default() };
        let tasks = generate_tasks(&spec).unwrap();
        let (train, test) = holdout_split(&tasks, 0.4, 11, SplitMode::InDistribution).unwrap();
        let train_links: std::collections::HashSet<_> =
            train.iter().filter_map(|t| linkage_id(t).map(str::to_string)).collect();
        for t in &test {
            let link = linkage_id(t).unwrap();
            assert!(!train_links.contains(link), "pair {link} split across sides");
        }
    }

    #[test]
    fn reversal_split_keeps_every_forward_twin_in_train() {
        let spec = SyntheticTaskSpec { n_tasks: 60, include_inverse: true, seed: 4, ..Default::default() };
        let tasks = generate_tasks(&spec).unwrap();
        let (train, test) = holdout_split(&tasks, 0.4, 11, SplitMode::Reversal).unwrap();
        assert!(!test.is_empty());
        assert!(test.iter().all(is_inverse));
        let train_links: std::collections::HashSet<_> = train
            .iter()
            .filter(|t| !is_inverse(t))
            .filter_map(|t| linkage_id(t).map(str::to_string))
            .collect();
        for t in &test {
            let link = linkage_id(t).unwrap();
            assert!(train_links.contains(link), "inverse {link} has no forward twin in train");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SyntheticTaskSpec { operations: vec![], ..Default::default() };
        assert!(generate_tasks(&spec).is_err());
        spec.operations = vec![Op::Add];
        spec.operand_max = 60;
        assert!(generate_tasks(&spec).is_err());
    }

    #[test]
    fn tail_parser_takes_the_last_expression() {
        let text = "consider 3 plus 4 and later consider 10 minus 6";
        assert_eq!(parse_expression_tail(text), Some((10, "minus".into(), 6)));
        assert_eq!(eval_expression_tail(text), Some(4));
        assert_eq!(parse_expression_tail("no tail here"), None);
    }
}
