//! Domain types for tasks, probes, and curated datasets, plus the
//! line-delimited JSON record I/O used by every pipeline stage.
//!
//! A [`Task`] is one original question/answer/reasoning triple. An
//! [`AugmentedTuple`] is one explanatory probe derived from a task by one of
//! the ten inversion rules, together with the teacher's reasoning and answer
//! and the two curation flags. A [`CuratedDataset`] bundles the retained
//! tasks with their surviving probes and a provenance snapshot.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate task id {0:?}")]
    DuplicateId(String),
    #[error("probe references unknown task id {0:?}")]
    DanglingParent(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Exact-match canonical form for answer comparison: surrounding whitespace
/// trimmed, then lowercased.
pub fn canonical_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Returns true when two answers agree under canonical matching.
pub fn answers_match(a: &str, b: &str) -> bool {
    canonical_answer(a) == canonical_answer(b)
}

/// Ordered reasoning steps attached to a task or probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub steps: Vec<String>,
}

impl ReasoningTrace {
    pub fn new(steps: Vec<String>) -> Result<Self, TaskModelError> {
        if steps.is_empty() {
            return Err(TaskModelError::Invariant("reasoning must have at least one step".into()));
        }
        if steps.iter().any(|s| s.trim().is_empty()) {
            return Err(TaskModelError::Invariant("reasoning steps must be non-empty".into()));
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps joined into one displayable paragraph.
    pub fn rendered(&self) -> String {
        self.steps.join(" ")
    }
}

/// One original question/answer/reasoning triple — the unit of distillation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    pub answer_key: String,
    pub answer_text: String,
    pub reasoning: ReasoningTrace,
    pub domain_tag: String,
}

impl Task {
    pub fn validate(&self) -> Result<(), TaskModelError> {
        if self.id.trim().is_empty() {
            return Err(TaskModelError::Invariant("task id must be non-empty".into()));
        }
        if self.answer_key.trim().is_empty() {
            return Err(TaskModelError::Invariant(format!(
                "task {:?} has an empty answer_key",
                self.id
            )));
        }
        if self.reasoning.is_empty() {
            return Err(TaskModelError::Invariant(format!(
                "task {:?} has no reasoning steps",
                self.id
            )));
        }
        Ok(())
    }
}

/// The ten explanatory-inversion rule identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EIRuleId {
    /// Why does the chosen operation yield the answer?
    R1,
    /// How does the operation lead to the result?
    R2,
    /// Walk through the solution step by step.
    R3,
    /// Counterfactual: what if a premise quantity changed?
    R4,
    /// Compare the two quantities in the problem.
    R5,
    /// Is there an alternative route to the same answer?
    R6,
    /// Transfer the same logic to another scenario.
    R7,
    /// Recover the starting quantity from the outcome (inverse reasoning).
    R8,
    /// Does the order of the operands matter?
    R9,
    /// Justify the choice of operation.
    R10,
}

impl EIRuleId {
    pub const ALL: [EIRuleId; 10] = [
        EIRuleId::R1,
        EIRuleId::R2,
        EIRuleId::R3,
        EIRuleId::R4,
        EIRuleId::R5,
        EIRuleId::R6,
        EIRuleId::R7,
        EIRuleId::R8,
        EIRuleId::R9,
        EIRuleId::R10,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EIRuleId::R1 => "R1",
            EIRuleId::R2 => "R2",
            EIRuleId::R3 => "R3",
            EIRuleId::R4 => "R4",
            EIRuleId::R5 => "R5",
            EIRuleId::R6 => "R6",
            EIRuleId::R7 => "R7",
            EIRuleId::R8 => "R8",
            EIRuleId::R9 => "R9",
            EIRuleId::R10 => "R10",
        }
    }

    pub fn parse(s: &str) -> Option<EIRuleId> {
        EIRuleId::ALL.iter().copied().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for EIRuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One explanatory probe: the augmented question, the teacher's reasoning and
/// answer for it, and the two curation flags (teacher consistency and
/// baseline-student correctness). Flags default to false until the filters run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedTuple {
    pub parent_task_id: String,
    pub rule: EIRuleId,
    pub q_aug: String,
    pub a_aug: String,
    pub r_aug: ReasoningTrace,
    pub passed_consistency: bool,
    pub student_correct: bool,
}

impl AugmentedTuple {
    pub fn new(
        parent_task_id: String,
        rule: EIRuleId,
        q_aug: String,
        a_aug: String,
        r_aug: ReasoningTrace,
    ) -> Self {
        Self {
            parent_task_id,
            rule,
            q_aug,
            a_aug,
            r_aug,
            passed_consistency: false,
            student_correct: false,
        }
    }
}

/// Snapshot of the curation configuration stored alongside a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tau_hard: u32,
    pub teacher: String,
    pub rules: Vec<String>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self { tau_hard: 1, teacher: "unspecified".into(), rules: Vec::new() }
    }
}

/// Tasks retained by curation together with their consistent probes.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedDataset {
    tasks: BTreeMap<String, Task>,
    probes: Vec<AugmentedTuple>,
    pub provenance: Provenance,
}

impl CuratedDataset {
    /// Validates referential integrity and the retained-task invariants.
    pub fn new(
        tasks: Vec<Task>,
        mut probes: Vec<AugmentedTuple>,
        provenance: Provenance,
    ) -> Result<Self, TaskModelError> {
        // Canonical order: grouped by parent task, original order within a
        // task. Makes equality stable across save/load.
        probes.sort_by(|a, b| a.parent_task_id.cmp(&b.parent_task_id));
        let mut map = BTreeMap::new();
        for task in tasks {
            task.validate()?;
            if map.insert(task.id.clone(), task.clone()).is_some() {
                return Err(TaskModelError::DuplicateId(task.id));
            }
        }
        for probe in &probes {
            if !map.contains_key(&probe.parent_task_id) {
                return Err(TaskModelError::DanglingParent(probe.parent_task_id.clone()));
            }
        }
        for id in map.keys() {
            let consistent = probes
                .iter()
                .filter(|p| &p.parent_task_id == id && p.passed_consistency)
                .count();
            if consistent == 0 {
                return Err(TaskModelError::Invariant(format!(
                    "retained task {id:?} has no consistent probes"
                )));
            }
        }
        Ok(Self { tasks: map, probes, provenance })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self { tasks: BTreeMap::new(), probes: Vec::new(), provenance }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn probes(&self) -> &[AugmentedTuple] {
        &self.probes
    }

    pub fn probes_for<'a>(
        &'a self,
        task_id: &'a str,
    ) -> impl Iterator<Item = &'a AugmentedTuple> + 'a {
        self.probes.iter().filter(move |p| p.parent_task_id == task_id)
    }
}

// ---------------------------------------------------------------------------
// Line-delimited JSON I/O
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TaskLine {
    #[serde(default)]
    id: Option<String>,
    question: String,
    answer_key: String,
    answer_text: String,
    #[serde(default)]
    reasoning: Vec<String>,
    #[serde(default)]
    domain_tag: String,
}

/// Loads tasks from a line-delimited JSON file, one object per line.
///
/// Ids come from the `id` field when present, otherwise from the (1-based)
/// line index. When no reasoning steps are recorded, a single step restating
/// the answer is synthesized so the trace invariant holds.
pub fn load_tasks<P: AsRef<Path>>(path: P) -> Result<Vec<Task>, TaskModelError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut tasks = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TaskLine = serde_json::from_str(&line).map_err(|e| TaskModelError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let id = parsed.id.unwrap_or_else(|| format!("task-{}", idx + 1));
        if !seen.insert(id.clone()) {
            return Err(TaskModelError::DuplicateId(id));
        }
        let steps = if parsed.reasoning.is_empty() {
            vec![format!("the answer is {}", parsed.answer_key)]
        } else {
            parsed.reasoning
        };
        let task = Task {
            id,
            question: parsed.question,
            answer_key: parsed.answer_key,
            answer_text: parsed.answer_text,
            reasoning: ReasoningTrace::new(steps)?,
            domain_tag: parsed.domain_tag,
        };
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// Writes tasks as line-delimited JSON suitable for [`load_tasks`].
pub fn save_tasks<P: AsRef<Path>>(tasks: &[Task], path: P) -> Result<(), TaskModelError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for task in tasks {
        let line = TaskLine {
            id: Some(task.id.clone()),
            question: task.question.clone(),
            answer_key: task.answer_key.clone(),
            answer_text: task.answer_text.clone(),
            reasoning: task.reasoning.steps.clone(),
            domain_tag: task.domain_tag.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| TaskModelError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ProbeLine {
    rule_id: String,
    question: String,
    answer: String,
    passed_consistency: bool,
    student_correct: bool,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    id: String,
    question: String,
    answer_key: String,
    answer_text: String,
    reasoning: Vec<String>,
    domain_tag: String,
    augmented_questions: Vec<ProbeLine>,
    augmented_solutions_teacher: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceLine {
    provenance: Provenance,
}

/// Saves a curated dataset: a provenance header line, then one line per
/// retained task carrying its probes and the teacher solutions in parallel.
pub fn save_dataset<P: AsRef<Path>>(
    dataset: &CuratedDataset,
    path: P,
) -> Result<(), TaskModelError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = ProvenanceLine { provenance: dataset.provenance.clone() };
    serde_json::to_writer(&mut out, &header)
        .map_err(|e| TaskModelError::Parse { line: 1, message: e.to_string() })?;
    out.write_all(b"\n")?;
    for task in dataset.tasks.values() {
        let probes: Vec<&AugmentedTuple> = dataset.probes_for(&task.id).collect();
        let line = DatasetLine {
            id: task.id.clone(),
            question: task.question.clone(),
            answer_key: task.answer_key.clone(),
            answer_text: task.answer_text.clone(),
            reasoning: task.reasoning.steps.clone(),
            domain_tag: task.domain_tag.clone(),
            augmented_questions: probes
                .iter()
                .map(|p| ProbeLine {
                    rule_id: p.rule.as_str().to_string(),
                    question: p.q_aug.clone(),
                    answer: p.a_aug.clone(),
                    passed_consistency: p.passed_consistency,
                    student_correct: p.student_correct,
                })
                .collect(),
            augmented_solutions_teacher: probes.iter().map(|p| p.r_aug.steps.clone()).collect(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| TaskModelError::Parse { line: 0, message: e.to_string() })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a dataset written by [`save_dataset`]; the round trip is lossless.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<CuratedDataset, TaskModelError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Ok(CuratedDataset::empty(Provenance::default())),
    };
    let provenance: ProvenanceLine = serde_json::from_str(&header)
        .map_err(|e| TaskModelError::Parse { line: 1, message: e.to_string() })?;
    let mut tasks = Vec::new();
    let mut probes = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| TaskModelError::Parse {
            line: idx + 2,
            message: e.to_string(),
        })?;
        if parsed.augmented_questions.len() != parsed.augmented_solutions_teacher.len() {
            return Err(TaskModelError::Parse {
                line: idx + 2,
                message: "augmented_questions and augmented_solutions_teacher differ in length"
                    .into(),
            });
        }
        for (p, steps) in parsed
            .augmented_questions
            .iter()
            .zip(&parsed.augmented_solutions_teacher)
        {
            let rule = EIRuleId::parse(&p.rule_id).ok_or_else(|| TaskModelError::Parse {
                line: idx + 2,
                message: format!("unknown rule id {:?}", p.rule_id),
            })?;
            probes.push(AugmentedTuple {
                parent_task_id: parsed.id.clone(),
                rule,
                q_aug: p.question.clone(),
                a_aug: p.answer.clone(),
                r_aug: ReasoningTrace::new(steps.clone())?,
                passed_consistency: p.passed_consistency,
                student_correct: p.student_correct,
            });
        }
        tasks.push(Task {
            id: parsed.id,
            question: parsed.question,
            answer_key: parsed.answer_key,
            answer_text: parsed.answer_text,
            reasoning: ReasoningTrace::new(parsed.reasoning)?,
            domain_tag: parsed.domain_tag,
        });
    }
    if tasks.is_empty() {
        return Ok(CuratedDataset::empty(provenance.provenance));
    }
    CuratedDataset::new(tasks, probes, provenance.provenance)
}
