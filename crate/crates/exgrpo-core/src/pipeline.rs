//! Three-stage orchestrator — curation, supervised warm-up, reinforcement —
//! plus the empirical policy-improvement check and the reward-dynamics run.
//!
//! Everything downstream of the seed is deterministic: task generation,
//! splits, curation, warm-up order, rollout RNG streams, and the update
//! itself, so two runs with the same `RunConfig` produce byte-identical
//! metrics and checkpoints.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{curate, save_audit, CurationConfig, CurationError};
use crate::dialogue::{rollout, sample_rules, DialogueError, Scenario};
use crate::ei_probe::{generate_probes, ScriptedTeacher, TeacherError};
use crate::metrics::{export_metrics, plot_emit, smooth, MetricsError, MetricsRow};
use crate::opt::{train_step, OptError, TaskGroup, UpdateConfig};
use crate::policy::{FeatureMap, PolicyError, PolicyParameters, TokenSequence, Vocabulary};
use crate::rewards::RewardConfig;
use crate::student::{canonical_response_for, StudentModel};
use crate::synth_env::{
    build_vocabulary, generate_tasks, holdout_split, is_inverse, SplitMode, SynthEnvError,
    SyntheticTaskSpec,
};
use crate::task_model::{save_tasks, EIRuleId, Task, TaskModelError};

/// Feature-window length shared by every stage; the canonical response
/// format is constructed so each next token is a function of this window.
pub const FEATURE_WINDOW: usize = 4;
/// Hash seed of the feature map; fixed so checkpoints are comparable across
/// runs that differ only in the run seed.
pub const FEATURE_SEED: u64 = 7;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Synth(#[from] SynthEnvError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    TaskModel(#[from] TaskModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_true() -> bool {
    true
}

/// Full run configuration; TOML-deserializable, every field defaulted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Feature-hash buckets of the policy.
    pub buckets: usize,
    pub synth: SyntheticTaskSpec,
    /// Fraction of task groups held out for evaluation.
    pub holdout_fraction: f64,
    /// Hold out inverse tasks specifically (their forward partners stay in
    /// training) instead of whole groups.
    pub reversal_split: bool,
    #[serde(default = "default_true")]
    pub run_curation: bool,
    #[serde(default = "default_true")]
    pub run_sft: bool,
    #[serde(default = "default_true")]
    pub run_rl: bool,
    pub curation: CurationConfig,
    pub reward: RewardConfig,
    pub update: UpdateConfig,
    /// Probe turns in a full dialogue.
    pub k: usize,
    /// Probe turns in a partial dialogue.
    pub k_prime: usize,
    /// Warm-up passes over the curated pairs.
    pub sft_epochs: usize,
    pub sft_lr: f64,
    /// Passes of base-model pretraining on forward questions only; this is
    /// what installs the forward/inverse asymmetry the curation stage keys on.
    pub bootstrap_epochs: usize,
    pub bootstrap_lr: f64,
    pub rl_steps: usize,
    /// Tasks per reinforcement step.
    pub batch_tasks: usize,
    /// Scripted-teacher error rate.
    pub teacher_p_err: f64,
    /// Moving-average window for emitted plots.
    pub plot_window: usize,
    /// When set, tasks, audit, metrics, plots, and checkpoints are written here.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            buckets: 32768,
            synth: SyntheticTaskSpec { include_inverse: true, ..Default::default() },
            holdout_fraction: 0.25,
            reversal_split: false,
            run_curation: true,
            run_sft: true,
            run_rl: true,
            curation: CurationConfig::default(),
            reward: RewardConfig::default(),
            update: UpdateConfig::default(),
            k: 5,
            k_prime: 2,
            sft_epochs: 3,
            sft_lr: 0.5,
            bootstrap_epochs: 6,
            bootstrap_lr: 0.5,
            rl_steps: 30,
            batch_tasks: 4,
            teacher_p_err: 0.0,
            plot_window: 5,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.synth.validate()?;
        if !(self.k_prime >= 1 && self.k_prime < self.k && self.k <= EIRuleId::ALL.len()) {
            return Err(PipelineError::InvalidConfig(format!(
                "need 1 <= k' < k <= {}, got k={} k'={}",
                EIRuleId::ALL.len(),
                self.k,
                self.k_prime
            )));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(PipelineError::InvalidConfig("holdout_fraction must be in (0,1)".into()));
        }
        if self.buckets == 0 || self.batch_tasks == 0 || self.plot_window == 0 {
            return Err(PipelineError::InvalidConfig(
                "buckets, batch_tasks, and plot_window must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.teacher_p_err) {
            return Err(PipelineError::InvalidConfig("teacher_p_err must be in [0,1]".into()));
        }
        self.reward.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Outcome of one full run. When a stage fails, `failed_stage` names it,
/// `diagnostics` carries the error, and later stages are skipped.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub failed_stage: Option<String>,
    pub diagnostics: Option<String>,
    pub n_tasks: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_curated_tasks: usize,
    pub n_sft_pairs: usize,
    pub rl_steps_run: usize,
    /// Held-out single-pass accuracy of the post-warm-up policy.
    pub heldout_before_rl: f64,
    /// Held-out single-pass accuracy of the final policy.
    pub heldout_after_rl: f64,
    /// Accuracy on held-out inverse tasks, post-warm-up / final.
    pub inverse_before_rl: Option<f64>,
    pub inverse_after_rl: Option<f64>,
    /// Whether the bonus margin condition fired at any step.
    pub bonus_fired: bool,
    pub metrics: Vec<MetricsRow>,
}

/// Single-pass greedy evaluation: exactly one generation per task, no probe
/// turns.
pub fn eval_accuracy(student: &StudentModel, tasks: &[Task]) -> Result<f64, PolicyError> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for task in tasks {
        let answer = student.greedy_answer(&task.question)?;
        if crate::task_model::answers_match(&answer, &task.answer_key) {
            correct += 1;
        }
    }
    Ok(correct as f64 / tasks.len() as f64)
}

fn eval_inverse(student: &StudentModel, tasks: &[Task]) -> Result<Option<f64>, PolicyError> {
    let inverse: Vec<Task> = tasks.iter().filter(|t| is_inverse(t)).cloned().collect();
    if inverse.is_empty() {
        return Ok(None);
    }
    eval_accuracy(student, &inverse).map(Some)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut h = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h
}

/// One SGD pass over (context, target) pairs, one pair per step.
fn sft_pass(
    params: &mut PolicyParameters,
    pairs: &[(TokenSequence, TokenSequence)],
    lr: f64,
) -> Result<(), PolicyError> {
    for pair in pairs {
        let (_, grad) = params.sft_loss_and_grad(std::slice::from_ref(pair))?;
        params.apply_gradient(-lr, &grad);
    }
    Ok(())
}

fn encoded_pair(
    vocab: &Vocabulary,
    question: &str,
) -> Result<Option<(TokenSequence, TokenSequence)>, PolicyError> {
    match canonical_response_for(question) {
        Some(response) => Ok(Some((vocab.encode(question)?, vocab.encode(&response)?))),
        None => Ok(None),
    }
}

/// Everything produced before the reinforcement stage, so matched ablations
/// can branch off the identical post-warm-up checkpoint.
pub struct PreparedRun {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub train: Vec<Task>,
    pub test: Vec<Task>,
    /// Post-warm-up parameters; the reference policy for the KL anchor.
    pub params_sft: PolicyParameters,
    pub n_curated_tasks: usize,
    pub n_sft_pairs: usize,
}

/// Runs generation, base pretraining, curation, and warm-up.
pub fn prepare_run(config: &RunConfig) -> Result<PreparedRun, PipelineError> {
    config.validate()?;
    let vocab = build_vocabulary();
    let mut synth = config.synth.clone();
    synth.seed = mix_seed(config.seed, 1);
    let tasks = generate_tasks(&synth)?;
    let mode = if config.reversal_split { SplitMode::Reversal } else { SplitMode::InDistribution };
    let (train, test) =
        holdout_split(&tasks, config.holdout_fraction, mix_seed(config.seed, 2), mode)?;

    // Base model: pretrained on forward questions only, mimicking a corpus
    // where relations appear in one direction.
    let feature = FeatureMap::new(config.buckets, FEATURE_WINDOW, FEATURE_SEED);
    let mut params = PolicyParameters::zeros(feature, vocab.len());
    let mut forward_pairs = Vec::new();
    for task in train.iter().filter(|t| !is_inverse(t)) {
        if let Some(pair) = encoded_pair(&vocab, &task.question)? {
            forward_pairs.push(pair);
        }
    }
    for _ in 0..config.bootstrap_epochs {
        sft_pass(&mut params, &forward_pairs, config.bootstrap_lr)?;
    }

    // Curation: probe every training task, filter on teacher consistency and
    // base-model difficulty.
    let mut teacher = ScriptedTeacher::new(mix_seed(config.seed, 3), config.teacher_p_err);
    let mut sft_pairs: Vec<(TokenSequence, TokenSequence)> = Vec::new();
    let n_curated_tasks;
    if config.run_curation {
        let base_student = StudentModel::new(params.clone(), vocab.clone());
        let outcome =
            curate(&train, &config.curation, &EIRuleId::ALL, &base_student, &mut teacher)?;
        n_curated_tasks = outcome.dataset.n_tasks();
        for task in outcome.dataset.tasks() {
            if let Some(pair) = encoded_pair(&vocab, &task.question)? {
                sft_pairs.push(pair);
            }
        }
        for probe in outcome.dataset.probes().iter().filter(|p| p.passed_consistency) {
            if let Some(pair) = encoded_pair(&vocab, &probe.q_aug)? {
                sft_pairs.push(pair);
            }
        }
        if let Some(dir) = &config.out_dir {
            std::fs::create_dir_all(dir)?;
            save_tasks(&tasks, dir.join("tasks.jsonl"))?;
            save_audit(&outcome.audit, dir.join("audit.jsonl"))?;
            crate::task_model::save_dataset(&outcome.dataset, dir.join("dataset.jsonl"))?;
        }
    } else {
        // Unfiltered augmentation: every probe of every task.
        n_curated_tasks = train.len();
        for task in &train {
            if let Some(pair) = encoded_pair(&vocab, &task.question)? {
                sft_pairs.push(pair);
            }
            let batch = generate_probes(task, &EIRuleId::ALL, &mut teacher)?;
            for probe in &batch.probes {
                if let Some(pair) = encoded_pair(&vocab, &probe.q_aug)? {
                    sft_pairs.push(pair);
                }
            }
        }
    }

    if config.run_sft {
        for _ in 0..config.sft_epochs {
            sft_pass(&mut params, &sft_pairs, config.sft_lr)?;
        }
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        params.write_checkpoint(dir.join("policy_ref.bin"))?;
        std::fs::write(dir.join("vocab.json"), vocab.to_json())?;
    }
    Ok(PreparedRun {
        config: config.clone(),
        vocab,
        train,
        test,
        params_sft: params,
        n_curated_tasks,
        n_sft_pairs: sft_pairs.len(),
    })
}

/// Output of the reinforcement stage.
pub struct RlOutcome {
    pub params: PolicyParameters,
    pub metrics: Vec<MetricsRow>,
    pub bonus_fired: bool,
}

/// Runs the reinforcement stage from a post-warm-up checkpoint. The warm-up
/// parameters double as the frozen reference policy; only the returned copy
/// is updated.
pub fn run_rl_stage(
    prepared: &PreparedRun,
    reward: &RewardConfig,
) -> Result<RlOutcome, PipelineError> {
    let config = &prepared.config;
    let params_ref = prepared.params_sft.snapshot();
    let mut params = prepared.params_sft.snapshot();
    let mut teacher = ScriptedTeacher::new(mix_seed(config.seed, 4), config.teacher_p_err);
    let mut metrics = Vec::with_capacity(config.rl_steps);
    let mut bonus_fired = false;

    // Deterministic task schedule: one seeded shuffle, then cyclic batches.
    let mut order: Vec<usize> = (0..prepared.train.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 5));
        order.shuffle(&mut rng);
    }

    for step in 0..config.rl_steps {
        let params_old = params.snapshot();
        let student = StudentModel::new(params_old.snapshot(), prepared.vocab.clone());
        let mut batch = Vec::with_capacity(config.batch_tasks);
        for i in 0..config.batch_tasks {
            let idx = order[(step * config.batch_tasks + i) % order.len()];
            let task = &prepared.train[idx];
            let mut plan_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 6 + step as u64 * 31 + i as u64));
            let plan = sample_rules(
                &task.id,
                EIRuleId::ALL.len(),
                config.k,
                config.k_prime,
                &mut plan_rng,
            )?;
            let run_seed = mix_seed(config.seed, 1000 + step as u64);
            let full = rollout(
                task,
                &plan,
                Scenario::Full,
                &student,
                &mut teacher,
                run_seed,
                config.update.group_size,
            )?;
            let partial = rollout(
                task,
                &plan,
                Scenario::Partial,
                &student,
                &mut teacher,
                run_seed,
                config.update.group_size,
            )?;
            batch.push(TaskGroup { task: task.clone(), full, partial });
        }
        let report =
            train_step(&batch, &mut params, &params_old, &params_ref, reward, &config.update)?;
        bonus_fired |= report.dsu_rate > 0.0;
        metrics.push(MetricsRow {
            stage: "rl".into(),
            step: step as u64,
            mean_r_base: report.mean_r_base,
            mean_r_total: report.mean_r_total,
            dsu_rate: report.dsu_rate,
            kl: report.kl,
            grad_norm: report.grad_norm,
            wall_ms: 0,
        });
    }
    Ok(RlOutcome { params, metrics, bonus_fired })
}

/// Full three-stage run. Stage failures are folded into the summary rather
/// than returned, so callers always get the counts accumulated so far.
pub fn run_pipeline(config: &RunConfig) -> RunSummary {
    let mut summary = RunSummary::default();
    if !config.run_curation && !config.run_sft && !config.run_rl {
        return summary;
    }
    if let Err(e) = config.validate() {
        summary.failed_stage = Some("config".into());
        summary.diagnostics = Some(e.to_string());
        return summary;
    }
    let prepared = match prepare_run(config) {
        Ok(p) => p,
        Err(e) => {
            summary.failed_stage = Some("prepare".into());
            summary.diagnostics = Some(e.to_string());
            return summary;
        }
    };
    summary.n_tasks = prepared.train.len() + prepared.test.len();
    summary.n_train = prepared.train.len();
    summary.n_test = prepared.test.len();
    summary.n_curated_tasks = prepared.n_curated_tasks;
    summary.n_sft_pairs = prepared.n_sft_pairs;

    let student_sft = StudentModel::new(prepared.params_sft.snapshot(), prepared.vocab.clone());
    match (eval_accuracy(&student_sft, &prepared.test), eval_inverse(&student_sft, &prepared.test))
    {
        (Ok(acc), Ok(inv)) => {
            summary.heldout_before_rl = acc;
            summary.heldout_after_rl = acc;
            summary.inverse_before_rl = inv;
            summary.inverse_after_rl = inv;
        }
        (Err(e), _) | (_, Err(e)) => {
            summary.failed_stage = Some("eval".into());
            summary.diagnostics = Some(e.to_string());
            return summary;
        }
    }

    if config.run_rl {
        let outcome = match run_rl_stage(&prepared, &config.reward) {
            Ok(o) => o,
            Err(e) => {
                summary.failed_stage = Some("rl".into());
                summary.diagnostics = Some(e.to_string());
                return summary;
            }
        };
        summary.rl_steps_run = outcome.metrics.len();
        summary.bonus_fired = outcome.bonus_fired;
        if let Some(dir) = &config.out_dir {
            if let Err(e) = write_artifacts(dir, &outcome, config.plot_window) {
                summary.failed_stage = Some("report".into());
                summary.diagnostics = Some(e.to_string());
            }
        }
        let student_rl = StudentModel::new(outcome.params.snapshot(), prepared.vocab.clone());
        match (eval_accuracy(&student_rl, &prepared.test), eval_inverse(&student_rl, &prepared.test))
        {
            (Ok(acc), Ok(inv)) => {
                summary.heldout_after_rl = acc;
                summary.inverse_after_rl = inv;
            }
            (Err(e), _) | (_, Err(e)) => {
                summary.failed_stage = Some("eval".into());
                summary.diagnostics = Some(e.to_string());
                return summary;
            }
        }
        summary.metrics = outcome.metrics;
    }
    summary
}

fn write_artifacts(
    dir: &std::path::Path,
    outcome: &RlOutcome,
    plot_window: usize,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    outcome.params.write_checkpoint(dir.join("policy_final.bin"))?;
    export_metrics(&outcome.metrics, &dir.join("metrics.csv"))?;
    if !outcome.metrics.is_empty() {
        plot_emit(
            &outcome.metrics,
            |r| r.mean_r_base,
            "mean base reward",
            plot_window,
            &dir.join("r_base.svg"),
        )?;
        plot_emit(
            &outcome.metrics,
            |r| r.dsu_rate,
            "bonus fire rate",
            plot_window,
            &dir.join("dsu_rate.svg"),
        )?;
    }
    Ok(())
}

/// One ablation arm of the policy-improvement check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaOutcome {
    pub delta: f64,
    pub heldout_after: f64,
    pub bonus_fired: bool,
}

/// Per-seed row of the policy-improvement check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub heldout_before: f64,
    pub outcomes: Vec<DeltaOutcome>,
}

/// Paired comparison of one positive bonus against the zero-bonus arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedComparison {
    pub delta: f64,
    /// Seeds in which this arm's bonus condition fired at least once.
    pub fired_seeds: usize,
    /// Fired seeds whose final reward is >= the zero-bonus arm's.
    pub wins: usize,
}

/// Aggregate report of the empirical policy-improvement check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremReport {
    pub rows: Vec<SeedRow>,
    /// Fraction of (seed, delta) arms with heldout_after >= heldout_before.
    pub nondecreasing_fraction: f64,
    pub paired: Vec<PairedComparison>,
}

/// Matched ablation over bonus sizes: for each seed, one shared preparation
/// (generation through warm-up), then one reinforcement arm per delta from
/// the identical checkpoint. `delta_values` must include 0 so positive arms
/// have a baseline.
pub fn run_theorem_check(
    config: &RunConfig,
    n_seeds: usize,
    delta_values: &[f64],
) -> Result<TheoremReport, PipelineError> {
    if n_seeds == 0 {
        return Err(PipelineError::InvalidConfig("n_seeds must be positive".into()));
    }
    if !delta_values.contains(&0.0) {
        return Err(PipelineError::InvalidConfig("delta_values must include 0".into()));
    }
    let mut rows = Vec::with_capacity(n_seeds);
    let mut nondecreasing = 0usize;
    let mut arms = 0usize;
    for s in 0..n_seeds {
        let mut seed_config = config.clone();
        seed_config.seed = config.seed.wrapping_add(s as u64);
        seed_config.out_dir = None;
        let prepared = prepare_run(&seed_config)?;
        let student = StudentModel::new(prepared.params_sft.snapshot(), prepared.vocab.clone());
        let heldout_before = eval_accuracy(&student, &prepared.test)?;
        let mut outcomes = Vec::with_capacity(delta_values.len());
        for &delta in delta_values {
            let reward = RewardConfig { delta, ..seed_config.reward.clone() };
            let rl = run_rl_stage(&prepared, &reward)?;
            let student = StudentModel::new(rl.params.snapshot(), prepared.vocab.clone());
            let heldout_after = eval_accuracy(&student, &prepared.test)?;
            if heldout_after >= heldout_before {
                nondecreasing += 1;
            }
            arms += 1;
            outcomes.push(DeltaOutcome { delta, heldout_after, bonus_fired: rl.bonus_fired });
        }
        rows.push(SeedRow { seed: seed_config.seed, heldout_before, outcomes });
    }
    let mut paired = Vec::new();
    for &delta in delta_values.iter().filter(|d| **d > 0.0) {
        let mut fired_seeds = 0usize;
        let mut wins = 0usize;
        for row in &rows {
            let zero = row.outcomes.iter().find(|o| o.delta == 0.0).expect("zero arm present");
            let arm = row.outcomes.iter().find(|o| o.delta == delta).expect("arm present");
            if arm.bonus_fired {
                fired_seeds += 1;
                if arm.heldout_after >= zero.heldout_after {
                    wins += 1;
                }
            }
        }
        paired.push(PairedComparison { delta, fired_seeds, wins });
    }
    Ok(TheoremReport {
        rows,
        nondecreasing_fraction: nondecreasing as f64 / arms as f64,
        paired,
    })
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "series lengths differ");
    assert!(xs.len() >= 2, "need at least two points");
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in rank input"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // average rank over the tie block, 1-based
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Smoothed base-reward series of a metrics log, for trend checks and plots.
pub fn smoothed_r_base(metrics: &[MetricsRow], window: usize) -> Vec<f64> {
    let raw: Vec<f64> = metrics.iter().map(|r| r.mean_r_base).collect();
    smooth(&raw, window)
}
