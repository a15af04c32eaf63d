//! Stage-by-stage command-line front end for the training pipeline.
//!
//! Each subcommand runs one stage against a shared TOML config, with flag
//! overrides for the handful of knobs that get swept in practice. Exit
//! codes: 0 success, 2 bad config/arguments, 3 stage failure, 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use exgrpo_core::curation::save_audit;
use exgrpo_core::ei_probe::{generate_probes, HttpTeacher, HttpTeacherConfig, TeacherOracle};
use exgrpo_core::metrics::{load_metrics, plot_emit};
use exgrpo_core::pipeline::{
    eval_accuracy, prepare_run, run_pipeline, run_theorem_check, smoothed_r_base, spearman,
    RunConfig,
};
use exgrpo_core::policy::PolicyParameters;
use exgrpo_core::synth_env::{build_vocabulary, generate_tasks, is_inverse};
use exgrpo_core::task_model::{load_tasks, save_tasks, EIRuleId};
use exgrpo_core::{curate, ScriptedTeacher, StudentModel};

#[derive(Parser)]
#[command(name = "exgrpo", about = "Explanatory-inversion reinforcement distillation pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for tasks, checkpoints, metrics, and plots.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = TeacherKind::Scripted)]
    teacher: TeacherKind,
    /// Chat-completions endpoint for the HTTP teacher.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Probe turns in a full dialogue.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Probe turns in a partial dialogue.
    #[arg(long, global = true)]
    k_prime: Option<usize>,
    /// Dialogue-structure bonus size.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Bonus margin multiplier.
    #[arg(long, global = true)]
    nu: Option<f64>,
    /// Rejective-filter difficulty floor.
    #[arg(long, global = true)]
    tau_hard: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeacherKind {
    Scripted,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task set.
    Gen,
    /// Generate explanatory probes for every task, unfiltered.
    Augment,
    /// Run probe generation plus both curation filters; write audit and dataset.
    Curate,
    /// Run everything up to and including the supervised warm-up.
    Sft,
    /// Full three-stage run ending in reinforcement.
    Rl,
    /// Evaluate a saved checkpoint on the held-out split, single-pass.
    Eval {
        /// Checkpoint to evaluate; defaults to <out-dir>/policy_final.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Matched bonus-ablation study across seeds.
    Theorem {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Re-plot and summarize an existing metrics log.
    Report,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            RunConfig::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = Some(dir.clone());
    }
    if let Some(k) = cli.k {
        config.k = k;
    }
    if let Some(k_prime) = cli.k_prime {
        config.k_prime = k_prime;
    }
    if let Some(delta) = cli.delta {
        config.reward.delta = delta;
    }
    if let Some(nu) = cli.nu {
        config.reward.nu = nu;
    }
    if let Some(tau) = cli.tau_hard {
        config.curation.tau_hard = tau;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, String> {
    let dir = config.out_dir.clone().ok_or("--out-dir (or out_dir in the config) is required")?;
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    Ok(dir)
}

fn make_teacher(cli: &Cli, config: &RunConfig) -> Result<Box<dyn TeacherOracle>, String> {
    match cli.teacher {
        TeacherKind::Scripted => {
            Ok(Box::new(ScriptedTeacher::new(config.seed, config.teacher_p_err)))
        }
        TeacherKind::Http => {
            let endpoint =
                cli.endpoint.clone().ok_or("--endpoint is required with --teacher http")?;
            let teacher_config = HttpTeacherConfig::new(&endpoint, "teacher");
            Ok(Box::new(HttpTeacher::new(teacher_config)))
        }
    }
}

fn synth_tasks(config: &RunConfig) -> Result<Vec<exgrpo_core::Task>, String> {
    generate_tasks(&config.synth).map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> Result<(), (u8, String)> {
    let config = effective_config(cli).map_err(|e| (2, e))?;
    match &cli.command {
        Command::Gen => {
            let dir = out_dir(&config).map_err(|e| (2, e))?;
            let tasks = synth_tasks(&config).map_err(|e| (3, e))?;
            let path = dir.join("tasks.jsonl");
            save_tasks(&tasks, &path).map_err(|e| (4, e.to_string()))?;
            println!("wrote {} tasks to {}", tasks.len(), path.display());
        }
        Command::Augment => {
            let dir = out_dir(&config).map_err(|e| (2, e))?;
            let tasks_path = dir.join("tasks.jsonl");
            let tasks = if tasks_path.exists() {
                load_tasks(&tasks_path).map_err(|e| (4, e.to_string()))?
            } else {
                synth_tasks(&config).map_err(|e| (3, e))?
            };
            let mut teacher = make_teacher(cli, &config).map_err(|e| (2, e))?;
            let mut n_probes = 0usize;
            let path = dir.join("probes.jsonl");
            let mut out = String::new();
            for task in &tasks {
                let batch = generate_probes(task, &EIRuleId::ALL, teacher.as_mut())
                    .map_err(|e| (3, e.to_string()))?;
                for probe in &batch.probes {
                    out.push_str(&serde_json::to_string(probe).expect("probe serializes"));
                    out.push('\n');
                    n_probes += 1;
                }
            }
            std::fs::write(&path, out).map_err(|e| (4, e.to_string()))?;
            println!("wrote {n_probes} probes for {} tasks to {}", tasks.len(), path.display());
        }
        Command::Curate => {
            let dir = out_dir(&config).map_err(|e| (2, e))?;
            let prepared = prepare_for_curation(&config).map_err(|e| (3, e))?;
            let mut teacher = make_teacher(cli, &config).map_err(|e| (2, e))?;
            let outcome = curate(
                &prepared.tasks,
                &config.curation,
                &EIRuleId::ALL,
                &prepared.student,
                teacher.as_mut(),
            )
            .map_err(|e| (3, e.to_string()))?;
            save_audit(&outcome.audit, dir.join("audit.jsonl")).map_err(|e| (4, e.to_string()))?;
            exgrpo_core::save_dataset(&outcome.dataset, dir.join("dataset.jsonl"))
                .map_err(|e| (4, e.to_string()))?;
            println!(
                "kept {} of {} tasks; audit and dataset written to {}",
                outcome.dataset.n_tasks(),
                prepared.tasks.len(),
                dir.display()
            );
        }
        Command::Sft => {
            let mut config = config.clone();
            config.run_rl = false;
            config.out_dir = Some(out_dir(&config).map_err(|e| (2, e))?);
            let summary = run_pipeline(&config);
            if let Some(stage) = &summary.failed_stage {
                return Err((3, format!("{stage}: {}", summary.diagnostics.unwrap_or_default())));
            }
            println!(
                "warm-up done: {} curated tasks, {} pairs, held-out accuracy {:.4}",
                summary.n_curated_tasks, summary.n_sft_pairs, summary.heldout_before_rl
            );
        }
        Command::Rl => {
            let mut config = config.clone();
            config.out_dir = Some(out_dir(&config).map_err(|e| (2, e))?);
            let summary = run_pipeline(&config);
            if let Some(stage) = &summary.failed_stage {
                return Err((3, format!("{stage}: {}", summary.diagnostics.unwrap_or_default())));
            }
            println!(
                "run complete: held-out accuracy {:.4} -> {:.4} over {} steps (bonus fired: {})",
                summary.heldout_before_rl,
                summary.heldout_after_rl,
                summary.rl_steps_run,
                summary.bonus_fired
            );
        }
        Command::Eval { checkpoint } => {
            let dir = out_dir(&config).map_err(|e| (2, e))?;
            let path = checkpoint.clone().unwrap_or_else(|| dir.join("policy_final.bin"));
            let params = PolicyParameters::read_checkpoint(&path).map_err(|e| (4, e.to_string()))?;
            let prepared = prepare_run(&config).map_err(|e| (3, e.to_string()))?;
            let student = StudentModel::new(params, build_vocabulary());
            let accuracy = eval_accuracy(&student, &prepared.test).map_err(|e| (3, e.to_string()))?;
            let inverse: Vec<_> = prepared.test.iter().filter(|t| is_inverse(t)).cloned().collect();
            print!("held-out accuracy {accuracy:.4} over {} tasks", prepared.test.len());
            if !inverse.is_empty() {
                let inv = eval_accuracy(&student, &inverse).map_err(|e| (3, e.to_string()))?;
                print!("; inverse-task accuracy {inv:.4} over {}", inverse.len());
            }
            println!();
        }
        Command::Theorem { seeds } => {
            let report = run_theorem_check(&config, *seeds, &[0.0, config.reward.delta])
                .map_err(|e| (3, e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if let Some(dir) = &config.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| (4, e.to_string()))?;
                let path = dir.join("theorem.json");
                std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
                    .map_err(|e| (4, e.to_string()))?;
            }
        }
        Command::Report => {
            let dir = out_dir(&config).map_err(|e| (2, e))?;
            let rows = load_metrics(&dir.join("metrics.csv")).map_err(|e| (4, e.to_string()))?;
            if rows.is_empty() {
                return Err((3, "metrics.csv has no rows".into()));
            }
            plot_emit(&rows, |r| r.mean_r_base, "mean base reward", config.plot_window, &dir.join("r_base.svg"))
                .map_err(|e| (4, e.to_string()))?;
            plot_emit(&rows, |r| r.dsu_rate, "bonus fire rate", config.plot_window, &dir.join("dsu_rate.svg"))
                .map_err(|e| (4, e.to_string()))?;
            let smoothed = smoothed_r_base(&rows, config.plot_window);
            let steps: Vec<f64> = (0..smoothed.len()).map(|i| i as f64).collect();
            let rho = if smoothed.len() >= 2 { spearman(&steps, &smoothed) } else { 0.0 };
            println!(
                "{} steps; final smoothed base reward {:.4}; trend correlation {rho:.4}",
                rows.len(),
                smoothed.last().copied().unwrap_or(0.0)
            );
        }
    }
    Ok(())
}

struct CurationInput {
    tasks: Vec<exgrpo_core::Task>,
    student: StudentModel,
}

/// Rebuilds the base (forward-pretrained) student so curation difficulty is
/// measured against the same policy the pipeline would use.
fn prepare_for_curation(config: &RunConfig) -> Result<CurationInput, String> {
    let prepared = prepare_run(&RunConfig {
        run_curation: false,
        run_sft: false,
        run_rl: false,
        sft_epochs: 0,
        out_dir: None,
        ..config.clone()
    })
    .map_err(|e| e.to_string())?;
    let student = StudentModel::new(prepared.params_sft, prepared.vocab);
    Ok(CurationInput { tasks: prepared.train, student })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
