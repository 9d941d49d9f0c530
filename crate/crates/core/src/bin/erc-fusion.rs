//! Command-line front end. Every subcommand is one pipeline stage over
//! files; `run` chains them all.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use erc_fusion::config::{BackendKind, MergeKind, OptimizerKind, SplitStrategy};
use erc_fusion::dataset::{load_dialogues, read_json, read_jsonl, write_dialogues, write_json, write_jsonl};
use erc_fusion::fusion::AdjustmentMatrix;
use erc_fusion::gateway::Gateway;
use erc_fusion::integrity::WindowOutcome;
use erc_fusion::metrics::{lda_eval, lda_fit, samples_from_dialogues};
use erc_fusion::pipeline::{self, Prediction, RunOptions};
use erc_fusion::prompter::{compute_dimension_stats, DimensionStats, PromptBundle};
use erc_fusion::splitter::WindowPlan;
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{EmotionSchema, Error, PipelineConfig, Result};

#[derive(Parser)]
#[command(name = "erc-fusion", version, about = "Fuse vanilla emotion predictions with LLM adjustments over sliding receptive fields")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides.
#[derive(Args, Default)]
struct Overrides {
    /// TOML config; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    t: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    split: Option<SplitStrategy>,
    #[arg(long, global = true)]
    core: Option<usize>,
    #[arg(long, global = true)]
    reuse_repeats: bool,
    /// Comma-separated class names, or `6way` / `4way`.
    #[arg(long, global = true)]
    classes: Option<String>,
    #[arg(long, global = true)]
    prob_sum_tolerance: Option<f64>,
    #[arg(long, global = true)]
    max_retries: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    merge: Option<MergeKind>,
    /// Naive add-up without the vanilla column.
    #[arg(long, global = true)]
    exclude_vanilla: bool,
    #[arg(long, global = true)]
    no_stats: bool,
    #[arg(long, global = true)]
    no_summary: bool,
    #[arg(long, global = true)]
    no_exemplars: bool,
    #[arg(long, global = true)]
    no_cot: bool,
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    max_concurrency: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    mock_perturbation: Option<f64>,
    #[arg(long, global = true)]
    mock_reliability: Option<f64>,
    #[arg(long, global = true)]
    mock_context_penalty: Option<f64>,
    #[arg(long, global = true)]
    mock_fail_attempts: Option<u32>,
    #[arg(long, global = true)]
    optimizer: Option<OptimizerKind>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    init_scale: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        set! {
            t => t,
            window => window,
            split => split,
            prob_sum_tolerance => prob_sum_tolerance,
            max_retries => max_retries,
            seed => seed,
            merge => merge,
            backend => llm.backend,
            model => llm.model,
            temperature => llm.temperature,
            max_concurrency => llm.max_concurrency,
            mock_perturbation => mock.perturbation,
            mock_reliability => mock.reliability,
            mock_context_penalty => mock.context_penalty,
            mock_fail_attempts => mock.fail_attempts,
            optimizer => train.optimizer,
            learning_rate => train.learning_rate,
            epochs => train.epochs,
            init_scale => train.init_scale,
            batch_size => train.batch_size,
        }
        if self.core.is_some() {
            cfg.core = self.core;
        }
        if self.cache_dir.is_some() {
            cfg.llm.cache_dir = self.cache_dir.clone();
        }
        if let Some(c) = &self.classes {
            cfg.schema = match c.as_str() {
                "6way" => EmotionSchema::iemocap_6way(),
                "4way" => EmotionSchema::iemocap_4way(),
                list => EmotionSchema::new(list.split(',').map(str::trim))?,
            };
        }
        cfg.reuse_repeats |= self.reuse_repeats;
        cfg.include_vanilla &= !self.exclude_vanilla;
        cfg.prompt.stats &= !self.no_stats;
        cfg.prompt.summary &= !self.no_summary;
        cfg.prompt.exemplars &= !self.no_exemplars;
        cfg.prompt.cot &= !self.no_cot;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// All stages end to end.
    Run {
        #[arg(long)]
        dialogues: PathBuf,
        /// Labeled held-out dialogues to train the merge on.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Pre-trained parameters instead of --fit.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Labeled dialogues for the header statistics (default: --fit).
        #[arg(long)]
        stats_from: Option<PathBuf>,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write plans, summaries, prompts, outcomes and matrices.
        #[arg(long)]
        persist: bool,
    },
    /// Window plans of every dialogue.
    Plan {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dialogue summaries and window prompts.
    Prompt {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        /// DimensionStats JSON from `stats`.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// LLM adjustments with integrity checks, assembled into matrices.
    Adjust {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the merge on labeled matrices.
    FuseTrain {
        #[arg(long)]
        matrices: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the training outcome.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply a parameters file to matrices.
    FuseApply {
        #[arg(long)]
        matrices: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Window outcomes, for the fallback rate.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LDA of dimension scores against gold classes.
    AnalyzeLda {
        #[arg(long)]
        dialogues: PathBuf,
        /// Evaluate on these instead of the fitting data.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class dimension statistics of a labeled file.
    Stats {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic fit/test dialogue files for offline runs.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 40)]
        dialogues: usize,
        #[arg(long, default_value_t = 0.65)]
        vanilla_accuracy: f64,
        #[arg(long, default_value_t = 0.5)]
        fit_fraction: f64,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn gateway_for(cfg: &PipelineConfig, dialogues: &[erc_fusion::Dialogue]) -> Result<Gateway> {
    Gateway::from_config(cfg, pipeline::oracle_labels(dialogues))
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    let schema = &cfg.schema;
    match cli.command {
        Command::Run {
            dialogues,
            fit,
            params,
            stats_from,
            exemplars,
            out,
            persist,
        } => {
            let result = pipeline::run(
                &cfg,
                &RunOptions {
                    dialogues,
                    fit,
                    params,
                    stats_from,
                    exemplars,
                    out_dir: out.clone(),
                    persist_intermediates: persist,
                },
            )?;
            let i = &result.report.integrity;
            println!(
                "{} predictions, {} windows, pass rate {:.2}%, {} fallbacks",
                result.predictions.len(),
                i.windows,
                100.0 * i.pass_rate,
                i.fallbacks
            );
            if let Some(e) = &result.report.eval {
                print!("{}", e.to_table());
            }
            println!("outputs in {}", out.display());
        }
        Command::Plan { dialogues, out } => {
            let d = load_dialogues(&dialogues, schema)?;
            let plans = pipeline::plan_all(&d, &cfg)?;
            write_jsonl(&out, &plans)?;
            println!("{} plans, {} windows", plans.len(), plans.iter().map(|p| p.windows.len()).sum::<usize>());
        }
        Command::Prompt {
            dialogues,
            plans,
            stats,
            exemplars,
            out_dir,
        } => {
            let d = load_dialogues(&dialogues, schema)?;
            let plans: Vec<WindowPlan> = read_jsonl(&plans)?;
            let stats: Option<DimensionStats> = match (&stats, cfg.prompt.stats) {
                (Some(p), true) => Some(read_json(p)?),
                _ => None,
            };
            let exemplars = pipeline::load_exemplars(exemplars.as_deref(), &cfg)?;
            let gateway = gateway_for(&cfg, &d)?;
            let summaries = pipeline::summarize(&gateway, &d, &cfg)?;
            let prompts = pipeline::build_prompts(&cfg, &d, &plans, &summaries, stats.as_ref(), &exemplars)?;
            create_dir(&out_dir)?;
            write_jsonl(&out_dir.join(pipeline::SUMMARIES_FILE), &summaries)?;
            write_jsonl(&out_dir.join(pipeline::PROMPTS_FILE), &prompts)?;
            println!("{} prompts", prompts.len());
        }
        Command::Adjust {
            dialogues,
            plans,
            prompts,
            out_dir,
        } => {
            let d = load_dialogues(&dialogues, schema)?;
            let plans: Vec<WindowPlan> = read_jsonl(&plans)?;
            let prompts: Vec<PromptBundle> = read_jsonl(&prompts)?;
            let gateway = gateway_for(&cfg, &d)?;
            let out = pipeline::adjust(&gateway, &cfg, &d, &plans, &prompts)?;
            create_dir(&out_dir)?;
            write_jsonl(&out_dir.join(pipeline::OUTCOMES_FILE), &out.outcomes)?;
            write_jsonl(&out_dir.join(pipeline::MATRICES_FILE), &out.matrices)?;
            let s = pipeline::integrity_stats(&out.outcomes);
            println!(
                "{} matrices, pass rate {:.2}%, {} fallbacks",
                out.matrices.len(),
                100.0 * s.pass_rate,
                s.fallbacks
            );
        }
        Command::FuseTrain { matrices, out, report } => {
            let m: Vec<AdjustmentMatrix> = read_jsonl(&matrices)?;
            let (model, outcome) = pipeline::fuse_train(&cfg, &m)?;
            write_json(&out, &model.to_file())?;
            if let Some(r) = report {
                write_json(&r, &outcome)?;
            }
            println!(
                "{:?}: {} parameters, best epoch {}, accuracy {:.4}",
                model.kind(),
                model.param_count(),
                outcome.best_epoch,
                outcome.best_accuracy
            );
        }
        Command::FuseApply { matrices, params, out } => {
            let m: Vec<AdjustmentMatrix> = read_jsonl(&matrices)?;
            let model = pipeline::load_params(&params)?;
            let preds = pipeline::fuse_apply(&model, &m, schema)?;
            write_jsonl(&out, &preds)?;
            println!("{} predictions", preds.len());
        }
        Command::Evaluate { predictions, outcomes, out } => {
            let preds: Vec<Prediction> = read_jsonl(&predictions)?;
            let fallback = match outcomes {
                Some(p) => pipeline::fallback_rate(&read_jsonl::<WindowOutcome>(&p)?),
                None => None,
            };
            let report = pipeline::evaluate_predictions(&preds, schema, fallback)?;
            if let Some(o) = out {
                write_json(&o, &report)?;
            }
            print!("{}", report.to_table());
        }
        Command::AnalyzeLda { dialogues, test, out } => {
            let fit = samples_from_dialogues(&load_dialogues(&dialogues, schema)?);
            let model = lda_fit(&fit, schema)?;
            let eval_on = match test {
                Some(p) => samples_from_dialogues(&load_dialogues(&p, schema)?),
                None => fit,
            };
            let report = lda_eval(&model, &eval_on, schema)?;
            if let Some(o) = out {
                write_json(&o, &report)?;
            }
            print!("{}", model.coefficient_table());
            println!();
            print!("{}", report.eval.to_table());
        }
        Command::Stats { dialogues, out } => {
            let stats = compute_dimension_stats(&load_dialogues(&dialogues, schema)?, schema)?;
            write_json(&out, &stats)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Synth {
            out_dir,
            dialogues,
            vanilla_accuracy,
            fit_fraction,
        } => {
            let all = synthetic::generate(
                &SyntheticSpec {
                    dialogues,
                    vanilla_accuracy,
                    seed: cfg.seed,
                    ..Default::default()
                },
                schema,
            );
            let (fit, test) = synthetic::split(all, fit_fraction);
            create_dir(&out_dir)?;
            write_dialogues(&out_dir.join("fit.jsonl"), &fit)?;
            write_dialogues(&out_dir.join("test.jsonl"), &test)?;
            info!("wrote synthetic dialogues to {}", out_dir.display());
            println!("{} fit and {} test dialogues", fit.len(), test.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
