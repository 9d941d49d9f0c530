//! Stage functions and the end-to-end run.
//!
//! Every stage reads and writes plain values so it can run on its own over
//! persisted intermediates; [`run`] chains them and writes a
//! [`RunManifest`] next to the outputs, also when a stage fails.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BackendKind, MergeKind, PipelineConfig, SplitStrategy};
use crate::dataset::{load_dialogues, read_json, write_json, write_jsonl};
use crate::error::{Error, Result};
use crate::fusion::{self, argmax, AdjustmentMatrix, FusionModel, ParamsFile, TrainOutcome};
use crate::gateway::{Gateway, OracleLabels, RequestSalt};
use crate::integrity::{adjust_with_retry, AttemptRecord, WindowOutcome};
use crate::metrics::{evaluate, EvalReport};
use crate::prompter::{
    build_summary_request, build_window_prompt, compute_dimension_stats, DimensionStats, ExemplarSet,
    PromptBundle, PromptContext, TEMPLATE_VERSION,
};
use crate::schema::{sample_key, Dialogue, EmotionSchema};
use crate::splitter::{self, WindowPlan};

pub const PLANS_FILE: &str = "plans.jsonl";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const MATRICES_FILE: &str = "matrices.jsonl";
pub const PARAMS_FILE: &str = "params.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Subdirectory holding the intermediates of the fusion training set.
pub const FIT_DIR: &str = "fit";
/// Cache directory used when the config names none.
pub const DEFAULT_CACHE_DIR: &str = "llm-cache";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub dialogue_id: String,
    pub summary: String,
    /// False when the request failed and an empty summary was used.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub dialogue_id: String,
    pub utterance_id: String,
    pub predicted: usize,
    pub label: String,
    /// Softmax of the merged scores.
    pub probs: Vec<f64>,
    #[serde(default)]
    pub gold: Option<usize>,
    /// Argmax of each adjustment column, vanilla last.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegrityStats {
    pub windows: usize,
    /// Windows sent to the backend; the rest reused a repeat's answer.
    pub queried: usize,
    pub attempts: usize,
    pub first_attempt_passes: usize,
    pub retried_passes: usize,
    pub fallbacks: usize,
    /// Fraction of queried windows that ended with an accepted response.
    pub pass_rate: f64,
    /// Failed attempts per violated rule.
    pub rule_failures: BTreeMap<String, usize>,
}

pub fn integrity_stats(outcomes: &[WindowOutcome]) -> IntegrityStats {
    let mut s = IntegrityStats {
        windows: outcomes.len(),
        ..Default::default()
    };
    for o in outcomes.iter().filter(|o| !o.attempts.is_empty()) {
        s.queried += 1;
        s.attempts += o.attempts.len();
        if o.fallback {
            s.fallbacks += 1;
        } else if o.attempts.len() == 1 {
            s.first_attempt_passes += 1;
        } else {
            s.retried_passes += 1;
        }
        for a in &o.attempts {
            for rule in a.verdict.failed_rules() {
                *s.rule_failures.entry(format!("{rule:?}")).or_default() += 1;
            }
        }
    }
    s.pass_rate = if s.queried == 0 {
        1.0
    } else {
        (s.queried - s.fallbacks) as f64 / s.queried as f64
    };
    s
}

/// Fraction of windows whose adjustments are vanilla substitutes.
pub fn fallback_rate(outcomes: &[WindowOutcome]) -> Option<f64> {
    if outcomes.is_empty() {
        return None;
    }
    Some(outcomes.iter().filter(|o| o.fallback).count() as f64 / outcomes.len() as f64)
}

/// Gold labels of every labeled utterance, keyed by sample key. The mock
/// backend sharpens toward these.
pub fn oracle_labels<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> OracleLabels {
    let mut map = HashMap::new();
    for d in dialogues {
        for u in &d.utterances {
            if let Some(g) = u.gold_label {
                map.insert(sample_key(&d.dialogue_id, &u.utterance_id), g);
            }
        }
    }
    Arc::new(map)
}

fn worker_pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.llm.max_concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

pub fn plan_all(dialogues: &[Dialogue], cfg: &PipelineConfig) -> Result<Vec<WindowPlan>> {
    dialogues.iter().map(|d| splitter::plan(d, cfg)).collect()
}

/// One summary request per dialogue. A failed request degrades to an empty
/// summary, except a replay miss, which aborts.
pub fn summarize(gateway: &Gateway, dialogues: &[Dialogue], cfg: &PipelineConfig) -> Result<Vec<SummaryRecord>> {
    if !cfg.prompt.summary {
        return Ok(dialogues
            .iter()
            .map(|d| SummaryRecord {
                dialogue_id: d.dialogue_id.clone(),
                summary: String::new(),
                ok: true,
            })
            .collect());
    }
    let salt = RequestSalt { replica: 0, attempt: 1 };
    worker_pool(cfg)?.install(|| {
        dialogues
            .par_iter()
            .map(|d| match gateway.complete(&build_summary_request(d), salt) {
                Ok(ex) => Ok(SummaryRecord {
                    dialogue_id: d.dialogue_id.clone(),
                    summary: ex.response.trim().to_string(),
                    ok: true,
                }),
                Err(e @ Error::ReplayMiss(_)) => Err(e),
                Err(e) => {
                    warn!("summary for `{}` failed ({e}); continuing without one", d.dialogue_id);
                    Ok(SummaryRecord {
                        dialogue_id: d.dialogue_id.clone(),
                        summary: String::new(),
                        ok: false,
                    })
                }
            })
            .collect()
    })
}

fn by_dialogue<'a>(dialogues: &'a [Dialogue], plans: &'a [WindowPlan]) -> Result<Vec<(&'a Dialogue, &'a WindowPlan)>> {
    let index: HashMap<&str, &WindowPlan> = plans.iter().map(|p| (p.dialogue_id.as_str(), p)).collect();
    dialogues
        .iter()
        .map(|d| {
            let plan = index
                .get(d.dialogue_id.as_str())
                .ok_or_else(|| Error::Data(format!("no window plan for dialogue `{}`", d.dialogue_id)))?;
            if plan.n_utterances != d.len() {
                return Err(Error::Data(format!(
                    "plan for `{}` covers {} utterances, dialogue has {}",
                    d.dialogue_id,
                    plan.n_utterances,
                    d.len()
                )));
            }
            Ok((d, *plan))
        })
        .collect()
}

/// Window prompts in plan order.
pub fn build_prompts(
    cfg: &PipelineConfig,
    dialogues: &[Dialogue],
    plans: &[WindowPlan],
    summaries: &[SummaryRecord],
    stats: Option<&DimensionStats>,
    exemplars: &ExemplarSet,
) -> Result<Vec<PromptBundle>> {
    let ctx = PromptContext {
        schema: &cfg.schema,
        stats,
        exemplars,
        toggles: cfg.prompt,
    };
    let summary: HashMap<&str, &str> = summaries
        .iter()
        .map(|s| (s.dialogue_id.as_str(), s.summary.as_str()))
        .collect();
    let mut out = Vec::new();
    for (d, plan) in by_dialogue(dialogues, plans)? {
        let text = summary.get(d.dialogue_id.as_str()).copied().unwrap_or("");
        for w in &plan.windows {
            out.push(build_window_prompt(&ctx, d, w, text));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustOutput {
    pub outcomes: Vec<WindowOutcome>,
    pub matrices: Vec<AdjustmentMatrix>,
}

/// Sends every window prompt through the gateway and integrity check, then
/// assembles the per-sample matrices. With `reuse_repeats` on a naive or
/// padded plan only replica 0 of each span is queried; its answer is copied
/// to the other replicas with an empty attempt list.
pub fn adjust(
    gateway: &Gateway,
    cfg: &PipelineConfig,
    dialogues: &[Dialogue],
    plans: &[WindowPlan],
    prompts: &[PromptBundle],
) -> Result<AdjustOutput> {
    let n = cfg.schema.n();
    let mut vanilla = HashMap::new();
    for d in dialogues {
        for u in &d.utterances {
            vanilla.insert(sample_key(&d.dialogue_id, &u.utterance_id), u.vanilla_probs.clone());
        }
    }
    let plan_of: HashMap<&str, &WindowPlan> = plans.iter().map(|p| (p.dialogue_id.as_str(), p)).collect();
    let start_of = |dialogue_id: &str, window_index: usize| -> Result<i64> {
        plan_of
            .get(dialogue_id)
            .and_then(|p| p.windows.get(window_index))
            .map(|w| w.start_offset)
            .ok_or_else(|| {
                Error::Data(format!(
                    "prompt for window {window_index} of `{dialogue_id}` has no matching plan window"
                ))
            })
    };
    let reuse = cfg.reuse_repeats && plans.iter().any(|p| p.strategy != SplitStrategy::Sliding);
    let queried: Vec<&PromptBundle> = prompts.iter().filter(|b| !reuse || b.replica == 0).collect();

    let answered: Vec<WindowOutcome> = worker_pool(cfg)?.install(|| {
        queried
            .par_iter()
            .map(|b| adjust_with_retry(gateway, b, &vanilla, n, cfg.max_retries, cfg.prob_sum_tolerance))
            .collect::<Result<_>>()
    })?;

    let mut outcomes = Vec::with_capacity(prompts.len());
    if reuse {
        let mut source: HashMap<(String, i64), WindowOutcome> = HashMap::new();
        for o in answered {
            source.insert((o.dialogue_id.clone(), start_of(&o.dialogue_id, o.window_index)?), o);
        }
        for b in prompts {
            let key = (b.dialogue_id.clone(), start_of(&b.dialogue_id, b.window_index)?);
            let src = source
                .get(&key)
                .ok_or_else(|| Error::Invariant(format!("no replica-0 answer for window {} of `{}`", b.window_index, b.dialogue_id)))?;
            let mut o = src.clone();
            if b.replica != 0 {
                o.window_index = b.window_index;
                o.replica = b.replica;
                o.attempts.clear();
            }
            outcomes.push(o);
        }
    } else {
        outcomes = answered;
    }

    let mut per_dialogue: HashMap<&str, HashMap<usize, HashMap<String, Vec<f64>>>> = HashMap::new();
    for o in &outcomes {
        per_dialogue
            .entry(o.dialogue_id.as_str())
            .or_default()
            .insert(o.window_index, o.adjustments.iter().cloned().collect());
    }
    let empty = HashMap::new();
    let mut matrices = Vec::new();
    for (d, plan) in by_dialogue(dialogues, plans)? {
        let adj = per_dialogue.get(d.dialogue_id.as_str()).unwrap_or(&empty);
        matrices.extend(fusion::assemble(plan, adj, d)?);
    }
    Ok(AdjustOutput { outcomes, matrices })
}

pub fn fuse_train(cfg: &PipelineConfig, matrices: &[AdjustmentMatrix]) -> Result<(FusionModel, TrainOutcome)> {
    fusion::train(cfg.merge, cfg.include_vanilla, matrices, None, &cfg.train, cfg.seed)
}

pub fn fuse_apply(model: &FusionModel, matrices: &[AdjustmentMatrix], schema: &EmotionSchema) -> Result<Vec<Prediction>> {
    matrices
        .iter()
        .map(|m| {
            let out = model.apply(m)?;
            if out.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("fuse-apply"));
            }
            let mut probs = out.y.clone();
            fusion::softmax_in_place(&mut probs);
            Ok(Prediction {
                dialogue_id: m.dialogue_id.clone(),
                utterance_id: m.utterance_id.clone(),
                predicted: out.class,
                label: schema.name(out.class).to_string(),
                probs,
                gold: m.gold_label,
                sources: m.columns.iter().map(|c| argmax(c)).collect(),
            })
        })
        .collect()
}

/// Scores the labeled predictions; `per_source_accuracy` lists each
/// adjustment column (`llm_1..llm_t`), `vanilla` and `fused`.
pub fn evaluate_predictions(
    predictions: &[Prediction],
    schema: &EmotionSchema,
    fallback_rate: Option<f64>,
) -> Result<EvalReport> {
    let labeled: Vec<(&Prediction, usize)> = predictions.iter().filter_map(|p| p.gold.map(|g| (p, g))).collect();
    if labeled.is_empty() {
        return Err(Error::Data("no labeled predictions to evaluate".into()));
    }
    let pred: Vec<usize> = labeled.iter().map(|(p, _)| p.predicted).collect();
    let gold: Vec<usize> = labeled.iter().map(|(_, g)| *g).collect();
    let mut report = evaluate(&pred, &gold, schema)?;
    report.fallback_rate = fallback_rate;
    let columns = labeled[0].0.sources.len();
    if labeled.iter().all(|(p, _)| p.sources.len() == columns) && columns > 0 {
        for c in 0..columns {
            let name = if c + 1 == columns { "vanilla".to_string() } else { format!("llm_{}", c + 1) };
            let hits = labeled.iter().filter(|(p, g)| p.sources[c] == *g).count();
            report.per_source_accuracy.push((name, hits as f64 / labeled.len() as f64));
        }
    }
    report.per_source_accuracy.push(("fused".into(), report.accuracy));
    Ok(report)
}

pub fn load_exemplars(path: Option<&Path>, cfg: &PipelineConfig) -> Result<ExemplarSet> {
    match path {
        Some(p) => ExemplarSet::load(p, &cfg.schema, cfg.prompt.cot),
        None => Ok(ExemplarSet::builtin(&cfg.schema)),
    }
}

pub fn load_params(path: &Path) -> Result<FusionModel> {
    FusionModel::from_file(&read_json::<ParamsFile>(path)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Short tag of the ablation axes of a config.
pub fn ablation_tag(cfg: &PipelineConfig) -> String {
    let on = |b: bool| if b { "on" } else { "off" };
    format!(
        "split={:?} reuse={} merge={:?} stats={} summary={} exemplars={} cot={} t={} window={}",
        cfg.split,
        on(cfg.reuse_repeats),
        cfg.merge,
        on(cfg.prompt.stats),
        on(cfg.prompt.summary),
        on(cfg.prompt.exemplars),
        on(cfg.prompt.cot),
        cfg.t,
        cfg.window
    )
    .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

/// Everything needed to replay a run, given its LLM cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub template_version: String,
    pub exemplars_sha256: String,
    pub ablation: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageTiming>,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrity: Option<IntegrityStats>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    /// The recorded config switched to replay from its cache.
    pub fn replay_config(&self) -> PipelineConfig {
        let mut cfg = self.config.clone();
        cfg.llm.backend = BackendKind::Replay;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub dialogue_id: String,
    pub window_index: usize,
    pub replica: usize,
    pub attempts: Vec<AttemptRecord>,
    pub fallback: bool,
}

impl From<&WindowOutcome> for WindowReport {
    fn from(o: &WindowOutcome) -> Self {
        Self {
            dialogue_id: o.dialogue_id.clone(),
            window_index: o.window_index,
            replica: o.replica,
            attempts: o.attempts.clone(),
            fallback: o.fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub ablation: String,
    pub integrity: IntegrityStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_integrity: Option<IntegrityStats>,
    pub failed_summaries: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    pub windows: Vec<WindowReport>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Dialogues to predict.
    pub dialogues: PathBuf,
    /// Labeled dialogues the merge is trained on (a held-out validation split).
    pub fit: Option<PathBuf>,
    /// Pre-trained merge parameters, instead of `fit`.
    pub params: Option<PathBuf>,
    /// Labeled dialogues for the header statistics; defaults to `fit`.
    pub stats_from: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Also write plans, summaries, prompts, outcomes and matrices.
    pub persist_intermediates: bool,
}

pub struct RunOutput {
    pub predictions: Vec<Prediction>,
    pub report: RunReport,
    pub manifest: RunManifest,
    pub model: FusionModel,
}

/// Outputs of the LLM stages for one dialogue set.
struct Adjusted {
    plans: Vec<WindowPlan>,
    summaries: Vec<SummaryRecord>,
    prompts: Vec<PromptBundle>,
    out: AdjustOutput,
}

impl Adjusted {
    fn persist(&self, dir: &Path) -> Result<Vec<FileDigest>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(PLANS_FILE), &self.plans)?;
        write_jsonl(&dir.join(SUMMARIES_FILE), &self.summaries)?;
        write_jsonl(&dir.join(PROMPTS_FILE), &self.prompts)?;
        write_jsonl(&dir.join(OUTCOMES_FILE), &self.out.outcomes)?;
        write_jsonl(&dir.join(MATRICES_FILE), &self.out.matrices)?;
        [PLANS_FILE, SUMMARIES_FILE, PROMPTS_FILE, OUTCOMES_FILE, MATRICES_FILE]
            .iter()
            .map(|f| digest(f, &dir.join(f)))
            .collect()
    }
}

fn digest(role: &str, path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(name));
        self.manifest.stages.push(StageTiming {
            stage: name.to_string(),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        if let Err(e) = &out {
            self.manifest.failed_stage = Some(name.to_string());
            self.manifest.error = Some(e.to_string());
        }
        out
    }
}

/// Effective config of a run: the cache defaults to `<out_dir>/llm-cache`.
pub fn effective_config(cfg: &PipelineConfig, out_dir: &Path) -> PipelineConfig {
    let mut cfg = cfg.clone();
    if cfg.llm.cache_dir.is_none() {
        cfg.llm.cache_dir = Some(out_dir.join(DEFAULT_CACHE_DIR));
    }
    cfg
}

fn adjust_set(
    gateway: &Gateway,
    cfg: &PipelineConfig,
    rec: &mut Recorder,
    dialogues: &[Dialogue],
    stats: Option<&DimensionStats>,
    exemplars: &ExemplarSet,
    prefix: &'static str,
) -> Result<Adjusted> {
    let names: [&'static str; 4] = if prefix.is_empty() {
        ["summary", "plan", "prompt", "adjust"]
    } else {
        ["fit-summary", "fit-plan", "fit-prompt", "fit-adjust"]
    };
    let summaries = rec.stage(names[0], || summarize(gateway, dialogues, cfg))?;
    let plans = rec.stage(names[1], || plan_all(dialogues, cfg))?;
    let prompts = rec.stage(names[2], || build_prompts(cfg, dialogues, &plans, &summaries, stats, exemplars))?;
    let out = rec.stage(names[3], || adjust(gateway, cfg, dialogues, &plans, &prompts))?;
    Ok(Adjusted {
        plans,
        summaries,
        prompts,
        out,
    })
}

/// Runs every stage in order and writes predictions, the run report and the
/// manifest (also on failure) into `opts.out_dir`.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let cfg = effective_config(cfg, &opts.out_dir);
    let mut rec = Recorder {
        manifest: RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            template_version: TEMPLATE_VERSION.to_string(),
            exemplars_sha256: String::new(),
            ablation: ablation_tag(&cfg),
            seed: cfg.seed,
            config: cfg.clone(),
            inputs: Vec::new(),
            stages: Vec::new(),
            completed: false,
            failed_stage: None,
            error: None,
            integrity: None,
            outputs: Vec::new(),
        },
    };
    let result = run_stages(&cfg, opts, &mut rec);
    let manifest_path = opts.out_dir.join(MANIFEST_FILE);
    match result {
        Ok((predictions, report, model)) => {
            rec.manifest.completed = true;
            write_json(&manifest_path, &rec.manifest)?;
            info!("run complete: {}", opts.out_dir.display());
            Ok(RunOutput {
                predictions,
                report,
                manifest: rec.manifest,
                model,
            })
        }
        Err(e) => {
            if let Err(w) = write_json(&manifest_path, &rec.manifest) {
                warn!("could not write manifest: {w}");
            }
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &PipelineConfig,
    opts: &RunOptions,
    rec: &mut Recorder,
) -> Result<(Vec<Prediction>, RunReport, FusionModel)> {
    let schema = &cfg.schema;
    let (dialogues, fit, stats_source, exemplars) = rec.stage("load", || {
        if opts.fit.is_none() && opts.params.is_none() && cfg.merge != MergeKind::Add {
            return Err(Error::Config("a trainable merge needs fit dialogues or a parameters file".into()));
        }
        let dialogues = load_dialogues(&opts.dialogues, schema)?;
        let fit = opts.fit.as_deref().map(|p| load_dialogues(p, schema)).transpose()?;
        let stats_source = match &opts.stats_from {
            Some(p) => Some(load_dialogues(p, schema)?),
            None => None,
        };
        let exemplars = load_exemplars(opts.exemplars.as_deref(), cfg)?;
        Ok((dialogues, fit, stats_source, exemplars))
    })?;
    let mut inputs = vec![digest("dialogues", &opts.dialogues)?];
    for (role, p) in [
        ("fit", &opts.fit),
        ("params", &opts.params),
        ("stats_from", &opts.stats_from),
        ("exemplars", &opts.exemplars),
    ] {
        if let Some(p) = p {
            inputs.push(digest(role, p)?);
        }
    }
    rec.manifest.inputs = inputs;
    rec.manifest.exemplars_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&exemplars)?));

    let stats = rec.stage("stats", || {
        if !cfg.prompt.stats {
            return Ok(None);
        }
        match stats_source.as_deref().or(fit.as_deref()) {
            Some(src) => compute_dimension_stats(src, schema).map(Some),
            None => {
                warn!("no labeled dialogues for dimension statistics; the header omits them");
                Ok(None)
            }
        }
    })?;

    let oracle = oracle_labels(dialogues.iter().chain(fit.iter().flatten()));
    let gateway = rec.stage("gateway", || Gateway::from_config(cfg, oracle))?;

    let fit_adjusted = match &fit {
        Some(f) if opts.params.is_none() => Some(adjust_set(&gateway, cfg, rec, f, stats.as_ref(), &exemplars, "fit")?),
        _ => None,
    };
    let target = adjust_set(&gateway, cfg, rec, &dialogues, stats.as_ref(), &exemplars, "")?;

    let (model, train) = rec.stage("fuse", || match (&opts.params, &fit_adjusted) {
        (Some(p), _) => Ok((load_params(p)?, None)),
        (None, Some(f)) => {
            let (m, o) = fuse_train(cfg, &f.out.matrices)?;
            Ok((m, Some(o)))
        }
        (None, None) => Ok((
            FusionModel::Add {
                include_vanilla: cfg.include_vanilla,
            },
            None,
        )),
    })?;
    let predictions = rec.stage("apply", || fuse_apply(&model, &target.out.matrices, schema))?;
    let eval = rec.stage("evaluate", || {
        if predictions.iter().any(|p| p.gold.is_some()) {
            evaluate_predictions(&predictions, schema, fallback_rate(&target.out.outcomes)).map(Some)
        } else {
            Ok(None)
        }
    })?;

    let integrity = integrity_stats(&target.out.outcomes);
    rec.manifest.integrity = Some(integrity.clone());
    let report = RunReport {
        ablation: ablation_tag(cfg),
        integrity,
        fit_integrity: fit_adjusted.as_ref().map(|f| integrity_stats(&f.out.outcomes)),
        failed_summaries: target
            .summaries
            .iter()
            .chain(fit_adjusted.iter().flat_map(|f| &f.summaries))
            .filter(|s| !s.ok)
            .map(|s| s.dialogue_id.clone())
            .collect(),
        train,
        eval: eval.clone(),
        windows: target.out.outcomes.iter().map(WindowReport::from).collect(),
    };

    let outputs = rec.stage("write", || {
        let dir = &opts.out_dir;
        let mut outputs = Vec::new();
        if opts.persist_intermediates {
            outputs.extend(target.persist(dir)?);
            if let Some(f) = &fit_adjusted {
                outputs.extend(f.persist(&dir.join(FIT_DIR))?);
            }
        }
        write_jsonl(&dir.join(PREDICTIONS_FILE), &predictions)?;
        outputs.push(digest(PREDICTIONS_FILE, &dir.join(PREDICTIONS_FILE))?);
        if opts.params.is_none() {
            write_json(&dir.join(PARAMS_FILE), &model.to_file())?;
            outputs.push(digest(PARAMS_FILE, &dir.join(PARAMS_FILE))?);
        }
        if let Some(e) = &eval {
            write_json(&dir.join(EVAL_FILE), e)?;
            outputs.push(digest(EVAL_FILE, &dir.join(EVAL_FILE))?);
        }
        write_json(&dir.join(REPORT_FILE), &report)?;
        outputs.push(digest(REPORT_FILE, &dir.join(REPORT_FILE))?);
        Ok(outputs)
    })?;
    rec.manifest.outputs = outputs;
    Ok((predictions, report, model))
}
