//! Run configuration. Loaded from a TOML file; every key can be overridden
//! from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::EmotionSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    Naive,
    Padded,
    #[default]
    Sliding,
}

impl std::str::FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "padded" => Ok(Self::Padded),
            "sliding" => Ok(Self::Sliding),
            other => Err(Error::Config(format!("unknown split strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    #[default]
    Rfa,
    Add,
    Weights,
    Attn,
}

impl std::str::FromStr for MergeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rfa" => Ok(Self::Rfa),
            "add" => Ok(Self::Add),
            "weights" => Ok(Self::Weights),
            "attn" => Ok(Self::Attn),
            other => Err(Error::Config(format!("unknown merge `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

/// Which optional prompt blocks are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptToggles {
    pub stats: bool,
    pub summary: bool,
    pub exemplars: bool,
    pub cot: bool,
}

impl Default for PromptToggles {
    fn default() -> Self {
        Self {
            stats: true,
            summary: true,
            exemplars: true,
            cot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model: String,
    pub temperature: f64,
    pub max_concurrency: usize,
    /// Record/replay cache. Replay requires it.
    pub cache_dir: Option<PathBuf>,
    pub transport_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model: "gpt-4-0125-preview".into(),
            temperature: 1.0,
            max_concurrency: 4,
            cache_dir: None,
            transport_retries: 4,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

/// Knobs of the offline mock adjuster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Mixing weight toward the chosen target label; 0 echoes the input.
    pub perturbation: f64,
    /// Probability that the target label is the oracle label, for a window
    /// without padding.
    pub reliability: f64,
    /// Reliability lost per unit of pad fraction in the window:
    /// `reliability * (1 - context_penalty * pads / slots)`.
    pub context_penalty: f64,
    /// The first `fail_attempts` attempts of every window return a broken response.
    pub fail_attempts: u32,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            perturbation: 0.6,
            reliability: 0.85,
            context_penalty: 0.5,
            fail_attempts: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_scale: f64,
    /// Datasets smaller than this are trained full-batch.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.05,
            epochs: 200,
            init_scale: 0.1,
            batch_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Windows covering each sample.
    pub t: usize,
    /// Maximum utterances per window.
    pub window: usize,
    pub split: SplitStrategy,
    /// Core span length of the padded strategy; defaults to `ceil(window / 2)`.
    pub core: Option<usize>,
    /// Naive/padded only: issue one LLM call per distinct span and reuse it for all repeats.
    pub reuse_repeats: bool,
    pub schema: EmotionSchema,
    pub prob_sum_tolerance: f64,
    pub max_retries: u32,
    pub seed: u64,
    pub merge: MergeKind,
    /// Naive add-up includes the vanilla column.
    pub include_vanilla: bool,
    pub prompt: PromptToggles,
    pub llm: LlmConfig,
    pub mock: MockConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t: 3,
            window: 6,
            split: SplitStrategy::Sliding,
            core: None,
            reuse_repeats: false,
            schema: EmotionSchema::iemocap_6way(),
            prob_sum_tolerance: 1e-3,
            max_retries: 3,
            seed: 0,
            merge: MergeKind::Rfa,
            include_vanilla: true,
            prompt: PromptToggles::default(),
            llm: LlmConfig::default(),
            mock: MockConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Panics on a config that fails [`PipelineConfig::validate`].
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("validated config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::Config("t must be >= 1".into()));
        }
        if self.window < self.t {
            return Err(Error::Config(format!(
                "window ({}) must be >= t ({})",
                self.window, self.t
            )));
        }
        if let Some(core) = self.core {
            if core == 0 || core > self.window {
                return Err(Error::Config(format!(
                    "core ({core}) must be in 1..={}",
                    self.window
                )));
            }
        }
        // TOML integers are signed
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed ({}) must be <= {}", self.seed, i64::MAX)));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be >= 1".into()));
        }
        if !(self.prob_sum_tolerance >= 0.0 && self.prob_sum_tolerance.is_finite()) {
            return Err(Error::Config("prob_sum_tolerance must be finite and >= 0".into()));
        }
        if self.llm.max_concurrency == 0 {
            return Err(Error::Config("llm.max_concurrency must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mock.perturbation)
            || !(0.0..=1.0).contains(&self.mock.reliability)
            || !(0.0..=1.0).contains(&self.mock.context_penalty)
        {
            return Err(Error::Config(
                "mock.perturbation, mock.reliability and mock.context_penalty must lie in [0, 1]".into(),
            ));
        }
        if self.llm.backend == BackendKind::Replay && self.llm.cache_dir.is_none() {
            return Err(Error::Config("replay backend requires llm.cache_dir".into()));
        }
        Ok(())
    }

    pub fn padded_core(&self) -> usize {
        self.core.unwrap_or(self.window.div_ceil(2))
    }
}
