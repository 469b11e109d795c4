//! Pipeline configuration file (TOML).
//!
//! ```toml
//! corpus_dir = "corpus"
//! output_root = "out"
//!
//! [llm]
//! provider = "http"
//! endpoint = "https://api.anthropic.com/v1/messages"
//! model = "..."
//! api_key_env = "STYLEVIZ_LLM_API_KEY"
//!
//! [image]
//! provider = "http"
//! endpoint = "http://localhost:7860/generate"
//! api_key_env = "STYLEVIZ_IMAGE_API_KEY"
//!
//! [generation]
//! corpus_seed = 7
//!
//! [study]
//! rater_count = 10
//! coverage = 2
//! ```
//!
//! Secrets are never stored in the file, only the names of the environment
//! variables holding them. Relative paths resolve against the file's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use styleviz_core::generation::{assemble_final_prompt, GenerationParams};
use styleviz_core::metrics::SdConvention;
use styleviz_core::sheet::{CategoryVocabulary, CleaningRules};
use styleviz_core::study::BalancePolicy;
use styleviz_core::synthesis::SynthesisConfig;

pub const LLM_KEY_ENV: &str = "STYLEVIZ_LLM_API_KEY";
pub const IMAGE_KEY_ENV: &str = "STYLEVIZ_IMAGE_API_KEY";
pub const ADMIN_TOKEN_ENV: &str = "STYLEVIZ_ADMIN_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Http,
            endpoint: "https://api.anthropic.com/v1/messages".to_owned(),
            model: String::new(),
            api_key_env: LLM_KEY_ENV.to_owned(),
            max_tokens: 1024,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSettings {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub api_key_env: String,
    pub supports_negative_prompt: bool,
    pub file_extension: String,
    pub timeout_secs: u64,
    /// Extra attempts per image after a retryable failure.
    pub retries: u32,
}

impl Default for ImageSettings {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Http,
            endpoint: String::new(),
            api_key_env: IMAGE_KEY_ENV.to_owned(),
            supports_negative_prompt: true,
            file_extension: "png".to_owned(),
            timeout_secs: 300,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    /// Explicit rater ids; when empty, `rater_count` ids `rater-01`.. are used.
    pub rater_ids: Vec<String>,
    pub rater_count: usize,
    pub coverage: usize,
    pub shuffle_seed: u64,
    pub balance: BalancePolicy,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            rater_ids: Vec::new(),
            rater_count: 10,
            coverage: 2,
            shuffle_seed: 0,
            balance: BalancePolicy::Quota,
        }
    }
}

impl StudySettings {
    pub fn raters(&self) -> Vec<String> {
        if !self.rater_ids.is_empty() {
            return self.rater_ids.clone();
        }
        let width = self.rater_count.to_string().len().max(2);
        (1..=self.rater_count)
            .map(|i| format!("rater-{i:0width$}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub sd_convention: SdConvention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub bind: String,
    pub admin_token_env: String,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".to_owned(),
            admin_token_env: ADMIN_TOKEN_ENV.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub output_root: PathBuf,
    pub categories: CategoryVocabulary,
    pub cleaning: CleaningRules,
    pub llm: LlmSettings,
    pub image: ImageSettings,
    pub synthesis: SynthesisConfig,
    pub generation: GenerationParams,
    pub study: StudySettings,
    pub report: ReportSettings,
    pub serve: ServeSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            output_root: PathBuf::from("out"),
            categories: CategoryVocabulary::default(),
            cleaning: CleaningRules::default(),
            llm: LlmSettings::default(),
            image: ImageSettings::default(),
            synthesis: SynthesisConfig::default(),
            generation: GenerationParams::default(),
            study: StudySettings::default(),
            report: ReportSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.corpus_dir = base.join(&config.corpus_dir);
        config.output_root = base.join(&config.output_root);
        Ok(config)
    }

    /// Sets both the per-image corpus seed and the rater shuffle seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.generation.corpus_seed = seed;
        self.study.shuffle_seed = seed;
    }

    /// Checks that do not depend on the stage or on the environment.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.synthesis.validate() {
            return invalid(format!("synthesis: {e}"));
        }
        if let Err(e) = self.cleaning.compile() {
            return invalid(format!("cleaning: {e}"));
        }
        if self.categories.0.is_empty() {
            return invalid("categories must not be empty".into());
        }
        if let Err(e) = assemble_final_prompt("probe", &self.generation) {
            return invalid(format!("generation: {e}"));
        }
        if self.generation.width == 0 || self.generation.height == 0 {
            return invalid("generation: width and height must be positive".into());
        }
        if self.study.coverage == 0 {
            return invalid("study: coverage must be at least 1".into());
        }
        if self.study.raters().is_empty() {
            return invalid("study: no raters".into());
        }
        if self.serve.bind.parse::<std::net::SocketAddr>().is_err() {
            return invalid(format!("serve: bad bind address `{}`", self.serve.bind));
        }
        Ok(())
    }

    /// Mock on the command line wins over the file.
    pub fn force_mock(&mut self) {
        self.llm.provider = ProviderKind::Mock;
        self.image.provider = ProviderKind::Mock;
    }
}

/// Reads a secret named by config.
pub fn secret_from_env(var: &str, what: &str) -> Result<String, ConfigError> {
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(ConfigError::Invalid(format!(
            "{what} credential missing: set environment variable {var}"
        ))),
    }
}
