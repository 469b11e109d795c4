//! Stage orchestration.
//!
//! Artifacts under the output root:
//!
//! ```text
//! cleaned/<author_id>.txt   cleaned/index.json   cleaned/errors.json
//! prompts/<author_id>.json  prompts/failures.json
//! images/<author_id>/<idx>.<ext>   manifest.jsonl
//! plan.json
//! responses.jsonl   responses.csv
//! report.json   histogram.csv   scatter.csv   summary.txt
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use styleviz_core::generation::{ImageProvider, ImageRequest, ManifestEntry};
use styleviz_core::metrics::build_report;
use styleviz_core::sheet::{clean_sheet, CleanedSheet, CompiledRules};
use styleviz_core::study::{make_assignment, validate_assignment, AssignmentPlan, StudyConfig};
use styleviz_core::synthesis::{
    build_system_prompt, synthesize_prompts, CompletionRequest, LlmProvider, PromptTriple, SynthesisError,
};
use styleviz_core::ProviderError;

use crate::config::{secret_from_env, ConfigError, PipelineConfig, ProviderKind};
use crate::corpus::{load_corpus, CorpusError, FileError};
use crate::csv_io::{export_csv, import_csv};
use crate::images::{generate_images, plan_all, GenerationOptions};
use crate::manifest::{read_manifest, MANIFEST_FILE};
use crate::providers::{HttpImageProvider, HttpLlmProvider, MockImageProvider, MockLlm};
use crate::report::write_report;
use crate::service::{AppState, SurveyData};
use crate::store::{ResponseStore, RESPONSES_LOG};

pub const CLEANED_DIR: &str = "cleaned";
pub const CLEANED_INDEX: &str = "cleaned/index.json";
pub const CLEANED_ERRORS: &str = "cleaned/errors.json";
pub const PROMPTS_DIR: &str = "prompts";
pub const PROMPT_FAILURES: &str = "prompts/failures.json";
pub const IMAGES_DIR: &str = "images";
pub const PLAN_FILE: &str = "plan.json";
pub const RESPONSES_CSV: &str = "responses.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Prompts,
    Images,
    Assign,
    Serve,
    Export,
    Report,
    All,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Prompts => "prompts",
            Stage::Images => "images",
            Stage::Assign => "assign",
            Stage::Serve => "serve",
            Stage::Export => "export",
            Stage::Report => "report",
            Stage::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub dry_run: bool,
    pub parallel: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dry_run: false,
            parallel: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing {}: run the `{stage}` stage first", path.display())]
    Dependency { path: PathBuf, stage: Stage },
    #[error("{0}")]
    Stage(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn stage_err(context: impl fmt::Display, e: impl fmt::Display) -> PipelineError {
    PipelineError::Stage(format!("{context}: {e}"))
}

/// What a stage did, one line per fact.
#[derive(Debug, Default, Clone)]
pub struct StageReport {
    pub lines: Vec<String>,
}

impl StageReport {
    fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PromptFailure {
    author_id: String,
    error: String,
}

enum Llm {
    Mock(Arc<MockLlm>),
    Http(HttpLlmProvider),
}

impl LlmProvider for Llm {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        match self {
            Llm::Mock(m) => m.complete(request),
            Llm::Http(h) => h.complete(request),
        }
    }
}

enum Images {
    Mock(Arc<MockImageProvider>),
    Http(HttpImageProvider),
}

impl ImageProvider for Images {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<u8>, ProviderError> {
        match self {
            Images::Mock(m) => m.generate(request),
            Images::Http(h) => h.generate(request),
        }
    }
    fn supports_negative_prompt(&self) -> bool {
        match self {
            Images::Mock(m) => m.supports_negative_prompt(),
            Images::Http(h) => h.supports_negative_prompt(),
        }
    }
    fn file_extension(&self) -> &str {
        match self {
            Images::Mock(m) => m.file_extension(),
            Images::Http(h) => h.file_extension(),
        }
    }
}

/// Author ids become file names, so they are restricted to a safe alphabet.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| stage_err(path.display(), e))?;
    bytes.push(b'\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| stage_err(parent.display(), e))?;
    }
    fs::write(path, bytes).map_err(|e| stage_err(path.display(), e))
}

fn reset_dir(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| stage_err(path.display(), e))?;
    }
    fs::create_dir_all(path).map_err(|e| stage_err(path.display(), e))
}

pub struct Pipeline {
    config: PipelineConfig,
    options: RunOptions,
    rules: CompiledRules,
    mock_llm: Arc<MockLlm>,
    mock_images: Arc<MockImageProvider>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, options: RunOptions) -> Result<Self, PipelineError> {
        config.validate()?;
        let rules = config
            .cleaning
            .compile()
            .map_err(|e| ConfigError::Invalid(format!("cleaning: {e}")))?;
        let mock_llm = Arc::new(MockLlm::new(config.synthesis.prompt_count));
        Ok(Self {
            config,
            options,
            rules,
            mock_llm,
            mock_images: Arc::new(MockImageProvider::default()),
        })
    }

    /// Replaces the offline image backend, e.g. to inject failures.
    pub fn with_mock_images(mut self, provider: MockImageProvider) -> Self {
        self.mock_images = Arc::new(provider);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.output_root.join(rel)
    }

    /// Calls made to the offline (LLM, image) backends so far.
    pub fn mock_calls(&self) -> (usize, usize) {
        (self.mock_llm.calls(), self.mock_images.calls())
    }

    fn llm(&self) -> Result<Llm, PipelineError> {
        let s = &self.config.llm;
        match s.provider {
            ProviderKind::Mock => Ok(Llm::Mock(self.mock_llm.clone())),
            ProviderKind::Http => {
                if s.endpoint.is_empty() || s.model.is_empty() {
                    return Err(ConfigError::Invalid("llm: endpoint and model are required".into()).into());
                }
                let key = secret_from_env(&s.api_key_env, "llm")?;
                let mut p = HttpLlmProvider::new(&s.endpoint, &s.model, key)
                    .with_timeout(Duration::from_secs(s.timeout_secs));
                p.max_tokens = s.max_tokens;
                Ok(Llm::Http(p))
            }
        }
    }

    fn images(&self) -> Result<Images, PipelineError> {
        let s = &self.config.image;
        match s.provider {
            ProviderKind::Mock => Ok(Images::Mock(self.mock_images.clone())),
            ProviderKind::Http => {
                if s.endpoint.is_empty() {
                    return Err(ConfigError::Invalid("image: endpoint is required".into()).into());
                }
                let key = secret_from_env(&s.api_key_env, "image")?;
                let mut p = HttpImageProvider::new(&s.endpoint, &self.config.generation.model_id, key)
                    .with_timeout(Duration::from_secs(s.timeout_secs));
                p.negative_prompt = s.supports_negative_prompt;
                p.extension = s.file_extension.clone();
                Ok(Images::Http(p))
            }
        }
    }

    fn require(&self, rel: &str, stage: Stage) -> Result<PathBuf, PipelineError> {
        let path = self.out(rel);
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::Dependency { path, stage })
        }
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str, stage: Stage) -> Result<T, PipelineError> {
        let path = self.require(rel, stage)?;
        let bytes = fs::read(&path).map_err(|e| stage_err(path.display(), e))?;
        serde_json::from_slice(&bytes).map_err(|e| stage_err(path.display(), e))
    }

    pub fn run(&self, stage: Stage) -> Result<StageReport, PipelineError> {
        match stage {
            Stage::Ingest => self.ingest().map(|(_, r)| r),
            Stage::Prompts => self.prompts(),
            Stage::Images => self.images_stage(),
            Stage::Assign => self.assign().map(|(_, r)| r),
            Stage::Serve => self.serve(),
            Stage::Export => self.export(),
            Stage::Report => self.report(),
            Stage::All => self.all(),
        }
    }

    fn clean_corpus(&self) -> Result<(Vec<CleanedSheet>, Vec<FileError>), PipelineError> {
        let load = load_corpus(&self.config.corpus_dir, &self.config.categories).map_err(|e| match e {
            CorpusError::Empty { ref errors, .. } => {
                for f in errors {
                    log::error!("{}: {}", f.path.display(), f.message);
                }
                stage_err("ingest", e)
            }
            other => stage_err("ingest", other),
        })?;
        let mut errors = load.errors;
        let mut sheets = Vec::new();
        for raw in &load.sheets {
            if !is_safe_id(&raw.author_id) {
                errors.push(FileError {
                    path: self.config.corpus_dir.clone(),
                    message: format!("author_id `{}` is not a safe file name", raw.author_id),
                });
                continue;
            }
            sheets.push(clean_sheet(raw, &self.rules));
        }
        Ok((sheets, errors))
    }

    pub fn ingest(&self) -> Result<(Vec<CleanedSheet>, StageReport), PipelineError> {
        let (sheets, errors) = self.clean_corpus()?;
        let mut report = StageReport::default();
        for e in &errors {
            log::warn!("skipped {}: {}", e.path.display(), e.message);
        }
        report.note(format!("ingest: {} sheets cleaned, {} skipped", sheets.len(), errors.len()));
        if self.options.dry_run {
            return Ok((sheets, report));
        }
        reset_dir(&self.out(CLEANED_DIR))?;
        for s in &sheets {
            let path = self.out(&format!("{CLEANED_DIR}/{}.txt", s.author_id));
            fs::write(&path, format!("{}\n", s.narrative)).map_err(|e| stage_err(path.display(), e))?;
        }
        write_json(&self.out(CLEANED_INDEX), &sheets)?;
        let listed: Vec<_> = errors
            .iter()
            .map(|e| serde_json::json!({ "path": e.path.display().to_string(), "error": e.message }))
            .collect();
        write_json(&self.out(CLEANED_ERRORS), &listed)?;
        Ok((sheets, report))
    }

    fn load_cleaned(&self) -> Result<Vec<CleanedSheet>, PipelineError> {
        self.read_json(CLEANED_INDEX, Stage::Ingest)
    }

    fn synthesize(&self, sheets: &[CleanedSheet]) -> Result<Vec<Result<PromptTriple, SynthesisError>>, PipelineError> {
        let llm = self.llm()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.options.parallel.max(1))
            .build()
            .map_err(|e| stage_err("prompts", e))?;
        Ok(pool.install(|| {
            sheets
                .par_iter()
                .map(|s| synthesize_prompts(s, &llm, &self.config.synthesis))
                .collect()
        }))
    }

    pub fn prompts(&self) -> Result<StageReport, PipelineError> {
        let sheets = self.load_cleaned()?;
        let mut report = StageReport::default();
        if self.options.dry_run {
            let system = build_system_prompt(&self.config.synthesis);
            self.llm()?;
            report.note(format!(
                "prompts (dry run): {} sheets, system prompt {} chars, up to {} calls each",
                sheets.len(),
                system.len(),
                1 + self.config.synthesis.max_retries + self.config.synthesis.max_transport_retries
            ));
            return Ok(report);
        }
        let results = self.synthesize(&sheets)?;
        reset_dir(&self.out(PROMPTS_DIR))?;
        let mut failures = Vec::new();
        let mut ok = 0;
        for result in results {
            match result {
                Ok(triple) => {
                    write_json(&self.out(&format!("{PROMPTS_DIR}/{}.json", triple.author_id)), &triple)?;
                    ok += 1;
                }
                Err(e) => {
                    let author_id = match &e {
                        SynthesisError::Exhausted { author_id, .. } | SynthesisError::Provider { author_id, .. } => {
                            author_id.clone()
                        }
                    };
                    log::error!("{e}");
                    failures.push(PromptFailure {
                        author_id,
                        error: e.to_string(),
                    });
                }
            }
        }
        write_json(&self.out(PROMPT_FAILURES), &failures)?;
        report.note(format!("prompts: {ok} triples written, {} failed", failures.len()));
        if !failures.is_empty() {
            return Err(PipelineError::Stage(format!(
                "prompts: {} of {} sheets failed, see {}",
                failures.len(),
                sheets.len(),
                self.out(PROMPT_FAILURES).display()
            )));
        }
        Ok(report)
    }

    /// Triples for every cleaned sheet, in author order.
    pub fn load_triples(&self) -> Result<Vec<PromptTriple>, PipelineError> {
        let sheets = self.load_cleaned()?;
        let mut out = Vec::with_capacity(sheets.len());
        for s in &sheets {
            let triple: PromptTriple = self.read_json(&format!("{PROMPTS_DIR}/{}.json", s.author_id), Stage::Prompts)?;
            triple
                .validate(&self.config.synthesis)
                .map_err(|e| stage_err(format!("prompts/{}.json", s.author_id), e))?;
            out.push(triple);
        }
        Ok(out)
    }

    pub fn images_stage(&self) -> Result<StageReport, PipelineError> {
        let triples = self.load_triples()?;
        let mut report = StageReport::default();
        let params = &self.config.generation;
        if self.options.dry_run {
            let requests = plan_all(&triples, params).map_err(|e| stage_err("images", e))?;
            self.images()?;
            report.note(format!("images (dry run): {} requests planned", requests.len()));
            return Ok(report);
        }
        let provider = self.images()?;
        reset_dir(&self.out(IMAGES_DIR))?;
        let options = GenerationOptions {
            parallel: self.options.parallel,
            retries: self.config.image.retries,
        };
        let entries = generate_images(&triples, &provider, params, &self.config.output_root, options)
            .map_err(|e| stage_err("images", e))?;
        let ok = entries.iter().filter(|e| e.is_ok()).count();
        let failed = entries.len() - ok;
        report.note(format!("images: {ok} generated, {failed} failed"));
        if failed > 0 {
            return Err(PipelineError::Stage(format!(
                "images: {failed} of {} generations failed, see {}",
                entries.len(),
                self.out(MANIFEST_FILE).display()
            )));
        }
        Ok(report)
    }

    fn load_manifest(&self) -> Result<Vec<ManifestEntry>, PipelineError> {
        let path = self.require(MANIFEST_FILE, Stage::Images)?;
        read_manifest(&path, &self.config.output_root).map_err(|e| stage_err("manifest", e))
    }

    /// Items with every prompt image present.
    fn complete_items(&self, manifest: &[ManifestEntry]) -> Vec<String> {
        let want = self.config.synthesis.prompt_count;
        let mut items: Vec<String> = Vec::new();
        let mut i = 0;
        while i < manifest.len() {
            let author = manifest[i].key().0;
            let group: Vec<&ManifestEntry> = manifest[i..].iter().take_while(|e| e.key().0 == author).collect();
            if group.len() == want && group.iter().all(|e| e.is_ok()) {
                items.push(author.to_owned());
            } else {
                log::warn!("{author}: excluded from the study, images incomplete");
            }
            i += group.len();
        }
        items
    }

    fn study_config(&self, items: Vec<String>) -> StudyConfig {
        let s = &self.config.study;
        let mut c = StudyConfig::new(items, s.raters(), s.coverage, s.shuffle_seed);
        c.balance = s.balance;
        c
    }

    pub fn assign(&self) -> Result<(AssignmentPlan, StageReport), PipelineError> {
        let manifest = self.load_manifest()?;
        let items = self.complete_items(&manifest);
        let config = self.study_config(items);
        let plan = make_assignment(&config).map_err(|e| stage_err("assign", e))?;
        let violations = validate_assignment(&plan, &config);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(stage_err("assign", text.join("; ")));
        }
        let mut report = StageReport::default();
        report.note(plan_summary(&plan, config.item_ids.len()));
        if !self.options.dry_run {
            write_json(&self.out(PLAN_FILE), &plan)?;
        }
        Ok((plan, report))
    }

    /// Material the survey service needs.
    pub fn survey_data(&self) -> Result<SurveyData, PipelineError> {
        let plan: AssignmentPlan = self.read_json(PLAN_FILE, Stage::Assign)?;
        let sheets = self.load_cleaned()?;
        let manifest = self.load_manifest()?;
        Ok(SurveyData::new(plan, &sheets, &manifest, &self.config.output_root))
    }

    pub fn open_store(&self) -> Result<ResponseStore, PipelineError> {
        ResponseStore::open(&self.out(RESPONSES_LOG)).map_err(|e| stage_err("store", e))
    }

    fn admin_token(&self) -> Option<Arc<str>> {
        match std::env::var(&self.config.serve.admin_token_env) {
            Ok(t) if !t.is_empty() => Some(Arc::from(t)),
            _ => None,
        }
    }

    pub fn app_state(&self) -> Result<AppState, PipelineError> {
        Ok(AppState {
            data: Arc::new(self.survey_data()?),
            store: Arc::new(self.open_store()?),
            admin_token: self.admin_token(),
        })
    }

    pub fn serve(&self) -> Result<StageReport, PipelineError> {
        let addr: std::net::SocketAddr = self
            .config
            .serve
            .bind
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("serve: {e}")))?;
        let mut report = StageReport::default();
        if self.options.dry_run {
            let data = self.survey_data()?;
            report.note(format!(
                "serve (dry run): {} raters, {} images, would bind {addr}",
                data.plan.per_rater.len(),
                data.images.len()
            ));
            return Ok(report);
        }
        let state = self.app_state()?;
        if state.admin_token.is_none() {
            log::warn!(
                "{} is unset; CSV export over HTTP is disabled",
                self.config.serve.admin_token_env
            );
        }
        let runtime = tokio::runtime::Runtime::new().map_err(|e| stage_err("serve", e))?;
        runtime
            .block_on(crate::service::serve(addr, state))
            .map_err(|e| stage_err("serve", e))?;
        report.note("serve: stopped");
        Ok(report)
    }

    pub fn export(&self) -> Result<StageReport, PipelineError> {
        let log_path = self.out(RESPONSES_LOG);
        let responses = if log_path.exists() {
            self.open_store()?.snapshot()
        } else {
            Vec::new()
        };
        let mut report = StageReport::default();
        report.note(format!("export: {} responses", responses.len()));
        if !self.options.dry_run {
            let path = self.out(RESPONSES_CSV);
            fs::create_dir_all(&self.config.output_root).map_err(|e| stage_err("export", e))?;
            fs::write(&path, export_csv(&responses)).map_err(|e| stage_err(path.display(), e))?;
        }
        Ok(report)
    }

    pub fn report(&self) -> Result<StageReport, PipelineError> {
        let path = self.require(RESPONSES_CSV, Stage::Export)?;
        let bytes = fs::read(&path).map_err(|e| stage_err(path.display(), e))?;
        let responses = import_csv(&bytes).map_err(|e| stage_err(path.display(), e))?;
        let evaluation = build_report(&responses, self.config.report.sd_convention);
        let mut report = StageReport::default();
        report.note(crate::report::summary_text(&evaluation).trim_end().to_owned());
        if !self.options.dry_run {
            write_report(&evaluation, &self.config.output_root).map_err(|e| stage_err("report", e))?;
        }
        Ok(report)
    }

    /// ingest, prompts, images, assign.
    pub fn all(&self) -> Result<StageReport, PipelineError> {
        if self.options.dry_run {
            let (sheets, mut report) = self.ingest()?;
            self.llm()?;
            self.images()?;
            let items = sheets.iter().map(|s| s.author_id.clone()).collect();
            let plan = make_assignment(&self.study_config(items)).map_err(|e| stage_err("assign", e))?;
            report.note(format!(
                "all (dry run): {} prompt triples and {} images would be requested",
                sheets.len(),
                sheets.len() * self.config.synthesis.prompt_count
            ));
            report.note(plan_summary(&plan, sheets.len()));
            return Ok(report);
        }
        let mut report = StageReport::default();
        report.lines.extend(self.ingest()?.1.lines);
        report.lines.extend(self.prompts()?.lines);
        report.lines.extend(self.images_stage()?.lines);
        report.lines.extend(self.assign()?.1.lines);
        Ok(report)
    }
}

pub fn plan_summary(plan: &AssignmentPlan, items: usize) -> String {
    let mut s = format!(
        "assign: {items} items x {} raters each = {} slots over {} raters",
        plan.coverage,
        plan.total_slots(),
        plan.per_rater.len()
    );
    for rater in &plan.ring {
        let n = plan.items_for(rater).map_or(0, <[String]>::len);
        s.push_str(&format!("\n  {rater}: {n} items"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_ids() {
        assert!(is_safe_id("Monsoon77"));
        assert!(is_safe_id("a.b-c_d"));
        for bad in ["", ".hidden", "../x", "a/b", "a b", "é"] {
            assert!(!is_safe_id(bad), "{bad}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config(ConfigError::Invalid("x".into())).exit_code(), 2);
        assert_eq!(PipelineError::Stage("x".into()).exit_code(), 1);
        let dep = PipelineError::Dependency {
            path: PathBuf::from("out/prompts/a.json"),
            stage: Stage::Prompts,
        };
        assert_eq!(dep.exit_code(), 1);
        assert!(dep.to_string().contains("out/prompts/a.json"));
    }
}
