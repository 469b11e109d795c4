//! Image generation over a batch of prompt triples.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use styleviz_core::digest::content_digest;
use styleviz_core::generation::{
    canonicalize, plan_requests, FailedGeneration, GenerationError, GenerationParams, ImageArtifact,
    ImageProvider, ImageRequest, ManifestEntry,
};
use styleviz_core::synthesis::PromptTriple;
use styleviz_core::ProviderError;

use crate::manifest::{write_manifest, ManifestError, ManifestWriter, MANIFEST_FILE};

#[derive(Debug, Clone, Copy)]
pub struct GenerationOptions {
    /// Provider calls in flight.
    pub parallel: usize,
    /// Extra attempts per image after a retryable failure.
    pub retries: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            parallel: 4,
            retries: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImagesError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{author_id}: {source}")]
    Plan {
        author_id: String,
        source: GenerationError,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// `images/<author_id>/<prompt_index>.<ext>`, relative to the output root.
pub fn image_rel_path(author_id: &str, prompt_index: u32, ext: &str) -> String {
    format!("images/{author_id}/{prompt_index}.{ext}")
}

fn call_with_retries<P: ImageProvider + ?Sized>(
    provider: &P,
    request: &ImageRequest,
    retries: u32,
) -> Result<Vec<u8>, ProviderError> {
    let mut attempt = 0;
    loop {
        match provider.generate(request) {
            Err(e) if e.retryable && attempt < retries => {
                attempt += 1;
                log::warn!(
                    "{}/{}: retrying after {e}",
                    request.author_id,
                    request.prompt_index
                );
            }
            other => return other,
        }
    }
}

fn run_one<P: ImageProvider + Sync + ?Sized>(
    request: &ImageRequest,
    provider: &P,
    params: &GenerationParams,
    out_root: &Path,
    retries: u32,
) -> ManifestEntry {
    let failed = |error: String| {
        ManifestEntry::Failed(FailedGeneration {
            author_id: request.author_id.clone(),
            prompt_index: request.prompt_index,
            core_prompt: request.core_prompt.clone(),
            final_prompt: request.final_prompt.clone(),
            negative_prompt: request.negative_prompt.clone(),
            seed: request.seed,
            model_id: params.model_id.clone(),
            error,
            created_at: now_rfc3339(),
        })
    };
    let bytes = match call_with_retries(provider, request, retries) {
        Ok(b) => b,
        Err(e) => return failed(e.to_string()),
    };
    let rel = image_rel_path(&request.author_id, request.prompt_index, provider.file_extension());
    let path = out_root.join(&rel);
    let written = path
        .parent()
        .map_or(Ok(()), fs::create_dir_all)
        .and_then(|_| fs::write(&path, &bytes));
    if let Err(e) = written {
        return failed(format!("cannot write {}: {e}", path.display()));
    }
    ManifestEntry::Ok(ImageArtifact {
        author_id: request.author_id.clone(),
        prompt_index: request.prompt_index,
        core_prompt: request.core_prompt.clone(),
        final_prompt: request.final_prompt.clone(),
        negative_prompt: request.negative_prompt.clone(),
        negative_prompt_sent: provider.supports_negative_prompt() && !request.negative_prompt.is_empty(),
        seed: request.seed,
        model_id: params.model_id.clone(),
        width: request.width,
        height: request.height,
        image_path: rel,
        content_digest: content_digest(&bytes),
        created_at: now_rfc3339(),
    })
}

/// All requests for `triples`, in (author, index) order.
pub fn plan_all(triples: &[PromptTriple], params: &GenerationParams) -> Result<Vec<ImageRequest>, ImagesError> {
    let mut out = Vec::new();
    for t in triples {
        out.extend(plan_requests(t, params).map_err(|source| ImagesError::Plan {
            author_id: t.author_id.clone(),
            source,
        })?);
    }
    Ok(out)
}

/// Generates one image per prompt. A failure is recorded for its prompt
/// alone; the returned entries and the manifest at the output root are in
/// canonical order.
pub fn generate_images<P: ImageProvider + Sync + ?Sized>(
    triples: &[PromptTriple],
    provider: &P,
    params: &GenerationParams,
    out_root: &Path,
    options: GenerationOptions,
) -> Result<Vec<ManifestEntry>, ImagesError> {
    let requests = plan_all(triples, params)?;
    let manifest_path = out_root.join(MANIFEST_FILE);
    let writer = ManifestWriter::create(&manifest_path)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallel.max(1))
        .build()
        .map_err(|e| ImagesError::Pool(e.to_string()))?;
    let results: Vec<Result<ManifestEntry, ManifestError>> = pool.install(|| {
        requests
            .par_iter()
            .map(|req| {
                let entry = run_one(req, provider, params, out_root, options.retries);
                writer.append(&entry).map(|_| entry)
            })
            .collect()
    });
    let mut entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    canonicalize(&mut entries);
    write_manifest(&entries, &manifest_path)?;
    Ok(entries)
}
