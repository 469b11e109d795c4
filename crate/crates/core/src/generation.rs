//! Final-prompt assembly, per-image seeding, and the provenance records
//! written for every generated image.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::provider::ProviderError;
use crate::synthesis::PromptTriple;

pub const DEFAULT_POSITIVE_MODIFIERS: &str = "8k, highly detailed, masterpiece, perfect composition, intricate details, professional quality, cinematic lighting";

pub const DEFAULT_NEGATIVE_PROMPT: [&str; 3] = ["lowres", "bad anatomy", "blurry"];

pub const DEFAULT_MODEL_ID: &str = "stable-diffusion-3.5-medium";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub model_id: String,
    /// Comma-separated suffix appended to every core prompt.
    pub positive_modifiers: String,
    pub negative_prompt: Vec<String>,
    pub corpus_seed: u64,
    pub width: u32,
    pub height: u32,
    /// Provider pass-through (steps, guidance, sampler, ...).
    pub extra: BTreeMap<String, String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL_ID.to_owned(),
            positive_modifiers: DEFAULT_POSITIVE_MODIFIERS.to_owned(),
            negative_prompt: DEFAULT_NEGATIVE_PROMPT.iter().map(|s| (*s).to_owned()).collect(),
            corpus_seed: 0,
            width: 1024,
            height: 1024,
            extra: BTreeMap::new(),
        }
    }
}

impl GenerationParams {
    pub fn negative_prompt_text(&self) -> String {
        self.negative_prompt.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerationError {
    #[error("core prompt is empty")]
    EmptyCore,
}

/// `core + ", " + positive_modifiers`, or `core` alone when the modifier
/// string is empty.
pub fn assemble_final_prompt(core: &str, params: &GenerationParams) -> Result<String, GenerationError> {
    if core.trim().is_empty() {
        return Err(GenerationError::EmptyCore);
    }
    if params.positive_modifiers.is_empty() {
        return Ok(core.to_owned());
    }
    Ok(format!("{core}, {}", params.positive_modifiers))
}

/// Stable per-image seed in `0..2^32`, derived from the corpus seed, the
/// author, and the 1-based prompt index.
pub fn derive_seed(corpus_seed: u64, author_id: &str, prompt_index: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"styleviz-seed-v1");
    hasher.update(corpus_seed.to_le_bytes());
    hasher.update((author_id.len() as u64).to_le_bytes());
    hasher.update(author_id.as_bytes());
    hasher.update(prompt_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from(u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]]))
}

/// Everything an image backend needs for one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub author_id: String,
    /// 1-based position of the prompt in its triple.
    pub prompt_index: u32,
    pub core_prompt: String,
    pub final_prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub extra: BTreeMap<String, String>,
}

/// One request per prompt, indices 1.. in prompt order.
pub fn plan_requests(
    triple: &PromptTriple,
    params: &GenerationParams,
) -> Result<Vec<ImageRequest>, GenerationError> {
    triple
        .prompts
        .iter()
        .enumerate()
        .map(|(i, prompt)| {
            let prompt_index = i as u32 + 1;
            Ok(ImageRequest {
                author_id: triple.author_id.clone(),
                prompt_index,
                core_prompt: prompt.rendered().to_owned(),
                final_prompt: assemble_final_prompt(prompt.rendered(), params)?,
                negative_prompt: params.negative_prompt_text(),
                seed: derive_seed(params.corpus_seed, &triple.author_id, prompt_index),
                width: params.width,
                height: params.height,
                extra: params.extra.clone(),
            })
        })
        .collect()
}

/// A text-to-image backend.
pub trait ImageProvider {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<u8>, ProviderError>;

    /// Providers that ignore negative prompts report `false`; the prompt is
    /// still recorded in the manifest.
    fn supports_negative_prompt(&self) -> bool {
        true
    }

    /// File extension for the returned bytes.
    fn file_extension(&self) -> &str {
        "png"
    }
}

impl<T: ImageProvider + ?Sized> ImageProvider for &T {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<u8>, ProviderError> {
        (**self).generate(request)
    }
    fn supports_negative_prompt(&self) -> bool {
        (**self).supports_negative_prompt()
    }
    fn file_extension(&self) -> &str {
        (**self).file_extension()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageArtifact {
    pub author_id: String,
    pub prompt_index: u32,
    pub core_prompt: String,
    pub final_prompt: String,
    pub negative_prompt: String,
    pub negative_prompt_sent: bool,
    pub seed: u64,
    pub model_id: String,
    pub width: u32,
    pub height: u32,
    /// Relative to the output root, `images/<author_id>/<prompt_index>.<ext>`.
    pub image_path: String,
    pub content_digest: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedGeneration {
    pub author_id: String,
    pub prompt_index: u32,
    pub core_prompt: String,
    pub final_prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub model_id: String,
    pub error: String,
    pub created_at: String,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ManifestEntry {
    Ok(ImageArtifact),
    Failed(FailedGeneration),
}

impl ManifestEntry {
    pub fn key(&self) -> (&str, u32) {
        match self {
            ManifestEntry::Ok(a) => (&a.author_id, a.prompt_index),
            ManifestEntry::Failed(f) => (&f.author_id, f.prompt_index),
        }
    }

    pub fn created_at(&self) -> &str {
        match self {
            ManifestEntry::Ok(a) => &a.created_at,
            ManifestEntry::Failed(f) => &f.created_at,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ManifestEntry::Ok(_))
    }

    pub fn artifact(&self) -> Option<&ImageArtifact> {
        match self {
            ManifestEntry::Ok(a) => Some(a),
            ManifestEntry::Failed(_) => None,
        }
    }
}

/// Orders entries by (author_id, prompt_index).
pub fn canonicalize(entries: &mut [ManifestEntry]) {
    entries.sort_by(|a, b| a.key().cmp(&b.key()));
}

/// Structural problems in a set of manifest entries (file checks live with
/// the IO layer).
pub fn entry_violations(entries: &[ManifestEntry]) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen: BTreeSet<(&str, u32)> = BTreeSet::new();
    for entry in entries {
        let (author, index) = entry.key();
        if index == 0 {
            out.push(format!("{author}: prompt_index must be 1-based"));
        }
        if !seen.insert((author, index)) {
            out.push(format!("{author}: duplicate prompt_index {index}"));
        }
        if let ManifestEntry::Ok(a) = entry {
            if !a.final_prompt.starts_with(&a.core_prompt) {
                out.push(format!("{author}/{index}: final_prompt does not extend core_prompt"));
            }
            if !a.content_digest.starts_with("sha256:") {
                out.push(format!("{author}/{index}: unsupported digest `{}`", a.content_digest));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_default_modifiers_once() {
        let p = GenerationParams::default();
        let out = assemble_final_prompt("a quiet seaside town at dusk", &p).unwrap();
        assert!(out.starts_with("a quiet seaside town at dusk, "));
        assert!(out.ends_with(", cinematic lighting"));
        assert!(out.ends_with(DEFAULT_POSITIVE_MODIFIERS));
        assert_eq!(out.matches(DEFAULT_POSITIVE_MODIFIERS).count(), 1);
    }

    #[test]
    fn empty_modifiers_is_identity() {
        let p = GenerationParams {
            positive_modifiers: String::new(),
            ..Default::default()
        };
        assert_eq!(assemble_final_prompt("core", &p).unwrap(), "core");
    }

    #[test]
    fn existing_masterpiece_still_gets_suffix() {
        let out = assemble_final_prompt("a masterpiece of fog", &GenerationParams::default()).unwrap();
        assert_eq!(out.matches("masterpiece").count(), 2);
        assert_eq!(out.matches(DEFAULT_POSITIVE_MODIFIERS).count(), 1);
    }

    #[test]
    fn empty_core_rejected() {
        assert_eq!(
            assemble_final_prompt("  ", &GenerationParams::default()),
            Err(GenerationError::EmptyCore)
        );
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = derive_seed(7, "Monsoon77", 1);
        assert_eq!(a, derive_seed(7, "Monsoon77", 1));
        assert_ne!(a, derive_seed(7, "Monsoon77", 2));
        assert_ne!(a, derive_seed(8, "Monsoon77", 1));
        assert_ne!(derive_seed(0, "ab", 1), derive_seed(0, "a", 1));
        assert!(a < (1u64 << 32));
    }

    #[test]
    fn negative_prompt_default() {
        assert_eq!(
            GenerationParams::default().negative_prompt_text(),
            "lowres, bad anatomy, blurry"
        );
    }

    #[test]
    fn manifest_entry_tagging() {
        let f = ManifestEntry::Failed(FailedGeneration {
            author_id: "a".into(),
            prompt_index: 2,
            core_prompt: "c".into(),
            final_prompt: "c".into(),
            negative_prompt: String::new(),
            seed: 1,
            model_id: "m".into(),
            error: "boom".into(),
            created_at: "t".into(),
        });
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.starts_with("{\"status\":\"failed\""));
        assert_eq!(serde_json::from_str::<ManifestEntry>(&json).unwrap(), f);
        assert!(entry_violations(&[f.clone(), f]).len() == 1);
    }
}
