//! Deterministic offline providers.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use styleviz_core::digest::sha256_hex;
use styleviz_core::generation::{ImageProvider, ImageRequest};
use styleviz_core::synthesis::{CompletionRequest, LlmProvider};
use styleviz_core::ProviderError;

// One pool per prompt position, disjoint, so a triple never repeats itself.
const SUBJECTS: [&[&str]; 3] = [
    &[
        "lone figure on a windswept cliff",
        "crowded night market",
        "abandoned observatory",
        "flooded cathedral nave",
        "child reading under a desk lamp",
    ],
    &[
        "tangled roots around a broken clock",
        "two shadows facing each other across a table",
        "paper boats drifting down a gutter",
        "a spiral staircase without an end",
        "a mask resting on an empty chair",
    ],
    &[
        "sweeping valley at first light",
        "maze of mirrored corridors",
        "storm front over a quiet harbor",
        "orbiting islands of stone",
        "a single lit window in a dark tower",
    ],
];
const SETTINGS: &[&str] = &[
    "layered fog",
    "scattered ink stains",
    "drifting embers",
    "rain-streaked glass",
    "floating dust motes",
    "overgrown ruins",
];
const PALETTES: &[&str] = &[
    "muted sepia palette",
    "saturated jewel tones",
    "cold blue and silver palette",
    "warm amber and crimson palette",
    "pastel watercolor palette",
    "high-contrast monochrome",
];
const LIGHTING: &[&str] = &[
    "low-key chiaroscuro lighting",
    "soft diffused daylight",
    "flickering candlelight",
    "neon rim lighting",
    "golden hour backlight",
];
const STYLES: &[&str] = &[
    "expressionist oil painting",
    "art nouveau illustration",
    "surrealist collage",
    "film noir still",
    "ukiyo-e woodblock print",
    "magical realism gouache",
];
const COMPOSITIONS: &[&str] = &[
    "off-center composition",
    "symmetrical framing",
    "dramatic low angle",
    "wide establishing shot",
    "tight intimate close-up",
];

fn pick<'a>(pool: &[&'a str], hash: &[u8], at: usize) -> &'a str {
    pool[usize::from(hash[at % hash.len()]) % pool.len()]
}

fn hash_bytes(parts: &[&[u8]]) -> Vec<u8> {
    let mut joined = Vec::new();
    for p in parts {
        joined.extend_from_slice(&(p.len() as u64).to_le_bytes());
        joined.extend_from_slice(p);
    }
    sha256_hex(&joined).into_bytes()
}

/// Builds prompts from a hash of the first user turn.
#[derive(Debug)]
pub struct MockLlm {
    prompt_count: usize,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new(prompt_count: usize) -> Self {
        Self {
            prompt_count,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts_for(&self, narrative: &str) -> Vec<String> {
        (0..self.prompt_count)
            .map(|i| {
                let h = hash_bytes(&[narrative.as_bytes(), &(i as u64).to_le_bytes()]);
                let pool = SUBJECTS[i % SUBJECTS.len()];
                let mut subject = pick(pool, &h, 0).to_owned();
                if i >= SUBJECTS.len() {
                    subject = format!("{subject}, variation {}", i + 1);
                }
                [
                    subject.as_str(),
                    pick(SETTINGS, &h, 1),
                    pick(PALETTES, &h, 2),
                    pick(LIGHTING, &h, 3),
                    pick(STYLES, &h, 4),
                    pick(COMPOSITIONS, &h, 5),
                ]
                .join(", ")
            })
            .collect()
    }
}

impl LlmProvider for MockLlm {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let narrative = request
            .messages
            .first()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let body = serde_json::json!({ "prompts": self.prompts_for(narrative) });
        Ok(body.to_string())
    }
}

/// Replays canned responses in order, one per call.
#[derive(Debug)]
pub struct ScriptedLlm {
    replies: Mutex<std::collections::VecDeque<Result<String, ProviderError>>>,
    calls: AtomicUsize,
}

impl ScriptedLlm {
    pub fn new(replies: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Every file in `dir`, in name order, is one response body.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let replies = paths
            .iter()
            .map(|p| fs::read_to_string(p).map(Ok))
            .collect::<io::Result<Vec<_>>>()?;
        Ok(Self::new(replies))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl LlmProvider for ScriptedLlm {
    fn complete(&self, _request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::fatal("script exhausted")))
    }
}

/// Writes small binary PPM images whose pixels derive from the request.
#[derive(Debug)]
pub struct MockImageProvider {
    size: u32,
    fail: BTreeSet<(String, u32)>,
    calls: AtomicUsize,
}

impl Default for MockImageProvider {
    fn default() -> Self {
        Self::new(32)
    }
}

impl MockImageProvider {
    pub fn new(size: u32) -> Self {
        Self {
            size: size.max(1),
            fail: BTreeSet::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Requests for these (author_id, prompt_index) keys fail.
    pub fn failing(mut self, keys: impl IntoIterator<Item = (String, u32)>) -> Self {
        self.fail.extend(keys);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ImageProvider for MockImageProvider {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<u8>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self
            .fail
            .contains(&(request.author_id.clone(), request.prompt_index))
        {
            return Err(ProviderError::fatal(format!(
                "mock failure for {}/{}",
                request.author_id, request.prompt_index
            )));
        }
        let h = hash_bytes(&[
            request.final_prompt.as_bytes(),
            request.negative_prompt.as_bytes(),
            &request.seed.to_le_bytes(),
        ]);
        let n = self.size;
        let mut out = format!("P6\n# {}\n{n} {n}\n255\n", String::from_utf8_lossy(&h[..16])).into_bytes();
        let base = [h[0], h[7], h[13]];
        for y in 0..n {
            for x in 0..n {
                let t = ((x * 255) / n) as u8;
                let u = ((y * 255) / n) as u8;
                out.extend_from_slice(&[
                    base[0].wrapping_add(t),
                    base[1].wrapping_add(u),
                    base[2].wrapping_add(t ^ u),
                ]);
            }
        }
        Ok(out)
    }

    fn file_extension(&self) -> &str {
        "ppm"
    }
}
