//! Line-delimited JSON manifest of generated images.
//!
//! Each line is one [`ManifestEntry`]. Writers append and fsync one line at
//! a time; readers return entries ordered by (author_id, prompt_index) and
//! check every referenced image against its recorded digest.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use styleviz_core::digest::content_digest;
use styleviz_core::generation::{canonicalize, entry_violations, ManifestEntry};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest invariants violated: {}", .0.join("; "))]
    Invariant(Vec<String>),
    #[error("image {} referenced by the manifest is missing", path.display())]
    MissingImage { path: PathBuf },
    #[error("image {} does not match its digest (manifest {expected}, file {actual})", path.display())]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn encode(entry: &ManifestEntry) -> String {
    serde_json::to_string(entry).expect("manifest entries serialize")
}

/// Single appender shared by concurrent generation workers.
#[derive(Debug)]
pub struct ManifestWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl ManifestWriter {
    /// Starts an empty manifest, replacing any existing one.
    pub fn create(path: &Path) -> Result<Self, ManifestError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, entry: &ManifestEntry) -> Result<(), ManifestError> {
        let mut line = encode(entry);
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Writes `entries` in canonical order, replacing `path` atomically.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), ManifestError> {
    let mut sorted = entries.to_vec();
    canonicalize(&mut sorted);
    let mut body = String::new();
    for entry in &sorted {
        body.push_str(&encode(entry));
        body.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    {
        let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(body.as_bytes())
            .and_then(|_| file.sync_all())
            .map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Parses without touching image files; still canonicalizes and checks
/// structural invariants.
pub fn read_manifest_entries(path: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    let violations = entry_violations(&entries);
    if !violations.is_empty() {
        return Err(ManifestError::Invariant(violations));
    }
    canonicalize(&mut entries);
    Ok(entries)
}

/// Reads the manifest and verifies every successful entry's image under
/// `root` exists and hashes to the recorded digest.
pub fn read_manifest(path: &Path, root: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let entries = read_manifest_entries(path)?;
    for artifact in entries.iter().filter_map(ManifestEntry::artifact) {
        let image = root.join(&artifact.image_path);
        let bytes = match fs::read(&image) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ManifestError::MissingImage { path: image })
            }
            Err(e) => return Err(io_err(&image)(e)),
        };
        let actual = content_digest(&bytes);
        if actual != artifact.content_digest {
            return Err(ManifestError::DigestMismatch {
                path: image,
                expected: artifact.content_digest.clone(),
                actual,
            });
        }
    }
    Ok(entries)
}
