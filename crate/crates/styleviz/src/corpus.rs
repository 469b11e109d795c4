//! Loading a directory of raw author sheets.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use styleviz_core::sheet::{parse_raw_sheet, CategoryVocabulary, RawAuthorSheet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct CorpusLoad {
    /// Sorted by author id.
    pub sheets: Vec<RawAuthorSheet>,
    /// Files that could not be read or parsed; loading carries on past them.
    pub errors: Vec<FileError>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus directory {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus {} contains no valid sheets ({} file errors)", path.display(), errors.len())]
    Empty { path: PathBuf, errors: Vec<FileError> },
}

/// Reads every visible regular file in `dir` as one sheet.
pub fn load_corpus(dir: &Path, vocabulary: &CategoryVocabulary) -> Result<CorpusLoad, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| !n.starts_with('.'))
        })
        .collect();
    paths.sort();

    let mut load = CorpusLoad::default();
    let mut seen = BTreeSet::new();
    for path in paths {
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                load.errors.push(FileError {
                    path,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_raw_sheet(&bytes, vocabulary) {
            Ok(sheet) if !seen.insert(sheet.author_id.clone()) => load.errors.push(FileError {
                message: format!("duplicate author_id `{}`", sheet.author_id),
                path,
            }),
            Ok(sheet) => load.sheets.push(sheet),
            Err(e) => load.errors.push(FileError {
                path,
                message: e.to_string(),
            }),
        }
    }
    if load.sheets.is_empty() {
        return Err(CorpusError::Empty {
            path: dir.to_path_buf(),
            errors: load.errors,
        });
    }
    load.sheets.sort_by(|a, b| a.author_id.cmp(&b.author_id));
    Ok(load)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet(id: &str) -> String {
        format!(r#"{{"author_id":"{id}","categories":[{{"name":"Plot","claims":[{{"text":"Slow burn."}}]}}]}}"#)
    }

    #[test]
    fn sorted_by_author_and_errors_collected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("1.json"), sheet("zeta")).unwrap();
        fs::write(dir.path().join("2.json"), sheet("alpha")).unwrap();
        fs::write(dir.path().join("3.json"), "{ not json").unwrap();
        fs::write(dir.path().join("4.json"), sheet("alpha")).unwrap();
        fs::write(dir.path().join(".hidden"), "junk").unwrap();
        let load = load_corpus(dir.path(), &CategoryVocabulary::default()).unwrap();
        let ids: Vec<_> = load.sheets.iter().map(|s| s.author_id.as_str()).collect();
        assert_eq!(ids, vec!["alpha", "zeta"]);
        assert_eq!(load.errors.len(), 2);
        assert!(load.errors[0].path.ends_with("3.json"));
        assert!(load.errors[1].message.contains("duplicate"));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(dir.path(), &CategoryVocabulary::default()),
            Err(CorpusError::Empty { .. })
        ));
        assert!(matches!(
            load_corpus(&dir.path().join("missing"), &CategoryVocabulary::default()),
            Err(CorpusError::Io { .. })
        ));
    }
}
