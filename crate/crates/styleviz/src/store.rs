//! Durable response store backed by an append-only JSONL log.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use styleviz_core::study::AssignmentPlan;
use styleviz_core::survey::{ResponseDraft, ResponseSet, SubmitError, SurveyResponse};

pub const RESPONSES_LOG: &str = "responses.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error("response log {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("response log {} line {line}: {message}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

struct Inner {
    set: ResponseSet,
    file: File,
}

/// Submissions are checked and appended under one lock and fsynced before
/// they are acknowledged.
pub struct ResponseStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for ResponseStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseStore").field("path", &self.path).finish()
    }
}

impl ResponseStore {
    /// Opens (creating if needed) and replays the log.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        let mut set = ResponseSet::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let response: SurveyResponse = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            set.push(response).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner { set, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn submit(
        &self,
        draft: ResponseDraft,
        plan: &AssignmentPlan,
        submitted_at: String,
    ) -> Result<SurveyResponse, StoreError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let response = inner.set.prepare(draft, plan, submitted_at)?;
        let mut line = serde_json::to_string(&response).expect("responses serialize");
        line.push('\n');
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.sync_data())
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })?;
        inner.set.push(response.clone())?;
        Ok(response)
    }

    /// Responses ordered by id.
    pub fn snapshot(&self) -> Vec<SurveyResponse> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).set.sorted()
    }

    pub fn completed_by(&self, rater_id: &str) -> usize {
        self.inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .set
            .completed_by(rater_id)
    }

    pub fn contains(&self, rater_id: &str, item_id: &str) -> bool {
        self.inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .set
            .contains(rater_id, item_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use styleviz_core::study::{make_assignment, StudyConfig};
    use styleviz_core::survey::{FavoriteImage, Q2Pair};

    fn plan() -> AssignmentPlan {
        let items = (1..=6).map(|i| format!("a{i}")).collect();
        let raters = (1..=3).map(|i| format!("r{i}")).collect();
        make_assignment(&StudyConfig::new(items, raters, 2, 5)).unwrap()
    }

    fn draft(rater: &str, item: &str) -> ResponseDraft {
        let pair = Q2Pair {
            element: "tone".into(),
            reflection: "color".into(),
        };
        ResponseDraft {
            rater_id: rater.into(),
            item_id: item.into(),
            rating: 4,
            q2_elements: [pair.clone(), pair],
            favorite_image_id: FavoriteImage::Image2,
            favorite_justification: String::new(),
            distinctiveness: 2,
        }
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESPONSES_LOG);
        let plan = plan();
        let item = plan.items_for("r1").unwrap()[0].clone();
        {
            let store = ResponseStore::open(&path).unwrap();
            let r = store.submit(draft("r1", &item), &plan, "t".into()).unwrap();
            assert_eq!(r.id, 1);
        }
        let store = ResponseStore::open(&path).unwrap();
        assert_eq!(store.snapshot().len(), 1);
        assert!(matches!(
            store.submit(draft("r1", &item), &plan, "t".into()),
            Err(StoreError::Submit(SubmitError::Conflict { .. }))
        ));
        let next = plan.items_for("r1").unwrap()[1].clone();
        assert_eq!(store.submit(draft("r1", &next), &plan, "t".into()).unwrap().id, 2);
    }

    #[test]
    fn rejected_submissions_leave_no_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESPONSES_LOG);
        let plan = plan();
        let store = ResponseStore::open(&path).unwrap();
        let mut bad = draft("r1", &plan.items_for("r1").unwrap()[0]);
        bad.rating = 6;
        assert!(store.submit(bad, &plan, "t".into()).is_err());
        assert!(store.submit(draft("ghost", "a1"), &plan, "t".into()).is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn concurrent_duplicates_store_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ResponseStore::open(&dir.path().join(RESPONSES_LOG)).unwrap());
        let plan = Arc::new(plan());
        let item = plan.items_for("r2").unwrap()[0].clone();
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (store, plan, item) = (store.clone(), plan.clone(), item.clone());
                std::thread::spawn(move || store.submit(draft("r2", &item), &plan, "t".into()).is_ok())
            })
            .collect();
        let ok = handles.into_iter().map(|h| h.join().unwrap()).filter(|b| *b).count();
        assert_eq!(ok, 1);
        assert_eq!(store.snapshot().len(), 1);
    }

    #[test]
    fn corrupt_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESPONSES_LOG);
        std::fs::write(&path, "{}\n").unwrap();
        assert!(matches!(ResponseStore::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
