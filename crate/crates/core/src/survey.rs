//! Survey answers and the rules a submission must pass before it is stored.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::study::AssignmentPlan;

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 5;

/// Q3 answer. Stored as `1`, `2`, `3`, or `none`; shown to raters as
/// A, B, C, or "None of them are a good fit".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FavoriteImage {
    #[serde(rename = "1")]
    Image1,
    #[serde(rename = "2")]
    Image2,
    #[serde(rename = "3")]
    Image3,
    #[serde(rename = "none")]
    None,
}

impl FavoriteImage {
    pub const ALL: [FavoriteImage; 4] = [
        FavoriteImage::Image1,
        FavoriteImage::Image2,
        FavoriteImage::Image3,
        FavoriteImage::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FavoriteImage::Image1 => "1",
            FavoriteImage::Image2 => "2",
            FavoriteImage::Image3 => "3",
            FavoriteImage::None => "none",
        }
    }

    /// A->1, B->2, C->3.
    pub fn from_label(label: char) -> Option<Self> {
        match label.to_ascii_uppercase() {
            'A' => Some(FavoriteImage::Image1),
            'B' => Some(FavoriteImage::Image2),
            'C' => Some(FavoriteImage::Image3),
            _ => None,
        }
    }

    pub fn label(self) -> Option<char> {
        match self {
            FavoriteImage::Image1 => Some('A'),
            FavoriteImage::Image2 => Some('B'),
            FavoriteImage::Image3 => Some('C'),
            FavoriteImage::None => None,
        }
    }

    pub fn prompt_index(self) -> Option<u32> {
        match self {
            FavoriteImage::Image1 => Some(1),
            FavoriteImage::Image2 => Some(2),
            FavoriteImage::Image3 => Some(3),
            FavoriteImage::None => None,
        }
    }
}

impl fmt::Display for FavoriteImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown favorite image `{0}`")]
pub struct ParseFavoriteError(pub String);

impl FromStr for FavoriteImage {
    type Err = ParseFavoriteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(FavoriteImage::Image1),
            "2" => Ok(FavoriteImage::Image2),
            "3" => Ok(FavoriteImage::Image3),
            "none" => Ok(FavoriteImage::None),
            other => Err(ParseFavoriteError(other.to_owned())),
        }
    }
}

/// One Q2 answer: a stylistic element and how it shows up in the images.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Q2Pair {
    pub element: String,
    pub reflection: String,
}

/// What a rater submits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseDraft {
    pub rater_id: String,
    pub item_id: String,
    pub rating: u8,
    pub q2_elements: [Q2Pair; 2],
    pub favorite_image_id: FavoriteImage,
    #[serde(default)]
    pub favorite_justification: String,
    pub distinctiveness: u8,
}

/// A stored response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub id: u64,
    pub rater_id: String,
    pub item_id: String,
    /// Q1, overall style match.
    pub rating: u8,
    pub q2_elements: [Q2Pair; 2],
    pub favorite_image_id: FavoriteImage,
    pub favorite_justification: String,
    /// Q4, visual distinctiveness.
    pub distinctiveness: u8,
    pub submitted_at: String,
}

impl SurveyResponse {
    pub fn from_draft(draft: ResponseDraft, id: u64, submitted_at: String) -> Self {
        Self {
            id,
            rater_id: draft.rater_id,
            item_id: draft.item_id,
            rating: draft.rating,
            q2_elements: draft.q2_elements,
            favorite_image_id: draft.favorite_image_id,
            favorite_justification: draft.favorite_justification,
            distinctiveness: draft.distinctiveness,
            submitted_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(tag = "error", rename_all = "kebab-case")]
pub enum SubmitError {
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("rater `{rater_id}` already answered `{item_id}`")]
    Conflict { rater_id: String, item_id: String },
    #[error("item `{item_id}` is not assigned to rater `{rater_id}`")]
    NotAssigned { rater_id: String, item_id: String },
    #[error("unknown rater `{rater_id}`")]
    UnknownRater { rater_id: String },
}

impl SubmitError {
    pub fn code(&self) -> &'static str {
        match self {
            SubmitError::Validation { .. } => "validation",
            SubmitError::Conflict { .. } => "conflict",
            SubmitError::NotAssigned { .. } => "not-assigned",
            SubmitError::UnknownRater { .. } => "unknown-rater",
        }
    }
}

fn invalid(field: &str, message: &str) -> SubmitError {
    SubmitError::Validation {
        field: field.to_owned(),
        message: message.to_owned(),
    }
}

fn check_likert(field: &str, value: u8) -> Result<(), SubmitError> {
    if (LIKERT_MIN..=LIKERT_MAX).contains(&value) {
        Ok(())
    } else {
        Err(invalid(field, "must be between 1 and 5"))
    }
}

/// Range checks shared by submissions and imports.
pub fn validate_scores(rating: u8, distinctiveness: u8) -> Result<(), SubmitError> {
    check_likert("rating", rating)?;
    check_likert("distinctiveness", distinctiveness)
}

/// Full check for a fresh submission: scores plus non-empty Q2 answers.
pub fn validate_draft(draft: &ResponseDraft) -> Result<(), SubmitError> {
    if draft.rater_id.is_empty() {
        return Err(invalid("rater_id", "must not be empty"));
    }
    if draft.item_id.is_empty() {
        return Err(invalid("item_id", "must not be empty"));
    }
    validate_scores(draft.rating, draft.distinctiveness)?;
    for (i, pair) in draft.q2_elements.iter().enumerate() {
        if pair.element.trim().is_empty() {
            return Err(invalid(&format!("q2_elements[{i}].element"), "must not be empty"));
        }
        if pair.reflection.trim().is_empty() {
            return Err(invalid(&format!("q2_elements[{i}].reflection"), "must not be empty"));
        }
    }
    Ok(())
}

/// Append-only responses with a (rater, item) uniqueness index.
#[derive(Debug, Clone, Default)]
pub struct ResponseSet {
    responses: Vec<SurveyResponse>,
    keys: BTreeSet<(String, String)>,
    next_id: u64,
}

impl ResponseSet {
    pub fn new() -> Self {
        Self {
            responses: Vec::new(),
            keys: BTreeSet::new(),
            next_id: 1,
        }
    }

    /// Validates a draft against the plan and stores it with the next id.
    pub fn admit(
        &mut self,
        draft: ResponseDraft,
        plan: &AssignmentPlan,
        submitted_at: String,
    ) -> Result<SurveyResponse, SubmitError> {
        let response = self.prepare(draft, plan, submitted_at)?;
        self.push(response.clone())?;
        Ok(response)
    }

    /// Runs every check `admit` does and builds the record without storing
    /// it, so a durable store can persist first and `push` after.
    pub fn prepare(
        &self,
        draft: ResponseDraft,
        plan: &AssignmentPlan,
        submitted_at: String,
    ) -> Result<SurveyResponse, SubmitError> {
        let assigned = plan
            .items_for(&draft.rater_id)
            .ok_or_else(|| SubmitError::UnknownRater {
                rater_id: draft.rater_id.clone(),
            })?;
        validate_draft(&draft)?;
        if !assigned.iter().any(|i| *i == draft.item_id) {
            return Err(SubmitError::NotAssigned {
                rater_id: draft.rater_id,
                item_id: draft.item_id,
            });
        }
        if self.contains(&draft.rater_id, &draft.item_id) {
            return Err(SubmitError::Conflict {
                rater_id: draft.rater_id,
                item_id: draft.item_id,
            });
        }
        Ok(SurveyResponse::from_draft(draft, self.next_id.max(1), submitted_at))
    }

    /// Re-inserts a previously stored response (e.g. replaying a log).
    pub fn push(&mut self, response: SurveyResponse) -> Result<(), SubmitError> {
        validate_scores(response.rating, response.distinctiveness)?;
        let key = (response.rater_id.clone(), response.item_id.clone());
        if self.keys.contains(&key) {
            return Err(SubmitError::Conflict {
                rater_id: key.0,
                item_id: key.1,
            });
        }
        self.keys.insert(key);
        self.next_id = self.next_id.max(response.id + 1);
        self.responses.push(response);
        Ok(())
    }

    pub fn contains(&self, rater_id: &str, item_id: &str) -> bool {
        self.keys.contains(&(rater_id.to_owned(), item_id.to_owned()))
    }

    pub fn completed_by(&self, rater_id: &str) -> usize {
        self.responses.iter().filter(|r| r.rater_id == rater_id).count()
    }

    pub fn responses(&self) -> &[SurveyResponse] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Responses ordered by id.
    pub fn sorted(&self) -> Vec<SurveyResponse> {
        let mut out = self.responses.clone();
        out.sort_by_key(|r| r.id);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub prompt_index: u32,
    pub label: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionItem {
    pub item_id: String,
    pub narrative: String,
    pub images: Vec<ImageRef>,
    pub submitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

/// What a rater's capability link loads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub rater_id: String,
    pub items: Vec<SessionItem>,
    pub progress: Progress,
}
