//! Author writing sheets: the raw structured document and its cleaned
//! narrative form.
//!
//! A raw sheet is one JSON document per author:
//!
//! ```json
//! {
//!   "author_id": "Monsoon77",
//!   "categories": [
//!     { "name": "Plot", "claims": [ { "text": "...", "evidence": ["..."] } ] }
//!   ],
//!   "metadata": { "timestamp": "2024-11-02T10:00:00Z" }
//! }
//! ```
//!
//! Cleaning drops evidence spans, scrubs configured metadata values and
//! pattern matches from the claim text, and renders every category as its own
//! paragraph through a join template.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use regex_automata::meta::Regex;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

/// Categories accepted when no other vocabulary is configured.
pub const DEFAULT_CATEGORIES: [&str; 5] = [
    "Plot",
    "Creativity",
    "Development",
    "Character and Setting",
    "Language Use",
];

pub const CATEGORY_SLOT: &str = "{category}";
pub const CLAIMS_SLOT: &str = "{claims}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAuthorSheet {
    pub author_id: String,
    pub categories: Vec<CategorySection>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySection {
    pub name: String,
    pub claims: Vec<Claim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    /// Source excerpts backing the claim. Kept for audit, never rendered.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<String>,
}

impl Claim {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            evidence: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SheetError {
    #[error("malformed sheet at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
}

impl SheetError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SheetError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Set of category names a sheet may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryVocabulary(pub Vec<String>);

impl Default for CategoryVocabulary {
    fn default() -> Self {
        Self(DEFAULT_CATEGORIES.iter().map(|s| (*s).to_owned()).collect())
    }
}

impl CategoryVocabulary {
    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|c| c == name)
    }
}

/// Parses and validates one raw sheet document.
pub fn parse_raw_sheet(
    document: &[u8],
    vocabulary: &CategoryVocabulary,
) -> Result<RawAuthorSheet, SheetError> {
    let value: serde_json::Value =
        serde_json::from_slice(document).map_err(|e| parse_error(document, &e))?;
    if !value.is_object() {
        return Err(SheetError::schema("$", "document must be an object"));
    }
    let author_id = value.get("author_id");
    match author_id {
        None | Some(serde_json::Value::Null) => {
            return Err(SheetError::schema("author_id", "missing author_id"))
        }
        Some(v) if !v.is_string() => {
            return Err(SheetError::schema("author_id", "author_id must be a string"))
        }
        _ => {}
    }
    let sheet = RawAuthorSheet::deserialize(&value)
        .map_err(|e| SheetError::schema("$", e.to_string()))?;
    validate_sheet(&sheet, vocabulary)?;
    Ok(sheet)
}

fn parse_error(document: &[u8], err: &serde_json::Error) -> SheetError {
    let line = err.line();
    let column = err.column();
    SheetError::Parse {
        offset: byte_offset(document, line, column),
        line,
        column,
        message: err.to_string(),
    }
}

// serde_json reports 1-based line and byte column.
fn byte_offset(document: &[u8], line: usize, column: usize) -> usize {
    let mut start = 0;
    for _ in 1..line {
        match document[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(document.len())
}

pub fn validate_sheet(
    sheet: &RawAuthorSheet,
    vocabulary: &CategoryVocabulary,
) -> Result<(), SheetError> {
    if sheet.author_id.trim().is_empty() {
        return Err(SheetError::schema("author_id", "author_id is empty"));
    }
    if sheet.categories.is_empty() {
        return Err(SheetError::schema("categories", "at least one category required"));
    }
    for (ci, category) in sheet.categories.iter().enumerate() {
        if !vocabulary.contains(&category.name) {
            return Err(SheetError::schema(
                format!("categories[{ci}].name"),
                format!("unknown category `{}`", category.name),
            ));
        }
        if category.claims.is_empty() {
            return Err(SheetError::schema(
                format!("categories[{ci}].claims"),
                "at least one claim required",
            ));
        }
        for (qi, claim) in category.claims.iter().enumerate() {
            if claim.text.trim().is_empty() {
                return Err(SheetError::schema(
                    format!("categories[{ci}].claims[{qi}].text"),
                    "claim text is empty",
                ));
            }
        }
    }
    Ok(())
}

/// Serializable cleaning configuration. Compile it before use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRules {
    /// Metadata keys whose values are scrubbed from claim text.
    pub strip_keys: Vec<String>,
    /// Regular expressions removed from the narrative.
    pub strip_patterns: Vec<String>,
    /// Paragraph template; must contain `{category}` and `{claims}`.
    pub join_template: String,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            strip_keys: [
                "timestamp",
                "created_at",
                "updated_at",
                "generated_at",
                "source",
                "tag",
                "sheet_type",
            ]
            .iter()
            .map(|s| (*s).to_owned())
            .collect(),
            strip_patterns: [
                // markup tags, e.g. <combined-author-sheet> or </claim>
                r"<[^<>\n]*>",
                // bare structural sheet tags
                r"\b[A-Za-z]+(?:-[A-Za-z]+)*-sheet\b",
                // inline evidence markers
                r"(?i)\[(?:evidence|source|story|excerpt|ref)[^\]]*\]",
                r"(?i)\((?:evidence|source|story|excerpt|ref):[^)]*\)",
                // ISO-8601 dates and timestamps
                r"\b\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?",
                // markdown emphasis and list/heading markers
                r"\*\*|__",
                r"(?m)^[ \t]*(?:[-*\x{2022}]|#{1,6})[ \t]+",
            ]
            .iter()
            .map(|s| (*s).to_owned())
            .collect(),
            join_template: "{category}: {claims}".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RulesError {
    #[error("strip pattern `{pattern}` does not compile: {message}")]
    Pattern { pattern: String, message: String },
    #[error("strip pattern `{0}` matches the empty string")]
    EmptyMatch(String),
    #[error("join template must contain both `{{category}}` and `{{claims}}`: `{0}`")]
    Template(String),
}

impl CleaningRules {
    pub fn compile(&self) -> Result<CompiledRules, RulesError> {
        let cat = self.join_template.find(CATEGORY_SLOT);
        let claims = self.join_template.find(CLAIMS_SLOT);
        if cat.is_none() || claims.is_none() {
            return Err(RulesError::Template(self.join_template.clone()));
        }
        let mut patterns = Vec::with_capacity(self.strip_patterns.len());
        for p in &self.strip_patterns {
            let re = Regex::new(p).map_err(|e| RulesError::Pattern {
                pattern: p.clone(),
                message: e.to_string(),
            })?;
            if re.is_match("") {
                return Err(RulesError::EmptyMatch(p.clone()));
            }
            patterns.push(re);
        }
        Ok(CompiledRules {
            rules: self.clone(),
            patterns,
        })
    }
}

/// Validated cleaning rules with compiled patterns.
#[derive(Debug, Clone)]
pub struct CompiledRules {
    rules: CleaningRules,
    patterns: Vec<Regex>,
}

impl CompiledRules {
    pub fn rules(&self) -> &CleaningRules {
        &self.rules
    }

    /// True if any strip pattern matches `text`.
    pub fn any_pattern_matches(&self, text: &str) -> bool {
        self.patterns.iter().any(|re| re.is_match(text))
    }

    fn render_paragraph(&self, category: &str, claims: &str) -> String {
        // Single pass so a claim containing "{category}" is left alone.
        let template = &self.rules.join_template;
        let mut out = String::with_capacity(template.len() + category.len() + claims.len());
        let mut rest = template.as_str();
        loop {
            let next_cat = rest.find(CATEGORY_SLOT);
            let next_claims = rest.find(CLAIMS_SLOT);
            let (at, slot, value) = match (next_cat, next_claims) {
                (Some(a), Some(b)) if a < b => (a, CATEGORY_SLOT, category),
                (Some(_), Some(b)) => (b, CLAIMS_SLOT, claims),
                (Some(a), None) => (a, CATEGORY_SLOT, category),
                (None, Some(b)) => (b, CLAIMS_SLOT, claims),
                (None, None) => break,
            };
            out.push_str(&rest[..at]);
            out.push_str(value);
            rest = &rest[at + slot.len()..];
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedSheet {
    pub author_id: String,
    pub narrative: String,
    /// SHA-256 of the canonical JSON encoding of the raw sheet.
    pub source_hash: String,
}

/// Metadata values that must not survive into the narrative.
fn scrub_values<'a>(raw: &'a RawAuthorSheet, rules: &CleaningRules) -> Vec<&'a str> {
    let mut values: Vec<&str> = rules
        .strip_keys
        .iter()
        .filter_map(|k| raw.metadata.get(k))
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .collect();
    // Longest first so a value containing another is removed whole.
    values.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    values.dedup();
    values
}

pub fn clean_sheet(raw: &RawAuthorSheet, rules: &CompiledRules) -> CleanedSheet {
    let values = scrub_values(raw, &rules.rules);
    let paragraphs: Vec<String> = raw
        .categories
        .iter()
        .map(|category| {
            let claims: Vec<&str> = category.claims.iter().map(|c| c.text.as_str()).collect();
            let body = normalize_whitespace(&claims.join(" "));
            rules.render_paragraph(&category.name, &body)
        })
        .collect();
    let mut narrative = normalize_narrative(&paragraphs.join("\n\n"));
    loop {
        let stripped = strip_all(&narrative, &values, rules);
        let next = normalize_narrative(&stripped);
        if next == narrative {
            break;
        }
        narrative = next;
    }
    CleanedSheet {
        author_id: raw.author_id.clone(),
        narrative,
        source_hash: source_hash(raw),
    }
}

pub fn source_hash(raw: &RawAuthorSheet) -> String {
    let bytes = serde_json::to_vec(raw).expect("sheet serializes");
    sha256_hex(&bytes)
}

fn strip_all(text: &str, values: &[&str], rules: &CompiledRules) -> String {
    let mut out = text.to_owned();
    for v in values {
        if out.contains(v) {
            out = out.replace(v, " ");
        }
    }
    for re in &rules.patterns {
        if !re.is_match(&out) {
            continue;
        }
        let mut replaced = String::with_capacity(out.len());
        let mut last = 0;
        for m in re.find_iter(&out) {
            replaced.push_str(&out[last..m.start()]);
            replaced.push(' ');
            last = m.end();
        }
        replaced.push_str(&out[last..]);
        out = replaced;
    }
    out
}

/// Collapses every whitespace run to a single space and trims.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Paragraphs separated by one blank line, whitespace collapsed inside each.
fn normalize_narrative(text: &str) -> String {
    let mut paragraphs = Vec::new();
    let mut current = String::new();
    for line in text.split('\n') {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                paragraphs.push(normalize_whitespace(&current));
            }
            current.clear();
        } else {
            current.push(' ');
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        paragraphs.push(normalize_whitespace(&current));
    }
    paragraphs.join("\n\n")
}

/// Rebuilds a raw sheet from a cleaned narrative: one category per
/// paragraph, one claim holding the paragraph body.
///
/// Paragraphs that do not fit the template are skipped.
pub fn rewrap(cleaned: &CleanedSheet, rules: &CleaningRules) -> RawAuthorSheet {
    let template = &rules.join_template;
    let cat_at = template.find(CATEGORY_SLOT).unwrap_or(0);
    let claims_at = template.find(CLAIMS_SLOT).unwrap_or(template.len());
    let categories = cleaned
        .narrative
        .split("\n\n")
        .filter_map(|para| {
            if cat_at < claims_at {
                let prefix = &template[..cat_at];
                let sep = &template[cat_at + CATEGORY_SLOT.len()..claims_at];
                let suffix = &template[claims_at + CLAIMS_SLOT.len()..];
                let body = para.strip_prefix(prefix.trim_start())?;
                let body = body.strip_suffix(suffix.trim_end()).unwrap_or(body);
                let (name, claims) = split_once_trimmed(body, sep)?;
                Some(CategorySection {
                    name: name.to_owned(),
                    claims: alloc::vec![Claim::new(claims)],
                })
            } else {
                let prefix = &template[..claims_at];
                let sep = &template[claims_at + CLAIMS_SLOT.len()..cat_at];
                let suffix = &template[cat_at + CATEGORY_SLOT.len()..];
                let body = para.strip_prefix(prefix.trim_start())?;
                let body = body.strip_suffix(suffix.trim_end()).unwrap_or(body);
                let (claims, name) = rsplit_once_trimmed(body, sep)?;
                Some(CategorySection {
                    name: name.to_owned(),
                    claims: alloc::vec![Claim::new(claims)],
                })
            }
        })
        .collect();
    RawAuthorSheet {
        author_id: cleaned.author_id.clone(),
        categories,
        metadata: BTreeMap::new(),
    }
}

fn split_once_trimmed<'a>(body: &'a str, sep: &str) -> Option<(&'a str, &'a str)> {
    let sep_t = sep.trim();
    let (a, b) = if sep_t.is_empty() {
        body.split_once(' ')?
    } else {
        body.split_once(sep_t)?
    };
    Some((a.trim(), b.trim()))
}

fn rsplit_once_trimmed<'a>(body: &'a str, sep: &str) -> Option<(&'a str, &'a str)> {
    let sep_t = sep.trim();
    let (a, b) = if sep_t.is_empty() {
        body.rsplit_once(' ')?
    } else {
        body.rsplit_once(sep_t)?
    };
    Some((a.trim(), b.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab() -> CategoryVocabulary {
        CategoryVocabulary::default()
    }

    fn rules() -> CompiledRules {
        CleaningRules::default().compile().unwrap()
    }

    const MONSOON: &str = r#"{
      "author_id": "Monsoon77",
      "categories": [
        {"name": "Plot", "claims": [
          {"text": "Stories vary from magical duels to internal conflicts, destiny resistance, moral debates, and suspenseful twists.",
           "evidence": ["Story 3: the duel at the tower"]}
        ]},
        {"name": "Creativity", "claims": [
          {"text": "Authors subvert tropes, blend genres, and introduce unexpected elements to deepen themes and surprise readers."}
        ]},
        {"name": "Character and Setting", "claims": [
          {"text": "Characters are revealed through dialogue, emotions, and social roles; settings reflect personal histories and values."}
        ]},
        {"name": "Language Use", "claims": [
          {"text": "Vivid, sensory language and tailored dialogue create tension, emotion, and thematic depth."}
        ]}
      ],
      "metadata": {"tag": "combined-author-sheet", "timestamp": "2025-01-14T09:30:00Z"}
    }"#;

    #[test]
    fn parses_case_study_sheet_verbatim() {
        let sheet = parse_raw_sheet(MONSOON.as_bytes(), &vocab()).unwrap();
        assert_eq!(sheet.author_id, "Monsoon77");
        assert_eq!(sheet.categories.len(), 4);
        assert_eq!(
            sheet.categories[0].claims[0].text,
            "Stories vary from magical duels to internal conflicts, destiny resistance, moral debates, and suspenseful twists."
        );
        assert_eq!(sheet.categories[0].claims[0].evidence.len(), 1);
        assert_eq!(sheet.metadata["tag"], "combined-author-sheet");
    }

    #[test]
    fn empty_categories_is_schema_error() {
        let err = parse_raw_sheet(br#"{"author_id":"a","categories":[]}"#, &vocab()).unwrap_err();
        assert!(matches!(err, SheetError::Schema { ref path, .. } if path == "categories"));
    }

    #[test]
    fn missing_author_id_is_schema_error() {
        let err = parse_raw_sheet(
            br#"{"categories":[{"name":"Plot","claims":[{"text":"x"}]}]}"#,
            &vocab(),
        )
        .unwrap_err();
        assert!(matches!(err, SheetError::Schema { ref path, .. } if path == "author_id"));
    }

    #[test]
    fn malformed_document_names_offset() {
        let doc = b"{\n  \"author_id\": \"a\",\n  \"categories\": [ oops ]\n}";
        match parse_raw_sheet(doc, &vocab()).unwrap_err() {
            SheetError::Parse { offset, line, .. } => {
                assert_eq!(line, 3);
                assert_eq!(&doc[offset..offset + 1], b"o");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_category_and_blank_claim_rejected() {
        let err = parse_raw_sheet(
            br#"{"author_id":"a","categories":[{"name":"Pacing","claims":[{"text":"x"}]}]}"#,
            &vocab(),
        )
        .unwrap_err();
        assert!(matches!(err, SheetError::Schema { ref path, .. } if path == "categories[0].name"));
        let err = parse_raw_sheet(
            br#"{"author_id":"a","categories":[{"name":"Plot","claims":[{"text":"  "}]}]}"#,
            &vocab(),
        )
        .unwrap_err();
        assert!(
            matches!(err, SheetError::Schema { ref path, .. } if path == "categories[0].claims[0].text")
        );
    }

    #[test]
    fn plain_sheet_is_plain_join() {
        let raw = RawAuthorSheet {
            author_id: "a".into(),
            categories: vec![
                CategorySection {
                    name: "Plot".into(),
                    claims: vec![Claim::new("Twists arrive late."), Claim::new("Quiet endings.")],
                },
                CategorySection {
                    name: "Language Use".into(),
                    claims: vec![Claim::new("Short, clipped sentences.")],
                },
            ],
            metadata: BTreeMap::new(),
        };
        let cleaned = clean_sheet(&raw, &rules());
        assert_eq!(
            cleaned.narrative,
            "Plot: Twists arrive late. Quiet endings.\n\nLanguage Use: Short, clipped sentences."
        );
    }

    #[test]
    fn strips_structural_tag_timestamp_and_evidence() {
        let mut raw = parse_raw_sheet(MONSOON.as_bytes(), &vocab()).unwrap();
        raw.categories[1].claims[0].text.push_str(
            " <combined-author-sheet> [evidence: story 12] (2025-01-14T09:30:00Z)",
        );
        let cleaned = clean_sheet(&raw, &rules());
        assert!(!cleaned.narrative.contains("combined-author-sheet"));
        assert!(!cleaned.narrative.contains("2025-01-14T09:30:00Z"));
        assert!(!cleaned.narrative.contains("evidence"));
        assert!(!cleaned.narrative.contains("duel at the tower"));
        for name in ["Plot", "Creativity", "Character and Setting", "Language Use"] {
            assert!(cleaned.narrative.contains(name));
        }
        assert!(!rules().any_pattern_matches(&cleaned.narrative));
    }

    #[test]
    fn nested_matches_are_removed_to_fixpoint() {
        let raw = RawAuthorSheet {
            author_id: "a".into(),
            categories: vec![CategorySection {
                name: "Plot".into(),
                claims: vec![Claim::new("x <<b>> y comb<i>ined-author-sheet z")],
            }],
            metadata: BTreeMap::new(),
        };
        let r = rules();
        let cleaned = clean_sheet(&raw, &r);
        assert!(!r.any_pattern_matches(&cleaned.narrative), "{}", cleaned.narrative);
    }

    #[test]
    fn cleaning_is_idempotent_on_rewrap() {
        let raw = parse_raw_sheet(MONSOON.as_bytes(), &vocab()).unwrap();
        let r = rules();
        let once = clean_sheet(&raw, &r);
        let twice = clean_sheet(&rewrap(&once, r.rules()), &r);
        assert_eq!(once.narrative, twice.narrative);
    }

    #[test]
    fn rules_validation() {
        let mut bad = CleaningRules::default();
        bad.join_template = "{category} only".into();
        assert!(matches!(bad.compile(), Err(RulesError::Template(_))));
        let mut bad = CleaningRules::default();
        bad.strip_patterns = vec!["(".into()];
        assert!(matches!(bad.compile(), Err(RulesError::Pattern { .. })));
        let mut bad = CleaningRules::default();
        bad.strip_patterns = vec!["a*".into()];
        assert!(matches!(bad.compile(), Err(RulesError::EmptyMatch(_))));
    }

    #[test]
    fn claims_before_category_template() {
        let mut rules = CleaningRules::default();
        rules.join_template = "{claims} ({category})".into();
        let compiled = rules.compile().unwrap();
        let raw = parse_raw_sheet(MONSOON.as_bytes(), &vocab()).unwrap();
        let once = clean_sheet(&raw, &compiled);
        assert!(once.narrative.starts_with("Stories vary"));
        let twice = clean_sheet(&rewrap(&once, &rules), &compiled);
        assert_eq!(once.narrative, twice.narrative);
    }
}
