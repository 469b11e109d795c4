//! Response CSV export and import.

use std::collections::BTreeSet;

use styleviz_core::survey::{validate_scores, FavoriteImage, Q2Pair, SurveyResponse};

pub const CSV_HEADER: [&str; 12] = [
    "id",
    "rater-id",
    "item-id",
    "rating",
    "favorite-image-id",
    "distinctiveness",
    "q2-element-1",
    "q2-reflection-1",
    "q2-element-2",
    "q2-reflection-2",
    "q3-justification",
    "submitted-at",
];

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header `{0}`")]
    Header(String),
    #[error("row {row}: column `{column}`: {message}")]
    Field {
        row: usize,
        column: &'static str,
        message: String,
    },
    #[error("row {row}: duplicate {what}")]
    Duplicate { row: usize, what: String },
}

/// Header plus one row per response, ordered by id.
pub fn export_csv(responses: &[SurveyResponse]) -> Vec<u8> {
    let mut sorted: Vec<&SurveyResponse> = responses.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in sorted {
        let id = r.id.to_string();
        let rating = r.rating.to_string();
        let distinct = r.distinctiveness.to_string();
        w.write_record([
            id.as_str(),
            &r.rater_id,
            &r.item_id,
            &rating,
            r.favorite_image_id.as_str(),
            &distinct,
            &r.q2_elements[0].element,
            &r.q2_elements[0].reflection,
            &r.q2_elements[1].element,
            &r.q2_elements[1].reflection,
            &r.favorite_justification,
            &r.submitted_at,
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn field<T: std::str::FromStr>(row: usize, column: &'static str, raw: &str) -> Result<T, CsvError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| CsvError::Field {
        row,
        column,
        message: e.to_string(),
    })
}

/// Parses an exported file. Rows must have valid scores and categories and
/// unique ids and (rater, item) pairs.
pub fn import_csv(bytes: &[u8]) -> Result<Vec<SurveyResponse>, CsvError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(CsvError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    let mut keys = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let rec = record?;
        let row = i + 2;
        let col = |n: usize| rec.get(n).unwrap_or_default();
        let response = SurveyResponse {
            id: field(row, "id", col(0))?,
            rater_id: col(1).to_owned(),
            item_id: col(2).to_owned(),
            rating: field(row, "rating", col(3))?,
            favorite_image_id: field::<FavoriteImage>(row, "favorite-image-id", col(4))?,
            distinctiveness: field(row, "distinctiveness", col(5))?,
            q2_elements: [
                Q2Pair {
                    element: col(6).to_owned(),
                    reflection: col(7).to_owned(),
                },
                Q2Pair {
                    element: col(8).to_owned(),
                    reflection: col(9).to_owned(),
                },
            ],
            favorite_justification: col(10).to_owned(),
            submitted_at: col(11).to_owned(),
        };
        validate_scores(response.rating, response.distinctiveness).map_err(|e| CsvError::Field {
            row,
            column: "rating",
            message: e.to_string(),
        })?;
        if !ids.insert(response.id) {
            return Err(CsvError::Duplicate {
                row,
                what: format!("id {}", response.id),
            });
        }
        if !keys.insert((response.rater_id.clone(), response.item_id.clone())) {
            return Err(CsvError::Duplicate {
                row,
                what: format!("response by `{}` for `{}`", response.rater_id, response.item_id),
            });
        }
        out.push(response);
    }
    Ok(out)
}
