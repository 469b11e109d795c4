use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use styleviz::csv_io::{import_csv, CSV_HEADER};
use styleviz::service::{router, AppState, SurveyData};
use styleviz::store::{ResponseStore, RESPONSES_LOG};
use styleviz_core::study::{make_assignment, StudyConfig};
use styleviz_core::survey::{FavoriteImage, SessionView, SurveyResponse};

struct Fixture {
    _dir: tempfile::TempDir,
    state: AppState,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let items: Vec<String> = (1..=49).map(|i| format!("author{i:02}")).collect();
    let raters: Vec<String> = (1..=10).map(|i| format!("rater-{i:02}")).collect();
    let plan = make_assignment(&StudyConfig::new(items.clone(), raters, 2, 3)).unwrap();
    let mut images = BTreeMap::new();
    for item in &items {
        for idx in 1..=3u32 {
            let path = dir.path().join(format!("{item}-{idx}.png"));
            std::fs::write(&path, format!("png:{item}:{idx}")).unwrap();
            images.insert((item.clone(), idx), path);
        }
    }
    let narratives = items.iter().map(|i| (i.clone(), format!("Plot: story of {i}."))).collect();
    let store = ResponseStore::open(&dir.path().join(RESPONSES_LOG)).unwrap();
    let state = AppState {
        data: Arc::new(SurveyData {
            plan,
            narratives,
            images,
        }),
        store: Arc::new(store),
        admin_token: Some(Arc::from("s3cret")),
    };
    Fixture { _dir: dir, state }
}

async fn send(state: &AppState, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_owned());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn get(state: &AppState, uri: &str) -> (StatusCode, Vec<u8>, Option<String>) {
    send(state, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(state: &AppState, body: &Value) -> (StatusCode, Value) {
    let req = Request::post("/api/response")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes, _) = send(state, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn draft(rater: &str, item: &str, rating: u8, favorite: &str) -> Value {
    json!({
        "rater_id": rater,
        "item_id": item,
        "rating": rating,
        "q2_elements": [
            {"element": "wry humor", "reflection": "exaggerated silhouettes"},
            {"element": "magical realism", "reflection": "glowing paperwork, \"floating\""}
        ],
        "favorite_image_id": favorite,
        "favorite_justification": "captures the tone",
        "distinctiveness": 3
    })
}

fn items_of(state: &AppState, rater: &str) -> Vec<String> {
    state.data.plan.items_for(rater).unwrap().to_vec()
}

fn full_rater(state: &AppState) -> String {
    state
        .data
        .plan
        .per_rater
        .iter()
        .find(|(_, v)| v.len() == 10)
        .map(|(k, _)| k.clone())
        .unwrap()
}

#[tokio::test]
async fn session_progress_reflects_stored_responses() {
    let f = fixture();
    let rater = full_rater(&f.state);
    let items = items_of(&f.state, &rater);
    for item in &items[..4] {
        let (status, _) = post(&f.state, &draft(&rater, item, 4, "2")).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (status, body, _) = get(&f.state, &format!("/api/session/{rater}")).await;
    assert_eq!(status, StatusCode::OK);
    let view: SessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!(view.items.len(), 10);
    assert_eq!((view.progress.completed, view.progress.total), (4, 10));
    let order: Vec<_> = view.items.iter().map(|i| i.item_id.clone()).collect();
    assert_eq!(order, items);
    let first = &view.items[0];
    assert!(first.submitted);
    assert_eq!(first.images.len(), 3);
    let labels: Vec<_> = first.images.iter().map(|i| i.label.as_str()).collect();
    assert_eq!(labels, ["A", "B", "C"]);
    assert_eq!(first.images[2].url, format!("/api/images/{}/3", first.item_id));
    assert!(first.narrative.starts_with("Plot:"));
}

#[tokio::test]
async fn remainder_rater_sees_eight_items() {
    let f = fixture();
    let (rater, _) = f.state.data.plan.per_rater.iter().find(|(_, v)| v.len() == 8).unwrap();
    let (_, body, _) = get(&f.state, &format!("/api/session/{rater}")).await;
    let view: SessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!(view.items.len(), 8);
}

#[tokio::test]
async fn unknown_rater_is_not_found() {
    let f = fixture();
    let (status, body, _) = get(&f.state, "/api/session/nobody").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "not-found");
    let (status, v) = post(&f.state, &draft("nobody", "author01", 3, "1")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown-rater");
}

#[tokio::test]
async fn submission_error_codes() {
    let f = fixture();
    let rater = full_rater(&f.state);
    let item = items_of(&f.state, &rater)[0].clone();

    let (status, stored) = post(&f.state, &draft(&rater, &item, 5, "none")).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(stored["id"], 1);
    assert_eq!(stored["favorite_image_id"], "none");
    assert!(stored["submitted_at"].as_str().unwrap().ends_with('Z'));

    let (status, v) = post(&f.state, &draft(&rater, &item, 5, "1")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "conflict");

    let other = items_of(&f.state, &rater)[1].clone();
    let (status, v) = post(&f.state, &draft(&rater, &other, 6, "1")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "validation");
    assert_eq!(v["field"], "rating");

    let (status, v) = post(&f.state, &draft(&rater, &other, 3, "A")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "validation");

    let mut blank = draft(&rater, &other, 3, "1");
    blank["q2_elements"][1]["reflection"] = json!("  ");
    let (status, v) = post(&f.state, &blank).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "q2_elements[1].reflection");

    let foreign = f
        .state
        .data
        .plan
        .per_rater
        .values()
        .flatten()
        .find(|i| !items_of(&f.state, &rater).contains(i))
        .unwrap()
        .clone();
    let (status, v) = post(&f.state, &draft(&rater, &foreign, 3, "1")).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(v["error"], "not-assigned");

    let req = Request::post("/api/response").body(Body::from("{not json")).unwrap();
    let (status, _, _) = send(&f.state, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    assert_eq!(f.state.store.snapshot().len(), 1);
}

#[tokio::test]
async fn images_are_served_with_content_type() {
    let f = fixture();
    let (status, body, ctype) = get(&f.state, "/api/images/author07/2").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"png:author07:2");
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let (status, _, _) = get(&f.state, "/api/images/author07/4").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = get(&f.state, "/api/images/author07/x").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn export_requires_admin_token() {
    let f = fixture();
    let (status, _, _) = get(&f.state, "/api/export.csv").await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _, _) = get(&f.state, "/api/export.csv?token=wrong").await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, body, ctype) = get(&f.state, "/api/export.csv?token=s3cret").await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.unwrap().starts_with("text/csv"));
    assert_eq!(String::from_utf8(body).unwrap(), format!("{}\n", CSV_HEADER.join(",")));

    let mut no_token = f.state.clone();
    no_token.admin_token = None;
    let (status, _, _) = get(&no_token, "/api/export.csv?token=s3cret").await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn ten_item_walkthrough_exports_schema_rows() {
    let f = fixture();
    let rater = full_rater(&f.state);
    let (_, body, _) = get(&f.state, &format!("/api/session/{rater}")).await;
    let view: SessionView = serde_json::from_slice(&body).unwrap();
    for (n, item) in view.items.iter().enumerate() {
        let favorite = if n == 3 {
            FavoriteImage::None
        } else {
            FavoriteImage::from_label(['A', 'B', 'C'][n % 3]).unwrap()
        };
        let (status, _) = post(&f.state, &draft(&rater, &item.item_id, (n % 5) as u8 + 1, favorite.as_str())).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let req = Request::get("/api/export.csv")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    let (status, body, _) = send(&f.state, req).await;
    assert_eq!(status, StatusCode::OK);
    let rows: Vec<SurveyResponse> = import_csv(&body).unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().map(|r| r.id).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    assert_eq!(rows.iter().filter(|r| r.favorite_image_id == FavoriteImage::None).count(), 1);
    assert_eq!(rows, f.state.store.snapshot());
    let (_, body, _) = get(&f.state, &format!("/api/session/{rater}")).await;
    let view: SessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!((view.progress.completed, view.progress.total), (10, 10));
}

#[tokio::test]
async fn concurrent_double_submit_stores_once() {
    let f = fixture();
    let rater = full_rater(&f.state);
    let item = items_of(&f.state, &rater)[5].clone();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let state = f.state.clone();
            let body = draft(&rater, &item, 2, "3");
            tokio::spawn(async move { post(&state, &body).await.0 })
        })
        .collect();
    let mut created = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::CREATED => created += 1,
            StatusCode::CONFLICT => {}
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!(created, 1);
    assert_eq!(f.state.store.snapshot().len(), 1);
}
