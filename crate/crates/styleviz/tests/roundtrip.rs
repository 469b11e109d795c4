use proptest::prelude::*;
use styleviz::csv_io::{export_csv, import_csv};
use styleviz_core::survey::{FavoriteImage, Q2Pair, SurveyResponse};

fn free_text() -> impl Strategy<Value = String> {
    prop::string::string_regex("[a-zA-Z0-9 ,\"'\n\r\t;ßé漢🙂-]{0,40}").unwrap()
}

fn pair() -> impl Strategy<Value = Q2Pair> {
    (free_text(), free_text()).prop_map(|(element, reflection)| Q2Pair { element, reflection })
}

fn row(id: u64) -> impl Strategy<Value = SurveyResponse> {
    (
        "[a-z0-9-]{1,10}",
        1u8..=5,
        (pair(), pair()),
        prop::sample::select(&FavoriteImage::ALL[..]),
        free_text(),
        1u8..=5,
    )
        .prop_map(move |(rater, rating, (a, b), fav, why, distinct)| SurveyResponse {
            id,
            rater_id: rater,
            item_id: format!("item-{id}"),
            rating,
            q2_elements: [a, b],
            favorite_image_id: fav,
            favorite_justification: why,
            distinctiveness: distinct,
            submitted_at: "2026-10-19T08:30:00.000Z".to_owned(),
        })
}

fn rows() -> impl Strategy<Value = Vec<SurveyResponse>> {
    (0usize..12).prop_flat_map(|n| (1..=n as u64).map(row).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn csv_export_import_is_lossless(mut responses in rows()) {
        responses.reverse();
        let bytes = export_csv(&responses);
        let back = import_csv(&bytes).unwrap();
        responses.sort_by_key(|r| r.id);
        prop_assert_eq!(&back, &responses);
        prop_assert_eq!(export_csv(&back), bytes);
    }
}
